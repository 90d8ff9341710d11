//! Page, context, and tier book-keeping shared by every policy.
//!
//! Pages live in a dense table indexed by a `u32` slot; [`PageId`] is the
//! external `(context, index)` name. DRAM frames are accounted separately
//! from page tiers: an in-flight read holds the frame it will land in, and
//! an in-flight write keeps its frame until the data reaches flash.

use crate::error::{Result, SimError};
use crate::sim::SimTime;

pub const PAGE_BYTES: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageId {
    pub ctx: ContextId,
    pub index: u32,
}

impl PageId {
    pub fn new(ctx: u32, index: u32) -> Self {
        Self { ctx: ContextId(ctx), index }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transfer {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tier {
    Dram,
    Flash,
    InFlight(Transfer),
}

#[derive(Clone, Debug)]
pub struct PageFrame {
    pub id: PageId,
    pub tier: Tier,
    pub dirty: bool,
    /// Access count; survives eviction so a returning page keeps its rank.
    pub freq: u32,
    pub mq_level: u8,
    pub expire: SimTime,
    /// Brought in by a prefetch and not yet touched.
    pub prefetched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextState {
    Active,
    Dormant,
    Activating,
}

#[derive(Clone, Debug)]
pub struct MemoryContext {
    pub id: ContextId,
    pub managed: bool,
    pub quota_pages: u64,
    pub activity: f64,
    pub state: ContextState,
    pub hot_set: Vec<PageId>,
    pub resident_pages: u64,
    pub torn_down: bool,
    slots: Vec<u32>,
}

impl MemoryContext {
    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    pub fn page_count(&self) -> u64 {
        self.slots.len() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TierConfig {
    pub dram_pages: u64,
    pub flash_pages: u64,
    pub page_bytes: u64,
}

impl TierConfig {
    /// Flash sized at eight times DRAM.
    pub fn with_dram(dram_pages: u64) -> Self {
        Self { dram_pages, flash_pages: 8 * dram_pages, page_bytes: PAGE_BYTES }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub dram_used: u64,
    pub flash_used: u64,
    pub inflight: u64,
}

impl Census {
    pub fn total(&self) -> u64 {
        self.dram_used + self.flash_used + self.inflight
    }
}

#[derive(Clone, Debug)]
pub struct MemoryModel {
    config: TierConfig,
    pages: Vec<PageFrame>,
    live: Vec<bool>,
    contexts: Vec<MemoryContext>,
    census: Census,
    frames_used: u64,
    /// Pages that left the in-flight state since the last `take_landed`.
    landed: Vec<u32>,
}

impl MemoryModel {
    pub fn new(config: TierConfig) -> Self {
        Self {
            config,
            pages: Vec::new(),
            live: Vec::new(),
            contexts: Vec::new(),
            census: Census::default(),
            frames_used: 0,
            landed: Vec::new(),
        }
    }

    pub fn config(&self) -> &TierConfig {
        &self.config
    }

    pub fn add_context(&mut self, managed: bool) -> ContextId {
        let id = ContextId(self.contexts.len() as u32);
        self.contexts.push(MemoryContext {
            id,
            managed,
            quota_pages: 0,
            activity: 0.0,
            state: ContextState::Active,
            hot_set: Vec::new(),
            resident_pages: 0,
            torn_down: false,
            slots: Vec::new(),
        });
        id
    }

    pub fn contexts(&self) -> &[MemoryContext] {
        &self.contexts
    }

    pub fn context(&self, id: ContextId) -> &MemoryContext {
        &self.contexts[id.0 as usize]
    }

    pub fn context_mut(&mut self, id: ContextId) -> &mut MemoryContext {
        &mut self.contexts[id.0 as usize]
    }

    pub fn slot_count(&self) -> usize {
        self.pages.len()
    }

    pub fn total_allocated(&self) -> u64 {
        self.census.total()
    }

    /// Create `n` pages for `ctx`, parked in flash with no frame. Callers
    /// then place them (see `Simulation::allocate`).
    pub fn create_pages(&mut self, ctx: ContextId, n: u64) -> Result<Vec<u32>> {
        let c = self
            .contexts
            .get(ctx.0 as usize)
            .ok_or(SimError::UnknownContext(ctx))?;
        if c.torn_down {
            return Err(SimError::TornDown(ctx));
        }
        let capacity = self.config.dram_pages + self.config.flash_pages;
        let available = capacity.saturating_sub(self.total_allocated());
        if n > available {
            return Err(SimError::Capacity { requested: n, available });
        }
        let first_index = c.slots.len() as u32;
        let first_slot = self.pages.len() as u32;
        for i in 0..n as u32 {
            self.pages.push(PageFrame {
                id: PageId { ctx, index: first_index + i },
                tier: Tier::Flash,
                dirty: false,
                freq: 0,
                mq_level: 0,
                expire: SimTime::ZERO,
                prefetched: false,
            });
            self.live.push(true);
        }
        let slots: Vec<u32> = (first_slot..first_slot + n as u32).collect();
        self.contexts[ctx.0 as usize].slots.extend_from_slice(&slots);
        self.census.flash_used += n;
        Ok(slots)
    }

    #[inline]
    pub fn slot_of(&self, id: PageId) -> Option<u32> {
        self.contexts.get(id.ctx.0 as usize)?.slots.get(id.index as usize).copied()
    }

    #[inline]
    pub fn page(&self, slot: u32) -> &PageFrame {
        &self.pages[slot as usize]
    }

    #[inline]
    pub fn page_mut(&mut self, slot: u32) -> &mut PageFrame {
        &mut self.pages[slot as usize]
    }

    #[inline]
    pub fn is_live(&self, slot: u32) -> bool {
        self.live[slot as usize]
    }

    /// Move a page between tiers, keeping the census and per-context
    /// residency counts in step. Frames are handled separately.
    #[inline]
    pub fn set_tier(&mut self, slot: u32, tier: Tier) {
        let page = &mut self.pages[slot as usize];
        let old = page.tier;
        if old == tier {
            return;
        }
        page.tier = tier;
        let ctx = page.id.ctx.0 as usize;
        match old {
            Tier::Dram => {
                self.census.dram_used -= 1;
                self.contexts[ctx].resident_pages -= 1;
            }
            Tier::Flash => self.census.flash_used -= 1,
            Tier::InFlight(_) => {
                self.census.inflight -= 1;
                self.landed.push(slot);
            }
        }
        match tier {
            Tier::Dram => {
                self.census.dram_used += 1;
                self.contexts[ctx].resident_pages += 1;
            }
            Tier::Flash => self.census.flash_used += 1,
            Tier::InFlight(_) => self.census.inflight += 1,
        }
    }

    /// Drain the record of pages whose transfer ended, oldest first.
    pub fn take_landed(&mut self) -> Vec<u32> {
        std::mem::take(&mut self.landed)
    }

    #[inline]
    pub fn free_frames(&self) -> u64 {
        self.config.dram_pages - self.frames_used
    }

    pub fn frames_used(&self) -> u64 {
        self.frames_used
    }

    /// Claim a DRAM frame; `false` when none is free.
    #[inline]
    pub fn reserve_frame(&mut self) -> bool {
        if self.frames_used < self.config.dram_pages {
            self.frames_used += 1;
            true
        } else {
            false
        }
    }

    #[inline]
    pub fn release_frame(&mut self) {
        debug_assert!(self.frames_used > 0, "frame released twice");
        self.frames_used -= 1;
    }

    pub fn residency_census(&self) -> Census {
        self.census
    }

    /// Record a client access at the memory level. Writes set the dirty bit.
    pub fn mark_access(&mut self, slot: u32, is_write: bool) -> Result<()> {
        let ctx = self.pages[slot as usize].id.ctx;
        if self.contexts[ctx.0 as usize].torn_down {
            return Err(SimError::TornDown(ctx));
        }
        if is_write {
            self.pages[slot as usize].dirty = true;
        }
        Ok(())
    }

    /// Free every page of `ctx` at once. Pages with IO in flight block
    /// teardown. Page ids are never reused afterwards.
    pub fn teardown(&mut self, ctx: ContextId) -> Result<Vec<u32>> {
        let slots = self
            .contexts
            .get(ctx.0 as usize)
            .ok_or(SimError::UnknownContext(ctx))?
            .slots
            .clone();
        if slots
            .iter()
            .any(|&s| matches!(self.pages[s as usize].tier, Tier::InFlight(_)))
        {
            return Err(SimError::PageState(format!(
                "teardown of {ctx:?} with IO in flight"
            )));
        }
        for &s in &slots {
            if !self.live[s as usize] {
                continue;
            }
            match self.pages[s as usize].tier {
                Tier::Dram => {
                    self.census.dram_used -= 1;
                    self.release_frame();
                }
                Tier::Flash => self.census.flash_used -= 1,
                Tier::InFlight(_) => unreachable!(),
            }
            self.live[s as usize] = false;
        }
        let c = &mut self.contexts[ctx.0 as usize];
        c.torn_down = true;
        c.resident_pages = 0;
        c.hot_set.clear();
        Ok(slots)
    }

    /// Recount everything from the page table and compare with the
    /// incremental counters.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut census = Census::default();
        let mut reads = 0u64;
        let mut writes = 0u64;
        let mut per_ctx = vec![0u64; self.contexts.len()];
        for (i, p) in self.pages.iter().enumerate() {
            if !self.live[i] {
                continue;
            }
            match p.tier {
                Tier::Dram => {
                    census.dram_used += 1;
                    per_ctx[p.id.ctx.0 as usize] += 1;
                }
                Tier::Flash => census.flash_used += 1,
                Tier::InFlight(Transfer::Read) => {
                    census.inflight += 1;
                    reads += 1
                }
                Tier::InFlight(Transfer::Write) => {
                    census.inflight += 1;
                    writes += 1
                }
            }
        }
        if census != self.census {
            return Err(format!("census drift: counted {census:?}, tracked {:?}", self.census));
        }
        if self.frames_used > self.config.dram_pages {
            return Err(format!(
                "frames used {} exceed DRAM {}",
                self.frames_used, self.config.dram_pages
            ));
        }
        if census.dram_used > self.config.dram_pages {
            return Err(format!("DRAM-resident {} exceeds capacity", census.dram_used));
        }
        // Every resident page and every in-flight write holds a frame; a
        // pending read may hold one or inherit its victim's.
        let floor = census.dram_used + writes;
        if self.frames_used < floor || self.frames_used > floor + reads {
            return Err(format!(
                "frame accounting: used {} outside [{floor}, {}]",
                self.frames_used,
                floor + reads
            ));
        }
        for (c, counted) in self.contexts.iter().zip(per_ctx) {
            if c.resident_pages != counted {
                return Err(format!(
                    "context {:?} residency {} but counted {counted}",
                    c.id, c.resident_pages
                ));
            }
            if !c.hot_set.is_empty() && c.state == ContextState::Active {
                return Err(format!("active context {:?} holds a hot set", c.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn place_in_dram(m: &mut MemoryModel, slots: &[u32]) {
        for &s in slots {
            assert!(m.reserve_frame());
            m.set_tier(s, Tier::Dram);
            m.page_mut(s).dirty = true;
        }
    }

    #[test]
    fn census_tracks_placement() {
        let mut m = MemoryModel::new(TierConfig::with_dram(100));
        let c = m.add_context(true);
        let slots = m.create_pages(c, 10).unwrap();
        place_in_dram(&mut m, &slots);
        assert_eq!(m.residency_census(), Census { dram_used: 10, flash_used: 0, inflight: 0 });
        assert_eq!(m.free_frames(), 90);
        m.check_invariants().unwrap();
    }

    #[test]
    fn over_capacity_is_rejected() {
        let mut m = MemoryModel::new(TierConfig { dram_pages: 10, flash_pages: 20, page_bytes: 4096 });
        let c = m.add_context(false);
        m.create_pages(c, 25).unwrap();
        let err = m.create_pages(c, 6).unwrap_err();
        assert!(matches!(err, SimError::Capacity { requested: 6, available: 5 }));
    }

    #[test]
    fn inflight_counted() {
        let mut m = MemoryModel::new(TierConfig::with_dram(64));
        let c = m.add_context(true);
        let slots = m.create_pages(c, 16).unwrap();
        for &s in &slots {
            assert!(m.reserve_frame());
            m.set_tier(s, Tier::InFlight(Transfer::Read));
        }
        assert_eq!(m.residency_census().inflight, 16);
        m.check_invariants().unwrap();
    }

    #[test]
    fn dirty_bit_follows_writes() {
        let mut m = MemoryModel::new(TierConfig::with_dram(4));
        let c = m.add_context(true);
        let s = m.create_pages(c, 1).unwrap()[0];
        m.mark_access(s, false).unwrap();
        assert!(!m.page(s).dirty);
        m.mark_access(s, true).unwrap();
        assert!(m.page(s).dirty);
    }

    #[test]
    fn teardown_frees_and_blocks_access() {
        let mut m = MemoryModel::new(TierConfig::with_dram(8));
        let c = m.add_context(true);
        let slots = m.create_pages(c, 4).unwrap();
        place_in_dram(&mut m, &slots[..2]);
        m.teardown(c).unwrap();
        assert_eq!(m.residency_census().total(), 0);
        assert_eq!(m.free_frames(), 8);
        assert!(matches!(m.mark_access(slots[0], true), Err(SimError::TornDown(_))));
        m.check_invariants().unwrap();
    }
}
