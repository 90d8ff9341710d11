//! Predictive tiering.
//!
//! Each managed context gets its own multi-queue hotness tracker and a DRAM
//! quota that follows its recent activity. A periodic tick ages the queues,
//! closes activity windows, rebalances quotas, and keeps a reserve of free
//! frames by evicting from whichever contexts are furthest over quota. An
//! accessor therefore never waits on eviction: a miss costs at most one
//! demand read, or the remainder of a prefetch already in flight.
//!
//! Contexts whose activity stays below a threshold for several windows go
//! dormant and their hottest resident pages are snapshotted. The first
//! access after dormancy triggers one prefetch of whatever part of that
//! snapshot has since been evicted.
//!
//! The multi-queue discipline, the activity score, and the quota rule are
//! reconstructions of an unpublished design, not a published algorithm.
//! Defaults: 8 levels, 100 ms lifetime and window, EWMA alpha 0.3, dormant
//! after 5 windows below 1 access, 64-page quota floor, 2% DRAM reserve.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::lists::{List, ListArena};
use crate::media::{BlockRequest, Direction, Io, IoId, Priority};
use crate::memory::{ContextId, ContextState, PageId, Tier, Transfer};
use crate::sim::SimTime;

use super::{PolicyAccess, PolicyKind, TieringPolicy, WaitOn, World};

#[derive(Clone, Debug, PartialEq)]
pub struct DmxParams {
    pub levels: u8,
    pub lifetime_us: u64,
    pub window_us: u64,
    pub alpha: f64,
    pub dormant_threshold: f64,
    pub dormant_windows: u32,
    pub floor_pages: u64,
    pub reserve_fraction: f64,
}

impl Default for DmxParams {
    fn default() -> Self {
        Self {
            levels: 8,
            lifetime_us: 100_000,
            window_us: 100_000,
            alpha: 0.3,
            dormant_threshold: 1.0,
            dormant_windows: 5,
            floor_pages: 64,
            reserve_fraction: 0.02,
        }
    }
}

impl DmxParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=31).contains(&self.levels) {
            return Err("dmx.levels must be in 1..=31".into());
        }
        if self.lifetime_us == 0 || self.window_us == 0 {
            return Err("dmx.lifetime_ms and dmx.window_ms must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err("dmx.alpha must be in (0, 1]".into());
        }
        if !(self.dormant_threshold >= 0.0) {
            return Err("dmx.dormant_threshold must be non-negative".into());
        }
        if self.dormant_windows == 0 {
            return Err("dmx.dormant_windows must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.reserve_fraction) {
            return Err("dmx.reserve_fraction must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Free frames the background pass maintains; at least one, so a
    /// blocked miss always gets a frame eventually.
    pub fn reserve_pages(&self, dram_pages: u64) -> u64 {
        ((dram_pages as f64 * self.reserve_fraction).floor() as u64).clamp(1.min(dram_pages), dram_pages)
    }
}

/// Level a page with `freq` accesses belongs to.
pub fn level_for(freq: u32, levels: u8) -> u8 {
    if freq == 0 {
        0
    } else {
        (31 - freq.leading_zeros()).min(levels as u32 - 1) as u8
    }
}

/// Proportional-share quotas on top of a per-context floor.
///
/// `quota_i = floor + (dram - reserve - n*floor) * score_i / sum(scores)`,
/// rounded down; an all-zero score vector splits the remainder equally.
pub fn rebalance_quotas(scores: &[f64], floor: u64, dram_pages: u64, reserve: u64) -> Vec<u64> {
    let n = scores.len() as u64;
    if n == 0 {
        return Vec::new();
    }
    let avail = dram_pages.saturating_sub(reserve);
    let floor = floor.min(avail / n);
    let rem = avail - floor * n;
    let total: f64 = scores.iter().copied().filter(|s| s.is_finite() && *s > 0.0).sum();
    let mut quotas: Vec<u64> = if total > 0.0 {
        scores
            .iter()
            .map(|&s| {
                let s = if s.is_finite() && s > 0.0 { s } else { 0.0 };
                floor + ((rem as f64) * (s / total)).floor() as u64
            })
            .collect()
    } else {
        vec![floor + rem / n; n as usize]
    };
    // Float rounding must never push the sum past the budget.
    while quotas.iter().sum::<u64>() > avail {
        let i = (0..quotas.len()).max_by_key(|&i| (quotas[i], Reverse(i))).unwrap();
        quotas[i] -= 1;
    }
    quotas
}

/// EWMA of per-window access counts plus the consecutive-window dormancy
/// rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityTracker {
    pub alpha: f64,
    pub threshold: f64,
    pub windows: u32,
    pub score: f64,
    below: u32,
}

impl ActivityTracker {
    pub fn new(alpha: f64, threshold: f64, windows: u32) -> Self {
        Self { alpha, threshold, windows, score: 0.0, below: 0 }
    }

    /// Fold one window's access count into the score and evaluate it.
    pub fn close_window(&mut self, accesses: u64) -> bool {
        self.score = self.alpha * accesses as f64 + (1.0 - self.alpha) * self.score;
        self.evaluate(self.score)
    }

    /// True once `windows` consecutive scores fell below the threshold.
    pub fn evaluate(&mut self, score: f64) -> bool {
        if score < self.threshold {
            self.below += 1;
        } else {
            self.below = 0;
        }
        self.below >= self.windows
    }

    pub fn reset(&mut self) {
        self.below = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    Stay,
    ActiveToDormant,
    DormantToActivating,
    ActivatingToActive,
}

#[derive(Clone, Debug)]
struct CtxState {
    levels: Vec<List>,
    window_accesses: u64,
    tracker: ActivityTracker,
    prefetch_outstanding: u64,
    /// Quota when the hot set was snapshot; the hot set was sized to it.
    snapshot_quota: u64,
}

#[derive(Debug)]
pub struct DmxPolicy {
    params: DmxParams,
    dram_pages: u64,
    reserve: u64,
    arena: ListArena,
    ctxs: Vec<CtxState>,
    /// Pages of unmanaged contexts, most recent first.
    unmanaged: List,
    chained: HashMap<IoId, u32>,
    /// Frames that in-flight eviction writes will free.
    pending_evict: u64,
    /// Managed pages under eviction write and the IO carrying them.
    writing: HashMap<u32, IoId>,
    transitions: Vec<(SimTime, ContextId, Transition)>,
    quotas_set: bool,
}

impl DmxPolicy {
    pub fn new(params: DmxParams, dram_pages: u64) -> Self {
        let reserve = params.reserve_pages(dram_pages);
        Self {
            params,
            dram_pages,
            reserve,
            arena: ListArena::new(),
            ctxs: Vec::new(),
            unmanaged: List::default(),
            chained: HashMap::new(),
            pending_evict: 0,
            writing: HashMap::new(),
            transitions: Vec::new(),
            quotas_set: false,
        }
    }

    pub fn params(&self) -> &DmxParams {
        &self.params
    }

    pub fn reserve(&self) -> u64 {
        self.reserve
    }

    pub fn transitions(&self) -> &[(SimTime, ContextId, Transition)] {
        &self.transitions
    }

    /// Page slots of `ctx` at MQ `level`, oldest expiry first.
    pub fn queue(&self, ctx: ContextId, level: u8) -> Vec<u32> {
        self.ctxs
            .get(ctx.0 as usize)
            .map(|c| self.arena.iter(&c.levels[level as usize]).collect())
            .unwrap_or_default()
    }

    fn sync_contexts(&mut self, w: &World) {
        self.arena.ensure(w.mem.slot_count());
        while self.ctxs.len() < w.mem.contexts().len() {
            self.ctxs.push(CtxState {
                levels: vec![List::default(); self.params.levels as usize],
                window_accesses: 0,
                tracker: ActivityTracker::new(
                    self.params.alpha,
                    self.params.dormant_threshold,
                    self.params.dormant_windows,
                ),
                prefetch_outstanding: 0,
                snapshot_quota: 0,
            });
        }
    }

    fn is_managed(w: &World, slot: u32) -> bool {
        w.mem.context(w.mem.page(slot).id.ctx).managed
    }

    /// Link a page that just became DRAM-resident.
    fn insert_resident(&mut self, w: &mut World, slot: u32, now: SimTime) {
        if !Self::is_managed(w, slot) {
            self.arena.push_front(&mut self.unmanaged, slot);
            return;
        }
        let levels = self.params.levels;
        let page = w.mem.page_mut(slot);
        page.mq_level = level_for(page.freq, levels);
        page.expire = now + self.params.lifetime_us;
        let (ctx, lvl) = (page.id.ctx.0 as usize, page.mq_level as usize);
        self.arena.push_back(&mut self.ctxs[ctx].levels[lvl], slot);
    }

    fn unlink_resident(&mut self, w: &World, slot: u32) {
        let page = w.mem.page(slot);
        if w.mem.context(page.id.ctx).managed {
            let (ctx, lvl) = (page.id.ctx.0 as usize, page.mq_level as usize);
            self.arena.remove(&mut self.ctxs[ctx].levels[lvl], slot);
        } else {
            self.arena.remove(&mut self.unmanaged, slot);
        }
    }

    /// Hit bookkeeping: bump frequency, promote across a power of two,
    /// renew the lifetime, and move to the back of the (new) queue.
    pub fn record_access(&mut self, w: &mut World, slot: u32, now: SimTime) {
        let levels = self.params.levels;
        let lifetime = self.params.lifetime_us;
        let page = w.mem.page_mut(slot);
        debug_assert_eq!(page.tier, Tier::Dram);
        let ctx = page.id.ctx.0 as usize;
        let old = page.mq_level;
        page.freq = page.freq.saturating_add(1);
        if old + 1 < levels && page.freq >= 1u32 << (old + 1) {
            page.mq_level = old + 1;
        }
        page.expire = now + lifetime;
        let new = page.mq_level;
        let c = &mut self.ctxs[ctx];
        self.arena.remove(&mut c.levels[old as usize], slot);
        self.arena.push_back(&mut c.levels[new as usize], slot);
    }

    /// Demote every page whose lifetime ran out by one level.
    fn expire_sweep(&mut self, w: &mut World, now: SimTime) {
        let lifetime = self.params.lifetime_us;
        for ci in 0..self.ctxs.len() {
            for lvl in 1..self.params.levels as usize {
                loop {
                    let Some(slot) = self.ctxs[ci].levels[lvl].front() else { break };
                    if w.mem.page(slot).expire >= now {
                        break;
                    }
                    let c = &mut self.ctxs[ci];
                    self.arena.remove(&mut c.levels[lvl], slot);
                    let page = w.mem.page_mut(slot);
                    page.mq_level = (lvl - 1) as u8;
                    page.freq = 1 << (lvl - 1);
                    page.expire = now + lifetime;
                    self.arena.push_back(&mut c.levels[lvl - 1], slot);
                }
            }
        }
    }

    fn live_managed(w: &World) -> Vec<ContextId> {
        w.mem
            .contexts()
            .iter()
            .filter(|c| c.managed && !c.torn_down)
            .map(|c| c.id)
            .collect()
    }

    fn apply_quotas(&mut self, w: &mut World) {
        let ids = Self::live_managed(w);
        let scores: Vec<f64> = ids.iter().map(|&id| w.mem.context(id).activity).collect();
        self.set_quotas(w, &ids, &scores);
    }

    fn set_quotas(&mut self, w: &mut World, ids: &[ContextId], scores: &[f64]) {
        let quotas = rebalance_quotas(scores, self.params.floor_pages, self.dram_pages, self.reserve);
        for (&id, q) in ids.iter().zip(quotas) {
            w.mem.context_mut(id).quota_pages = q;
        }
        self.quotas_set = true;
    }

    /// Rank resident pages of `ctx` by (level desc, freq desc) and keep at
    /// most `cap`.
    fn snapshot_hot_set(&self, w: &World, ctx: ContextId, cap: u64) -> Vec<PageId> {
        let c = &self.ctxs[ctx.0 as usize];
        let mut ranked: Vec<(u8, u32, u32)> = Vec::new();
        for list in &c.levels {
            for s in self.arena.iter(list) {
                let p = w.mem.page(s);
                ranked.push((p.mq_level, p.freq, s));
            }
        }
        ranked.sort_by_key(|&(lvl, freq, slot)| (Reverse(lvl), Reverse(freq), slot));
        ranked
            .into_iter()
            .take(cap as usize)
            .map(|(_, _, s)| w.mem.page(s).id)
            .collect()
    }

    fn close_windows(&mut self, w: &mut World, now: SimTime) {
        for id in Self::live_managed(w) {
            let ci = id.0 as usize;
            let count = std::mem::take(&mut self.ctxs[ci].window_accesses);
            let dormant = self.ctxs[ci].tracker.close_window(count);
            w.mem.context_mut(id).activity = self.ctxs[ci].tracker.score;
            if dormant && w.mem.context(id).state == ContextState::Active {
                let cap = w.mem.context(id).quota_pages;
                let hot = self.snapshot_hot_set(w, id, cap);
                self.ctxs[ci].snapshot_quota = cap;
                let c = w.mem.context_mut(id);
                c.state = ContextState::Dormant;
                c.hot_set = hot;
                self.transitions.push((now, id, Transition::ActiveToDormant));
            }
        }
    }

    /// Prefetch request for the evicted part of a reactivating context's
    /// hot set, in snapshot order, capped by quota headroom and free frames.
    /// The quota is the larger of the current one and the one the hot set
    /// was sized to, since dormancy itself shrinks the current quota.
    pub fn plan_prefetch(&mut self, w: &mut World, ctx: ContextId, now: SimTime) -> Option<BlockRequest> {
        let c = w.mem.context(ctx);
        let quota = c.quota_pages.max(self.ctxs[ctx.0 as usize].snapshot_quota);
        let headroom = quota.saturating_sub(c.resident_pages).min(w.mem.free_frames());
        let pages: Vec<u32> = c
            .hot_set
            .iter()
            .filter_map(|&id| w.mem.slot_of(id))
            .filter(|&s| w.mem.page(s).tier == Tier::Flash)
            .take(headroom as usize)
            .collect();
        if pages.is_empty() {
            return None;
        }
        for &s in &pages {
            let ok = w.mem.reserve_frame();
            debug_assert!(ok);
            w.mem.set_tier(s, Tier::InFlight(Transfer::Read));
            w.mem.page_mut(s).prefetched = true;
        }
        let n = pages.len() as u64;
        w.counters.prefetch_issued += n;
        self.ctxs[ctx.0 as usize].prefetch_outstanding += n;
        let req = BlockRequest::new(Direction::PrefetchRead, pages, now);
        w.submit(req.clone(), now);
        if w.mem.free_frames() < self.reserve {
            w.signal_pressure();
        }
        Some(req)
    }

    fn activate(&mut self, w: &mut World, ctx: ContextId, now: SimTime) {
        self.ctxs[ctx.0 as usize].snapshot_quota = 0;
        let c = w.mem.context_mut(ctx);
        c.state = ContextState::Active;
        c.hot_set.clear();
        self.transitions.push((now, ctx, Transition::ActivatingToActive));
    }

    /// First access to a dormant context.
    fn reactivate(&mut self, w: &mut World, ctx: ContextId, now: SimTime) {
        w.mem.context_mut(ctx).state = ContextState::Activating;
        self.ctxs[ctx.0 as usize].tracker.reset();
        self.transitions.push((now, ctx, Transition::DormantToActivating));
        if self.plan_prefetch(w, ctx, now).is_none() && self.ctxs[ctx.0 as usize].prefetch_outstanding == 0 {
            self.activate(w, ctx, now);
        }
    }

    /// Free enough frames to restore the reserve, taking victims from the
    /// contexts furthest over quota and, within one, from the lowest level,
    /// oldest expiry first. Clean victims are dropped on the spot; dirty
    /// ones go out as one evict-write request.
    pub fn plan_eviction(&mut self, w: &mut World, now: SimTime) -> BlockRequest {
        let have = w.mem.free_frames() + self.pending_evict;
        let mut need = self.reserve.saturating_sub(have);
        let mut dirty = Vec::new();
        if need > 0 {
            // (overage, tie-break, ctx index or MAX for the unmanaged pool)
            let mut heap: BinaryHeap<(i64, Reverse<u32>)> = BinaryHeap::new();
            for c in w.mem.contexts() {
                if c.managed && !c.torn_down && c.resident_pages > 0 {
                    let over = c.resident_pages as i64 - c.quota_pages as i64;
                    heap.push((over, Reverse(c.id.0)));
                }
            }
            if !self.unmanaged.is_empty() {
                heap.push((self.unmanaged.len() as i64, Reverse(u32::MAX)));
            }
            while need > 0 {
                let Some((over, Reverse(ci))) = heap.pop() else { break };
                let victim = if ci == u32::MAX {
                    self.unmanaged.back()
                } else {
                    self.ctxs[ci as usize].levels.iter().find_map(|l| l.front())
                };
                let Some(victim) = victim else { continue };
                self.unlink_resident(w, victim);
                let page = w.mem.page_mut(victim);
                let was_prefetched = std::mem::replace(&mut page.prefetched, false);
                if was_prefetched {
                    w.counters.mispredictions += 1;
                }
                if page.dirty {
                    w.mem.set_tier(victim, Tier::InFlight(Transfer::Write));
                    w.counters.writebacks += 1;
                    self.pending_evict += 1;
                    dirty.push(victim);
                } else {
                    w.mem.set_tier(victim, Tier::Flash);
                    w.mem.release_frame();
                    w.counters.evictions += 1;
                }
                need -= 1;
                let more = if ci == u32::MAX {
                    !self.unmanaged.is_empty()
                } else {
                    w.mem.contexts()[ci as usize].resident_pages > 0
                };
                if more {
                    heap.push((over - 1, Reverse(ci)));
                }
            }
        }
        let req = BlockRequest::new(Direction::EvictWrite, dirty, now);
        if !req.pages.is_empty() {
            let h = w.submit(req.clone(), now);
            for id in h.ios {
                let io = w.media.io(id).expect("just submitted");
                for &s in &io.pages {
                    self.writing.insert(s, id);
                }
            }
        }
        req
    }

    /// Take back a page whose eviction write is still pending. The frame
    /// was never released, so it simply becomes resident again.
    fn rescue(&mut self, w: &mut World, slot: u32, now: SimTime) {
        self.writing.remove(&slot);
        self.pending_evict -= 1;
        w.mem.set_tier(slot, Tier::Dram);
        self.insert_resident(w, slot, now);
    }

    fn unmanaged_miss(&mut self, w: &mut World, slot: u32, now: SimTime) -> PolicyAccess {
        if w.mem.reserve_frame() {
            w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
            self.demand_read(w, slot, now);
            return PolicyAccess::Wait(WaitOn::Page(slot));
        }
        let Some(victim) = self.arena.pop_back(&mut self.unmanaged) else {
            w.signal_pressure();
            return PolicyAccess::Wait(WaitOn::Frames);
        };
        w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
        if w.mem.page(victim).dirty {
            w.mem.set_tier(victim, Tier::InFlight(Transfer::Write));
            w.counters.writebacks += 1;
            let req = BlockRequest::new(Direction::EvictWrite, vec![victim], now).with_priority(Priority::Demand);
            let h = w.submit(req, now);
            self.chained.insert(h.ios[0], slot);
        } else {
            w.mem.set_tier(victim, Tier::Flash);
            w.counters.evictions += 1;
            self.demand_read(w, slot, now);
        }
        PolicyAccess::Wait(WaitOn::Page(slot))
    }

    fn demand_read(&mut self, w: &mut World, slot: u32, now: SimTime) {
        w.counters.demand_reads += 1;
        w.submit(BlockRequest::new(Direction::DemandRead, vec![slot], now), now);
    }
}

impl TieringPolicy for DmxPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Dmx
    }

    fn adopt(&mut self, w: &mut World, resident: &[u32], now: SimTime) {
        self.sync_contexts(w);
        for &s in resident {
            self.insert_resident(w, s, now);
        }
        // No activity has been observed yet; residency is the best prior.
        let ids = Self::live_managed(w);
        let scores: Vec<f64> = ids.iter().map(|&id| w.mem.context(id).resident_pages as f64).collect();
        self.set_quotas(w, &ids, &scores);
        if w.mem.free_frames() < self.reserve {
            w.signal_pressure();
        }
    }

    fn on_access(&mut self, w: &mut World, slot: u32, _is_write: bool, now: SimTime) -> PolicyAccess {
        let ctx = w.mem.page(slot).id.ctx;
        if !w.mem.context(ctx).managed {
            return match w.mem.page(slot).tier {
                Tier::Dram => {
                    self.arena.remove(&mut self.unmanaged, slot);
                    self.arena.push_front(&mut self.unmanaged, slot);
                    PolicyAccess::Hit
                }
                Tier::InFlight(_) => PolicyAccess::Wait(WaitOn::Page(slot)),
                Tier::Flash => self.unmanaged_miss(w, slot, now),
            };
        }
        self.ctxs[ctx.0 as usize].window_accesses += 1;
        let outcome = match w.mem.page(slot).tier {
            Tier::Dram => {
                self.record_access(w, slot, now);
                let page = w.mem.page_mut(slot);
                if std::mem::replace(&mut page.prefetched, false) {
                    w.counters.prefetch_hits += 1;
                }
                PolicyAccess::Hit
            }
            Tier::InFlight(Transfer::Write) if self.writing.contains_key(&slot) => {
                self.rescue(w, slot, now);
                self.record_access(w, slot, now);
                PolicyAccess::Hit
            }
            Tier::InFlight(_) => {
                let page = w.mem.page_mut(slot);
                if std::mem::replace(&mut page.prefetched, false) {
                    w.counters.prefetch_hits += 1;
                }
                PolicyAccess::Wait(WaitOn::Page(slot))
            }
            Tier::Flash => {
                if w.mem.reserve_frame() {
                    w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
                    self.demand_read(w, slot, now);
                    if w.mem.free_frames() < self.reserve {
                        w.signal_pressure();
                    }
                    PolicyAccess::Wait(WaitOn::Page(slot))
                } else {
                    w.signal_pressure();
                    PolicyAccess::Wait(WaitOn::Frames)
                }
            }
        };
        if w.mem.context(ctx).state == ContextState::Dormant {
            self.reactivate(w, ctx, now);
        }
        outcome
    }

    fn on_allocate(&mut self, w: &mut World, slots: &[u32], now: SimTime) -> u64 {
        self.sync_contexts(w);
        for &s in slots {
            if w.mem.reserve_frame() {
                w.mem.set_tier(s, Tier::Dram);
                w.mem.page_mut(s).dirty = true;
                self.insert_resident(w, s, now);
            }
        }
        if w.mem.free_frames() < self.reserve {
            w.signal_pressure();
        }
        0
    }

    fn on_io_complete(&mut self, w: &mut World, io: &Io, _request_done: bool, now: SimTime) {
        match io.direction {
            Direction::DemandRead | Direction::PrefetchRead => {
                for &s in &io.pages {
                    w.mem.set_tier(s, Tier::Dram);
                    w.mem.page_mut(s).dirty = false;
                    self.insert_resident(w, s, now);
                }
                if io.direction == Direction::PrefetchRead {
                    let ctx = w.mem.page(io.pages[0]).id.ctx;
                    let c = &mut self.ctxs[ctx.0 as usize];
                    c.prefetch_outstanding -= io.pages.len() as u64;
                    if c.prefetch_outstanding == 0 && w.mem.context(ctx).state == ContextState::Activating {
                        self.activate(w, ctx, now);
                    }
                }
            }
            Direction::EvictWrite => {
                if let Some(slot) = self.chained.remove(&io.id) {
                    for &s in &io.pages {
                        w.mem.set_tier(s, Tier::Flash);
                        w.mem.page_mut(s).dirty = false;
                        w.counters.evictions += 1;
                    }
                    self.demand_read(w, slot, now);
                    return;
                }
                for &s in &io.pages {
                    if self.writing.get(&s) != Some(&io.id) {
                        continue;
                    }
                    self.writing.remove(&s);
                    w.mem.set_tier(s, Tier::Flash);
                    w.mem.page_mut(s).dirty = false;
                    w.counters.evictions += 1;
                    w.mem.release_frame();
                    self.pending_evict -= 1;
                }
            }
        }
    }

    fn on_teardown(&mut self, w: &mut World, ctx: ContextId, slots: &[u32]) {
        for &s in slots {
            if self.arena.is_linked(s) {
                self.unlink_resident(w, s);
            }
        }
        let _ = ctx;
        self.apply_quotas(w);
    }

    fn tick_period(&self) -> Option<u64> {
        Some(self.params.window_us)
    }

    fn tick(&mut self, w: &mut World, now: SimTime) -> Vec<BlockRequest> {
        self.sync_contexts(w);
        self.expire_sweep(w, now);
        self.close_windows(w, now);
        self.apply_quotas(w);
        let req = self.plan_eviction(w, now);
        if req.pages.is_empty() {
            Vec::new()
        } else {
            vec![req]
        }
    }

    fn on_pressure(&mut self, w: &mut World, now: SimTime) -> Vec<BlockRequest> {
        let req = self.plan_eviction(w, now);
        if req.pages.is_empty() {
            Vec::new()
        } else {
            vec![req]
        }
    }

    fn check_invariants(&self, w: &World) -> Result<(), String> {
        let mut unmanaged_resident = 0u64;
        for c in w.mem.contexts() {
            if !c.managed {
                unmanaged_resident += c.resident_pages;
                continue;
            }
            let Some(st) = self.ctxs.get(c.id.0 as usize) else {
                if c.resident_pages > 0 {
                    return Err(format!("context {:?} resident but untracked", c.id));
                }
                continue;
            };
            let mut linked = 0u64;
            for (lvl, list) in st.levels.iter().enumerate() {
                for s in self.arena.iter(list) {
                    let p = w.mem.page(s);
                    if p.tier != Tier::Dram || p.id.ctx != c.id || p.mq_level as usize != lvl {
                        return Err(format!("queue {lvl} of {:?} holds misplaced page {s}", c.id));
                    }
                    if p.freq > 0 && (p.freq as u64) < (1u64 << lvl) {
                        return Err(format!("page {s} freq {} below 2^{lvl}", p.freq));
                    }
                    if p.freq == 0 && lvl != 0 {
                        return Err(format!("untouched page {s} above level 0"));
                    }
                    linked += 1;
                }
            }
            if linked != c.resident_pages {
                return Err(format!("{:?}: {linked} queued vs {} resident", c.id, c.resident_pages));
            }
            if c.hot_set.iter().any(|p| p.ctx != c.id) {
                return Err(format!("{:?} hot set holds foreign pages", c.id));
            }
        }
        if self.unmanaged.len() as u64 != unmanaged_resident {
            return Err("unmanaged LRU out of step with residency".into());
        }
        if self.quotas_set {
            let quotas: Vec<u64> = w
                .mem
                .contexts()
                .iter()
                .filter(|c| c.managed && !c.torn_down)
                .map(|c| c.quota_pages)
                .collect();
            let sum: u64 = quotas.iter().sum();
            if sum > self.dram_pages - self.reserve {
                return Err(format!("quota sum {sum} exceeds {}", self.dram_pages - self.reserve));
            }
            let n = quotas.len() as u64;
            let floor = (self.dram_pages - self.reserve)
                .checked_div(n)
                .map_or(0, |share| self.params.floor_pages.min(share));
            if quotas.iter().any(|&q| q < floor) {
                return Err("quota below floor".into());
            }
        }
        let mut flagged = 0u64;
        let mut evict_writes = 0u64;
        for s in 0..w.mem.slot_count() as u32 {
            if !w.mem.is_live(s) {
                continue;
            }
            let p = w.mem.page(s);
            if p.prefetched {
                flagged += 1;
            }
            if p.tier == Tier::InFlight(Transfer::Write) {
                evict_writes += 1;
            }
        }
        if self.writing.len() as u64 != self.pending_evict {
            return Err(format!("{} owned writes vs {} pending", self.writing.len(), self.pending_evict));
        }
        let chained_writes = self.chained.len() as u64;
        if evict_writes != self.pending_evict + chained_writes {
            return Err(format!(
                "{evict_writes} pages mid-write, tracking {} + {chained_writes}",
                self.pending_evict
            ));
        }
        let c = &w.counters;
        if c.prefetch_hits + c.mispredictions + flagged != c.prefetch_issued {
            return Err(format!(
                "prefetch accounting: {} hits + {} mispredictions + {flagged} pending != {} issued",
                c.prefetch_hits, c.mispredictions, c.prefetch_issued
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_quotas() {
        assert_eq!(rebalance_quotas(&[3.0, 1.0], 100, 1000, 0), vec![700, 300]);
    }

    #[test]
    fn single_context_takes_everything() {
        assert_eq!(rebalance_quotas(&[0.0], 64, 1000, 20), vec![980]);
        assert_eq!(rebalance_quotas(&[42.5], 64, 1000, 20), vec![980]);
    }

    #[test]
    fn zero_scores_split_equally() {
        assert_eq!(rebalance_quotas(&[0.0; 4], 100, 1000, 0), vec![250; 4]);
    }

    #[test]
    fn level_mapping() {
        assert_eq!(level_for(0, 8), 0);
        assert_eq!(level_for(1, 8), 0);
        assert_eq!(level_for(2, 8), 1);
        assert_eq!(level_for(7, 8), 2);
        assert_eq!(level_for(8, 8), 3);
        assert_eq!(level_for(1 << 20, 8), 7);
    }

    #[test]
    fn dormancy_needs_consecutive_windows() {
        let mut t = ActivityTracker::new(0.3, 1.0, 3);
        assert!(!t.evaluate(0.5));
        assert!(!t.evaluate(0.5));
        assert!(t.evaluate(0.5));

        let mut t = ActivityTracker::new(0.3, 1.0, 3);
        for s in [0.5, 0.5, 2.0, 0.5] {
            assert!(!t.evaluate(s));
        }
    }

    #[test]
    fn ewma_update() {
        let mut t = ActivityTracker::new(0.3, 1.0, 5);
        t.close_window(10);
        assert!((t.score - 3.0).abs() < 1e-12);
        t.close_window(0);
        assert!((t.score - 2.1).abs() < 1e-12);
    }

    use crate::media::{DeviceProfile, Media};
    use crate::memory::{MemoryModel, TierConfig};

    struct Rig {
        w: World,
        p: DmxPolicy,
        slots: Vec<Vec<u32>>,
    }

    /// Managed contexts given as (pages, how many of the first are resident).
    fn rig(dram: u64, params: DmxParams, ctxs: &[(u64, u64)]) -> Rig {
        let mut w = World::new(MemoryModel::new(TierConfig::with_dram(dram)), Media::new(DeviceProfile::flash()));
        let mut slots = Vec::new();
        let mut resident = Vec::new();
        for &(n, r) in ctxs {
            let c = w.mem.add_context(true);
            let s = w.mem.create_pages(c, n).unwrap();
            for &x in &s[..r as usize] {
                assert!(w.mem.reserve_frame());
                w.mem.set_tier(x, Tier::Dram);
                resident.push(x);
            }
            slots.push(s);
        }
        let mut p = DmxPolicy::new(params, dram);
        p.adopt(&mut w, &resident, SimTime::ZERO);
        w.take_pressure();
        w.take_dispatches();
        Rig { w, p, slots }
    }

    impl Rig {
        fn make_dormant(&mut self, ctx: u32, hot: &[u32]) {
            let ids = hot.iter().map(|&s| self.w.mem.page(s).id).collect();
            let c = self.w.mem.context_mut(ContextId(ctx));
            c.state = ContextState::Dormant;
            c.hot_set = ids;
        }

        fn finish(&mut self, d: Dispatch) {
            let (io, done, more) = self.w.media.complete(d.io, d.completes);
            self.p.on_io_complete(&mut self.w, &io, done, d.completes);
            self.w.push_dispatches(more);
        }
    }

    use crate::media::Dispatch;

    #[test]
    fn eight_hits_reach_level_three() {
        let mut r = rig(100, DmxParams::default(), &[(4, 4)]);
        let s = r.slots[0][0];
        r.p.on_access(&mut r.w, s, false, SimTime(10));
        assert_eq!(r.w.mem.page(s).mq_level, 0);
        for t in 1..8 {
            assert_eq!(r.p.on_access(&mut r.w, s, false, SimTime(10 + t)), PolicyAccess::Hit);
        }
        assert_eq!((r.w.mem.page(s).freq, r.w.mem.page(s).mq_level), (8, 3));
        assert_eq!(r.p.queue(ContextId(0), 3), vec![s]);
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn top_level_is_a_cap() {
        let mut r = rig(100, DmxParams::default(), &[(1, 1)]);
        let s = r.slots[0][0];
        for t in 0..1000 {
            r.p.on_access(&mut r.w, s, false, SimTime(t));
        }
        assert_eq!(r.w.mem.page(s).mq_level, 7);
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn expiry_demotes_one_level() {
        let params = DmxParams::default();
        let life = params.lifetime_us;
        let mut r = rig(100, params, &[(2, 2)]);
        let s = r.slots[0][0];
        for _ in 0..8 {
            r.p.on_access(&mut r.w, s, false, SimTime::ZERO);
        }
        r.p.tick(&mut r.w, SimTime(life));
        assert_eq!(r.w.mem.page(s).mq_level, 3, "not yet past its lifetime");
        r.p.tick(&mut r.w, SimTime(life + 1));
        assert_eq!((r.w.mem.page(s).freq, r.w.mem.page(s).mq_level), (4, 2));
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn prefetch_covers_evicted_part_of_hot_set() {
        let mut r = rig(1000, DmxParams::default(), &[(64, 10)]);
        let hot = r.slots[0].clone();
        r.make_dormant(0, &hot);
        let req = r.p.plan_prefetch(&mut r.w, ContextId(0), SimTime::ZERO).unwrap();
        assert_eq!(req.pages, hot[10..].to_vec());
        assert_eq!(req.direction, Direction::PrefetchRead);
        assert_eq!(r.w.counters.prefetch_issued, 54);
        assert!(req.pages.iter().all(|&s| r.w.mem.page(s).tier == Tier::InFlight(Transfer::Read)));
        assert_eq!(r.w.mem.free_frames(), 1000 - 64);
    }

    #[test]
    fn prefetch_is_capped_by_quota_headroom() {
        let mut r = rig(1000, DmxParams::default(), &[(64, 10)]);
        // Snapshot order is hottest first; reverse slot order to show it is kept.
        let hot: Vec<u32> = r.slots[0].iter().rev().copied().collect();
        r.make_dormant(0, &hot);
        r.w.mem.context_mut(ContextId(0)).quota_pages = 30;
        let req = r.p.plan_prefetch(&mut r.w, ContextId(0), SimTime::ZERO).unwrap();
        assert_eq!(req.pages, hot[..20].to_vec());
    }

    #[test]
    fn resident_hot_set_needs_no_prefetch() {
        let mut r = rig(1000, DmxParams::default(), &[(64, 64)]);
        let hot = r.slots[0].clone();
        r.make_dormant(0, &hot);
        assert!(r.p.plan_prefetch(&mut r.w, ContextId(0), SimTime::ZERO).is_none());
        assert_eq!(r.w.media.stats().ios_dispatched, 0);
    }

    #[test]
    fn dormant_access_reads_one_page_and_prefetches_the_rest() {
        let mut r = rig(1000, DmxParams::default(), &[(64, 0)]);
        let hot = r.slots[0].clone();
        r.make_dormant(0, &hot);
        let touched = hot[5];
        assert_eq!(r.p.on_access(&mut r.w, touched, false, SimTime(100)), PolicyAccess::Wait(WaitOn::Page(touched)));
        assert_eq!(r.w.mem.context(ContextId(0)).state, ContextState::Activating);
        assert_eq!(r.p.transitions(), &[(SimTime(100), ContextId(0), Transition::DormantToActivating)]);
        let d = r.w.take_dispatches();
        let ios: Vec<&Io> = d.iter().map(|x| r.w.media.io(x.io).unwrap()).collect();
        let demand: Vec<_> = ios.iter().filter(|io| io.direction == Direction::DemandRead).collect();
        let prefetch: Vec<_> = ios.iter().filter(|io| io.direction == Direction::PrefetchRead).collect();
        assert_eq!(demand.len(), 1);
        assert_eq!(demand[0].pages, vec![touched]);
        assert_eq!(prefetch.len(), 1);
        assert_eq!(prefetch[0].pages.len(), 63);
        assert!(!prefetch[0].pages.contains(&touched));
        assert_eq!((r.w.counters.demand_reads, r.w.counters.prefetch_issued), (1, 63));
        r.p.check_invariants(&r.w).unwrap();

        // A second page of the same prefetch, touched 30 µs before it lands,
        // joins it instead of issuing anything new.
        let pf = *d.iter().find(|x| r.w.media.io(x.io).unwrap().direction == Direction::PrefetchRead).unwrap();
        let before = r.w.media.stats().ios_dispatched;
        let joiner = hot[40];
        let at = pf.completes - 30;
        assert_eq!(r.p.on_access(&mut r.w, joiner, false, at), PolicyAccess::Wait(WaitOn::Page(joiner)));
        assert!(r.w.take_dispatches().is_empty());
        assert_eq!(r.w.media.stats().ios_dispatched, before);
        assert_eq!(r.w.counters.prefetch_hits, 1);

        let mut order = d.clone();
        order.sort_by_key(|x| x.completes);
        for x in order {
            r.finish(x);
        }
        assert_eq!(r.w.mem.context(ContextId(0)).state, ContextState::Active);
        assert_eq!(r.p.transitions().last().unwrap().2, Transition::ActivatingToActive);
        assert!(hot.iter().all(|&s| r.w.mem.page(s).tier == Tier::Dram));
        r.p.check_invariants(&r.w).unwrap();
    }

    fn crowded(dirty: bool) -> Rig {
        let params = DmxParams { reserve_fraction: 0.2, floor_pages: 10, ..DmxParams::default() };
        let mut r = rig(200, params, &[(150, 150), (50, 50)]);
        r.w.mem.context_mut(ContextId(0)).quota_pages = 100;
        r.w.mem.context_mut(ContextId(1)).quota_pages = 60;
        // Warm the first 110 pages of the over-quota context to level 1.
        for &s in &r.slots[0][..110] {
            r.p.on_access(&mut r.w, s, false, SimTime(1));
            r.p.on_access(&mut r.w, s, false, SimTime(1));
        }
        if dirty {
            for &s in r.slots[0].iter().chain(&r.slots[1]) {
                r.w.mem.page_mut(s).dirty = true;
            }
        }
        r
    }

    #[test]
    fn victims_come_from_the_over_quota_context_lowest_level_first() {
        let mut r = crowded(false);
        assert_eq!(r.w.mem.free_frames(), 0);
        let req = r.p.plan_eviction(&mut r.w, SimTime(2));
        // Clean victims cost no IO and free their frames at once.
        assert!(req.pages.is_empty());
        assert_eq!(r.w.media.stats().ios_dispatched, 0);
        assert_eq!(r.w.mem.free_frames(), 40);
        assert_eq!(r.w.counters.evictions, 40);
        for &s in &r.slots[0][110..] {
            assert_eq!(r.w.mem.page(s).tier, Tier::Flash);
        }
        assert_eq!(r.w.mem.context(ContextId(1)).resident_pages, 50);
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn dirty_victims_go_out_as_one_write() {
        let mut r = crowded(true);
        let req = r.p.plan_eviction(&mut r.w, SimTime(2));
        assert_eq!(req.pages, r.slots[0][110..].to_vec());
        assert_eq!(r.w.mem.free_frames(), 0, "frames are freed when the write lands");
        // A second pass counts the pending write and asks for nothing more.
        assert!(r.p.plan_eviction(&mut r.w, SimTime(3)).pages.is_empty());
        r.p.check_invariants(&r.w).unwrap();
        for d in r.w.take_dispatches() {
            r.finish(d);
        }
        assert_eq!(r.w.mem.free_frames(), 40);
        assert_eq!((r.w.counters.writebacks, r.w.counters.evictions), (40, 40));
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn access_during_eviction_write_keeps_the_page() {
        let mut r = crowded(true);
        r.p.plan_eviction(&mut r.w, SimTime(2));
        let back = r.slots[0][120];
        assert_eq!(r.p.on_access(&mut r.w, back, false, SimTime(3)), PolicyAccess::Hit);
        assert_eq!(r.w.mem.page(back).tier, Tier::Dram);
        r.p.check_invariants(&r.w).unwrap();
        for d in r.w.take_dispatches() {
            r.finish(d);
        }
        assert_eq!(r.w.mem.page(back).tier, Tier::Dram);
        assert_eq!(r.w.mem.free_frames(), 39);
        r.p.check_invariants(&r.w).unwrap();
    }

    #[test]
    fn idle_context_goes_dormant_after_enough_windows() {
        let params = DmxParams::default();
        let window = params.window_us;
        let mut r = rig(1000, params, &[(16, 16)]);
        let hottest = r.slots[0][3];
        for _ in 0..4 {
            r.p.on_access(&mut r.w, hottest, false, SimTime(1));
        }
        let mut dormant_at = None;
        for k in 1..=20 {
            r.p.tick(&mut r.w, SimTime(k * window));
            if r.w.mem.context(ContextId(0)).state == ContextState::Dormant {
                dormant_at = Some(k);
                break;
            }
        }
        // Window 1 sees 4 accesses (score 1.2); windows 2..=6 fall below 1.
        assert_eq!(dormant_at, Some(6));
        let c = r.w.mem.context(ContextId(0));
        assert_eq!(c.hot_set.len(), 16);
        assert_eq!(c.hot_set[0], r.w.mem.page(hottest).id);
        assert_eq!(r.p.transitions().len(), 1);
    }

    #[test]
    fn prefetch_uses_the_quota_the_hot_set_was_sized_to() {
        let params = DmxParams::default();
        let window = params.window_us;
        let mut r = rig(200, params, &[(16, 16), (100, 100)]);
        let busy = r.slots[1].clone();
        let mut k = 1;
        while r.w.mem.context(ContextId(0)).state != ContextState::Dormant {
            for &s in &busy {
                r.p.on_access(&mut r.w, s, false, SimTime(k * window - 1));
            }
            r.p.tick(&mut r.w, SimTime(k * window));
            k += 1;
            assert!(k < 50);
        }
        assert_eq!(r.w.mem.context(ContextId(0)).hot_set.len(), 16);
        // Evict six of its pages, then let its current quota shrink below
        // what it still holds.
        let gone = r.slots[0][..6].to_vec();
        for &s in &gone {
            r.p.unlink_resident(&r.w, s);
            r.w.mem.set_tier(s, Tier::Flash);
            r.w.mem.release_frame();
        }
        r.w.mem.context_mut(ContextId(0)).quota_pages = 4;
        let req = r.p.plan_prefetch(&mut r.w, ContextId(0), SimTime(k * window)).unwrap();
        let mut got = req.pages.clone();
        got.sort_unstable();
        assert_eq!(got, gone);
    }
}
