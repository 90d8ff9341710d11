//! Reactive baseline: demand paging over one global strict-LRU list.
//!
//! Every fault is paid in the accessor's critical path. With no free frame
//! the LRU tail is evicted first; a dirty victim is written back before the
//! faulting page is read into its frame. Both IOs go out at demand class,
//! so concurrent faults from different clients queue behind each other at
//! the device. The policy does nothing between accesses.

use std::collections::HashMap;

use crate::lists::{List, ListArena};
use crate::media::{BlockRequest, Direction, Io, IoId, Priority};
use crate::memory::{ContextId, Tier, Transfer};
use crate::sim::SimTime;

use super::{PolicyAccess, PolicyKind, TieringPolicy, WaitOn, World};

/// Work that inherits a frame once a victim write-back lands.
#[derive(Clone, Debug)]
enum AfterWrite {
    Read(u32),
    Place(Vec<u32>),
}

#[derive(Debug, Default)]
pub struct SwapPolicy {
    arena: ListArena,
    /// Most recently used at the front.
    lru: List,
    chained: HashMap<IoId, AfterWrite>,
}

impl SwapPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// LRU order, most recent first.
    pub fn lru_order(&self) -> Vec<u32> {
        self.arena.iter(&self.lru).collect()
    }

    fn submit_read(&mut self, w: &mut World, slot: u32, now: SimTime) {
        w.counters.demand_reads += 1;
        w.submit(BlockRequest::new(Direction::DemandRead, vec![slot], now), now);
    }

    /// Evict the LRU tail. Returns the write-back IO if the victim was
    /// dirty (its frame stays held until the write lands), `None` if it was
    /// dropped and its frame released.
    fn evict_tail(&mut self, w: &mut World, now: SimTime) -> Option<Option<IoId>> {
        let victim = self.arena.pop_back(&mut self.lru)?;
        if w.mem.page(victim).dirty {
            w.mem.set_tier(victim, Tier::InFlight(Transfer::Write));
            w.counters.writebacks += 1;
            let req = BlockRequest::new(Direction::EvictWrite, vec![victim], now)
                .with_priority(Priority::Demand);
            let h = w.submit(req, now);
            Some(Some(h.ios[0]))
        } else {
            w.mem.set_tier(victim, Tier::Flash);
            w.mem.release_frame();
            w.counters.evictions += 1;
            Some(None)
        }
    }
}

impl TieringPolicy for SwapPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Swap
    }

    fn adopt(&mut self, w: &mut World, resident: &[u32], _now: SimTime) {
        self.arena.ensure(w.mem.slot_count());
        for &s in resident {
            self.arena.push_front(&mut self.lru, s);
        }
    }

    fn on_access(&mut self, w: &mut World, slot: u32, _is_write: bool, now: SimTime) -> PolicyAccess {
        match w.mem.page(slot).tier {
            Tier::Dram => {
                self.arena.remove(&mut self.lru, slot);
                self.arena.push_front(&mut self.lru, slot);
                PolicyAccess::Hit
            }
            Tier::InFlight(_) => PolicyAccess::Wait(WaitOn::Page(slot)),
            Tier::Flash => {
                if w.mem.reserve_frame() {
                    w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
                    self.submit_read(w, slot, now);
                    return PolicyAccess::Wait(WaitOn::Page(slot));
                }
                match self.evict_tail(w, now) {
                    None => PolicyAccess::Wait(WaitOn::Frames),
                    Some(None) => {
                        let ok = w.mem.reserve_frame();
                        debug_assert!(ok);
                        w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
                        self.submit_read(w, slot, now);
                        PolicyAccess::Wait(WaitOn::Page(slot))
                    }
                    Some(Some(write_io)) => {
                        // The page claims the victim's frame; its read goes
                        // out when the write-back completes.
                        w.mem.set_tier(slot, Tier::InFlight(Transfer::Read));
                        self.chained.insert(write_io, AfterWrite::Read(slot));
                        PolicyAccess::Wait(WaitOn::Page(slot))
                    }
                }
            }
        }
    }

    fn on_allocate(&mut self, w: &mut World, slots: &[u32], now: SimTime) -> u64 {
        self.arena.ensure(w.mem.slot_count());
        let mut dirty_victims = Vec::new();
        let mut waiting = Vec::new();
        for &s in slots {
            let has_frame = w.mem.reserve_frame()
                || match self.lru.back() {
                    Some(v) if w.mem.page(v).dirty => {
                        self.arena.remove(&mut self.lru, v);
                        w.mem.set_tier(v, Tier::InFlight(Transfer::Write));
                        w.counters.writebacks += 1;
                        dirty_victims.push(v);
                        w.mem.set_tier(s, Tier::InFlight(Transfer::Read));
                        w.mem.page_mut(s).dirty = true;
                        waiting.push(s);
                        continue;
                    }
                    Some(_) => {
                        self.evict_tail(w, now);
                        w.mem.reserve_frame()
                    }
                    None => false,
                };
            if has_frame {
                w.mem.set_tier(s, Tier::Dram);
                w.mem.page_mut(s).dirty = true;
                self.arena.push_front(&mut self.lru, s);
            }
            // Otherwise every frame is mid-transfer: the page stays in
            // flash as a clean zero page.
        }
        if dirty_victims.is_empty() {
            return 0;
        }
        let req = BlockRequest::new(Direction::EvictWrite, dirty_victims, now)
            .with_priority(Priority::Demand);
        let batch = w.media.profile().batch_pages as usize;
        let handle = w.submit(req, now);
        for (io, chunk) in handle.ios.iter().zip(waiting.chunks(batch)) {
            self.chained.insert(*io, AfterWrite::Place(chunk.to_vec()));
        }
        w.media
            .project_completion(&handle, now)
            .map_or(0, |t| t.since(now))
    }

    fn on_io_complete(&mut self, w: &mut World, io: &Io, _request_done: bool, now: SimTime) {
        match io.direction.transfer() {
            Transfer::Read => {
                for &s in &io.pages {
                    w.mem.set_tier(s, Tier::Dram);
                    w.mem.page_mut(s).dirty = false;
                    self.arena.push_front(&mut self.lru, s);
                }
            }
            Transfer::Write => {
                let follow = self.chained.remove(&io.id);
                for &s in &io.pages {
                    w.mem.set_tier(s, Tier::Flash);
                    w.mem.page_mut(s).dirty = false;
                    w.counters.evictions += 1;
                }
                match follow {
                    Some(AfterWrite::Read(slot)) => self.submit_read(w, slot, now),
                    Some(AfterWrite::Place(pages)) => {
                        for s in pages {
                            w.mem.set_tier(s, Tier::Dram);
                            self.arena.push_front(&mut self.lru, s);
                        }
                    }
                    None => {
                        for _ in &io.pages {
                            w.mem.release_frame();
                        }
                    }
                }
            }
        }
    }

    fn on_teardown(&mut self, _w: &mut World, _ctx: ContextId, slots: &[u32]) {
        for &s in slots {
            if self.arena.is_linked(s) {
                self.arena.remove(&mut self.lru, s);
            }
        }
    }

    fn check_invariants(&self, w: &World) -> Result<(), String> {
        let resident = w.mem.residency_census().dram_used as usize;
        if self.lru.len() != resident {
            return Err(format!("LRU holds {} pages, DRAM holds {resident}", self.lru.len()));
        }
        for s in self.arena.iter(&self.lru) {
            if w.mem.page(s).tier != Tier::Dram {
                return Err(format!("LRU page {s} is not DRAM-resident"));
            }
        }
        Ok(())
    }
}
