//! Tiering policies and the state they share.

use std::fmt;
use std::str::FromStr;

use crate::media::{BlockRequest, CompletionHandle, Dispatch, Io, Media};
use crate::memory::{ContextId, MemoryModel};
use crate::sim::SimTime;

pub mod dmx;
pub mod swap;

pub use dmx::{rebalance_quotas, DmxParams, DmxPolicy};
pub use swap::SwapPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Swap,
    Dmx,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Swap => "swap",
            PolicyKind::Dmx => "dmx",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "swap" => Ok(PolicyKind::Swap),
            "dmx" => Ok(PolicyKind::Dmx),
            other => Err(format!("unknown policy `{other}` (expected swap or dmx)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub demand_faults: u64,
    pub demand_reads: u64,
    pub prefetch_issued: u64,
    pub prefetch_hits: u64,
    pub mispredictions: u64,
    pub evictions: u64,
    pub writebacks: u64,
}

/// Everything a policy may touch besides its own structures.
#[derive(Debug)]
pub struct World {
    pub mem: MemoryModel,
    pub media: Media,
    pub counters: Counters,
    dispatched: Vec<Dispatch>,
    pressure: bool,
}

impl World {
    pub fn new(mem: MemoryModel, media: Media) -> Self {
        Self { mem, media, counters: Counters::default(), dispatched: Vec::new(), pressure: false }
    }

    /// Hand a request to media management. Dispatched IOs are picked up by
    /// the event loop.
    pub fn submit(&mut self, req: BlockRequest, now: SimTime) -> CompletionHandle {
        let (handle, d) = self.media.submit(req, now);
        self.dispatched.extend(d);
        handle
    }

    pub(crate) fn push_dispatches(&mut self, d: Vec<Dispatch>) {
        self.dispatched.extend(d);
    }

    pub(crate) fn take_dispatches(&mut self) -> Vec<Dispatch> {
        std::mem::take(&mut self.dispatched)
    }

    /// Ask for a background eviction pass as soon as possible.
    pub fn signal_pressure(&mut self) {
        self.pressure = true;
    }

    pub(crate) fn take_pressure(&mut self) -> bool {
        std::mem::replace(&mut self.pressure, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaitOn {
    /// Until the page leaves the in-flight state.
    Page(u32),
    /// Until a DRAM frame frees up.
    Frames,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyAccess {
    Hit,
    Wait(WaitOn),
}

pub trait TieringPolicy: Send {
    fn kind(&self) -> PolicyKind;

    /// Take over the pages placed during setup. `resident` lists DRAM pages
    /// oldest first.
    fn adopt(&mut self, w: &mut World, resident: &[u32], now: SimTime);

    fn on_access(&mut self, w: &mut World, slot: u32, is_write: bool, now: SimTime) -> PolicyAccess;

    /// Make room for freshly created pages (currently parked in flash).
    /// Returns the allocation stall in µs.
    fn on_allocate(&mut self, w: &mut World, slots: &[u32], now: SimTime) -> u64;

    fn on_io_complete(&mut self, w: &mut World, io: &Io, request_done: bool, now: SimTime);

    fn on_teardown(&mut self, w: &mut World, ctx: ContextId, slots: &[u32]);

    fn tick_period(&self) -> Option<u64> {
        None
    }

    /// Periodic background work. Returns the requests it submitted.
    fn tick(&mut self, _w: &mut World, _now: SimTime) -> Vec<BlockRequest> {
        Vec::new()
    }

    /// Response to [`World::signal_pressure`].
    fn on_pressure(&mut self, _w: &mut World, _now: SimTime) -> Vec<BlockRequest> {
        Vec::new()
    }

    fn check_invariants(&self, w: &World) -> Result<(), String>;
}

pub fn build(kind: PolicyKind, params: &DmxParams, dram_pages: u64) -> Box<dyn TieringPolicy> {
    match kind {
        PolicyKind::Swap => Box::new(SwapPolicy::new()),
        PolicyKind::Dmx => Box::new(DmxPolicy::new(params.clone(), dram_pages)),
    }
}
