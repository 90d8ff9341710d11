//! The event loop tying memory, media, a policy, and the workload actors
//! together.
//!
//! Actors (critical threads, noise clients, a trace replayer, an
//! interactive probe) walk through a list of page accesses. A hit costs no
//! simulated time; a miss parks the actor until the page leaves flight or
//! a frame frees up, after which it retries the same access.

use std::collections::{HashMap, VecDeque};
use std::fmt::{self, Write as _};

use crate::error::{Result, SimError};
use crate::media::{DeviceProfile, IoId, Media};
use crate::memory::{Census, ContextId, MemoryModel, PageId, Tier, TierConfig};
use crate::metrics::{Collector, RunSummary};
use crate::policy::{self, Counters, DmxParams, PolicyAccess, PolicyKind, TieringPolicy, WaitOn, World};
use crate::rng::RandomSource;
use crate::sim::{Kernel, SimTime};
use crate::workload::{CriticalSpec, NoiseCatalog, NoiseClientSpec, Trace, TraceRecord, ZipfSampler};

/// Everything needed to build and run one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub tier: TierConfig,
    pub device: DeviceProfile,
    pub policy: PolicyKind,
    pub dmx: DmxParams,
    pub containers: u32,
    pub scale: u64,
    pub noise: NoiseClientSpec,
    pub critical: CriticalSpec,
    pub duration_us: u64,
    pub warmup_us: u64,
    pub seed: u64,
    /// Run the full invariant sweep every this many events; 0 disables.
    pub check_every: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tier: TierConfig::with_dram(65_536),
            device: DeviceProfile::flash(),
            policy: PolicyKind::Swap,
            dmx: DmxParams::default(),
            containers: 1,
            scale: 1024,
            noise: NoiseClientSpec::default(),
            critical: CriticalSpec::default(),
            duration_us: 65_000_000,
            warmup_us: 5_000_000,
            seed: 42,
            check_every: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.device.validate().map_err(|m| SimError::config("device", m))?;
        self.dmx.validate().map_err(|m| SimError::config("dmx", m))?;
        self.critical.validate()?;
        if self.tier.dram_pages == 0 {
            return Err(SimError::config("dram_pages", "must be positive"));
        }
        if self.scale == 0 {
            return Err(SimError::config("scale", "must be at least 1"));
        }
        if self.duration_us <= self.warmup_us {
            return Err(SimError::config("duration_s", "duration must exceed warmup_s"));
        }
        if self.noise.think_us == 0 {
            return Err(SimError::config("noise.think_ms", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Actor {
    Critical(u32),
    Noise(u32),
    Trace,
    Probe,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Critical(i) => write!(f, "critical:{i}"),
            Actor::Noise(i) => write!(f, "noise:{i}"),
            Actor::Trace => f.write_str("trace"),
            Actor::Probe => f.write_str("probe"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Start(Actor),
    Resume(Actor),
    TxnDone(u32),
    IoDone(IoId),
    Tick,
    Pressure,
}

impl fmt::Display for Ev {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ev::Start(a) => write!(f, "start {a}"),
            Ev::Resume(a) => write!(f, "resume {a}"),
            Ev::TxnDone(t) => write!(f, "txn_done critical:{t}"),
            Ev::IoDone(id) => write!(f, "io_done {id}"),
            Ev::Tick => f.write_str("tick"),
            Ev::Pressure => f.write_str("pressure"),
        }
    }
}

/// Accesses an actor still has to perform.
#[derive(Clone, Debug, Default)]
struct Cursor {
    seq: Vec<(u32, bool)>,
    pos: usize,
    start: SimTime,
    attempts: u32,
}

impl Cursor {
    fn reset(&mut self, now: SimTime) {
        self.seq.clear();
        self.pos = 0;
        self.start = now;
        self.attempts = 0;
    }
}

struct CriticalState {
    spec: CriticalSpec,
    hot: Vec<u32>,
    cold: Vec<u32>,
    zipf: ZipfSampler,
    threads: Vec<(Cursor, RandomSource)>,
}

struct NoiseState {
    spec: NoiseClientSpec,
    catalog: NoiseCatalog,
    /// Slots of each noise container, indexed by container.
    slots: Vec<Vec<u32>>,
    clients: Vec<(Cursor, RandomSource)>,
}

struct TraceState {
    records: Vec<TraceRecord>,
    next: usize,
    cursor: Cursor,
}

/// How a run was set up, reported alongside results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SetupInfo {
    pub critical_ctx: Option<ContextId>,
    pub noise_pages: u64,
    pub total_pages: u64,
}

pub struct Simulation {
    kernel: Kernel<Ev>,
    world: World,
    policy: Box<dyn TieringPolicy>,
    seed: u64,
    warmup: SimTime,
    horizon: SimTime,
    collector: Collector,
    critical: Option<CriticalState>,
    noise: Option<NoiseState>,
    trace: Option<TraceState>,
    probe: Cursor,
    probe_result: Option<u64>,
    page_waiters: HashMap<u32, Vec<Actor>>,
    frame_waiters: VecDeque<Actor>,
    pressure_pending: bool,
    setup_order: Vec<u32>,
    started: bool,
    check_every: u64,
    event_log: Option<String>,
    access_log: Option<Vec<TraceRecord>>,
    fault_log: Option<Vec<(SimTime, PageId)>>,
    info: SetupInfo,
}

impl Simulation {
    /// An empty system: no contexts, no workload. Contexts are added with
    /// [`add_context`](Self::add_context) and populated with
    /// [`place`](Self::place) before [`start`](Self::start).
    pub fn bare(tier: TierConfig, device: DeviceProfile, kind: PolicyKind, dmx: &DmxParams, seed: u64) -> Self {
        let policy = policy::build(kind, dmx, tier.dram_pages);
        Self {
            kernel: Kernel::new(),
            world: World::new(MemoryModel::new(tier), Media::new(device)),
            policy,
            seed,
            warmup: SimTime::ZERO,
            horizon: SimTime(u64::MAX),
            collector: Collector::new(SimTime::ZERO),
            critical: None,
            noise: None,
            trace: None,
            probe: Cursor::default(),
            probe_result: None,
            page_waiters: HashMap::new(),
            frame_waiters: VecDeque::new(),
            pressure_pending: false,
            setup_order: Vec::new(),
            started: false,
            check_every: 0,
            event_log: None,
            access_log: None,
            fault_log: None,
            info: SetupInfo { critical_ctx: None, noise_pages: 0, total_pages: 0 },
        }
    }

    /// The full colocation scenario: one critical container (context 0)
    /// and `containers` noise containers (contexts 1..=N).
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sim = Self::bare(cfg.tier, cfg.device.clone(), cfg.policy, &cfg.dmx, cfg.seed);
        sim.warmup = SimTime(cfg.warmup_us);
        sim.horizon = SimTime(cfg.duration_us);
        sim.collector = Collector::new(sim.warmup);
        sim.check_every = cfg.check_every;

        let crit_ctx = sim.add_context(true);
        let catalog = NoiseCatalog::new(cfg.scale)?;
        let noise_ctxs: Vec<ContextId> = (0..cfg.containers).map(|_| sim.add_context(cfg.noise.managed)).collect();

        // The initial image is laid down oldest first, approximating LRU
        // order in steady state: the critical service's cold data, then the
        // noise containers, then its hot set. Whatever exceeds DRAM spills
        // from the old end.
        let active = cfg.critical.threads > 0;
        let cold = if active { sim.place_slots(crit_ctx, cfg.critical.cold_pages as u64)? } else { Vec::new() };
        let mut noise_slots = Vec::with_capacity(noise_ctxs.len());
        for &c in &noise_ctxs {
            noise_slots.push(sim.place_slots(c, catalog.pages_per_container())?);
        }
        let hot = if active { sim.place_slots(crit_ctx, cfg.critical.working_set_pages as u64)? } else { Vec::new() };
        sim.info = SetupInfo {
            critical_ctx: Some(crit_ctx),
            noise_pages: catalog.pages_per_container() * cfg.containers as u64,
            total_pages: sim.world.mem.total_allocated(),
        };

        if cfg.critical.threads > 0 {
            let threads = (0..cfg.critical.threads)
                .map(|i| (Cursor::default(), RandomSource::derive(cfg.seed, 1 << 32 | i as u64)))
                .collect();
            sim.critical = Some(CriticalState {
                spec: cfg.critical.clone(),
                zipf: ZipfSampler::new(cfg.critical.working_set_pages, cfg.critical.skew),
                hot,
                cold,
                threads,
            });
        }
        if cfg.containers > 0 && cfg.noise.clients > 0 {
            let clients = (0..cfg.noise.clients)
                .map(|i| (Cursor::default(), RandomSource::derive(cfg.seed, 2 << 32 | i as u64)))
                .collect();
            sim.noise = Some(NoiseState { spec: cfg.noise.clone(), catalog, slots: noise_slots, clients });
        }
        sim.start()?;
        Ok(sim)
    }

    pub fn add_context(&mut self, managed: bool) -> ContextId {
        self.world.mem.add_context(managed)
    }

    fn place_slots(&mut self, ctx: ContextId, n: u64) -> Result<Vec<u32>> {
        if self.started {
            return Err(SimError::PageState("setup placement after start".into()));
        }
        let slots = self.world.mem.create_pages(ctx, n)?;
        self.setup_order.extend_from_slice(&slots);
        Ok(slots)
    }

    /// Create `n` pages for `ctx` as part of the initial image. At
    /// [`start`](Self::start) the most recently placed pages that fit are
    /// DRAM-resident and dirty; the rest sit in flash, clean.
    pub fn place(&mut self, ctx: ContextId, n: u64) -> Result<Vec<PageId>> {
        let slots = self.place_slots(ctx, n)?;
        Ok(slots.iter().map(|&s| self.world.mem.page(s).id).collect())
    }

    /// Finish setup and schedule the workload. Idempotent.
    pub fn start(&mut self) -> Result<()> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let dram = self.world.mem.config().dram_pages as usize;
        let order = std::mem::take(&mut self.setup_order);
        let resident = &order[order.len().saturating_sub(dram)..];
        for &s in resident {
            let ok = self.world.mem.reserve_frame();
            debug_assert!(ok);
            self.world.mem.set_tier(s, Tier::Dram);
            self.world.mem.page_mut(s).dirty = true;
        }
        self.info.total_pages = self.world.mem.total_allocated();
        let now = self.kernel.now();
        self.policy.adopt(&mut self.world, resident, now);

        if let Some(period) = self.policy.tick_period() {
            self.kernel.schedule(now + period, Ev::Tick);
        }
        if let Some(c) = &self.critical {
            for i in 0..c.threads.len() as u32 {
                self.kernel.schedule(now, Ev::Start(Actor::Critical(i)));
            }
        }
        if let Some(n) = &mut self.noise {
            let think = n.spec.think_us.max(1);
            let mut starts = Vec::with_capacity(n.clients.len());
            for (_, rng) in &mut n.clients {
                starts.push(rng.draw_uniform(think));
            }
            for (i, d) in starts.into_iter().enumerate() {
                self.kernel.schedule(now + d, Ev::Start(Actor::Noise(i as u32)));
            }
        }
        self.after_event()
    }

    /// Replay `trace` sequentially: each record is issued at its timestamp
    /// or when the previous one completes, whichever is later.
    pub fn attach_trace(&mut self, trace: &Trace) -> Result<()> {
        for r in &trace.records {
            let page = PageId::new(r.ctx, r.page);
            if self.world.mem.slot_of(page).is_none() {
                return Err(SimError::PageState(format!("trace references unallocated page {page:?}")));
            }
        }
        if let Some(first) = trace.records.first() {
            let at = SimTime(first.time_us).max(self.kernel.now());
            self.kernel.schedule(at, Ev::Start(Actor::Trace));
        }
        self.trace = Some(TraceState { records: trace.records.clone(), next: 0, cursor: Cursor::default() });
        Ok(())
    }

    /// Build a bare system sized for `trace`, with every referenced context
    /// managed, and attach the replayer.
    pub fn for_trace(
        trace: &Trace,
        tier: TierConfig,
        device: DeviceProfile,
        kind: PolicyKind,
        dmx: &DmxParams,
        seed: u64,
    ) -> Result<Self> {
        let mut sim = Self::bare(tier, device, kind, dmx, seed);
        let sizes = trace.footprint();
        let top = sizes.iter().map(|&(c, _)| c + 1).max().unwrap_or(0);
        for _ in 0..top {
            sim.add_context(true);
        }
        for (c, n) in sizes {
            sim.place(ContextId(c), n as u64)?;
        }
        sim.start()?;
        sim.attach_trace(trace)?;
        Ok(sim)
    }

    pub fn set_horizon(&mut self, duration_us: u64, warmup_us: u64) {
        self.horizon = SimTime(duration_us);
        self.warmup = SimTime(warmup_us);
        self.collector = Collector::new(self.warmup);
    }

    pub fn set_check_every(&mut self, events: u64) {
        self.check_every = events;
    }

    pub fn enable_event_log(&mut self) {
        self.event_log.get_or_insert_with(String::new);
    }

    pub fn enable_access_log(&mut self) {
        self.access_log.get_or_insert_with(Vec::new);
    }

    pub fn enable_fault_log(&mut self) {
        self.fault_log.get_or_insert_with(Vec::new);
    }

    pub fn event_log(&self) -> Option<&str> {
        self.event_log.as_deref()
    }

    pub fn access_log(&self) -> Option<&[TraceRecord]> {
        self.access_log.as_deref()
    }

    pub fn fault_log(&self) -> Option<&[(SimTime, PageId)]> {
        self.fault_log.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn events_processed(&self) -> u64 {
        self.kernel.processed()
    }

    pub fn counters(&self) -> &Counters {
        &self.world.counters
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn policy(&self) -> &dyn TieringPolicy {
        self.policy.as_ref()
    }

    pub fn census(&self) -> Census {
        self.world.mem.residency_census()
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    /// Actors parked on (a page in flight, a free frame).
    pub fn blocked_actors(&self) -> (usize, usize) {
        (self.page_waiters.values().map(Vec::len).sum(), self.frame_waiters.len())
    }

    pub fn setup_info(&self) -> SetupInfo {
        self.info
    }

    pub fn tier_of(&self, page: PageId) -> Option<Tier> {
        self.world.mem.slot_of(page).map(|s| self.world.mem.page(s).tier)
    }

    /// Allocate `n` fresh pages at the current time. Returns the new page
    /// ids and the allocation stall in µs.
    pub fn allocate(&mut self, ctx: ContextId, n: u64) -> Result<(Vec<PageId>, u64)> {
        self.start()?;
        let slots = self.world.mem.create_pages(ctx, n)?;
        let now = self.kernel.now();
        let stall = self.policy.on_allocate(&mut self.world, &slots, now);
        self.after_event()?;
        Ok((slots.iter().map(|&s| self.world.mem.page(s).id).collect(), stall))
    }

    pub fn teardown(&mut self, ctx: ContextId) -> Result<()> {
        let slots = self.world.mem.teardown(ctx)?;
        self.policy.on_teardown(&mut self.world, ctx, &slots);
        self.after_event()
    }

    /// Perform one access now and run the system until it completes.
    /// Returns the stall in µs (0 for a hit).
    pub fn access(&mut self, page: PageId, is_write: bool) -> Result<u64> {
        self.start()?;
        let slot = self.world.mem.slot_of(page).ok_or(SimError::UnknownContext(page.ctx))?;
        if !self.world.mem.is_live(slot) {
            return Err(SimError::TornDown(page.ctx));
        }
        let now = self.kernel.now();
        self.probe.reset(now);
        self.probe.seq.push((slot, is_write));
        self.probe_result = None;
        self.step(Actor::Probe)?;
        self.after_event()?;
        // Nothing in the system can take longer than this to serve one
        // access; running past it means the probe is stuck.
        let limit = now + 3_600_000_000;
        while self.probe_result.is_none() {
            match self.kernel.pop_until(limit) {
                Some(ev) => self.dispatch(ev)?,
                None => {
                    return Err(SimError::PageState(format!("probe access to {page:?} never completed")));
                }
            }
        }
        Ok(self.probe_result.take().unwrap_or(0))
    }

    /// Process every event up to `t` (inclusive) and move the clock there.
    pub fn run_until(&mut self, t: SimTime) -> Result<()> {
        self.start()?;
        while let Some(ev) = self.kernel.pop_until(t) {
            self.dispatch(ev)?;
        }
        self.kernel.advance_to(t);
        Ok(())
    }

    /// Run to the configured horizon.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.horizon)
    }

    /// Run until every queued event, including IO completions, is done.
    /// Only meaningful without periodic work (swap, or a finished trace).
    pub fn drain(&mut self) -> Result<()> {
        self.start()?;
        let mut idle_ticks = 0;
        while let Some(ev) = self.kernel.pop_until(SimTime(u64::MAX)) {
            let only_tick = ev.kind == Ev::Tick;
            self.dispatch(ev)?;
            if only_tick && self.kernel.pending() == 1 {
                idle_ticks += 1;
                if idle_ticks > 2 {
                    break;
                }
            } else {
                idle_ticks = 0;
            }
        }
        Ok(())
    }

    pub fn summary(&self, containers: u32) -> RunSummary {
        RunSummary::summarize(
            containers,
            self.policy.kind(),
            &self.world.media.profile().name,
            self.seed,
            &self.collector,
            &self.world.counters,
            self.horizon.since(self.warmup),
        )
    }

    fn dispatch(&mut self, ev: crate::sim::Event<Ev>) -> Result<()> {
        if let Some(log) = &mut self.event_log {
            let _ = writeln!(log, "{}\t{}\t{}", ev.time.as_us(), ev.seq, ev.kind);
        }
        self.handle(ev.kind)?;
        self.after_event()
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        let now = self.kernel.now();
        match ev {
            Ev::Start(a) => self.begin(a),
            Ev::Resume(a) => self.step(a),
            Ev::TxnDone(t) => {
                let start = self.critical.as_ref().expect("critical").threads[t as usize].0.start;
                self.collector.record_txn(now.since(start), now);
                self.begin(Actor::Critical(t))
            }
            Ev::IoDone(id) => {
                let (io, done, more) = self.world.media.complete(id, now);
                self.world.push_dispatches(more);
                self.policy.on_io_complete(&mut self.world, &io, done, now);
                Ok(())
            }
            Ev::Tick => {
                self.policy.tick(&mut self.world, now);
                if let Some(p) = self.policy.tick_period() {
                    self.kernel.schedule(now + p, Ev::Tick);
                }
                Ok(())
            }
            Ev::Pressure => {
                self.pressure_pending = false;
                self.policy.on_pressure(&mut self.world, now);
                Ok(())
            }
        }
    }

    fn after_event(&mut self) -> Result<()> {
        self.wake_pages();
        for d in self.world.take_dispatches() {
            self.kernel.schedule(d.completes, Ev::IoDone(d.io));
        }
        let now = self.kernel.now();
        if self.world.take_pressure() && !self.pressure_pending {
            self.pressure_pending = true;
            self.kernel.schedule(now, Ev::Pressure);
        }
        let free = self.world.mem.free_frames() as usize;
        for _ in 0..free.min(self.frame_waiters.len()) {
            let a = self.frame_waiters.pop_front().unwrap();
            self.kernel.schedule(now, Ev::Resume(a));
        }
        if self.check_every > 0 && self.kernel.processed().is_multiple_of(self.check_every) {
            self.check_invariants()?;
        }
        Ok(())
    }

    fn wake_pages(&mut self) {
        let now = self.kernel.now();
        for s in self.world.mem.take_landed() {
            if self.page_waiters.is_empty() {
                break;
            }
            if matches!(self.world.mem.page(s).tier, Tier::InFlight(_)) {
                continue;
            }
            for a in self.page_waiters.remove(&s).unwrap_or_default() {
                self.kernel.schedule(now, Ev::Resume(a));
            }
        }
    }

    /// Full consistency sweep over every component.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| SimError::Invariant { time_us: self.kernel.now().as_us(), msg };
        self.world.mem.check_invariants().map_err(fail)?;
        self.policy.check_invariants(&self.world).map_err(fail)?;
        let st = self.world.media.stats();
        if st.priority_violations > 0 {
            return Err(fail(format!("{} prefetch dispatches ahead of demand", st.priority_violations)));
        }
        if st.idle_with_work > 0 {
            return Err(fail("device idled with dispatchable work".into()));
        }
        let busy = self.world.media.committed_busy_us();
        if busy > 0 {
            let bw = self.world.media.profile().bandwidth as f64;
            let rate = st.bytes_moved as f64 / (busy as f64 / 1e6);
            if rate > bw * 1.0001 + 1.0 {
                return Err(fail(format!("moved {rate:.0} B/s over a {bw} B/s channel")));
            }
        }
        let c = &self.world.counters;
        if c.prefetch_hits + c.mispredictions > c.prefetch_issued {
            return Err(fail("more prefetch outcomes than prefetches".into()));
        }
        Ok(())
    }

    fn cursor(&mut self, a: Actor) -> &mut Cursor {
        match a {
            Actor::Critical(i) => &mut self.critical.as_mut().expect("critical").threads[i as usize].0,
            Actor::Noise(i) => &mut self.noise.as_mut().expect("noise").clients[i as usize].0,
            Actor::Trace => &mut self.trace.as_mut().expect("trace").cursor,
            Actor::Probe => &mut self.probe,
        }
    }

    /// Load the next unit of work for `a` and start on it.
    fn begin(&mut self, a: Actor) -> Result<()> {
        let now = self.kernel.now();
        match a {
            Actor::Critical(i) => {
                let c = self.critical.as_mut().expect("critical");
                let (cur, rng) = &mut c.threads[i as usize];
                cur.reset(now);
                let writes = c.spec.write_ratio > 0.0;
                let is_cold = c.spec.cold_txn_ratio > 0.0 && rng.next_f64() < c.spec.cold_txn_ratio;
                for _ in 0..c.spec.pages_per_txn {
                    let slot = if is_cold {
                        c.cold[rng.draw_uniform(c.cold.len() as u64) as usize]
                    } else {
                        c.hot[c.zipf.sample(rng) as usize]
                    };
                    let w = writes && rng.next_f64() < c.spec.write_ratio;
                    cur.seq.push((slot, w));
                }
            }
            Actor::Noise(i) => {
                let n = self.noise.as_mut().expect("noise");
                let (cur, rng) = &mut n.clients[i as usize];
                cur.reset(now);
                let container = rng.draw_uniform(n.slots.len() as u64) as usize;
                let image = rng.draw_uniform(n.catalog.image_count() as u64) as usize;
                let (first, len) = n.catalog.images[image];
                let slots = &n.slots[container];
                cur.seq.extend((first..first + len).map(|k| (slots[k as usize], false)));
            }
            Actor::Trace => {
                let t = self.trace.as_mut().expect("trace");
                let r = t.records[t.next];
                t.cursor.reset(now);
                let slot = self.world.mem.slot_of(PageId::new(r.ctx, r.page)).expect("validated");
                t.cursor.seq.push((slot, r.write));
            }
            Actor::Probe => {}
        }
        self.step(a)
    }

    /// Advance `a` through its accesses until it blocks or finishes.
    fn step(&mut self, a: Actor) -> Result<()> {
        let now = self.kernel.now();
        loop {
            let cur = self.cursor(a);
            if cur.pos == cur.seq.len() {
                return self.finish(a);
            }
            let (slot, write) = cur.seq[cur.pos];
            let first = cur.attempts == 0;
            cur.attempts += 1;
            let page = self.world.mem.page(slot).id;
            if self.world.mem.context(page.ctx).torn_down {
                return Err(SimError::TornDown(page.ctx));
            }
            if first {
                if let Some(log) = &mut self.access_log {
                    log.push(TraceRecord { time_us: now.as_us(), ctx: page.ctx.0, page: page.index, write });
                }
            }
            match self.policy.on_access(&mut self.world, slot, write, now) {
                PolicyAccess::Hit => {
                    self.world.mem.mark_access(slot, write)?;
                    let cur = self.cursor(a);
                    cur.pos += 1;
                    cur.attempts = 0;
                }
                PolicyAccess::Wait(on) => {
                    if first {
                        self.world.counters.demand_faults += 1;
                        if let Some(log) = &mut self.fault_log {
                            log.push((now, page));
                        }
                    }
                    match on {
                        WaitOn::Page(s) => self.page_waiters.entry(s).or_default().push(a),
                        WaitOn::Frames => self.frame_waiters.push_back(a),
                    }
                    return Ok(());
                }
            }
        }
    }

    fn finish(&mut self, a: Actor) -> Result<()> {
        let now = self.kernel.now();
        match a {
            Actor::Critical(i) => {
                let base = self.critical.as_ref().expect("critical").spec.base_service_us;
                self.kernel.schedule(now + base, Ev::TxnDone(i));
            }
            Actor::Noise(i) => {
                let think = self.noise.as_ref().expect("noise").spec.think_us;
                self.kernel.schedule(now + think, Ev::Start(Actor::Noise(i)));
            }
            Actor::Trace => {
                let t = self.trace.as_mut().expect("trace");
                let latency = now.since(t.cursor.start);
                t.next += 1;
                let next = t.records.get(t.next).map(|r| SimTime(r.time_us).max(now));
                self.collector.record_txn(latency, now);
                if let Some(at) = next {
                    self.kernel.schedule(at, Ev::Start(Actor::Trace));
                }
            }
            Actor::Probe => {
                self.probe_result = Some(now.since(self.probe.start));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation")
            .field("now", &self.kernel.now())
            .field("policy", &self.policy.kind())
            .field("census", &self.world.mem.residency_census())
            .field("counters", &self.world.counters)
            .finish_non_exhaustive()
    }
}
