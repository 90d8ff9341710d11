//! Media management: block requests to device IOs.
//!
//! A request is split into IOs of at most `batch_pages` pages. IOs wait in
//! one FIFO per priority class and are dispatched, strict priority first,
//! whenever fewer than `max_inflight` are outstanding. Each IO pays its
//! access latency in parallel with the others, but data transfer goes
//! through a single channel at the profile bandwidth, so aggregate
//! throughput never exceeds it.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::memory::{Transfer, PAGE_BYTES};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub read_lat_us: u64,
    pub write_lat_us: u64,
    /// Bytes per second.
    pub bandwidth: u64,
    pub batch_pages: u32,
    pub max_inflight: u32,
}

impl DeviceProfile {
    pub fn flash() -> Self {
        Self {
            name: "flash".into(),
            read_lat_us: 80,
            write_lat_us: 200,
            bandwidth: 1 << 30,
            batch_pages: 64,
            max_inflight: 8,
        }
    }

    pub fn disk() -> Self {
        Self {
            name: "disk".into(),
            read_lat_us: 4000,
            write_lat_us: 4000,
            bandwidth: 150 << 20,
            batch_pages: 64,
            max_inflight: 1,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "flash" => Some(Self::flash()),
            "disk" => Some(Self::disk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("read_lat_us", self.read_lat_us),
            ("write_lat_us", self.write_lat_us),
            ("bandwidth", self.bandwidth),
            ("batch_pages", self.batch_pages as u64),
            ("max_inflight", self.max_inflight as u64),
        ];
        for (k, v) in fields {
            if v == 0 {
                return Err(format!("device.{k} must be positive"));
            }
        }
        Ok(())
    }

    /// Transfer component of an IO in µs, rounded up.
    pub fn transfer_us(&self, n_pages: u64) -> u64 {
        (n_pages * PAGE_BYTES * 1_000_000).div_ceil(self.bandwidth)
    }

    /// Latency plus transfer time of an `n_pages` IO on an idle device.
    pub fn service_time(&self, n_pages: u64, transfer: Transfer) -> u64 {
        assert!(n_pages >= 1, "service_time of an empty IO");
        let lat = match transfer {
            Transfer::Read => self.read_lat_us,
            Transfer::Write => self.write_lat_us,
        };
        lat + self.transfer_us(n_pages)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    DemandRead,
    PrefetchRead,
    EvictWrite,
}

impl Direction {
    pub fn transfer(self) -> Transfer {
        match self {
            Direction::DemandRead | Direction::PrefetchRead => Transfer::Read,
            Direction::EvictWrite => Transfer::Write,
        }
    }

    /// Natural class for the direction. The synchronous swap path submits
    /// its victim write-back at demand class instead.
    pub fn default_priority(self) -> Priority {
        match self {
            Direction::DemandRead => Priority::Demand,
            Direction::EvictWrite => Priority::Evict,
            Direction::PrefetchRead => Priority::Prefetch,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::DemandRead => "demand-read",
            Direction::PrefetchRead => "prefetch-read",
            Direction::EvictWrite => "evict-write",
        })
    }
}

/// Dispatch class, highest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    Demand = 0,
    Evict = 1,
    Prefetch = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockRequest {
    pub direction: Direction,
    pub priority: Priority,
    /// Page slots.
    pub pages: Vec<u32>,
    pub issue_time: SimTime,
}

impl BlockRequest {
    pub fn new(direction: Direction, pages: Vec<u32>, issue_time: SimTime) -> Self {
        Self { direction, priority: direction.default_priority(), pages, issue_time }
    }

    pub fn with_priority(mut self, priority: Priority) -> Self {
        self.priority = priority;
        self
    }
}

pub type IoId = u64;
pub type RequestId = u64;

#[derive(Clone, Debug)]
pub struct Io {
    pub id: IoId,
    pub request: RequestId,
    pub direction: Direction,
    pub priority: Priority,
    pub pages: Vec<u32>,
    pub submitted: SimTime,
    pub dispatched: Option<SimTime>,
    pub completes: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dispatch {
    pub io: IoId,
    pub completes: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompletionHandle {
    pub request: RequestId,
    pub ios: Vec<IoId>,
}

impl CompletionHandle {
    /// Requests with no device-bound pages finish at submission.
    pub fn is_complete(&self) -> bool {
        self.ios.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MediaStats {
    pub ios_dispatched: u64,
    pub bytes_moved: u64,
    /// Time with at least one IO outstanding.
    pub busy_us: u64,
    pub priority_violations: u64,
    pub idle_with_work: u64,
}

#[derive(Clone, Debug)]
pub struct Media {
    profile: DeviceProfile,
    ios: HashMap<IoId, Io>,
    queues: [VecDeque<IoId>; 3],
    inflight: u32,
    channel_free: SimTime,
    busy_since: SimTime,
    next_io: IoId,
    next_request: RequestId,
    remaining: HashMap<RequestId, u32>,
    stats: MediaStats,
}

impl Media {
    pub fn new(profile: DeviceProfile) -> Self {
        Self {
            profile,
            ios: HashMap::new(),
            queues: Default::default(),
            inflight: 0,
            channel_free: SimTime::ZERO,
            busy_since: SimTime::ZERO,
            next_io: 0,
            next_request: 0,
            remaining: HashMap::new(),
            stats: MediaStats::default(),
        }
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn stats(&self) -> &MediaStats {
        &self.stats
    }

    pub fn inflight(&self) -> u32 {
        self.inflight
    }

    /// Busy time through the completion of everything dispatched so far,
    /// which is what `bytes_moved` has to fit into.
    pub fn committed_busy_us(&self) -> u64 {
        let open = if self.inflight > 0 { self.channel_free.since(self.busy_since) } else { 0 };
        self.stats.busy_us + open
    }

    pub fn queued(&self, class: Priority) -> usize {
        self.queues[class as usize].len()
    }

    pub fn io(&self, id: IoId) -> Option<&Io> {
        self.ios.get(&id)
    }

    /// Split `req` into IOs, queue them by class, and dispatch what fits.
    pub fn submit(&mut self, req: BlockRequest, now: SimTime) -> (CompletionHandle, Vec<Dispatch>) {
        let handle = self.enqueue(req, now);
        let dispatches = self.shape(now);
        (handle, dispatches)
    }

    /// Queue without dispatching; pair with [`Media::shape`].
    pub fn enqueue(&mut self, req: BlockRequest, now: SimTime) -> CompletionHandle {
        let request = self.next_request;
        self.next_request += 1;
        let mut ios = Vec::new();
        for chunk in req.pages.chunks(self.profile.batch_pages as usize) {
            let id = self.next_io;
            self.next_io += 1;
            self.ios.insert(
                id,
                Io {
                    id,
                    request,
                    direction: req.direction,
                    priority: req.priority,
                    pages: chunk.to_vec(),
                    submitted: now,
                    dispatched: None,
                    completes: None,
                },
            );
            self.queues[req.priority as usize].push_back(id);
            ios.push(id);
        }
        if !ios.is_empty() {
            self.remaining.insert(request, ios.len() as u32);
        }
        CompletionHandle { request, ios }
    }

    /// Fill free slots from the queues, strict priority, FIFO per class.
    pub fn shape(&mut self, now: SimTime) -> Vec<Dispatch> {
        let mut out = Vec::new();
        while self.inflight < self.profile.max_inflight {
            let Some(class) = (0..3).find(|&c| !self.queues[c].is_empty()) else {
                break;
            };
            if class == Priority::Prefetch as usize && !self.queues[Priority::Demand as usize].is_empty() {
                self.stats.priority_violations += 1;
            }
            let id = self.queues[class].pop_front().expect("non-empty queue");
            out.push(self.dispatch(id, now));
        }
        if self.inflight < self.profile.max_inflight && self.queues.iter().any(|q| !q.is_empty()) {
            self.stats.idle_with_work += 1;
        }
        out
    }

    fn dispatch(&mut self, id: IoId, now: SimTime) -> Dispatch {
        let io = self.ios.get_mut(&id).expect("queued io exists");
        let n = io.pages.len() as u64;
        let lat = match io.direction.transfer() {
            Transfer::Read => self.profile.read_lat_us,
            Transfer::Write => self.profile.write_lat_us,
        };
        let xfer_start = (now + lat).max(self.channel_free);
        let completes = xfer_start + self.profile.transfer_us(n);
        self.channel_free = completes;
        io.dispatched = Some(now);
        io.completes = Some(completes);
        if self.inflight == 0 {
            self.busy_since = now;
        }
        self.inflight += 1;
        self.stats.ios_dispatched += 1;
        self.stats.bytes_moved += n * PAGE_BYTES;
        Dispatch { io: id, completes }
    }

    /// Retire an IO. Returns it, whether its request is now finished, and
    /// any IOs dispatched into the freed slot.
    pub fn complete(&mut self, id: IoId, now: SimTime) -> (Io, bool, Vec<Dispatch>) {
        let io = self.ios.remove(&id).expect("completing unknown io");
        debug_assert_eq!(io.completes, Some(now), "io completed off schedule");
        self.inflight -= 1;
        if self.inflight == 0 {
            self.stats.busy_us += now.since(self.busy_since);
        }
        let left = self.remaining.get_mut(&io.request).expect("request tracked");
        *left -= 1;
        let done = *left == 0;
        if done {
            self.remaining.remove(&io.request);
        }
        let dispatches = self.shape(now);
        (io, done, dispatches)
    }

    /// Completion time of `request` assuming nothing else arrives. Exact for
    /// demand-class requests, since later arrivals cannot overtake them.
    pub fn project_completion(&self, handle: &CompletionHandle, now: SimTime) -> Option<SimTime> {
        if handle.ios.is_empty() {
            return Some(now);
        }
        let mut slots: Vec<SimTime> = self
            .ios
            .values()
            .filter_map(|io| io.completes)
            .collect();
        slots.sort();
        let mut free: Vec<SimTime> = vec![now; (self.profile.max_inflight as usize).saturating_sub(slots.len())];
        free.extend(slots);
        let mut channel = self.channel_free;
        let mut finish = now;
        let mut pending = 0usize;
        for q in &self.queues {
            for &id in q {
                let io = &self.ios[&id];
                free.sort();
                let start = free[0];
                let lat = match io.direction.transfer() {
                    Transfer::Read => self.profile.read_lat_us,
                    Transfer::Write => self.profile.write_lat_us,
                };
                let done = (start + lat).max(channel) + self.profile.transfer_us(io.pages.len() as u64);
                channel = done;
                free[0] = done;
                if io.request == handle.request {
                    finish = finish.max(done);
                    pending += 1;
                }
            }
        }
        for &id in &handle.ios {
            if let Some(c) = self.ios.get(&id).and_then(|io| io.completes) {
                finish = finish.max(c);
                pending += 1;
            }
        }
        (pending > 0).then_some(finish)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(dir: Direction, n: u32) -> BlockRequest {
        BlockRequest::new(dir, (0..n).collect(), SimTime::ZERO)
    }

    #[test]
    fn service_time_arithmetic() {
        let f = DeviceProfile::flash();
        assert_eq!(f.service_time(1, Transfer::Read), 84);
        assert_eq!(f.service_time(64, Transfer::Read), 325);
        let d = DeviceProfile::disk();
        assert_eq!(d.service_time(1, Transfer::Read), 4027);
    }

    #[test]
    fn splits_into_batches() {
        let mut m = Media::new(DeviceProfile::flash());
        let (h, _) = m.submit(req(Direction::PrefetchRead, 130), SimTime::ZERO);
        let sizes: Vec<usize> = h.ios.iter().map(|id| m.io(*id).unwrap().pages.len()).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
    }

    #[test]
    fn empty_evict_completes_immediately() {
        let mut m = Media::new(DeviceProfile::flash());
        let (h, d) = m.submit(req(Direction::EvictWrite, 0), SimTime(5));
        assert!(h.is_complete());
        assert!(d.is_empty());
        assert_eq!(m.stats().ios_dispatched, 0);
    }

    #[test]
    fn demand_goes_first_with_two_slots() {
        let mut p = DeviceProfile::flash();
        p.max_inflight = 2;
        let mut m = Media::new(p);
        // Occupy both slots, then queue [P, P, D].
        m.submit(req(Direction::EvictWrite, 2), SimTime::ZERO);
        m.submit(BlockRequest::new(Direction::PrefetchRead, vec![10], SimTime::ZERO), SimTime::ZERO);
        m.submit(BlockRequest::new(Direction::PrefetchRead, vec![11], SimTime::ZERO), SimTime::ZERO);
        let (d, _) = m.submit(BlockRequest::new(Direction::DemandRead, vec![12], SimTime::ZERO), SimTime::ZERO);
        assert_eq!(m.inflight(), 2);
        // Drain: first completion frees one slot, which must go to demand.
        let first = m.ios.values().filter_map(|io| io.completes).min().unwrap();
        let first_id = m.ios.values().find(|io| io.completes == Some(first)).unwrap().id;
        let (_, _, disp) = m.complete(first_id, first);
        assert_eq!(disp.len(), 1);
        assert_eq!(disp[0].io, d.ios[0]);
    }

    #[test]
    fn shape_prefers_demand_over_queued_prefetch() {
        let mut p = DeviceProfile::flash();
        p.max_inflight = 2;
        let mut m = Media::new(p);
        let p1 = m.enqueue(BlockRequest::new(Direction::PrefetchRead, vec![1], SimTime::ZERO), SimTime::ZERO);
        m.enqueue(BlockRequest::new(Direction::PrefetchRead, vec![2], SimTime::ZERO), SimTime::ZERO);
        let d = m.enqueue(BlockRequest::new(Direction::DemandRead, vec![3], SimTime::ZERO), SimTime::ZERO);
        let out: Vec<IoId> = m.shape(SimTime::ZERO).iter().map(|d| d.io).collect();
        assert_eq!(out, vec![d.ios[0], p1.ios[0]]);
        assert!(m.shape(SimTime::ZERO).is_empty());
        assert_eq!(m.stats().priority_violations, 0);
    }

    #[test]
    fn idle_slot_takes_prefetch() {
        let mut m = Media::new(DeviceProfile::disk());
        let (a, d) = m.submit(req(Direction::DemandRead, 1), SimTime::ZERO);
        assert_eq!(d.len(), 1);
        let (p, none) = m.submit(req(Direction::PrefetchRead, 1), SimTime::ZERO);
        assert!(none.is_empty());
        let (_, done, next) = m.complete(a.ios[0], d[0].completes);
        assert!(done);
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].io, p.ios[0]);
    }

    #[test]
    fn projection_matches_actual_for_demand() {
        let mut m = Media::new(DeviceProfile::flash());
        let mut all = Vec::new();
        for i in 0..20 {
            let (_, d) = m.submit(BlockRequest::new(Direction::PrefetchRead, vec![i], SimTime::ZERO), SimTime::ZERO);
            all.extend(d);
        }
        let (h, d) = m.submit(BlockRequest::new(Direction::DemandRead, vec![99, 100], SimTime::ZERO), SimTime::ZERO);
        all.extend(d);
        let projected = m.project_completion(&h, SimTime::ZERO).unwrap();
        // Run the device to completion and observe.
        let mut actual = None;
        while let Some(next) = all.iter().min_by_key(|d| (d.completes, d.io)).copied() {
            all.retain(|d| d.io != next.io);
            let (io, _, more) = m.complete(next.io, next.completes);
            if io.request == h.request {
                actual = Some(next.completes);
            }
            all.extend(more);
        }
        assert_eq!(Some(projected), actual);
    }

    #[test]
    fn saturated_channel_never_beats_bandwidth() {
        let mut m = Media::new(DeviceProfile::flash());
        let mut pending: Vec<Dispatch> = Vec::new();
        for _ in 0..40 {
            pending.extend(m.submit(req(Direction::PrefetchRead, 64), SimTime::ZERO).1);
        }
        let bw = m.profile().bandwidth as u128;
        while !pending.is_empty() {
            pending.sort_by_key(|d| d.completes);
            let next = pending.remove(0);
            let (_, _, more) = m.complete(next.io, next.completes);
            pending.extend(more);
            let moved = m.stats().bytes_moved as u128 * 1_000_000;
            assert!(moved <= bw * m.committed_busy_us() as u128, "{moved} over {}", m.committed_busy_us());
        }
        assert_eq!(m.committed_busy_us(), m.stats().busy_us);
    }
}
