//! Per-run latency collection and summary statistics.

use crate::policy::{Counters, PolicyKind};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PercentileError {
    Empty,
    OutOfRange,
}

impl std::fmt::Display for PercentileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PercentileError::Empty => f.write_str("percentile of an empty sample set"),
            PercentileError::OutOfRange => f.write_str("percentile rank outside (0, 100]"),
        }
    }
}

impl std::error::Error for PercentileError {}

/// Nearest-rank percentile of already sorted samples: the value at 1-based
/// position `ceil(p/100 * n)`.
pub fn percentile_sorted(sorted: &[u64], p: f64) -> Result<u64, PercentileError> {
    if sorted.is_empty() {
        return Err(PercentileError::Empty);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(PercentileError::OutOfRange);
    }
    let n = sorted.len();
    // Integer-exact rank for the usual whole and tenth percentiles.
    let rank = if (p * 10.0).fract() == 0.0 {
        ((p * 10.0) as u128 * n as u128).div_ceil(1000) as usize
    } else {
        (p / 100.0 * n as f64).ceil() as usize
    };
    Ok(sorted[rank.clamp(1, n) - 1])
}

pub fn percentile(samples: &[u64], p: f64) -> Result<u64, PercentileError> {
    let mut v = samples.to_vec();
    v.sort_unstable();
    percentile_sorted(&v, p)
}

/// Latency samples of transactions that completed after warm-up.
#[derive(Clone, Debug)]
pub struct Collector {
    warmup: SimTime,
    samples: Vec<u64>,
    dropped: u64,
}

impl Collector {
    pub fn new(warmup: SimTime) -> Self {
        Self { warmup, samples: Vec::new(), dropped: 0 }
    }

    pub fn record_txn(&mut self, latency_us: u64, completed: SimTime) {
        if completed >= self.warmup {
            self.samples.push(latency_us);
        } else {
            self.dropped += 1;
        }
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    pub fn completions(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn warmup_completions(&self) -> u64 {
        self.dropped
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub min: u64,
    pub avg: f64,
    pub max: u64,
    pub p90: u64,
    pub p95: u64,
    pub p99: u64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_unstable();
        let sum: u128 = v.iter().map(|&x| x as u128).sum();
        let pct = |p| percentile_sorted(&v, p).expect("non-empty");
        Some(Self {
            min: v[0],
            avg: sum as f64 / v.len() as f64,
            max: v[v.len() - 1],
            p90: pct(90.0),
            p95: pct(95.0),
            p99: pct(99.0),
        })
    }
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub containers: u32,
    pub policy: PolicyKind,
    pub device: String,
    pub tps: f64,
    /// `None` when no transaction completed in the measured window.
    pub latency: Option<LatencyStats>,
    pub demand_faults: u64,
    pub prefetch_issued: u64,
    pub prefetch_hits: u64,
    pub mispredictions: u64,
    pub evictions: u64,
    pub seed: u64,
}

impl RunSummary {
    /// `tps` is completions over the measured window (duration minus
    /// warm-up); counters cover the whole run.
    pub fn summarize(
        containers: u32,
        policy: PolicyKind,
        device: &str,
        seed: u64,
        collector: &Collector,
        counters: &Counters,
        measured_us: u64,
    ) -> Self {
        let secs = measured_us as f64 / 1e6;
        Self {
            containers,
            policy,
            device: device.to_string(),
            tps: if secs > 0.0 { collector.completions() as f64 / secs } else { 0.0 },
            latency: LatencyStats::from_samples(collector.samples()),
            demand_faults: counters.demand_faults,
            prefetch_issued: counters.prefetch_issued,
            prefetch_hits: counters.prefetch_hits,
            mispredictions: counters.mispredictions,
            evictions: counters.evictions,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 99.0), Ok(99));
        assert_eq!(percentile(&[1, 2, 3, 4], 50.0), Ok(2));
        assert_eq!(percentile(&[7], 99.0), Ok(7));
        assert_eq!(percentile(&[3, 1, 2], 100.0), Ok(3));
        assert_eq!(percentile(&[], 50.0), Err(PercentileError::Empty));
        assert_eq!(percentile(&[1], 0.0), Err(PercentileError::OutOfRange));
    }

    #[test]
    fn warmup_samples_dropped() {
        let mut c = Collector::new(SimTime::from_secs(5));
        c.record_txn(10, SimTime::from_secs(1));
        c.record_txn(20, SimTime::from_secs(5));
        assert_eq!(c.samples(), &[20]);
        assert_eq!(c.warmup_completions(), 1);
    }

    #[test]
    fn single_sample_stats() {
        let s = LatencyStats::from_samples(&[42]).unwrap();
        assert_eq!((s.min, s.max, s.p90, s.p99), (42, 42, 42, 42));
        assert_eq!(s.avg, 42.0);
    }

    #[test]
    fn tps_over_measured_window() {
        let mut c = Collector::new(SimTime::ZERO);
        for _ in 0..1000 {
            c.record_txn(5, SimTime::from_secs(1));
        }
        let s = RunSummary::summarize(1, PolicyKind::Swap, "flash", 0, &c, &Counters::default(), 10_000_000);
        assert_eq!(s.tps, 100.0);
        let empty = RunSummary::summarize(1, PolicyKind::Swap, "flash", 0, &Collector::new(SimTime::ZERO), &Counters::default(), 10_000_000);
        assert_eq!(empty.tps, 0.0);
        assert!(empty.latency.is_none());
    }
}
