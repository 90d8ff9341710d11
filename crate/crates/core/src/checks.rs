//! Trend checks over a finished sweep: the degradation cliff and tail
//! structure of the baseline, stability of the predictive policy, its
//! overhead when unsaturated, and the crossover between the two.

use crate::config::ExperimentSpec;
use crate::metrics::RunSummary;
use crate::policy::PolicyKind;
use crate::workload::NoiseCatalog;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Index of the first sweep point whose noise footprint exceeds DRAM.
pub fn footprint_crossing(spec: &ExperimentSpec) -> Option<usize> {
    let per = NoiseCatalog::new(spec.base.scale).ok()?.pages_per_container();
    spec.containers
        .iter()
        .position(|&n| n as u64 * per > spec.base.tier.dram_pages)
}

/// Index of the first point whose TPS falls below `frac` of the first
/// point's.
pub fn drop_index(rows: &[&RunSummary], frac: f64) -> Option<usize> {
    let base = rows.first()?.tps;
    rows.iter().position(|r| r.tps < frac * base)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

fn series<'a>(rows: &'a [RunSummary], policy: PolicyKind, device: &str) -> Vec<&'a RunSummary> {
    let mut v: Vec<&RunSummary> = rows.iter().filter(|r| r.policy == policy && r.device == device).collect();
    v.sort_by_key(|r| r.containers);
    v
}

/// Worst value of `f` over the series, with `None` (no completions)
/// counting as unbounded.
fn worst(s: &[&RunSummary], f: impl Fn(&crate::metrics::LatencyStats) -> u64) -> f64 {
    s.iter()
        .map(|r| r.latency.as_ref().map_or(f64::INFINITY, |l| f(l) as f64))
        .fold(0.0, f64::max)
}

fn baseline_checks(spec: &ExperimentSpec, s: &[&RunSummary], device: &str, out: &mut Vec<Check>) {
    let (first, last) = (s[0], s[s.len() - 1]);
    let Some(base) = &first.latency else {
        out.push(Check::new(format!("swap/{device} baseline"), false, "no completions at the first point".into()));
        return;
    };
    let tps = ratio(last.tps, first.tps);
    let p99 = worst(s, |l| l.p99) / base.p99 as f64;
    if device == "disk" {
        out.push(Check::new(
            "swap/disk cliff",
            tps <= 0.6,
            format!("TPS({})/TPS({}) = {tps:.3} (want <= 0.6)", last.containers, first.containers),
        ));
        let cross = footprint_crossing(spec);
        let drop = drop_index(s, 0.9);
        let near = matches!((cross, drop), (Some(c), Some(d)) if c.abs_diff(d) <= 2);
        out.push(Check::new(
            "swap/disk drop point",
            near,
            format!("drop at sweep index {drop:?}, noise footprint exceeds DRAM at {cross:?} (want within 2)"),
        ));
        let max = worst(s, |l| l.max) / base.max as f64;
        let p95 = worst(s, |l| l.p95) / base.p95 as f64;
        let min = worst(s, |l| l.min) / base.min as f64;
        out.push(Check::new(
            "swap/disk tail structure",
            p99 >= 10.0 && max >= 50.0 && p95 <= 3.0 && min <= 1.5,
            format!("p99 x{p99:.1} (>= 10), max x{max:.1} (>= 50), p95 x{p95:.2} (<= 3), min x{min:.2} (<= 1.5)"),
        ));
    } else {
        out.push(Check::new(
            format!("swap/{device} degradation"),
            tps <= 0.75 && p99 >= 5.0,
            format!("TPS ratio {tps:.3} (<= 0.75), p99 x{p99:.1} (>= 5)"),
        ));
    }
}

fn dmx_checks(s: &[&RunSummary], device: &str, out: &mut Vec<Check>) {
    let (first, last) = (s[0], s[s.len() - 1]);
    let Some(base) = &first.latency else {
        out.push(Check::new(format!("dmx/{device} stability"), false, "no completions at the first point".into()));
        return;
    };
    let tps = ratio(last.tps, first.tps);
    let p99 = worst(s, |l| l.p99) / base.p99 as f64;
    out.push(Check::new(
        format!("dmx/{device} stability"),
        tps >= 0.85 && p99 <= 3.0,
        format!("TPS ratio {tps:.3} (>= 0.85), worst p99 x{p99:.2} (<= 3)"),
    ));
}

/// The first point from which dmx beats swap on both TPS and p99 for the
/// rest of the sweep.
pub fn crossover(swap: &[&RunSummary], dmx: &[&RunSummary]) -> Option<u32> {
    let better = |a: &RunSummary, b: &RunSummary| {
        let p99 = |r: &RunSummary| r.latency.as_ref().map_or(u64::MAX, |l| l.p99);
        b.tps > a.tps && p99(b) < p99(a)
    };
    let pairs: Vec<(&RunSummary, &RunSummary)> = swap
        .iter()
        .filter_map(|a| dmx.iter().find(|b| b.containers == a.containers).map(|b| (*a, *b)))
        .collect();
    let mut start = None;
    for (a, b) in pairs.iter().rev() {
        if better(a, b) {
            start = Some(a.containers);
        } else {
            break;
        }
    }
    start
}

/// Every check that applies to the rows present.
pub fn evaluate(spec: &ExperimentSpec, rows: &[RunSummary]) -> Vec<Check> {
    let mut devices: Vec<&str> = rows.iter().map(|r| r.device.as_str()).collect();
    devices.sort_unstable();
    devices.dedup();
    let mut out = Vec::new();
    for device in devices {
        let swap = series(rows, PolicyKind::Swap, device);
        let dmx = series(rows, PolicyKind::Dmx, device);
        if swap.len() >= 2 {
            baseline_checks(spec, &swap, device, &mut out);
        }
        if dmx.len() >= 2 {
            dmx_checks(&dmx, device, &mut out);
        }
        if let (Some(a), Some(b)) = (swap.first(), dmx.first()) {
            if a.containers == b.containers {
                let r = ratio(b.tps, a.tps);
                out.push(Check::new(
                    format!("dmx/{device} overhead"),
                    (0.8..=1.0).contains(&r),
                    format!("dmx/swap TPS at {} containers = {r:.3} (want 0.80..=1.00)", a.containers),
                ));
            }
        }
        if swap.len() >= 2 && dmx.len() >= 2 {
            let c = crossover(&swap, &dmx);
            out.push(Check::new(
                format!("{device} crossover"),
                c.is_some(),
                match c {
                    Some(n) => format!("dmx ahead on TPS and p99 from {n} containers on"),
                    None => "dmx never stays ahead through the last point".into(),
                },
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LatencyStats;

    fn row(n: u32, policy: PolicyKind, tps: f64, p99: u64) -> RunSummary {
        RunSummary {
            containers: n,
            policy,
            device: "flash".into(),
            tps,
            latency: Some(LatencyStats { min: 5000, avg: 5000.0, max: p99, p90: 5000, p95: 5000, p99 }),
            demand_faults: 0,
            prefetch_issued: 0,
            prefetch_hits: 0,
            mispredictions: 0,
            evictions: 0,
            seed: 1,
        }
    }

    #[test]
    fn crossover_needs_a_lasting_lead() {
        let swap = [row(1, PolicyKind::Swap, 100.0, 10), row(3, PolicyKind::Swap, 80.0, 50), row(5, PolicyKind::Swap, 50.0, 90)];
        let dmx = [row(1, PolicyKind::Dmx, 95.0, 11), row(3, PolicyKind::Dmx, 96.0, 12), row(5, PolicyKind::Dmx, 94.0, 12)];
        let s: Vec<&RunSummary> = swap.iter().collect();
        let d: Vec<&RunSummary> = dmx.iter().collect();
        assert_eq!(crossover(&s, &d), Some(3));
        let mut late = dmx.clone();
        late[2].tps = 10.0;
        let d: Vec<&RunSummary> = late.iter().collect();
        assert_eq!(crossover(&s, &d), None);
    }

    #[test]
    fn crossing_index_at_desk_scale() {
        // 8500 pages per container against 65536 frames: 9 containers is
        // the first to exceed.
        let spec = ExperimentSpec::default();
        assert_eq!(footprint_crossing(&spec), Some(4));
    }

    #[test]
    fn drop_is_first_point_below_fraction() {
        let rows = [row(1, PolicyKind::Swap, 100.0, 1), row(3, PolicyKind::Swap, 95.0, 1), row(5, PolicyKind::Swap, 60.0, 1)];
        let r: Vec<&RunSummary> = rows.iter().collect();
        assert_eq!(drop_index(&r, 0.9), Some(2));
    }
}
