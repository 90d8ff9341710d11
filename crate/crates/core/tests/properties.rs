mod common;

use proptest::prelude::*;

use tiersim::config::ExperimentSpec;
use tiersim::engine::{SimConfig, Simulation};
use tiersim::media::{BlockRequest, DeviceProfile, Direction, Dispatch, Media};
use tiersim::memory::TierConfig;
use tiersim::metrics;
use tiersim::policy::dmx::{level_for, rebalance_quotas};
use tiersim::policy::{DmxParams, PolicyKind};
use tiersim::sim::{Kernel, SimTime};
use tiersim::workload::Trace;

fn replay(trace: &Trace, kind: PolicyKind, dram: u64) -> Simulation {
    let mut tier = TierConfig::with_dram(dram);
    tier.flash_pages = 100_000;
    let mut sim = Simulation::for_trace(trace, tier, DeviceProfile::flash(), kind, &DmxParams::default(), 3).unwrap();
    sim.enable_fault_log();
    sim.enable_access_log();
    sim.set_check_every(1);
    sim.drain().unwrap();
    sim
}

fn small(policy: PolicyKind, containers: u32) -> SimConfig {
    let mut spec = ExperimentSpec::default();
    spec.base.tier = TierConfig::with_dram(4096);
    spec.base.scale = 16_384;
    spec.base.critical.working_set_pages = 256;
    spec.base.critical.cold_pages = 512;
    spec.base.duration_us = 1_000_000;
    spec.base.warmup_us = 200_000;
    spec.point(policy, containers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn percentile_matches_sorting(samples in prop::collection::vec(0u64..1_000_000, 1..400), p in 1u32..=100) {
        prop_assert_eq!(metrics::percentile(&samples, p as f64).unwrap(), common::percentile_by_sorting(&samples, p));
    }

    #[test]
    fn level_brackets_frequency(freq in 1u32..u32::MAX, levels in 1u8..=31) {
        let l = level_for(freq, levels) as u32;
        prop_assert!(l < levels as u32);
        prop_assert!(freq >= 1 << l);
        if l + 1 < levels as u32 {
            prop_assert!((freq as u64) < 1u64 << (l + 1));
        }
    }

    #[test]
    fn quotas_fit_the_budget(
        scores in prop::collection::vec(0.0f64..1e6, 1..40),
        floor in 0u64..5000,
        dram in 1u64..1_000_000,
        reserve_pct in 0u64..50,
    ) {
        let reserve = dram * reserve_pct / 100;
        let q = rebalance_quotas(&scores, floor, dram, reserve);
        let avail = dram - reserve;
        let n = scores.len() as u64;
        prop_assert_eq!(q.len(), scores.len());
        prop_assert!(q.iter().sum::<u64>() <= avail);
        let eff_floor = floor.min(avail / n);
        // Rounding may trim a page or so from the largest shares only.
        for &qi in &q {
            prop_assert!(qi + n >= eff_floor, "quota {} under floor {}", qi, eff_floor);
        }
        // More activity never earns a smaller quota.
        for i in 0..q.len() {
            for j in 0..q.len() {
                if scores[i] > scores[j] {
                    prop_assert!(q[i] + 1 >= q[j]);
                }
            }
        }
    }

    #[test]
    fn kernel_pops_in_time_then_insertion_order(times in prop::collection::vec(0u64..1000, 1..200)) {
        let mut k: Kernel<usize> = Kernel::new();
        for (i, &t) in times.iter().enumerate() {
            k.schedule(SimTime(t), i);
        }
        let mut seen = Vec::new();
        while let Some(ev) = k.pop_until(SimTime(u64::MAX)) {
            seen.push((ev.time.as_us(), ev.kind));
        }
        let mut want: Vec<(u64, usize)> = times.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        want.sort();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn media_keeps_priority_and_bandwidth(
        reqs in prop::collection::vec((0u8..3, 1u32..150, 0u64..400), 1..60),
        disk in any::<bool>(),
    ) {
        let profile = if disk { DeviceProfile::disk() } else { DeviceProfile::flash() };
        let bw = profile.bandwidth as u128;
        let mut m = Media::new(profile);
        let mut pending: Vec<Dispatch> = Vec::new();
        let mut now = SimTime::ZERO;
        let mut handles = Vec::new();
        let mut i = 0;
        loop {
            // Next arrival or next completion, whichever comes first.
            let next_done = pending.iter().map(|d| d.completes).min();
            let arrival = reqs.get(i).map(|r| now + r.2);
            match (arrival, next_done) {
                (Some(a), d) if d.is_none_or(|d| a < d) => {
                    now = a;
                    let (kind, n, _) = reqs[i];
                    let dir = [Direction::DemandRead, Direction::EvictWrite, Direction::PrefetchRead][kind as usize];
                    let (h, d) = m.submit(BlockRequest::new(dir, (0..n).collect(), now), now);
                    handles.push(h);
                    pending.extend(d);
                    i += 1;
                }
                (_, Some(d)) => {
                    now = d;
                    let k = pending.iter().position(|x| x.completes == d).unwrap();
                    let x = pending.remove(k);
                    let (_, _, more) = m.complete(x.io, d);
                    pending.extend(more);
                }
                (None, None) => break,
                _ => unreachable!(),
            }
            prop_assert!(m.inflight() <= m.profile().max_inflight);
            prop_assert!(m.stats().bytes_moved as u128 * 1_000_000 <= bw * m.committed_busy_us() as u128);
        }
        prop_assert_eq!(m.stats().priority_violations, 0);
        prop_assert_eq!(m.stats().idle_with_work, 0);
        for h in &handles {
            prop_assert!(h.ios.iter().all(|&id| m.io(id).is_none()), "io left behind");
        }
    }

    #[test]
    fn dmx_serves_every_access_and_stays_consistent(seed in any::<u64>(), dram in 8u64..80, writes in 0u64..60) {
        let trace = common::random_trace(seed, 3, 40, 300, 20_000, writes);
        let sim = replay(&trace, PolicyKind::Dmx, dram);
        prop_assert_eq!(sim.collector().completions() + sim.collector().warmup_completions(), 300);
        sim.check_invariants().unwrap();
    }

    #[test]
    fn access_log_replays_to_the_same_faults(seed in any::<u64>(), dmx in any::<bool>()) {
        let kind = if dmx { PolicyKind::Dmx } else { PolicyKind::Swap };
        let trace = common::random_trace(seed, 2, 30, 200, 5_000, 30);
        let first = replay(&trace, kind, 24);
        let dumped = Trace { allocs: trace.allocs.clone(), records: first.access_log().unwrap().to_vec() };
        let reparsed = Trace::parse(&dumped.render(), "dump").unwrap();
        prop_assert_eq!(&reparsed, &dumped);
        let second = replay(&reparsed, kind, 24);
        prop_assert_eq!(first.fault_log().unwrap(), second.fault_log().unwrap());
        prop_assert_eq!(first.access_log().unwrap(), second.access_log().unwrap());
    }
}

#[test]
fn same_seed_same_event_log() {
    for policy in [PolicyKind::Swap, PolicyKind::Dmx] {
        let cfg = small(policy, 3);
        let run = || {
            let mut sim = Simulation::new(&cfg).unwrap();
            sim.enable_event_log();
            sim.run().unwrap();
            (sim.event_log().unwrap().to_string(), sim.summary(3))
        };
        let (log_a, sum_a) = run();
        let (log_b, sum_b) = run();
        assert!(!log_a.is_empty());
        assert!(log_a == log_b, "{policy} event logs differ");
        assert_eq!(sum_a, sum_b);
    }
}

#[test]
fn seed_changes_the_run() {
    let a = small(PolicyKind::Swap, 3);
    let mut b = a.clone();
    b.seed += 1;
    let run = |cfg: &SimConfig| {
        let mut sim = Simulation::new(cfg).unwrap();
        sim.enable_event_log();
        sim.run().unwrap();
        sim.event_log().unwrap().to_string()
    };
    assert_ne!(run(&a), run(&b));
}
