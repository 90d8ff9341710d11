mod common;

use proptest::prelude::*;

use tiersim::engine::Simulation;
use tiersim::media::DeviceProfile;
use tiersim::memory::{ContextId, PageId, Tier, TierConfig, Transfer};
use tiersim::policy::{DmxParams, PolicyKind};
use tiersim::sim::SimTime;
use tiersim::workload::{Trace, TraceRecord};

fn swap(dram: u64) -> Simulation {
    Simulation::bare(TierConfig::with_dram(dram), DeviceProfile::flash(), PolicyKind::Swap, &DmxParams::default(), 1)
}

fn page(i: u32) -> PageId {
    PageId::new(0, i)
}

/// Three frames, six pages: 3..=5 start resident (and dirty), 0..=2 in flash.
/// Faulting in 0, 1, 2 pushes the dirty image out, leaving clean pages.
fn three_clean_frames() -> Simulation {
    let mut sim = swap(3);
    let c = sim.add_context(true);
    sim.place(c, 6).unwrap();
    sim.start().unwrap();
    let f = DeviceProfile::flash();
    let dirty_fault = f.service_time(1, Transfer::Write) + f.service_time(1, Transfer::Read);
    for i in 0..3 {
        assert_eq!(sim.access(page(i), false).unwrap(), dirty_fault);
    }
    sim
}

#[test]
fn lru_victim_and_clean_fault_cost() {
    let mut sim = three_clean_frames();
    // A, B, C resident in that order of use; touching A again makes B the
    // least recent.
    assert_eq!(sim.access(page(0), false).unwrap(), 0);
    assert_eq!(sim.access(page(3), false).unwrap(), 84);
    assert_eq!(sim.tier_of(page(1)), Some(Tier::Flash));
    assert_eq!(sim.tier_of(page(0)), Some(Tier::Dram));
    assert_eq!(sim.tier_of(page(2)), Some(Tier::Dram));
    sim.check_invariants().unwrap();
}

#[test]
fn dirty_victim_is_written_before_the_read() {
    let mut sim = three_clean_frames();
    sim.access(page(0), true).unwrap();
    sim.access(page(1), false).unwrap();
    sim.access(page(2), false).unwrap();
    // Page 0 is now the dirty LRU tail.
    assert_eq!(sim.access(page(3), false).unwrap(), 204 + 84);
    assert_eq!(sim.counters().writebacks, 4);
}

#[test]
fn allocating_into_full_dram_waits_for_dirty_write_backs() {
    let mut sim = swap(4);
    let c = sim.add_context(true);
    sim.place(c, 4).unwrap();
    sim.start().unwrap();
    let (ids, stall) = sim.allocate(ContextId(0), 2).unwrap();
    assert_eq!(stall, DeviceProfile::flash().service_time(2, Transfer::Write));
    assert_eq!(stall, 208);
    sim.run_until(sim.now() + stall).unwrap();
    for id in ids {
        assert_eq!(sim.tier_of(id), Some(Tier::Dram));
    }
    assert_eq!(sim.tier_of(page(0)), Some(Tier::Flash));
    assert_eq!(sim.tier_of(page(1)), Some(Tier::Flash));
    sim.check_invariants().unwrap();
}

#[test]
fn nothing_moves_between_accesses() {
    let mut sim = three_clean_frames();
    assert!(sim.policy().tick_period().is_none());
    let before = sim.world().media.stats().ios_dispatched;
    let census = sim.census();
    sim.run_until(SimTime(60_000_000)).unwrap();
    assert_eq!(sim.world().media.stats().ios_dispatched, before);
    assert_eq!(sim.census(), census);
}

fn replay_faults(trace: &Trace, dram: u64) -> Vec<(u32, u32)> {
    let mut tier = TierConfig::with_dram(dram);
    tier.flash_pages = 100_000;
    let mut sim = Simulation::for_trace(trace, tier, DeviceProfile::flash(), PolicyKind::Swap, &DmxParams::default(), 7)
        .unwrap();
    sim.enable_fault_log();
    sim.set_check_every(1);
    sim.drain().unwrap();
    sim.check_invariants().unwrap();
    sim.fault_log().unwrap().iter().map(|(_, p)| (p.ctx.0, p.index)).collect()
}

fn trace_strategy() -> impl Strategy<Value = (Trace, u64)> {
    (1u32..4, 1u32..24, 1u64..40).prop_flat_map(|(contexts, pages, dram)| {
        let rec = (0u64..300, 0..contexts, 0..pages, any::<bool>());
        (prop::collection::vec(rec, 1..160), Just(contexts), Just(pages), Just(dram))
    })
    .prop_map(|(raw, contexts, pages, dram)| {
        let mut t = 0;
        let records = raw
            .into_iter()
            .map(|(gap, ctx, page, write)| {
                t += gap;
                TraceRecord { time_us: t, ctx, page, write }
            })
            .collect();
        (Trace { allocs: (0..contexts).map(|c| (c, pages)).collect(), records }, dram)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn faults_match_strict_lru((trace, dram) in trace_strategy()) {
        prop_assert_eq!(replay_faults(&trace, dram), common::lru_faults(&trace, dram as usize));
    }
}
