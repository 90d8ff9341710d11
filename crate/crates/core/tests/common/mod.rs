//! Reference models shared by the integration tests. Each is written
//! independently of the simulator, as directly as possible.

#![allow(dead_code)]

use std::collections::VecDeque;

use tiersim::rng::RandomSource;
use tiersim::workload::{Trace, TraceRecord};

/// Pages that fault under strict LRU with `frames` frames, for a trace
/// replayed one access at a time. The initial image is every page of every
/// context in (context, index) order, the newest `frames` of them resident
/// and ranked by placement.
pub fn lru_faults(trace: &Trace, frames: usize) -> Vec<(u32, u32)> {
    let mut image = Vec::new();
    for (ctx, n) in trace.footprint() {
        image.extend((0..n).map(|p| (ctx, p)));
    }
    // Front is most recent.
    let mut lru: VecDeque<(u32, u32)> = image.iter().rev().take(frames).copied().collect();
    let mut faults = Vec::new();
    for r in &trace.records {
        let page = (r.ctx, r.page);
        match lru.iter().position(|&p| p == page) {
            Some(i) => {
                lru.remove(i);
            }
            None => {
                faults.push(page);
                if lru.len() == frames {
                    lru.pop_back();
                }
            }
        }
        lru.push_front(page);
    }
    faults
}

/// Nearest-rank whole-number percentile by sorting a copy, in integer
/// arithmetic.
pub fn percentile_by_sorting(samples: &[u64], p: u32) -> u64 {
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = (p as usize * v.len()).div_ceil(100).max(1);
    v[rank - 1]
}

/// A random trace over `contexts` contexts of `pages` pages each, with
/// gaps of up to `gap_us` between records and the given write share.
pub fn random_trace(seed: u64, contexts: u32, pages: u32, len: usize, gap_us: u64, write_pct: u64) -> Trace {
    let mut rng = RandomSource::new(seed);
    let mut t = 0;
    let mut records = Vec::with_capacity(len);
    for _ in 0..len {
        t += rng.draw_uniform(gap_us + 1);
        records.push(TraceRecord {
            time_us: t,
            ctx: rng.draw_uniform(contexts as u64) as u32,
            page: rng.draw_uniform(pages as u64) as u32,
            write: rng.draw_uniform(100) < write_pct,
        });
    }
    let allocs = (0..contexts).map(|c| (c, pages)).collect();
    Trace { allocs, records }
}
