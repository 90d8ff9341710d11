//! Sweep orchestration: one isolated simulation per (policy, container
//! count), optionally on several threads, merged in a fixed order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::ExperimentSpec;
use crate::engine::{SimConfig, Simulation};
use crate::error::{Result, SimError};
use crate::metrics::RunSummary;
use crate::policy::PolicyKind;
use crate::report;
use crate::workload::Trace;

/// Extra outputs of a single run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub dump_events: bool,
}

/// Output of one sweep point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub summary: RunSummary,
    pub events: Option<String>,
}

pub fn run_point(cfg: &SimConfig, opts: &RunOptions) -> Result<PointResult> {
    let mut sim = Simulation::new(cfg)?;
    if opts.dump_events {
        sim.enable_event_log();
    }
    sim.run()?;
    Ok(PointResult { summary: sim.summary(cfg.containers), events: sim.event_log().map(str::to_string) })
}

/// Replay a trace against the spec's memory system; `containers` in the
/// summary is the number of contexts the trace touches.
pub fn run_trace(cfg: &SimConfig, trace: &Trace, opts: &RunOptions) -> Result<PointResult> {
    let mut sim = Simulation::for_trace(trace, cfg.tier, cfg.device.clone(), cfg.policy, &cfg.dmx, cfg.seed)?;
    sim.set_check_every(cfg.check_every);
    if opts.dump_events {
        sim.enable_event_log();
    }
    sim.drain()?;
    let contexts = trace.footprint().len() as u32;
    Ok(PointResult { summary: sim.summary(contexts), events: sim.event_log().map(str::to_string) })
}

/// Sweep points in output order: policy-major, then container count.
pub fn points(spec: &ExperimentSpec) -> Vec<(PolicyKind, u32)> {
    if spec.trace.is_some() {
        return spec.policies.iter().map(|&p| (p, 0)).collect();
    }
    spec.policies
        .iter()
        .flat_map(|&p| spec.containers.iter().map(move |&n| (p, n)))
        .collect()
}

/// Run every point with up to `jobs` worker threads. Results come back in
/// [`points`] order whatever the scheduling; the first failing point (in
/// that order) is reported.
pub fn run_sweep(spec: &ExperimentSpec, jobs: usize, opts: &RunOptions) -> Result<Vec<PointResult>> {
    let trace = match &spec.trace {
        Some(p) => Some(Trace::load(p)?),
        None => None,
    };
    let todo = points(spec);
    let slots: Vec<Mutex<Option<Result<PointResult>>>> = todo.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(policy, containers)) = todo.get(i) else { break };
        let cfg = spec.point(policy, containers);
        let out = match &trace {
            Some(t) => run_trace(&cfg, t, opts),
            None => run_point(&cfg, opts),
        };
        *slots[i].lock().expect("result slot") = Some(out);
    };
    let jobs = jobs.clamp(1, todo.len().max(1));
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    let mut results = Vec::with_capacity(todo.len());
    for (slot, (policy, containers)) in slots.into_iter().zip(todo) {
        match slot.into_inner().expect("result slot").expect("every point ran") {
            Ok(r) => results.push(r),
            Err(e) => {
                return Err(SimError::SweepPoint { containers, policy: policy.to_string(), source: Box::new(e) })
            }
        }
    }
    Ok(results)
}

/// Run a sweep and write `sweep.csv`, the charts, `config.txt` (the
/// resolved configuration) and, if asked, per-point event logs.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, jobs: usize, opts: &RunOptions) -> Result<Vec<RunSummary>> {
    std::fs::create_dir_all(out).map_err(|e| SimError::io(out, e))?;
    let config = out.join("config.txt");
    std::fs::write(&config, spec.render()).map_err(|e| SimError::io(&config, e))?;
    let results = run_sweep(spec, jobs, opts)?;
    if opts.dump_events {
        let dir = out.join("events");
        std::fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
        for r in &results {
            let path: PathBuf = dir.join(format!("{}-{}.tsv", r.summary.policy, r.summary.containers));
            std::fs::write(&path, r.events.as_deref().unwrap_or_default()).map_err(|e| SimError::io(&path, e))?;
        }
    }
    let rows: Vec<RunSummary> = results.into_iter().map(|r| r.summary).collect();
    report::emit(&rows, out)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentSpec;

    fn small() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.containers = vec![1, 2, 3];
        spec.policies = vec![PolicyKind::Swap, PolicyKind::Dmx];
        spec.base.tier = crate::memory::TierConfig::with_dram(4096);
        spec.base.scale = 16_384;
        spec.base.critical.working_set_pages = 256;
        spec.base.critical.cold_pages = 512;
        spec.base.duration_us = 1_500_000;
        spec.base.warmup_us = 500_000;
        spec
    }

    #[test]
    fn order_is_policy_major() {
        let p = points(&small());
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], (PolicyKind::Swap, 1));
        assert_eq!(p[3], (PolicyKind::Dmx, 1));
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = small();
        let a: Vec<RunSummary> = run_sweep(&spec, 1, &RunOptions::default()).unwrap().into_iter().map(|r| r.summary).collect();
        let b: Vec<RunSummary> = run_sweep(&spec, 3, &RunOptions::default()).unwrap().into_iter().map(|r| r.summary).collect();
        assert_eq!(report::render_csv(&a), report::render_csv(&b));
    }

    #[test]
    fn failing_point_is_identified() {
        let mut spec = small();
        // The initial image alone outgrows DRAM plus flash.
        spec.base.tier.dram_pages = 1000;
        spec.base.tier.flash_pages = 100;
        match run_sweep(&spec, 2, &RunOptions::default()) {
            Err(SimError::SweepPoint { containers, policy, .. }) => {
                assert_eq!((containers, policy.as_str()), (1, "swap"));
            }
            other => panic!("{:?}", other.map(|r| r.len())),
        }
    }
}
