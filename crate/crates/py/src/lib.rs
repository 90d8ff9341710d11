//! Python bindings: run sweep points and whole experiments, drive a small
//! hand-built memory system access by access, and reach the pure helpers
//! (percentiles, MQ levels, quota split).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tiersim::config::ExperimentSpec;
use tiersim::engine::Simulation as CoreSimulation;
use tiersim::error::SimError;
use tiersim::experiment::{run_sweep as core_run_sweep, RunOptions};
use tiersim::media::DeviceProfile;
use tiersim::memory::{ContextId, PageId, Tier, TierConfig, Transfer};
use tiersim::metrics::{self, RunSummary};
use tiersim::policy::{self, DmxParams, PolicyKind};
use tiersim::report;
use tiersim::sim::SimTime;

fn to_py(e: SimError) -> PyErr {
    let usage = match &e {
        SimError::SweepPoint { source, .. } => source.is_usage(),
        other => other.is_usage(),
    };
    if usage {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn spec_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentSpec> {
    let mut pairs = Vec::new();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<String>() {
                Ok(s) => s,
                Err(_) => v.str()?.to_string(),
            };
            let value = match value.as_str() {
                "True" => "true".to_string(),
                "False" => "false".to_string(),
                _ => value,
            };
            pairs.push((key, value));
        }
    }
    ExperimentSpec::resolve(&[], &pairs).map_err(to_py)
}

fn summary_dict<'py>(py: Python<'py>, s: &RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("containers", s.containers)?;
    d.set_item("policy", s.policy.as_str())?;
    d.set_item("device", &s.device)?;
    d.set_item("tps", s.tps)?;
    match &s.latency {
        Some(l) => {
            d.set_item("min_us", l.min)?;
            d.set_item("avg_us", l.avg)?;
            d.set_item("max_us", l.max)?;
            d.set_item("p90_us", l.p90)?;
            d.set_item("p95_us", l.p95)?;
            d.set_item("p99_us", l.p99)?;
        }
        None => {
            for k in ["min_us", "avg_us", "max_us", "p90_us", "p95_us", "p99_us"] {
                d.set_item(k, py.None())?;
            }
        }
    }
    d.set_item("demand_faults", s.demand_faults)?;
    d.set_item("prefetch_issued", s.prefetch_issued)?;
    d.set_item("prefetch_hits", s.prefetch_hits)?;
    d.set_item("mispredictions", s.mispredictions)?;
    d.set_item("evictions", s.evictions)?;
    d.set_item("seed", s.seed)?;
    Ok(d)
}

/// Resolve `settings` (config keys to values) and return the full
/// configuration echo.
#[pyfunction]
#[pyo3(signature = (settings=None))]
fn resolve_config(settings: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    Ok(spec_from(settings)?.render())
}

/// Run every sweep point described by `settings` and return one summary
/// dict per point, policy-major.
#[pyfunction]
#[pyo3(signature = (settings=None, jobs=1))]
fn run_sweep<'py>(py: Python<'py>, settings: Option<&Bound<'py, PyDict>>, jobs: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let spec = spec_from(settings)?;
    let results = py.detach(|| core_run_sweep(&spec, jobs, &RunOptions::default())).map_err(to_py)?;
    results.iter().map(|r| summary_dict(py, &r.summary)).collect()
}

/// Run a sweep and render its `sweep.csv` text.
#[pyfunction]
#[pyo3(signature = (settings=None, jobs=1))]
fn sweep_csv(py: Python<'_>, settings: Option<&Bound<'_, PyDict>>, jobs: usize) -> PyResult<String> {
    let spec = spec_from(settings)?;
    let results = py.detach(|| core_run_sweep(&spec, jobs, &RunOptions::default())).map_err(to_py)?;
    let rows: Vec<RunSummary> = results.into_iter().map(|r| r.summary).collect();
    Ok(report::render_csv(&rows))
}

/// Nearest-rank percentile.
#[pyfunction]
fn percentile(samples: Vec<u64>, p: f64) -> PyResult<u64> {
    metrics::percentile(&samples, p).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// MQ level of a page accessed `freq` times.
#[pyfunction]
#[pyo3(signature = (freq, levels=8))]
fn mq_level(freq: u32, levels: u8) -> u8 {
    policy::dmx::level_for(freq, levels)
}

/// DRAM quota per context from activity scores.
#[pyfunction]
fn rebalance_quotas(scores: Vec<f64>, floor_pages: u64, dram_pages: u64, reserve: u64) -> Vec<u64> {
    policy::dmx::rebalance_quotas(&scores, floor_pages, dram_pages, reserve)
}

fn tier_name(t: Tier) -> &'static str {
    match t {
        Tier::Dram => "dram",
        Tier::Flash => "flash",
        Tier::InFlight(Transfer::Read) => "inflight-read",
        Tier::InFlight(Transfer::Write) => "inflight-write",
    }
}

/// A hand-built memory system: add contexts, lay down pages, then touch
/// them one at a time.
#[pyclass(unsendable)]
struct Simulation {
    inner: CoreSimulation,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (dram_pages, policy="swap", device="flash", flash_pages=None, seed=0))]
    fn new(dram_pages: u64, policy: &str, device: &str, flash_pages: Option<u64>, seed: u64) -> PyResult<Self> {
        let kind: PolicyKind = policy.parse().map_err(PyValueError::new_err)?;
        let profile = DeviceProfile::by_name(device)
            .ok_or_else(|| PyValueError::new_err(format!("unknown device `{device}`")))?;
        if dram_pages == 0 {
            return Err(PyValueError::new_err("dram_pages must be positive"));
        }
        let mut tier = TierConfig::with_dram(dram_pages);
        if let Some(f) = flash_pages {
            tier.flash_pages = f;
        }
        Ok(Self { inner: CoreSimulation::bare(tier, profile, kind, &DmxParams::default(), seed) })
    }

    #[pyo3(signature = (managed=true))]
    fn add_context(&mut self, managed: bool) -> u32 {
        self.inner.add_context(managed).0
    }

    /// Lay down `n` pages of the initial image; the most recently placed
    /// pages that fit start in DRAM.
    fn place(&mut self, ctx: u32, n: u64) -> PyResult<Vec<(u32, u32)>> {
        let ids = self.inner.place(ContextId(ctx), n).map_err(to_py)?;
        Ok(ids.into_iter().map(|p| (p.ctx.0, p.index)).collect())
    }

    fn start(&mut self) -> PyResult<()> {
        self.inner.start().map_err(to_py)
    }

    /// Returns (page ids, stall in µs).
    fn allocate(&mut self, ctx: u32, n: u64) -> PyResult<(Vec<(u32, u32)>, u64)> {
        let (ids, stall) = self.inner.allocate(ContextId(ctx), n).map_err(to_py)?;
        Ok((ids.into_iter().map(|p| (p.ctx.0, p.index)).collect(), stall))
    }

    /// Touch a page and wait for it; returns the stall in µs.
    #[pyo3(signature = (ctx, index, write=false))]
    fn access(&mut self, ctx: u32, index: u32, write: bool) -> PyResult<u64> {
        self.inner.access(PageId::new(ctx, index), write).map_err(to_py)
    }

    fn tier(&self, ctx: u32, index: u32) -> Option<&'static str> {
        self.inner.tier_of(PageId::new(ctx, index)).map(tier_name)
    }

    fn run_until(&mut self, time_us: u64) -> PyResult<()> {
        self.inner.run_until(SimTime(time_us)).map_err(to_py)
    }

    fn teardown(&mut self, ctx: u32) -> PyResult<()> {
        self.inner.teardown(ContextId(ctx)).map_err(to_py)
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.inner.check_invariants().map_err(to_py)
    }

    #[getter]
    fn now(&self) -> u64 {
        self.inner.now().as_us()
    }

    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.counters();
        let d = PyDict::new(py);
        d.set_item("demand_faults", c.demand_faults)?;
        d.set_item("demand_reads", c.demand_reads)?;
        d.set_item("prefetch_issued", c.prefetch_issued)?;
        d.set_item("prefetch_hits", c.prefetch_hits)?;
        d.set_item("mispredictions", c.mispredictions)?;
        d.set_item("evictions", c.evictions)?;
        d.set_item("writebacks", c.writebacks)?;
        Ok(d)
    }

    fn census<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.census();
        let d = PyDict::new(py);
        d.set_item("dram_used", c.dram_used)?;
        d.set_item("flash_used", c.flash_used)?;
        d.set_item("inflight", c.inflight)?;
        Ok(d)
    }
}

#[pymodule]
fn tiersim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(mq_level, m)?)?;
    m.add_function(wrap_pyfunction!(rebalance_quotas, m)?)?;
    Ok(())
}
