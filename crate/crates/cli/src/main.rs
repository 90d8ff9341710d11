use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tiersim::checks;
use tiersim::config::{parse_pairs, ExperimentSpec};
use tiersim::error::SimError;
use tiersim::experiment::{run_experiment, RunOptions};
use tiersim::metrics::RunSummary;
use tiersim::report;
use tiersim::workload::Trace;

/// Simulate DRAM + flash memory tiering under container colocation.
#[derive(Parser, Debug)]
#[command(name = "tiersim", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ratio table (TPS, p99) of run B against run A, per sweep point.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Where to write compare.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// swap, dmx or both.
    #[arg(long)]
    policy: Option<String>,
    /// flash or disk.
    #[arg(long)]
    device: Option<String>,
    /// Comma-separated noise container counts, strictly increasing.
    #[arg(long)]
    containers: Option<String>,
    /// Simulated seconds per point, warm-up included.
    #[arg(long)]
    duration: Option<String>,
    /// Seconds excluded from metrics at the start of each point.
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Image size divisor.
    #[arg(long)]
    scale: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Sweep points run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Check invariants during runs and trend criteria afterwards.
    #[arg(long)]
    check: bool,
    /// Replay an access trace instead of the generated workload.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write each point's event log under <out>/events/.
    #[arg(long)]
    dump_events: bool,
    /// Extra `key=value` settings, applied like flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Events between invariant sweeps under `--check` unless configured.
const CHECK_EVERY: u64 = 100_000;

enum Failure {
    Usage(String),
    Runtime(String),
    Check,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let usage = match &e {
            SimError::SweepPoint { source, .. } => source.is_usage(),
            other => other.is_usage(),
        };
        if usage {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn overrides(a: &RunArgs) -> Result<Vec<(String, String)>, Failure> {
    let mut v = Vec::new();
    let flags = [
        ("policy", &a.policy),
        ("device", &a.device),
        ("containers", &a.containers),
        ("duration_s", &a.duration),
        ("warmup_s", &a.warmup),
        ("seed", &a.seed),
        ("scale", &a.scale),
    ];
    for (k, val) in flags {
        if let Some(x) = val {
            v.push((k.to_string(), x.clone()));
        }
    }
    if let Some(t) = &a.trace {
        v.push(("trace".into(), t.display().to_string()));
    }
    for kv in &a.set {
        let (k, val) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        v.push((k.trim().to_string(), val.trim().to_string()));
    }
    Ok(v)
}

fn print_rows(rows: &[RunSummary]) {
    println!(
        "{:>6} {:>5} {:>6} {:>9} {:>9} {:>9} {:>10} {:>10}",
        "policy", "dev", "noise", "tps", "avg_ms", "p99_ms", "max_ms", "faults"
    );
    for r in rows {
        let (avg, p99, max) = match &r.latency {
            Some(l) => (format!("{:.2}", l.avg / 1000.0), format!("{:.2}", l.p99 as f64 / 1000.0), format!("{:.2}", l.max as f64 / 1000.0)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        println!(
            "{:>6} {:>5} {:>6} {:>9.1} {:>9} {:>9} {:>10} {:>10}",
            r.policy.as_str(),
            r.device,
            r.containers,
            r.tps,
            avg,
            p99,
            max,
            r.demand_faults
        );
    }
}

fn run(a: &RunArgs) -> Result<(), Failure> {
    let flags = overrides(a)?;
    let file = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
            parse_pairs(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    let mut spec = ExperimentSpec::resolve(&file, &flags)?;
    if let Some(path) = &spec.trace {
        Trace::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if a.check && spec.base.check_every == 0 {
        spec.base.check_every = CHECK_EVERY;
    }
    let opts = RunOptions { dump_events: a.dump_events };
    let rows = run_experiment(&spec, &a.out, a.jobs, &opts)?;
    print_rows(&rows);
    println!("results written to {}", a.out.display());
    if a.check {
        let results = checks::evaluate(&spec, &rows);
        if results.is_empty() {
            println!("no trend checks apply to this sweep");
        }
        for c in &results {
            println!("{c}");
        }
        if results.iter().any(|c| !c.pass) {
            return Err(Failure::Check);
        }
    }
    Ok(())
}

fn compare(dir_a: &Path, dir_b: &Path, out: &Path) -> Result<(), Failure> {
    let load = |dir: &Path| report::read_csv(&dir.join("sweep.csv")).map_err(|e| Failure::Usage(e.to_string()));
    let (a, b) = (load(dir_a)?, load(dir_b)?);
    let rows = report::compare(&a, &b)?;
    print!("{}", report::render_compare_table(&rows));
    std::fs::create_dir_all(out).map_err(|e| SimError::io(out, e))?;
    let path = out.join("compare.csv");
    std::fs::write(&path, report::render_compare_csv(&rows)).map_err(|e| SimError::io(&path, e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Some(Command::Compare { dir_a, dir_b, out }) => compare(dir_a, dir_b, out),
        None => run(&cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("run aborted: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check) => ExitCode::from(3),
    }
}
