//! Sweep results: `sweep.csv`, its parser, comparison tables, and SVG
//! line charts of each metric against container count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Result, SimError};
use crate::metrics::{LatencyStats, RunSummary};
use crate::policy::PolicyKind;

pub const SCHEMA_LINE: &str = "# schema=1";
pub const CSV_HEADER: &str = "containers,policy,device,tps,min_us,avg_us,max_us,p90_us,p95_us,p99_us,\
demand_faults,prefetch_issued,prefetch_hits,mispredictions,evictions,seed";

pub const PLOT_FILES: [&str; 4] = ["tps.svg", "latency.svg", "latency_log.svg", "percentiles.svg"];

/// Rows in the order given. Latency columns are empty when no transaction
/// completed.
pub fn render_csv(rows: &[RunSummary]) -> String {
    let mut s = String::new();
    s.push_str(SCHEMA_LINE);
    s.push('\n');
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let lat = match &r.latency {
            Some(l) => format!("{},{},{},{},{},{}", l.min, l.avg, l.max, l.p90, l.p95, l.p99),
            None => ",,,,,".to_string(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.containers,
            r.policy,
            r.device,
            r.tps,
            lat,
            r.demand_faults,
            r.prefetch_issued,
            r.prefetch_hits,
            r.mispredictions,
            r.evictions,
            r.seed
        );
    }
    s
}

pub fn parse_csv(text: &str, origin: &str) -> Result<Vec<RunSummary>> {
    let bad = |line: usize, msg: String| SimError::Results { path: origin.to_string(), msg: format!("line {line}: {msg}") };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == SCHEMA_LINE => {}
        _ => return Err(bad(1, format!("expected `{SCHEMA_LINE}`"))),
    }
    match lines.next() {
        Some((_, l)) if l.trim() == CSV_HEADER => {}
        Some((i, _)) => return Err(bad(i + 1, "unexpected column header".into())),
        None => return Err(bad(2, "missing column header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 16 {
            return Err(bad(i + 1, format!("expected 16 fields, found {}", f.len())));
        }
        fn field<T: std::str::FromStr>(f: &[&str], k: usize) -> std::result::Result<T, String> {
            f[k].parse().map_err(|_| format!("bad value `{}` in column {}", f[k], k + 1))
        }
        let parsed = (|| -> std::result::Result<RunSummary, String> {
            let latency = if f[4..10].iter().all(|v| v.is_empty()) {
                None
            } else {
                Some(LatencyStats {
                    min: field(&f, 4)?,
                    avg: field(&f, 5)?,
                    max: field(&f, 6)?,
                    p90: field(&f, 7)?,
                    p95: field(&f, 8)?,
                    p99: field(&f, 9)?,
                })
            };
            Ok(RunSummary {
                containers: field(&f, 0)?,
                policy: f[1].parse::<PolicyKind>()?,
                device: f[2].to_string(),
                tps: field(&f, 3)?,
                latency,
                demand_faults: field(&f, 10)?,
                prefetch_issued: field(&f, 11)?,
                prefetch_hits: field(&f, 12)?,
                mispredictions: field(&f, 13)?,
                evictions: field(&f, 14)?,
                seed: field(&f, 15)?,
            })
        })();
        rows.push(parsed.map_err(|m| bad(i + 1, m))?);
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<RunSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

/// Write `sweep.csv` and the four charts into `dir`, creating it if needed.
/// Returns the paths written.
pub fn emit(rows: &[RunSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| SimError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put("sweep.csv", render_csv(rows))?;
    for (name, svg) in PLOT_FILES.iter().zip(plots(rows)) {
        put(name, svg)?;
    }
    Ok(written)
}

/// One line of a comparison: how run B relates to run A at a sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub containers: u32,
    pub policy_a: PolicyKind,
    pub policy_b: PolicyKind,
    /// `tps_b / tps_a`; `None` when A completed nothing.
    pub tps_ratio: Option<f64>,
    /// `p99_b / p99_a`; `None` when either side has no samples.
    pub p99_ratio: Option<f64>,
}

/// Pair rows of two result sets. Sets covering the same (policy,
/// containers) points pair by that key; single-policy sets pair by
/// container count alone.
pub fn compare(a: &[RunSummary], b: &[RunSummary]) -> Result<Vec<CompareRow>> {
    let keys = |rows: &[RunSummary]| -> Vec<(PolicyKind, u32)> {
        let mut k: Vec<_> = rows.iter().map(|r| (r.policy, r.containers)).collect();
        k.sort();
        k
    };
    let policies = |rows: &[RunSummary]| -> Vec<PolicyKind> {
        let mut p: Vec<_> = rows.iter().map(|r| r.policy).collect();
        p.sort();
        p.dedup();
        p
    };
    let pairs: Vec<(&RunSummary, &RunSummary)> = if keys(a) == keys(b) {
        a.iter()
            .map(|ra| (ra, b.iter().find(|rb| rb.policy == ra.policy && rb.containers == ra.containers).expect("same keys")))
            .collect()
    } else if policies(a).len() == 1 && policies(b).len() == 1 {
        let ca: Vec<u32> = a.iter().map(|r| r.containers).collect();
        let cb: Vec<u32> = b.iter().map(|r| r.containers).collect();
        let mut sa = ca.clone();
        let mut sb = cb.clone();
        sa.sort_unstable();
        sb.sort_unstable();
        if sa != sb {
            let only_a: Vec<u32> = sa.iter().copied().filter(|c| !sb.contains(c)).collect();
            let only_b: Vec<u32> = sb.iter().copied().filter(|c| !sa.contains(c)).collect();
            return Err(SimError::Mismatch(format!(
                "sweep points differ: only in A {only_a:?}, only in B {only_b:?}"
            )));
        }
        a.iter()
            .map(|ra| (ra, b.iter().find(|rb| rb.containers == ra.containers).expect("same points")))
            .collect()
    } else {
        return Err(SimError::Mismatch(format!(
            "cannot pair {:?} with {:?}: point sets differ",
            keys(a),
            keys(b)
        )));
    };
    Ok(pairs
        .into_iter()
        .map(|(ra, rb)| CompareRow {
            containers: ra.containers,
            policy_a: ra.policy,
            policy_b: rb.policy,
            tps_ratio: (ra.tps > 0.0).then(|| rb.tps / ra.tps),
            p99_ratio: match (&ra.latency, &rb.latency) {
                (Some(x), Some(y)) if x.p99 > 0 => Some(y.p99 as f64 / x.p99 as f64),
                _ => None,
            },
        })
        .collect())
}

pub fn render_compare_csv(rows: &[CompareRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("containers,policy_a,policy_b,tps_ratio,p99_ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.containers, r.policy_a, r.policy_b, opt(r.tps_ratio), opt(r.p99_ratio));
    }
    s
}

pub fn render_compare_table(rows: &[CompareRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    let mut s = format!("{:>10}  {:>6}  {:>6}  {:>9}  {:>9}\n", "containers", "A", "B", "TPS B/A", "p99 B/A");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>10}  {:>6}  {:>6}  {:>9}  {:>9}",
            r.containers,
            r.policy_a.as_str(),
            r.policy_b.as_str(),
            opt(r.tps_ratio),
            opt(r.p99_ratio)
        );
    }
    s
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn group_label(r: &RunSummary) -> String {
    format!("{}/{}", r.policy, r.device)
}

/// Rows grouped by (policy, device), in first-seen order.
fn groups(rows: &[RunSummary]) -> Vec<(String, Vec<&RunSummary>)> {
    let mut out: Vec<(String, Vec<&RunSummary>)> = Vec::new();
    for r in rows {
        let label = group_label(r);
        match out.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(r),
            None => out.push((label, vec![r])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by_key(|r| r.containers);
    }
    out
}

fn latency_series(rows: &[RunSummary], metrics: &[(&str, fn(&LatencyStats) -> f64)]) -> Vec<Series> {
    let mut out = Vec::new();
    for (label, g) in groups(rows) {
        for (name, get) in metrics {
            out.push(Series {
                label: format!("{label} {name}"),
                points: g
                    .iter()
                    .filter_map(|r| r.latency.as_ref().map(|l| (r.containers as f64, get(l) / 1000.0)))
                    .collect(),
            });
        }
    }
    out
}

fn plots(rows: &[RunSummary]) -> [String; 4] {
    let tps: Vec<Series> = groups(rows)
        .into_iter()
        .map(|(label, g)| Series { label, points: g.iter().map(|r| (r.containers as f64, r.tps)).collect() })
        .collect();
    let spread: [(&str, fn(&LatencyStats) -> f64); 3] =
        [("min", |l| l.min as f64), ("avg", |l| l.avg), ("max", |l| l.max as f64)];
    let pct: [(&str, fn(&LatencyStats) -> f64); 3] =
        [("p90", |l| l.p90 as f64), ("p95", |l| l.p95 as f64), ("p99", |l| l.p99 as f64)];
    [
        chart("Critical throughput", "transactions / s", &tps, false),
        chart("Transaction latency", "latency (ms)", &latency_series(rows, &spread), false),
        chart("Transaction latency (log scale)", "latency (ms)", &latency_series(rows, &spread), true),
        chart("Latency percentiles", "latency (ms)", &latency_series(rows, &pct), true),
    ]
}

fn chart(title: &str, y_label: &str, series: &[Series], log: bool) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const L: f64 = 80.0;
    const R: f64 = 200.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let pts = || series.iter().flat_map(|s| s.points.iter().copied());
    let (mut x0, mut x1) = pts().fold((f64::MAX, f64::MIN), |(a, b), (x, _)| (a.min(x), b.max(x)));
    if x0 > x1 {
        (x0, x1) = (0.0, 1.0);
    }
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    let tf = |y: f64| if log { y.max(1e-3).log10() } else { y };
    let (mut y0, mut y1) = pts().fold((f64::MAX, f64::MIN), |(a, b), (_, y)| (a.min(tf(y)), b.max(tf(y))));
    if y0 > y1 {
        (y0, y1) = (0.0, 1.0);
    }
    if log {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    } else {
        y0 = y0.min(0.0);
        y1 = if y1 <= y0 { y0 + 1.0 } else { y1 * 1.05 };
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (tf(y) - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (W - R + L) / 2.0, esc(title));
    let _ = writeln!(s, r##"<g stroke="#444"><line x1="{L}" y1="{}" x2="{}" y2="{}"/><line x1="{L}" y1="{T}" x2="{L}" y2="{}"/></g>"##, H - B, W - R, H - B, H - B);

    for i in 0..=5 {
        let x = x0 + (x1 - x0) * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(x), H - B + 18.0, fmt_tick(x));
    }
    let y_ticks: Vec<f64> = if log {
        (y0 as i32..=y1 as i32).map(|e| 10f64.powi(e)).collect()
    } else {
        (0..=5).map(|i| y0 + (y1 - y0) * i as f64 / 5.0).collect()
    };
    for y in y_ticks {
        let yy = py(y);
        let _ = writeln!(s, r##"<line x1="{L}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/>"##, W - R);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, L - 6.0, yy + 4.0, fmt_tick(y));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">noise containers</text>"#, (W - R + L) / 2.0, H - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (H - B + T) / 2.0,
        (H - B + T) / 2.0,
        esc(y_label)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !ser.points.is_empty() {
            let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = T + 10.0 + i as f64 * 18.0;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - R + 15.0, W - R + 35.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R + 40.0, ly + 4.0, esc(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
