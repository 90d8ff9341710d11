//! Workload generators: noise containers serving images, a closed-loop
//! critical service, and replay of recorded access traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SimError};
use crate::memory::PAGE_BYTES;
use crate::rng::RandomSource;

/// Image classes per noise container: (count, size in MiB).
pub const IMAGE_CLASSES: [(u32, u64); 3] = [(500, 20), (100, 80), (80, 200)];

/// Image layout shared by every noise container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseCatalog {
    pub scale: u64,
    /// (first page index, page count) per image, contiguous and in order.
    pub images: Vec<(u32, u32)>,
}

impl NoiseCatalog {
    /// Image sizes divided by `scale`, rounded up to whole pages.
    pub fn new(scale: u64) -> Result<Self> {
        if scale == 0 {
            return Err(SimError::config("scale", "must be at least 1"));
        }
        let pages_per_mib = (1 << 20) / PAGE_BYTES;
        let mut images = Vec::new();
        let mut next = 0u64;
        for (count, mib) in IMAGE_CLASSES {
            let pages = (mib * pages_per_mib).div_ceil(scale).max(1);
            for _ in 0..count {
                let first = u32::try_from(next)
                    .map_err(|_| SimError::config("scale", "catalog exceeds 2^32 pages per container"))?;
                images.push((first, pages as u32));
                next += pages;
            }
        }
        Ok(Self { scale, images })
    }

    pub fn pages_per_container(&self) -> u64 {
        self.images.iter().map(|&(_, n)| n as u64).sum()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseClientSpec {
    pub clients: u32,
    pub think_us: u64,
    /// Whether noise containers are handed to the predictive policy.
    pub managed: bool,
}

impl Default for NoiseClientSpec {
    fn default() -> Self {
        Self { clients: 40, think_us: 150_000, managed: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalSpec {
    pub threads: u32,
    pub working_set_pages: u32,
    pub pages_per_txn: u32,
    pub base_service_us: u64,
    /// Zipf exponent over the working set; 0 is uniform.
    pub skew: f64,
    /// Probability that an access is a store.
    pub write_ratio: f64,
    /// Rarely used data (history, archives) beyond the hot working set.
    pub cold_pages: u32,
    /// Fraction of transactions that read `pages_per_txn` uniformly chosen
    /// cold pages instead of hot ones.
    pub cold_txn_ratio: f64,
}

impl Default for CriticalSpec {
    fn default() -> Self {
        Self {
            threads: 16,
            working_set_pages: 2048,
            pages_per_txn: 64,
            base_service_us: 5_000,
            skew: 0.99,
            write_ratio: 0.0,
            cold_pages: 8192,
            cold_txn_ratio: 0.03,
        }
    }
}

impl CriticalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.threads > 0 && (self.working_set_pages == 0 || self.pages_per_txn == 0) {
            return Err(SimError::config("critical.working_set_pages", "working set and pages per txn must be positive"));
        }
        if !(self.skew >= 0.0 && self.skew.is_finite()) {
            return Err(SimError::config("critical.skew", "must be a finite non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.cold_txn_ratio) {
            return Err(SimError::config("critical.cold_txn_ratio", "must be in [0, 1]"));
        }
        if self.cold_txn_ratio > 0.0 && self.cold_pages == 0 {
            return Err(SimError::config("critical.cold_pages", "cold transactions need a cold region"));
        }
        if !(0.0..=1.0).contains(&self.write_ratio) {
            return Err(SimError::config("critical.write_ratio", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Inverse-CDF sampler for `P(rank k) ∝ 1/(k+1)^s` over `n` ranks.
#[derive(Clone, Debug)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: u32, exponent: f64) -> Self {
        assert!(n > 0, "zipf over an empty range");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).powf(-exponent);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    pub fn len(&self) -> u32 {
        self.cdf.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn sample(&self, rng: &mut RandomSource) -> u32 {
        let u = rng.next_f64();
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1) as u32
    }
}

/// One recorded access: `time_us ctx page {r|w}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: u64,
    pub ctx: u32,
    pub page: u32,
    pub write: bool,
}

/// A parsed trace: optional context sizes from `# alloc <ctx> <pages>`
/// comment directives, then the records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub allocs: Vec<(u32, u32)>,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| SimError::Trace { path: origin.to_string(), line, msg };
        let mut out = Trace::default();
        let mut last = 0u64;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut f = comment.split_whitespace();
                if f.next() == Some("alloc") {
                    let ctx = f.next().and_then(|v| v.parse().ok());
                    let pages = f.next().and_then(|v| v.parse().ok());
                    match (ctx, pages, f.next()) {
                        (Some(c), Some(p), None) => out.allocs.push((c, p)),
                        _ => return Err(err(i + 1, "expected `# alloc <ctx> <pages>`".into())),
                    }
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| err(i + 1, format!("bad {what} `{s}`")));
            let time_us = num(f[0], "time")?;
            let ctx = u32::try_from(num(f[1], "context")?).map_err(|_| err(i + 1, "context out of range".into()))?;
            let page = u32::try_from(num(f[2], "page")?).map_err(|_| err(i + 1, "page out of range".into()))?;
            let write = match f[3] {
                "r" => false,
                "w" => true,
                other => return Err(err(i + 1, format!("access flag must be r or w, found `{other}`"))),
            };
            if time_us < last {
                return Err(err(i + 1, format!("time {time_us} goes backwards (previous {last})")));
            }
            last = time_us;
            out.records.push(TraceRecord { time_us, ctx, page, write });
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for &(c, p) in &self.allocs {
            let _ = writeln!(s, "# alloc {c} {p}");
        }
        for r in &self.records {
            let _ = writeln!(s, "{} {} {} {}", r.time_us, r.ctx, r.page, if r.write { 'w' } else { 'r' });
        }
        s
    }

    /// Pages each context needs: explicit directives, else the highest
    /// page index referenced plus one.
    pub fn footprint(&self) -> Vec<(u32, u32)> {
        let mut sizes: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
        for r in &self.records {
            let e = sizes.entry(r.ctx).or_default();
            *e = (*e).max(r.page + 1);
        }
        for &(c, p) in &self.allocs {
            let e = sizes.entry(c).or_default();
            *e = (*e).max(p);
        }
        sizes.into_iter().collect()
    }
}
