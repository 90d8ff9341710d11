//! Experiment configuration: a flat `key = value` text format with dotted
//! keys, layered as defaults < file < command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::engine::SimConfig;
use crate::error::{Result, SimError};
use crate::media::DeviceProfile;
use crate::memory::TierConfig;
use crate::policy::PolicyKind;

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "policy",
    "containers",
    "duration_s",
    "warmup_s",
    "seed",
    "scale",
    "trace",
    "check_every",
    "dram_pages",
    "flash_pages",
    "device",
    "device.read_lat_us",
    "device.write_lat_us",
    "device.bandwidth",
    "device.batch_pages",
    "device.max_inflight",
    "noise.clients",
    "noise.think_us",
    "noise.managed",
    "critical.threads",
    "critical.working_set_pages",
    "critical.pages_per_txn",
    "critical.base_service_us",
    "critical.skew",
    "critical.write_ratio",
    "critical.cold_pages",
    "critical.cold_txn_ratio",
    "dmx.levels",
    "dmx.lifetime_us",
    "dmx.window_us",
    "dmx.alpha",
    "dmx.dormant_threshold",
    "dmx.dormant_windows",
    "dmx.floor_pages",
    "dmx.reserve_fraction",
];

/// One experiment: a base configuration swept over container counts for
/// one or both policies.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    /// Everything except `policy` and `containers`, which vary per point.
    pub base: SimConfig,
    pub policies: Vec<PolicyKind>,
    pub containers: Vec<u32>,
    /// Replay this trace instead of the generated workload.
    pub trace: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            policies: vec![PolicyKind::Swap],
            containers: default_sweep(),
            trace: None,
        }
    }
}

/// 1, 3, ..., 49.
pub fn default_sweep() -> Vec<u32> {
    (1..=49).step_by(2).collect()
}

/// `key = value` pairs from config text; `#` starts a comment line.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(SimError::config(
                format!("{origin}:{}", i + 1),
                format!("expected `key = value`, found `{line}`"),
            ));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(SimError::config(format!("{origin}:{}", i + 1), "empty key"));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| SimError::config(key, format!("invalid value `{v}`")))
}

fn seconds(key: &str, v: &str) -> Result<u64> {
    let s: f64 = num(key, v)?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(SimError::config(key, "must be a non-negative number of seconds"));
    }
    Ok((s * 1e6).round() as u64)
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(SimError::config(key, format!("expected true or false, found `{v}`"))),
    }
}

pub fn parse_policies(key: &str, v: &str) -> Result<Vec<PolicyKind>> {
    match v {
        "both" => Ok(vec![PolicyKind::Swap, PolicyKind::Dmx]),
        other => other.parse().map(|p| vec![p]).map_err(|m: String| SimError::config(key, m)),
    }
}

pub fn parse_containers(key: &str, v: &str) -> Result<Vec<u32>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

impl ExperimentSpec {
    /// Defaults, then `file` pairs, then `overrides`; a key given in both
    /// takes the override. The device profile named by `device` is applied
    /// before any `device.*` field regardless of where each came from.
    pub fn resolve(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        let mut merged: BTreeMap<&str, &str> = BTreeMap::new();
        for (layer, pairs) in [("file", file), ("flags", overrides)] {
            let mut seen = std::collections::HashSet::new();
            for (k, v) in pairs {
                let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
                    return Err(SimError::config(k.as_str(), "unknown key"));
                };
                if !seen.insert(key) {
                    return Err(SimError::config(k.as_str(), format!("given twice in {layer}")));
                }
                merged.insert(key, v.as_str());
            }
        }
        let mut spec = ExperimentSpec::default();
        if let Some(name) = merged.get("device") {
            spec.base.device = DeviceProfile::by_name(name)
                .ok_or_else(|| SimError::config("device", format!("unknown profile `{name}` (expected flash or disk)")))?;
        }
        let mut flash_pages = None;
        for &key in KEYS {
            let Some(&v) = merged.get(key) else { continue };
            spec.set(key, v, &mut flash_pages)?;
        }
        spec.base.tier = TierConfig {
            flash_pages: flash_pages.unwrap_or(8 * spec.base.tier.dram_pages),
            ..spec.base.tier
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let pairs = parse_pairs(&text, &path.display().to_string())?;
        Self::resolve(&pairs, overrides)
    }

    fn set(&mut self, key: &str, v: &str, flash_pages: &mut Option<u64>) -> Result<()> {
        let b = &mut self.base;
        match key {
            "policy" => self.policies = parse_policies(key, v)?,
            "containers" => self.containers = parse_containers(key, v)?,
            "duration_s" => b.duration_us = seconds(key, v)?,
            "warmup_s" => b.warmup_us = seconds(key, v)?,
            "seed" => b.seed = num(key, v)?,
            "scale" => b.scale = num(key, v)?,
            "trace" => self.trace = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "check_every" => b.check_every = num(key, v)?,
            "dram_pages" => b.tier.dram_pages = num(key, v)?,
            "flash_pages" => *flash_pages = Some(num(key, v)?),
            "device" => {}
            "device.read_lat_us" => b.device.read_lat_us = num(key, v)?,
            "device.write_lat_us" => b.device.write_lat_us = num(key, v)?,
            "device.bandwidth" => b.device.bandwidth = num(key, v)?,
            "device.batch_pages" => b.device.batch_pages = num(key, v)?,
            "device.max_inflight" => b.device.max_inflight = num(key, v)?,
            "noise.clients" => b.noise.clients = num(key, v)?,
            "noise.think_us" => b.noise.think_us = num(key, v)?,
            "noise.managed" => b.noise.managed = flag(key, v)?,
            "critical.threads" => b.critical.threads = num(key, v)?,
            "critical.working_set_pages" => b.critical.working_set_pages = num(key, v)?,
            "critical.pages_per_txn" => b.critical.pages_per_txn = num(key, v)?,
            "critical.base_service_us" => b.critical.base_service_us = num(key, v)?,
            "critical.skew" => b.critical.skew = num(key, v)?,
            "critical.write_ratio" => b.critical.write_ratio = num(key, v)?,
            "critical.cold_pages" => b.critical.cold_pages = num(key, v)?,
            "critical.cold_txn_ratio" => b.critical.cold_txn_ratio = num(key, v)?,
            "dmx.levels" => b.dmx.levels = num(key, v)?,
            "dmx.lifetime_us" => b.dmx.lifetime_us = num(key, v)?,
            "dmx.window_us" => b.dmx.window_us = num(key, v)?,
            "dmx.alpha" => b.dmx.alpha = num(key, v)?,
            "dmx.dormant_threshold" => b.dmx.dormant_threshold = num(key, v)?,
            "dmx.dormant_windows" => b.dmx.dormant_windows = num(key, v)?,
            "dmx.floor_pages" => b.dmx.floor_pages = num(key, v)?,
            "dmx.reserve_fraction" => b.dmx.reserve_fraction = num(key, v)?,
            _ => unreachable!("key list and setter out of step: {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.containers.is_empty() {
            return Err(SimError::config("containers", "at least one sweep point is required"));
        }
        if self.containers[0] == 0 {
            return Err(SimError::config("containers", "container counts must be positive"));
        }
        if self.containers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::config("containers", "must be strictly increasing"));
        }
        if self.policies.is_empty() {
            return Err(SimError::config("policy", "no policy selected"));
        }
        if self.base.tier.flash_pages == 0 {
            return Err(SimError::config("flash_pages", "must be positive"));
        }
        self.base.validate()
    }

    /// Configuration of one sweep point.
    pub fn point(&self, policy: PolicyKind, containers: u32) -> SimConfig {
        SimConfig { policy, containers, ..self.base.clone() }
    }

    /// Every key with its resolved value. Parsing this text back yields an
    /// identical spec.
    pub fn render(&self) -> String {
        let b = &self.base;
        let policy = match self.policies.as_slice() {
            [p] => p.as_str().to_string(),
            _ => "both".to_string(),
        };
        let containers: Vec<String> = self.containers.iter().map(u32::to_string).collect();
        let secs = |us: u64| format!("{}", us as f64 / 1e6);
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("policy", policy);
        put("containers", containers.join(","));
        put("duration_s", secs(b.duration_us));
        put("warmup_s", secs(b.warmup_us));
        put("seed", b.seed.to_string());
        put("scale", b.scale.to_string());
        put("trace", self.trace.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("check_every", b.check_every.to_string());
        put("dram_pages", b.tier.dram_pages.to_string());
        put("flash_pages", b.tier.flash_pages.to_string());
        put("device", b.device.name.clone());
        put("device.read_lat_us", b.device.read_lat_us.to_string());
        put("device.write_lat_us", b.device.write_lat_us.to_string());
        put("device.bandwidth", b.device.bandwidth.to_string());
        put("device.batch_pages", b.device.batch_pages.to_string());
        put("device.max_inflight", b.device.max_inflight.to_string());
        put("noise.clients", b.noise.clients.to_string());
        put("noise.think_us", b.noise.think_us.to_string());
        put("noise.managed", b.noise.managed.to_string());
        put("critical.threads", b.critical.threads.to_string());
        put("critical.working_set_pages", b.critical.working_set_pages.to_string());
        put("critical.pages_per_txn", b.critical.pages_per_txn.to_string());
        put("critical.base_service_us", b.critical.base_service_us.to_string());
        put("critical.skew", b.critical.skew.to_string());
        put("critical.write_ratio", b.critical.write_ratio.to_string());
        put("critical.cold_pages", b.critical.cold_pages.to_string());
        put("critical.cold_txn_ratio", b.critical.cold_txn_ratio.to_string());
        put("dmx.levels", b.dmx.levels.to_string());
        put("dmx.lifetime_us", b.dmx.lifetime_us.to_string());
        put("dmx.window_us", b.dmx.window_us.to_string());
        put("dmx.alpha", b.dmx.alpha.to_string());
        put("dmx.dormant_threshold", b.dmx.dormant_threshold.to_string());
        put("dmx.dormant_windows", b.dmx.dormant_windows.to_string());
        put("dmx.floor_pages", b.dmx.floor_pages.to_string());
        put("dmx.reserve_fraction", b.dmx.reserve_fraction.to_string());
        s
    }
}
