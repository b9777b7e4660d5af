//! Run configuration merged from a `key = value` file, `STARSIM_*`
//! environment variables and command-line flags, in that order of
//! increasing precedence.

use std::fmt;
use std::path::{Path, PathBuf};

use starsim_core::addr::MAX_EXTRA_INDEX_BITS;
use starsim_core::{HierarchyConfig, Latencies, ModelKind};

pub const ENV_PREFIX: &str = "STARSIM_";
pub const DEFAULT_K: u32 = 4;
pub const DEFAULT_OUT: &str = "starsim-out";

/// Keys accepted in config files; each maps to `STARSIM_<KEY>` in the
/// environment.
pub const KEYS: [&str; 9] = [
    "model",
    "k",
    "seed",
    "trials",
    "l1_cycles",
    "l2_cycles",
    "memory_cycles",
    "noise",
    "out",
];

/// A configuration problem. Always reported as a usage error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Partially specified settings from one source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<String>,
    pub k: Option<u32>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub l1_cycles: Option<u32>,
    pub l2_cycles: Option<u32>,
    pub memory_cycles: Option<u32>,
    pub noise: Option<f64>,
    pub out: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: cannot parse {value:?} as a number")))
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "model" => self.model = Some(value.to_string()),
            "k" => self.k = Some(parse_num(key, value)?),
            "seed" => self.seed = Some(parse_num(key, value)?),
            "trials" => self.trials = Some(parse_num(key, value)?),
            "l1_cycles" => self.l1_cycles = Some(parse_num(key, value)?),
            "l2_cycles" => self.l2_cycles = Some(parse_num(key, value)?),
            "memory_cycles" => self.memory_cycles = Some(parse_num(key, value)?),
            "noise" => self.noise = Some(parse_num(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(bad(format!("unknown key {other:?} (known: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn parse_file_text(text: &str) -> Result<Self, ConfigError> {
        let mut o = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad(format!("line {}: expected `key = value`", i + 1)));
            };
            o.set(k.trim(), v).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_file_text(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Reads `STARSIM_<KEY>` variables through `get`.
    pub fn from_env_with(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut o = Self::default();
        for key in KEYS {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Some(v) = get(&var) {
                o.set(key, &v).map_err(|e| bad(format!("{var}: {e}")))?;
            }
        }
        Ok(o)
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_env_with(|v| std::env::var(v).ok())
    }

    /// Fields set in `other` replace ours.
    pub fn merge(self, other: Overrides) -> Overrides {
        Overrides {
            model: other.model.or(self.model),
            k: other.k.or(self.k),
            seed: other.seed.or(self.seed),
            trials: other.trials.or(self.trials),
            l1_cycles: other.l1_cycles.or(self.l1_cycles),
            l2_cycles: other.l2_cycles.or(self.l2_cycles),
            memory_cycles: other.memory_cycles.or(self.memory_cycles),
            noise: other.noise.or(self.noise),
            out: other.out.or(self.out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    /// `None` means the command's own default.
    pub trials: Option<usize>,
    pub latencies: Latencies,
    pub noise: f64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(o: Overrides) -> Result<Self, ConfigError> {
        let name = o.model.as_deref().unwrap_or("sa-lru");
        let model = match (name, o.k) {
            ("star-news", k) => {
                let k = k.unwrap_or(DEFAULT_K);
                if k > MAX_EXTRA_INDEX_BITS {
                    return Err(bad(format!("k must be at most {MAX_EXTRA_INDEX_BITS}, got {k}")));
                }
                ModelKind::StarNews { extra_index_bits: k }
            }
            ("sa-lru" | "star-farr", Some(_)) => {
                return Err(bad(format!("k only applies to star-news, not {name}")));
            }
            ("sa-lru", None) => ModelKind::SaLru,
            ("star-farr", None) => ModelKind::StarFarr,
            (other, _) => {
                return Err(bad(format!(
                    "unknown model {other:?} (expected sa-lru, star-farr or star-news)"
                )))
            }
        };
        let defaults = Latencies::default();
        let latencies = Latencies {
            l1: o.l1_cycles.unwrap_or(defaults.l1),
            l2: o.l2_cycles.unwrap_or(defaults.l2),
            memory: o.memory_cycles.unwrap_or(defaults.memory),
        };
        for (name, v) in [
            ("l1_cycles", latencies.l1),
            ("l2_cycles", latencies.l2),
            ("memory_cycles", latencies.memory),
        ] {
            if v < 1 {
                return Err(bad(format!("{name} must be at least 1")));
            }
        }
        if o.trials == Some(0) {
            return Err(bad("trials must be at least 1"));
        }
        let noise = o.noise.unwrap_or(0.0);
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(bad(format!("noise must be a non-negative number, got {noise}")));
        }
        Ok(Self {
            model,
            seed: o.seed.unwrap_or(1),
            trials: o.trials,
            latencies,
            noise,
            out: o.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        })
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        let mut h = HierarchyConfig::new(self.model);
        h.latencies = self.latencies;
        h
    }

    pub fn k(&self) -> Option<u32> {
        match self.model {
            ModelKind::StarNews { extra_index_bits } => Some(extra_index_bits),
            _ => None,
        }
    }

    /// Settings echoed at the top of every output file.
    pub fn echo(&self, trials: usize) -> Vec<(String, String)> {
        vec![
            ("model".into(), self.model.name().into()),
            ("k".into(), self.k().map_or("-".into(), |k| k.to_string())),
            ("seed".into(), self.seed.to_string()),
            ("trials".into(), trials.to_string()),
            ("l1_cycles".into(), self.latencies.l1.to_string()),
            ("l2_cycles".into(), self.latencies.l2.to_string()),
            ("memory_cycles".into(), self.latencies.memory.to_string()),
            ("noise".into(), self.noise.to_string()),
        ]
    }
}
