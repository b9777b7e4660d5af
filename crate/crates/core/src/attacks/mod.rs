//! Attack harnesses: flush-reload and prime-probe against AES T-table
//! lookups, and the Spectre-v1 gadget over both channels.
//!
//! Timing is the simulated response latency in cycles, optionally with
//! Gaussian noise. Work is split into independent chunks (AES) or
//! per-secret runs (Spectre), each on a fresh simulator with a derived seed,
//! and merged in a fixed order so results do not depend on thread count.

pub mod aes;
pub mod leakage;
pub mod matrix;
pub mod spectre;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

pub use aes::{aes_first_round_accesses, AesAttackResult, AesRecovery, AesTables, NibbleRecovery};
pub use leakage::{leakage_score, mutual_information, LeakageError, LeakageScore};
pub use matrix::{ObservationMatrix, Polarity, TrialExtreme};
pub use spectre::{SpectreLayout, SpectreResult, SpectreSweep};

use crate::addr::{Address, DomainId};
use crate::engine::{EngineError, SpecEngine};
use crate::hierarchy::{ConfigError, Hierarchy, HierarchyConfig, MemoryResponse};
use crate::model::{MemoryRequest, ModelKind};
use crate::rng::SimRng;

/// Domain of the victim (AES) or the Spectre sender.
pub const VICTIM: DomainId = DomainId::new(1);
/// Domain of the cross-domain attacker or receiver.
pub const ATTACKER: DomainId = DomainId::new(2);

/// Base of the attacker's prime array; aligned to the L1 capacity.
pub const PRIME_BASE: u64 = 0x80_0000;

pub const DEFAULT_AES_TRIALS: usize = 1 << 15;
pub const DEFAULT_SPECTRE_TRIALS: usize = 16;

const CHUNKS: usize = 64;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    FrAes,
    PpAes,
    FrSpectre,
    PpSpectre,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::FrAes,
        AttackKind::PpAes,
        AttackKind::FrSpectre,
        AttackKind::PpSpectre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::FrAes => "fr-aes",
            AttackKind::PpAes => "pp-aes",
            AttackKind::FrSpectre => "fr-spectre",
            AttackKind::PpSpectre => "pp-spectre",
        }
    }

    pub fn is_spectre(self) -> bool {
        matches!(self, AttackKind::FrSpectre | AttackKind::PpSpectre)
    }

    pub fn default_trials(self) -> usize {
        if self.is_spectre() {
            DEFAULT_SPECTRE_TRIALS
        } else {
            DEFAULT_AES_TRIALS
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown attack {s:?} (expected fr-aes, pp-aes, fr-spectre or pp-spectre)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub hierarchy: HierarchyConfig,
    /// AES: total trials. Spectre: trials per secret value.
    pub trials: usize,
    pub seed: u64,
    /// Standard deviation of Gaussian timer noise in cycles; 0 disables it.
    pub noise_sigma: f64,
    /// Spectre only: receiver shares the sender's domain.
    pub same_domain: bool,
    /// Spectre only: when false the branch is never mispredicted.
    pub mistrain: bool,
}

impl AttackConfig {
    pub fn new(model: ModelKind, kind: AttackKind) -> Self {
        Self {
            hierarchy: HierarchyConfig::new(model),
            trials: kind.default_trials(),
            seed: 1,
            noise_sigma: 0.0,
            same_domain: true,
            mistrain: true,
        }
    }

    pub fn model(&self) -> ModelKind {
        self.hierarchy.model
    }

    pub(crate) fn penalty_memory(&self) -> f64 {
        f64::from(self.hierarchy.latencies.l2 + self.hierarchy.latencies.memory)
    }

    pub(crate) fn penalty_l2(&self) -> f64 {
        f64::from(self.hierarchy.latencies.l2)
    }
}

/// One simulator instance plus the attacker's clock.
pub(crate) struct Machine {
    pub engine: SpecEngine,
    pub rng: SimRng,
    sigma: f64,
}

impl Machine {
    pub fn new(cfg: &AttackConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut seeds = SimRng::new(seed);
        let hierarchy = Hierarchy::new(cfg.hierarchy.clone(), seeds.next_u64())?;
        Ok(Self {
            engine: SpecEngine::new(hierarchy),
            rng: SimRng::new(seeds.next_u64()),
            sigma: cfg.noise_sigma,
        })
    }

    pub fn hierarchy(&mut self) -> &mut Hierarchy {
        self.engine.hierarchy_mut()
    }

    pub fn load(&mut self, addr: Address, domain: DomainId) -> MemoryResponse {
        self.hierarchy().access(&MemoryRequest::load(addr, domain))
    }

    pub fn timed_load(&mut self, addr: Address, domain: DomainId) -> f64 {
        let lat = f64::from(self.load(addr, domain).latency);
        lat + self.rng.gaussian(self.sigma)
    }

    pub fn flush(&mut self, addr: Address, domain: DomainId) {
        self.hierarchy().flush(addr, domain);
    }
}

/// The attacker's prime array: one line per L1 line.
///
/// On the set-associative baseline the probe result has one column per set
/// (ways probed newest-first so a single eviction costs a single miss). The
/// randomized designs have no sets, so every prime line is its own column.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PrimeArray {
    base: u64,
    line_size: u64,
    lines: usize,
    sets: usize,
    positional: bool,
}

impl PrimeArray {
    pub fn new(cfg: &HierarchyConfig) -> Self {
        Self {
            base: PRIME_BASE,
            line_size: cfg.l1.line_size as u64,
            lines: cfg.l1.total_lines,
            sets: cfg.l1.sets(),
            positional: cfg.model.is_star(),
        }
    }

    pub fn columns(&self) -> usize {
        if self.positional {
            self.lines
        } else {
            self.sets
        }
    }

    /// Set count used to fold prime positions onto set indices.
    pub fn sets(&self) -> usize {
        self.sets
    }

    fn line(&self, i: usize) -> Address {
        Address::from_raw(self.base + i as u64 * self.line_size)
    }

    pub fn prime(&self, m: &mut Machine, domain: DomainId) {
        for i in 0..self.lines {
            m.load(self.line(i), domain);
        }
    }

    pub fn probe(&self, m: &mut Machine, domain: DomainId) -> Vec<f64> {
        if self.positional {
            return (0..self.lines).map(|i| m.timed_load(self.line(i), domain)).collect();
        }
        let ways = self.lines / self.sets;
        (0..self.sets)
            .map(|s| {
                (0..ways)
                    .rev()
                    .map(|w| m.timed_load(self.line(s + w * self.sets), domain))
                    .sum()
            })
            .collect()
    }

    /// Columns whose set (after folding) is in `sets`.
    pub fn columns_for_sets(&self, sets: &[usize]) -> Vec<usize> {
        (0..self.columns())
            .filter(|c| sets.contains(&(c % self.sets)))
            .collect()
    }
}

/// Splits `trials` into fixed chunks, runs them in parallel and returns
/// their results in chunk order.
pub(crate) fn run_chunks<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync,
{
    let chunks = CHUNKS.min(trials.max(1));
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = trials / chunks + usize::from(c < trials % chunks);
            f(n, SimRng::fork(seed, c as u64).next_u64())
        })
        .collect()
}

/// Index and margin over the runner-up of the extreme entry, or `None` if
/// fewer than two values are present.
pub(crate) fn extreme_with_margin(values: &[Option<f64>], polarity: Polarity) -> Option<(usize, f64)> {
    let key = |v: f64| match polarity {
        Polarity::Min => -v,
        Polarity::Max => v,
    };
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let k = key(v);
        match best {
            Some((_, b)) if k <= b => second = second.max(k),
            Some((_, b)) => {
                second = b;
                best = Some((i, k));
            }
            None => best = Some((i, k)),
        }
    }
    let (i, b) = best?;
    (second > f64::NEG_INFINITY).then_some((i, b - second))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
    }

    #[test]
    fn margin_over_runner_up() {
        let v = [Some(5.0), Some(1.0), None, Some(3.0)];
        assert_eq!(extreme_with_margin(&v, Polarity::Min), Some((1, 2.0)));
        assert_eq!(extreme_with_margin(&v, Polarity::Max), Some((0, 2.0)));
        assert_eq!(
            extreme_with_margin(&[Some(1.0), Some(1.0)], Polarity::Min).unwrap().1,
            0.0
        );
        assert_eq!(extreme_with_margin(&[Some(1.0)], Polarity::Min), None);
    }

    #[test]
    fn chunks_cover_all_trials_in_order() {
        let sizes = run_chunks(1000, 7, |n, _| n);
        assert_eq!(sizes.len(), 64);
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        assert_eq!(run_chunks(10, 7, |_, s| s), run_chunks(10, 7, |_, s| s));
    }
}
