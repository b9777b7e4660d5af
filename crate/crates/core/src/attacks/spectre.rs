//! Spectre-v1 bounds-check bypass with a cache covert channel.
//!
//! ```text
//! if (x < array1_size) {
//!     y = array1[x];
//!     z = shared[y * 64];
//! }
//! ```
//!
//! The sender loads `array1_size` non-speculatively, then opens a branch
//! window. With an out-of-bounds `x` and a mistrained branch the two loads
//! run on the wrong path and are squashed; with an in-bounds `x` they
//! commit. The secret sits in the same line as `array1`, beyond its end.

use rayon::prelude::*;

use super::leakage::{leakage_score, LeakageScore};
use super::matrix::{ObservationMatrix, Polarity};
use super::{extreme_with_margin, AttackConfig, AttackError, AttackKind, Machine, PrimeArray, ATTACKER, VICTIM};
use crate::addr::{Address, DomainId};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectreLayout {
    /// 256 probe blocks, one line each. Aligned so block `i` maps to L1 set `i`.
    pub shared: Address,
    pub array1: Address,
    pub array1_size: Address,
    pub array1_len: u8,
    /// Out-of-bounds index of the secret byte.
    pub attack_x: u64,
}

impl SpectreLayout {
    pub fn standard() -> Self {
        Self {
            shared: Address::from_raw(0x40_0000),
            array1: Address::from_raw(0x20_3200),
            array1_size: Address::from_raw(0x20_2dc0),
            array1_len: 16,
            attack_x: 40,
        }
    }

    pub fn block(&self, i: usize) -> Address {
        self.shared.offset(64 * i as u64)
    }

    fn install(&self, m: &mut Machine, secret: u8) {
        let mem = m.hierarchy().memory_mut();
        mem.write_byte(self.array1_size, self.array1_len);
        for i in 0..self.array1_len {
            mem.write_byte(self.array1.offset(u64::from(i)), i + 1);
        }
        mem.write_byte(self.array1.offset(self.attack_x), secret);
    }
}

/// Runs the gadget once in `domain`. A mistrained branch enters the body
/// for any `x`; otherwise only in-bounds `x` does.
fn gadget(m: &mut Machine, lay: &SpectreLayout, domain: DomainId, x: u64, mistrain: bool) -> Result<(), AttackError> {
    let e = &mut m.engine;
    let size_load = e.issue_load(lay.array1_size, domain)?;
    let size = u64::from(size_load.response.byte(lay.array1_size));
    e.resolve_to(size_load.id)?;
    let branch = e.issue_barrier()?;
    let in_bounds = x < size;
    if !(in_bounds || mistrain) {
        e.resolve_to(branch)?;
        return Ok(());
    }
    let a = lay.array1.offset(x);
    let first = e.issue_load(a, domain)?;
    let y = first.response.byte(a);
    let second = e.issue_load(lay.block(y as usize), domain)?;
    if in_bounds {
        e.resolve_barrier(branch)?;
        e.resolve_to(second.id)?;
    } else {
        e.squash_from(first.id)?;
        e.resolve_to(branch)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SpectreResult {
    pub secret: u8,
    pub recovered: Option<u8>,
    /// Rows are secret values; only the attacked secret's row is populated.
    pub matrix: ObservationMatrix,
    /// Prime-probe only: in-bounds runs used as a secret-independent baseline.
    pub baseline: Option<ObservationMatrix>,
    /// Prime-probe only: attack minus baseline mean per set.
    pub differential: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SpectreSweep {
    pub results: Vec<SpectreResult>,
    pub matrix: ObservationMatrix,
    pub leakage: Option<LeakageScore>,
}

impl SpectreSweep {
    pub fn recovered_correctly(&self) -> usize {
        self.results.iter().filter(|r| r.recovered == Some(r.secret)).count()
    }

    pub fn recovered_any(&self) -> usize {
        self.results.iter().filter(|r| r.recovered.is_some()).count()
    }
}

fn receiver(cfg: &AttackConfig) -> DomainId {
    if cfg.same_domain {
        VICTIM
    } else {
        ATTACKER
    }
}

fn machine_for(cfg: &AttackConfig, secret: u8) -> Result<Machine, AttackError> {
    let seed = SimRng::fork(cfg.seed, u64::from(secret)).next_u64();
    Ok(Machine::new(cfg, seed)?)
}

/// Flush-reload receiver. Recovered byte is the block with the lowest mean
/// reload latency, if it beats the runner-up by half a memory miss.
pub fn run_spectre_fr(secret: u8, cfg: &AttackConfig) -> Result<SpectreResult, AttackError> {
    let lay = SpectreLayout::standard();
    let mut m = machine_for(cfg, secret)?;
    lay.install(&mut m, secret);
    let rx = receiver(cfg);
    let mut matrix = ObservationMatrix::new(256, 256, Polarity::Min);
    let mut lat = vec![0.0; 256];
    for trial in 0..=cfg.trials {
        for i in 0..256 {
            m.flush(lay.block(i), rx);
        }
        gadget(&mut m, &lay, VICTIM, lay.attack_x, cfg.mistrain)?;
        for (i, l) in lat.iter_mut().enumerate() {
            *l = m.timed_load(lay.block(i), rx);
        }
        // Trial 0 warms the hierarchy and is not recorded.
        if trial > 0 {
            matrix.record_trial(secret as usize, &lat);
        }
    }
    let means: Vec<Option<f64>> = (0..256).map(|c| matrix.mean(secret as usize, c)).collect();
    let recovered = extreme_with_margin(&means, Polarity::Min)
        .filter(|&(_, margin)| margin >= 0.5 * cfg.penalty_memory())
        .map(|(i, _)| i as u8);
    Ok(SpectreResult {
        secret,
        recovered,
        matrix,
        baseline: None,
        differential: None,
    })
}

/// Prime-probe receiver. Each attack trial is paired with an in-bounds run
/// of the same gadget (`x = trial mod 16`); the recovered byte is the set
/// whose attack-minus-baseline latency peaks by at least half an L2 hit.
pub fn run_spectre_pp(secret: u8, cfg: &AttackConfig) -> Result<SpectreResult, AttackError> {
    let lay = SpectreLayout::standard();
    let prime = PrimeArray::new(&cfg.hierarchy);
    let mut m = machine_for(cfg, secret)?;
    lay.install(&mut m, secret);
    let rx = receiver(cfg);
    let cols = prime.columns();
    let mut attack = ObservationMatrix::new(256, cols, Polarity::Max);
    let mut baseline = ObservationMatrix::new(256, cols, Polarity::Max);

    prime.prime(&mut m, rx);
    gadget(&mut m, &lay, VICTIM, 0, false)?;
    prime.probe(&mut m, rx);
    for trial in 0..cfg.trials {
        prime.prime(&mut m, rx);
        gadget(&mut m, &lay, VICTIM, lay.attack_x, cfg.mistrain)?;
        attack.record_trial(secret as usize, &prime.probe(&mut m, rx));

        prime.prime(&mut m, rx);
        let x_in = trial as u64 % u64::from(lay.array1_len);
        gadget(&mut m, &lay, VICTIM, x_in, false)?;
        baseline.record_trial(secret as usize, &prime.probe(&mut m, rx));
    }

    let sets = prime.sets();
    let row = secret as usize;
    let differential: Vec<f64> = (0..sets)
        .map(|s| attack.folded_mean(row, s, sets).unwrap_or(0.0) - baseline.folded_mean(row, s, sets).unwrap_or(0.0))
        .collect();
    let penalty = cfg.penalty_l2();
    let diff_opt: Vec<Option<f64>> = differential.iter().map(|&d| Some(d)).collect();
    let recovered = extreme_with_margin(&diff_opt, Polarity::Max)
        .filter(|&(i, margin)| differential[i] >= 0.5 * penalty && margin >= 0.25 * penalty)
        .map(|(i, _)| i as u8);
    Ok(SpectreResult {
        secret,
        recovered,
        matrix: attack,
        baseline: Some(baseline),
        differential: Some(differential),
    })
}

/// Runs one Spectre attack per secret in parallel and merges the matrices
/// in secret order.
pub fn sweep_spectre(kind: AttackKind, secrets: &[u8], cfg: &AttackConfig) -> Result<SpectreSweep, AttackError> {
    let run = match kind {
        AttackKind::FrSpectre => run_spectre_fr,
        AttackKind::PpSpectre => run_spectre_pp,
        other => panic!("{other} is not a Spectre attack"),
    };
    let results: Vec<SpectreResult> = secrets.par_iter().map(|&s| run(s, cfg)).collect::<Result<_, _>>()?;
    let mut matrix = results
        .first()
        .map(|r| ObservationMatrix::new(r.matrix.rows(), r.matrix.cols(), r.matrix.polarity()))
        .unwrap_or_else(|| ObservationMatrix::new(256, 256, Polarity::Min));
    for r in &results {
        matrix.merge(&r.matrix);
    }
    Ok(SpectreSweep {
        leakage: leakage_score(&matrix).ok(),
        results,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn cfg(model: ModelKind, kind: AttackKind) -> AttackConfig {
        let mut c = AttackConfig::new(model, kind);
        c.trials = 4;
        c
    }

    #[test]
    fn probe_blocks_map_to_their_own_set() {
        let lay = SpectreLayout::standard();
        for i in 0..256 {
            assert_eq!((lay.block(i).value() / 64) % 256, i as u64);
        }
        assert_ne!(lay.array1.line(64), lay.array1_size.line(64));
        assert_eq!(lay.array1.offset(lay.attack_x).line(64), lay.array1);
    }

    #[test]
    fn baseline_fr_leaks_secret() {
        let r = run_spectre_fr(30, &cfg(ModelKind::SaLru, AttackKind::FrSpectre)).unwrap();
        assert_eq!(r.recovered, Some(30));
    }

    #[test]
    fn star_fr_recovers_nothing() {
        for model in [ModelKind::StarFarr, ModelKind::StarNews { extra_index_bits: 4 }] {
            let r = run_spectre_fr(30, &cfg(model, AttackKind::FrSpectre)).unwrap();
            assert_eq!(r.recovered, None, "{model}");
        }
    }

    #[test]
    fn no_mistraining_no_leak() {
        let mut c = cfg(ModelKind::SaLru, AttackKind::FrSpectre);
        c.mistrain = false;
        assert_eq!(run_spectre_fr(30, &c).unwrap().recovered, None);
    }

    #[test]
    fn baseline_pp_peaks_at_secret_set() {
        let r = run_spectre_pp(30, &cfg(ModelKind::SaLru, AttackKind::PpSpectre)).unwrap();
        assert_eq!(r.recovered, Some(30), "{:?}", r.differential);
    }

    #[test]
    fn star_pp_is_flat() {
        for model in [ModelKind::StarFarr, ModelKind::StarNews { extra_index_bits: 4 }] {
            let mut c = cfg(model, AttackKind::PpSpectre);
            c.trials = 16;
            assert_eq!(run_spectre_pp(30, &c).unwrap().recovered, None, "{model}");
        }
    }
}
