//! Mutual information between the secret row and the per-trial extreme
//! column, with a permutation noise floor.

use thiserror::Error;

use super::matrix::{ObservationMatrix, TrialExtreme};
use crate::rng::SimRng;
use crate::stats::{mean, std_dev};

pub const MIN_LEAKAGE_TRIALS: usize = 1 << 10;
const PERMUTATIONS: usize = 100;
const FLOOR_SIGMAS: f64 = 4.0;
const PERMUTATION_SEED: u64 = 0x1ea4_a9e5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeakageError {
    #[error("leakage score needs at least {need} trials, matrix has {have}")]
    InsufficientTrials { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageScore {
    /// Plug-in mutual information estimate.
    pub bits: f64,
    /// Mean + 4 standard deviations of the estimate under shuffled row labels.
    pub noise_floor: f64,
    pub trials: usize,
}

impl LeakageScore {
    pub fn leaks(&self) -> bool {
        self.bits > self.noise_floor
    }
}

/// Plug-in MI in bits. A trial whose extreme is tied across `k` columns
/// contributes weight `1/k` to each of them.
pub fn mutual_information(extremes: &[TrialExtreme], rows: usize, cols: usize) -> f64 {
    mi_with_rows(extremes, extremes.iter().map(|e| e.row as usize), rows, cols)
}

fn mi_with_rows(extremes: &[TrialExtreme], row_labels: impl Iterator<Item = usize>, rows: usize, cols: usize) -> f64 {
    let mut joint = vec![0.0f64; rows * cols];
    let mut row_w = vec![0.0f64; rows];
    let mut col_w = vec![0.0f64; cols];
    let mut total = 0.0;
    for (e, r) in extremes.iter().zip(row_labels) {
        if e.cols.is_empty() {
            continue;
        }
        let w = 1.0 / e.cols.len() as f64;
        for &c in &e.cols {
            joint[r * cols + c as usize] += w;
            col_w[c as usize] += w;
        }
        row_w[r] += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for r in 0..rows {
        if row_w[r] == 0.0 {
            continue;
        }
        for c in 0..cols {
            let j = joint[r * cols + c];
            if j > 0.0 {
                mi += j / total * (j * total / (row_w[r] * col_w[c])).log2();
            }
        }
    }
    if mi.abs() < 1e-9 {
        0.0
    } else {
        mi
    }
}

/// Leakage of `m`'s logged trials against a row-permutation floor.
pub fn leakage_score(m: &ObservationMatrix) -> Result<LeakageScore, LeakageError> {
    let ex = m.extremes();
    if ex.len() < MIN_LEAKAGE_TRIALS {
        return Err(LeakageError::InsufficientTrials {
            have: ex.len(),
            need: MIN_LEAKAGE_TRIALS,
        });
    }
    let bits = mutual_information(ex, m.rows(), m.cols());
    let mut rng = SimRng::new(PERMUTATION_SEED);
    let mut labels: Vec<usize> = ex.iter().map(|e| e.row as usize).collect();
    let null: Vec<f64> = (0..PERMUTATIONS)
        .map(|_| {
            rng.shuffle(&mut labels);
            mi_with_rows(ex, labels.iter().copied(), m.rows(), m.cols())
        })
        .collect();
    Ok(LeakageScore {
        bits,
        noise_floor: mean(&null) + FLOOR_SIGMAS * std_dev(&null),
        trials: ex.len(),
    })
}
