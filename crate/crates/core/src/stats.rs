//! Small statistical helpers shared by the self-test and the harnesses.

use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Pearson chi-square goodness-of-fit against the uniform distribution.
///
/// Panics if fewer than two bins are given or all counts are zero.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquareResult {
    assert!(counts.len() >= 2, "need at least two bins");
    let total: u64 = counts.iter().sum();
    assert!(total > 0, "no observations");
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dof = counts.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    ChiSquareResult {
        statistic,
        degrees_of_freedom: dof,
        p_value: dist.sf(statistic),
    }
}

/// Folds per-item counts into `bins` equal contiguous groups.
pub fn fold_bins(counts: &[u64], bins: usize) -> Vec<u64> {
    assert!(
        bins > 0 && counts.len().is_multiple_of(bins),
        "bins must divide the item count"
    );
    let width = counts.len() / bins;
    counts.chunks(width).map(|c| c.iter().sum()).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}
