//! Closed-form expectations for synthetic layouts and literal double-sum
//! evaluations of the metrics. Nothing here calls into the trained pipeline.

use crate::basis::FactorBasis;
use crate::linalg::Matrix;
use crate::synth::SyntheticConfig;
use serde::{Deserialize, Serialize};

/// Expected metrics of a synthetic configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Code dimensions each factor reads, before any rotation.
    pub dimension_sets: Vec<Vec<usize>>,
    /// `|S_j ∩ S_k|` for every pair; the diagonal holds `R`.
    pub shared: Vec<Vec<usize>>,
    pub expected_mean_iwo: f64,
    pub expected_iwr: f64,
    /// The IWR expectation assumes the residual loss is spread over all `L`
    /// dimensions.
    pub assumes_adjustment: bool,
}

/// Pairwise counts of shared code dimensions.
pub fn shared_dims(config: &SyntheticConfig) -> Vec<Vec<usize>> {
    let sets = config.dimension_sets();
    let k = sets.len();
    let mut out = vec![vec![0; k]; k];
    for j in 0..k {
        for m in 0..k {
            out[j][m] = sets[j].iter().filter(|d| sets[m].contains(d)).count();
        }
    }
    out
}

/// Expected IWR of `R` equally important dimensions. With the adjustment the
/// entropy is measured in base `L`.
pub fn expected_iwr(rank: usize, latent_dim: usize, adjusted: bool) -> f64 {
    if rank <= 1 {
        return 1.0;
    }
    if adjusted {
        1.0 - (rank as f64).ln() / (latent_dim as f64).ln()
    } else {
        0.0
    }
}

/// Ground truth under uniform importance on each factor's own dimensions.
pub fn expected_metrics(config: &SyntheticConfig, adjusted: bool) -> GroundTruth {
    let shared = shared_dims(config);
    let k = shared.len();
    let r = if config.mapping.is_block() { config.rank } else { 1 };
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for j in 0..k {
        for m in j + 1..k {
            sum += 1.0 - shared[j][m] as f64 / r as f64;
            pairs += 1;
        }
    }
    GroundTruth {
        dimension_sets: config.dimension_sets(),
        expected_mean_iwo: if pairs == 0 { 1.0 } else { sum / pairs as f64 },
        expected_iwr: expected_iwr(r, config.latent_dim, adjusted),
        assumes_adjustment: adjusted,
        shared,
    }
}

/// `1 - sum_{l,m} sqrt(a_l a_m) (b_l . b_m)^2`, one scalar at a time.
pub fn brute_force_iwo(fj: &FactorBasis, fk: &FactorBasis) -> f64 {
    let mut total = 0.0;
    for l in 0..fj.rank() {
        for m in 0..fk.rank() {
            let mut d = 0.0;
            for i in 0..fj.latent_dim() {
                d += fj.basis[(l, i)] * fk.basis[(m, i)];
            }
            total += (fj.importance[l] * fk.importance[m]).sqrt() * d * d;
        }
    }
    1.0 - total
}

/// `sum_{l,m} (b_l . b_m)^2 / min(R_j, R_k)`, one scalar at a time.
pub fn brute_force_orthogonality(bj: &Matrix, bk: &Matrix) -> f64 {
    let mut total = 0.0;
    for l in 0..bj.rows() {
        for m in 0..bk.rows() {
            let mut d = 0.0;
            for i in 0..bj.cols() {
                d += bj[(l, i)] * bk[(m, i)];
            }
            total += d * d;
        }
    }
    total / bj.rows().min(bk.rows()) as f64
}
