//! Synthetic representations with planted factor subspaces.
//!
//! Codes are i.i.d. standard normal. Each factor reads a contiguous
//! (wrap-around) block of code dimensions through a commutative mapping, so
//! its importance is spread evenly over the block. An optional random
//! rotation hides the axis alignment after the factors are computed.

use crate::linalg::{random_orthogonal_with, Matrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// How a factor is computed from its block of code dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mapping {
    /// `z_j = c_j`.
    Identity,
    /// `z_j = c_{pi(j)}` for a random permutation `pi`.
    Permutation,
    /// `z_j = c_j + eps`, `eps ~ N(0, sigma^2)`.
    AdditiveNoise { sigma: f64 },
    /// Sum of squares over the block.
    Poly,
    /// Sum of `cos(2 pi lambda x)` over the block.
    Trig {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

/// One period of the cosine spans roughly plus or minus two standard
/// deviations of a unit Gaussian code.
pub const DEFAULT_TRIG_LAMBDA: f64 = 0.25;

fn default_lambda() -> f64 {
    DEFAULT_TRIG_LAMBDA
}

impl Mapping {
    pub fn is_block(&self) -> bool {
        matches!(self, Mapping::Poly | Mapping::Trig { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mapping::Identity => "identity",
            Mapping::Permutation => "perm",
            Mapping::AdditiveNoise { .. } => "noisy",
            Mapping::Poly => "poly",
            Mapping::Trig { .. } => "trig",
        }
    }
}

fn default_levels() -> usize {
    DEFAULT_QUANTIZATION_LEVELS
}

fn default_samples() -> usize {
    50_000
}

/// Number of distinct factor values after quantization, unless configured.
/// Coarser grids put a floor under the regression loss that the residual
/// adjustment then spreads over every direction.
pub const DEFAULT_QUANTIZATION_LEVELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Latent dimension `L`.
    pub latent_dim: usize,
    /// Number of factors `K`.
    pub factors: usize,
    /// Per-factor subspace rank `R`.
    pub rank: usize,
    pub mapping: Mapping,
    #[serde(default)]
    pub rop: bool,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_levels")]
    pub quantization_levels: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(latent_dim: usize, factors: usize, rank: usize, mapping: Mapping) -> Self {
        Self {
            latent_dim,
            factors,
            rank,
            mapping,
            rop: false,
            n_samples: default_samples(),
            quantization_levels: default_levels(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        let (l, k, r) = (self.latent_dim, self.factors, self.rank);
        if k == 0 || l < k {
            return bad(format!("need L >= K >= 1, got L={l}, K={k}"));
        }
        if r == 0 || r > l {
            return bad(format!("need 1 <= R <= L, got R={r}, L={l}"));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.quantization_levels < 2 {
            return bad(format!(
                "quantization_levels must be at least 2, got {}",
                self.quantization_levels
            ));
        }
        match self.mapping {
            Mapping::Poly | Mapping::Trig { .. } => {
                if l % k != 0 {
                    return bad(format!("block layouts need L divisible by K, got L={l}, K={k}"));
                }
                if let Mapping::Trig { lambda } = self.mapping {
                    if !(lambda > 0.0 && lambda.is_finite()) {
                        return bad(format!("trig lambda must be positive, got {lambda}"));
                    }
                }
            }
            Mapping::Identity | Mapping::Permutation | Mapping::AdditiveNoise { .. } => {
                if r != 1 || l != k {
                    return bad(format!(
                        "{} mapping needs R = 1 and L = K, got L={l}, K={k}, R={r}",
                        self.mapping.label()
                    ));
                }
                if let Mapping::AdditiveNoise { sigma } = self.mapping {
                    if !(sigma >= 0.0 && sigma.is_finite()) {
                        return bad(format!("noise sigma must be non-negative, got {sigma}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Code dimensions (0-based, pre-rotation frame) each block factor reads.
    ///
    /// Factor `j` covers `R` consecutive dimensions around its own stride
    /// block `[j*s, (j+1)*s)` with `s = L / K`, wrapping at `L`; blocks wider
    /// than the stride extend `ceil((R - s) / 2)` dimensions backwards.
    pub fn dimension_sets(&self) -> Vec<Vec<usize>> {
        let (l, k, r) = (self.latent_dim, self.factors, self.rank);
        if !self.mapping.is_block() {
            return (0..k).map(|j| vec![j]).collect();
        }
        let stride = l / k;
        let back = if r > stride { (r - stride).div_ceil(2) } else { 0 };
        (0..k)
            .map(|j| {
                (0..r)
                    .map(|i| (stride * j + l * r + i - back) % l)
                    .collect()
            })
            .collect()
    }
}

/// Dimension sets and rotation used to build a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    /// Per factor, the code dimensions it depends on (before rotation).
    pub dimension_sets: Vec<Vec<usize>>,
    /// Rotation `R` applied as `c -> R c`, when enabled.
    pub rotation: Option<Matrix>,
}

/// Paired latent codes (`N x L`) and factors (`N x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationDataset {
    pub codes: Matrix,
    pub factors: Matrix,
    pub planted: Option<PlantedStructure>,
}

impl RepresentationDataset {
    pub fn new(codes: Matrix, factors: Matrix) -> Result<Self, SynthError> {
        if codes.rows() != factors.rows() {
            return Err(SynthError::InvalidConfig(format!(
                "codes have {} rows but factors have {}",
                codes.rows(),
                factors.rows()
            )));
        }
        if !codes.is_finite() || !factors.is_finite() {
            return Err(SynthError::InvalidConfig("non-finite entries".into()));
        }
        Ok(Self {
            codes,
            factors,
            planted: None,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.rows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.cols()
    }

    pub fn factor_column(&self, j: usize) -> Vec<f64> {
        (0..self.factors.rows()).map(|i| self.factors[(i, j)]).collect()
    }
}

/// Sum of squares.
pub fn poly_map(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Sum of `cos(2 pi lambda x_i)`.
pub fn trig_map(x: &[f64], lambda: f64) -> f64 {
    x.iter()
        .map(|v| (2.0 * std::f64::consts::PI * lambda * v).cos())
        .sum()
}

/// Min-max rescales to `[0, 1]` then rounds onto `levels` evenly spaced values.
/// A constant column maps to all zeros.
pub fn rescale_and_quantize(values: &mut [f64], levels: usize) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let steps = (levels - 1) as f64;
    for v in values.iter_mut() {
        let unit = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        *v = (unit * steps).round() / steps;
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<RepresentationDataset, SynthError> {
    config.validate()?;
    let (n, l, k) = (config.n_samples, config.latent_dim, config.factors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut codes = Matrix::from_fn(n, l, |_, _| rng.sample(StandardNormal));
    let dims = config.dimension_sets();
    let perm: Vec<usize> = match config.mapping {
        Mapping::Permutation => {
            let mut p: Vec<usize> = (0..l).collect();
            p.shuffle(&mut rng);
            p
        }
        _ => (0..l).collect(),
    };

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); k];
    let mut block = Vec::with_capacity(config.rank);
    for i in 0..n {
        let c = codes.row(i);
        for (j, col) in columns.iter_mut().enumerate() {
            let z = match config.mapping {
                Mapping::Identity => c[j],
                Mapping::Permutation => c[perm[j]],
                Mapping::AdditiveNoise { sigma } => {
                    let eps: f64 = rng.sample(StandardNormal);
                    c[j] + sigma * eps
                }
                Mapping::Poly | Mapping::Trig { .. } => {
                    block.clear();
                    block.extend(dims[j].iter().map(|&d| c[d]));
                    match config.mapping {
                        Mapping::Trig { lambda } => trig_map(&block, lambda),
                        _ => poly_map(&block),
                    }
                }
            };
            col.push(z);
        }
    }

    let rotation = if config.rop {
        let r = random_orthogonal_with(l, &mut rng);
        let mut rotated = Matrix::zeros(n, l);
        for i in 0..n {
            let c = codes.row(i);
            let out = rotated.row_mut(i);
            for (a, o) in out.iter_mut().enumerate() {
                *o = crate::linalg::dot(r.row(a), c);
            }
        }
        codes = rotated;
        Some(r)
    } else {
        None
    };

    for col in columns.iter_mut() {
        rescale_and_quantize(col, config.quantization_levels);
    }
    let factors = Matrix::from_fn(n, k, |i, j| columns[j][i]);

    let planted_dims = match config.mapping {
        Mapping::Permutation => (0..k).map(|j| vec![perm[j]]).collect(),
        _ => dims,
    };
    Ok(RepresentationDataset {
        codes,
        factors,
        planted: Some(PlantedStructure {
            dimension_sets: planted_dims,
            rotation,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn code_column(ds: &RepresentationDataset, d: usize) -> Vec<f64> {
        (0..ds.len()).map(|i| ds.codes[(i, d)]).collect()
    }

    #[test]
    fn map_examples() {
        assert_eq!(poly_map(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(poly_map(&[1.0, 2.0]), 5.0);
        assert_eq!(poly_map(&[2.0, 1.0]), poly_map(&[1.0, 2.0]));
        assert_eq!(trig_map(&[0.0; 4], 0.37), 4.0);
        let lambda = 0.5;
        assert!((trig_map(&[1.0 / (2.0 * lambda); 3], lambda) + 3.0).abs() < 1e-12);
        assert!((trig_map(&[0.1, 0.7, -0.2], 0.5) - trig_map(&[-0.2, 0.1, 0.7], 0.5)).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let ok = SyntheticConfig::new(10, 5, 5, Mapping::Poly);
        assert!(ok.validate().is_ok());
        assert!(SyntheticConfig::new(10, 3, 2, Mapping::Poly).validate().is_err());
        assert!(SyntheticConfig::new(5, 5, 2, Mapping::Permutation).validate().is_err());
        assert!(SyntheticConfig::new(4, 5, 1, Mapping::Identity).validate().is_err());
        assert!(SyntheticConfig::new(10, 5, 11, Mapping::Poly).validate().is_err());
        let mut zero = ok.clone();
        zero.n_samples = 0;
        assert!(matches!(generate(&zero), Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn layout_matches_reference_figure() {
        let c = SyntheticConfig::new(10, 5, 5, Mapping::Poly);
        let sets = c.dimension_sets();
        // 1-indexed {9,10,1,2,3} and {7,8,9,10,1}
        assert_eq!(sets[0], vec![8, 9, 0, 1, 2]);
        assert_eq!(sets[4], vec![6, 7, 8, 9, 0]);
        let c = SyntheticConfig::new(10, 5, 2, Mapping::Poly);
        assert_eq!(c.dimension_sets()[0], vec![0, 1]);
        assert_eq!(c.dimension_sets()[4], vec![8, 9]);
    }

    #[test]
    fn permutation_factors_track_one_code_each() {
        let mut c = SyntheticConfig::new(5, 5, 1, Mapping::Permutation);
        c.n_samples = 1000;
        c.seed = 3;
        let ds = generate(&c).unwrap();
        let planted = ds.planted.as_ref().unwrap();
        let mut seen: Vec<usize> = planted.dimension_sets.iter().map(|s| s[0]).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        for j in 0..5 {
            let d = planted.dimension_sets[j][0];
            let rho = pearson(&ranks(&ds.factor_column(j)), &ranks(&code_column(&ds, d)));
            // ties from quantization keep this below 1
            assert!(rho > 0.97, "factor {j}: spearman {rho}");
        }
    }

    #[test]
    fn additive_noise_stays_correlated() {
        let mut c = SyntheticConfig::new(5, 5, 1, Mapping::AdditiveNoise { sigma: 0.1 });
        c.n_samples = 20_000;
        c.quantization_levels = 256;
        let ds = generate(&c).unwrap();
        for j in 0..5 {
            assert!(pearson(&ds.factor_column(j), &code_column(&ds, j)) > 0.99);
        }
    }

    #[test]
    fn poly_factor_ignores_other_dimensions() {
        let mut c = SyntheticConfig::new(10, 5, 5, Mapping::Poly);
        c.n_samples = 200;
        let ds = generate(&c).unwrap();
        let dims = &c.dimension_sets()[0];
        // recompute factor 0 after scrambling code columns it does not read
        let raw: Vec<f64> = (0..ds.len())
            .map(|i| {
                let row = ds.codes.row(i);
                poly_map(&dims.iter().map(|&d| row[d]).collect::<Vec<_>>())
            })
            .collect();
        let mut scrambled = ds.codes.clone();
        for i in 0..ds.len() {
            for d in 3..8 {
                scrambled[(i, d)] = ds.codes[((i + 17) % ds.len(), d)];
            }
        }
        let again: Vec<f64> = (0..ds.len())
            .map(|i| {
                let row = scrambled.row(i);
                poly_map(&dims.iter().map(|&d| row[d]).collect::<Vec<_>>())
            })
            .collect();
        assert_eq!(raw, again);
        let mut q = raw.clone();
        rescale_and_quantize(&mut q, c.quantization_levels);
        assert_eq!(q, ds.factor_column(0));
    }

    #[test]
    fn rotation_preserves_row_norms() {
        let mut plain = SyntheticConfig::new(10, 5, 2, Mapping::Poly);
        plain.n_samples = 300;
        let mut rotated = plain.clone();
        rotated.rop = true;
        let a = generate(&plain).unwrap();
        let b = generate(&rotated).unwrap();
        assert_eq!(a.factors, b.factors);
        for i in 0..a.len() {
            let na = crate::linalg::norm(a.codes.row(i));
            let nb = crate::linalg::norm(b.codes.row(i));
            assert!((na - nb).abs() < 1e-9);
        }
    }

    #[test]
    fn quantized_range_and_levels() {
        let mut c = SyntheticConfig::new(10, 5, 5, Mapping::Trig { lambda: 0.5 });
        c.n_samples = 2000;
        let ds = generate(&c).unwrap();
        for j in 0..5 {
            let mut col = ds.factor_column(j);
            assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            col.dedup();
            assert!(col.len() <= c.quantization_levels);
        }
        assert_eq!(generate(&c).unwrap(), ds);
    }

    #[test]
    fn constant_column_quantizes_to_zero() {
        let mut v = vec![3.0; 5];
        rescale_and_quantize(&mut v, 16);
        assert_eq!(v, vec![0.0; 5]);
    }
}
