//! Per-factor subspace learning.
//!
//! A bias-free linear "spine" projects the code through nested subspaces of
//! decreasing dimension. Every level feeds its own MLP head that regresses the
//! factor; all heads train jointly on the summed loss and their gradients flow
//! through every spine layer above them. The per-level test losses form the
//! factor's loss profile.

use crate::linalg::Matrix;
use crate::nn::{mlp_forward_backward, AdamConfig, AdamState, Dense, HeadSpec, InitScheme, MlpHead, Param};
use crate::synth::RepresentationDataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative loss threshold used to pick the effective rank.
pub const DEFAULT_RANK_TOLERANCE: f64 = 0.02;
/// Factors with a test variance below this carry no information.
pub const DEGENERATE_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GcaError {
    #[error("need at least 100 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("factor index {index} out of range for {count} factors")]
    FactorOutOfRange { index: usize, count: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("factor is constant on the test split (variance {variance:e})")]
    DegenerateFactor { variance: f64 },
}

fn d_epochs() -> usize {
    20
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    5e-4
}
fn d_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn d_patience() -> usize {
    3
}
fn d_val() -> f64 {
    0.1
}
fn d_train() -> f64 {
    0.8
}
fn d_step() -> usize {
    1
}
fn d_lr_decay() -> f64 {
    1.0
}
fn d_rank_tol() -> f64 {
    DEFAULT_RANK_TOLERANCE
}
fn d_residual_tol() -> f64 {
    crate::basis::DEFAULT_RESIDUAL_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcaHyperparams {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Multiplies the learning rate after every epoch; 1 keeps it constant.
    #[serde(default = "d_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "d_hidden")]
    pub head_hidden_dims: Vec<usize>,
    #[serde(default)]
    pub head_batch_norm: bool,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default = "d_patience")]
    pub early_stop_patience: usize,
    /// Share of the training split held out for early stopping.
    #[serde(default = "d_val")]
    pub val_fraction: f64,
    /// Share of all samples used for training (the rest is the test split).
    #[serde(default = "d_train")]
    pub train_fraction: f64,
    #[serde(default = "d_step")]
    pub reduction_step: usize,
    #[serde(default = "d_rank_tol")]
    pub rank_tolerance: f64,
    /// Relative residual loss above which importance is spread over a full basis.
    #[serde(default = "d_residual_tol")]
    pub residual_tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GcaHyperparams {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr: d_lr(),
            lr_decay: d_lr_decay(),
            head_hidden_dims: d_hidden(),
            head_batch_norm: false,
            init: InitScheme::default(),
            early_stop_patience: d_patience(),
            val_fraction: d_val(),
            train_fraction: d_train(),
            reduction_step: d_step(),
            rank_tolerance: d_rank_tol(),
            residual_tolerance: d_residual_tol(),
            seed: 0,
        }
    }
}

impl GcaHyperparams {
    pub fn validate(&self) -> Result<(), GcaError> {
        let bad = |m: &str| Err(GcaError::InvalidHyperparams(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        for f in [self.val_fraction, self.train_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return bad("fractions must lie strictly between 0 and 1");
            }
        }
        if self.reduction_step == 0 {
            return bad("reduction_step must be at least 1");
        }
        if self.head_hidden_dims.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive");
        }
        if !(self.rank_tolerance >= 0.0) || !(self.residual_tolerance >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        Ok(())
    }

    fn head_spec(&self) -> HeadSpec {
        HeadSpec {
            hidden: self.head_hidden_dims.clone(),
            batch_norm: self.head_batch_norm,
            init: self.init,
        }
    }
}

/// Disjoint row partitions of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it into test, validation and train
/// parts. The test part is `1 - train_fraction` of all rows; validation is
/// `val_fraction` of the remaining training rows.
pub fn split_dataset(
    n: usize,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Split, GcaError> {
    if n < 100 {
        return Err(GcaError::TooFewSamples(n));
    }
    let n_test = ((n as f64) * (1.0 - train_fraction)).round() as usize;
    let n_train_all = n - n_test;
    let n_val = ((n_train_all as f64) * val_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx[..n_test].to_vec();
    let val = idx[n_test..n_test + n_val].to_vec();
    let train = idx[n_test + n_val..].to_vec();
    Ok(Split { train, val, test })
}

/// Projection dimensions visited by the spine, largest first, ending at 1.
pub fn spine_levels(latent_dim: usize, step: usize) -> Vec<usize> {
    let mut levels = vec![latent_dim];
    let mut d = latent_dim;
    while d > 1 {
        d = d.saturating_sub(step).max(1);
        levels.push(d);
    }
    levels
}

/// Relative validation loss of every head after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `L_l / L_0` on the validation split, indexed like [`GcaRun::levels`].
    pub relative_level_losses: Vec<f64>,
}

/// A trained spine with its heads for one factor.
#[derive(Debug, Clone)]
pub struct GcaRun {
    pub factor_index: usize,
    pub latent_dim: usize,
    /// Projection dimension of each head, largest first.
    pub levels: Vec<usize>,
    /// Spine weights; entry `i` maps dimension `levels[i]` to `levels[i + 1]`.
    pub spine: Vec<Matrix>,
    pub heads: Vec<MlpHead<f32>>,
    /// Test-split MSE of each head, indexed like `levels`.
    pub test_losses: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub curve: Vec<EpochLog>,
}

impl GcaRun {
    /// Test losses expanded to one entry per dimension `1..=L`. With a
    /// reduction step above one, skipped dimensions are interpolated linearly.
    pub fn losses_by_dimension(&self) -> Vec<f64> {
        let l = self.latent_dim;
        let mut out = vec![0.0; l];
        for w in 0..self.levels.len() {
            out[self.levels[w] - 1] = self.test_losses[w];
        }
        for w in 0..self.levels.len().saturating_sub(1) {
            let (hi, lo) = (self.levels[w], self.levels[w + 1]);
            let (lhi, llo) = (self.test_losses[w], self.test_losses[w + 1]);
            for d in lo + 1..hi {
                let t = (d - lo) as f64 / (hi - lo) as f64;
                out[d - 1] = llo + t * (lhi - llo);
            }
        }
        out
    }
}

struct Model {
    spine: Vec<Dense<f32>>,
    heads: Vec<MlpHead<f32>>,
}

impl Model {
    fn new(levels: &[usize], spec: &HeadSpec, rng: &mut ChaCha8Rng) -> Self {
        let spine = levels
            .windows(2)
            .map(|w| Dense::initialized(w[1], w[0], false, spec.init, false, rng))
            .collect();
        let heads = levels.iter().map(|&d| MlpHead::new(d, spec, rng)).collect();
        Self { spine, heads }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut out: Vec<&mut Param<f32>> = Vec::new();
        for layer in &mut self.spine {
            out.extend(layer.params_mut());
        }
        for head in &mut self.heads {
            out.extend(head.params_mut());
        }
        out
    }

    /// Projections at every level for a batch (level 0 is the input itself).
    fn project(&self, x: &[f32], batch: usize) -> Vec<Vec<f32>> {
        let mut hs = vec![x.to_vec()];
        for layer in &self.spine {
            let next = layer.apply(hs.last().expect("non-empty"), batch);
            hs.push(next);
        }
        hs
    }

    /// Per-level summed squared error over `rows` (evaluation mode).
    fn evaluate(&self, codes: &[f32], targets: &[f32], dim: usize) -> Vec<f64> {
        const CHUNK: usize = 2048;
        let n = targets.len();
        let mut sse = vec![0.0f64; self.heads.len()];
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let batch = end - start;
            let hs = self.project(&codes[start * dim..end * dim], batch);
            for (level, head) in self.heads.iter().enumerate() {
                let pred = head.predict(&hs[level], batch);
                for (p, t) in pred.iter().zip(&targets[start..end]) {
                    let d = (*p - *t) as f64;
                    sse[level] += d * d;
                }
            }
            start = end;
        }
        sse.iter().map(|s| s / n.max(1) as f64).collect()
    }
}

fn gather(dataset: &RepresentationDataset, rows: &[usize], factor: usize) -> (Vec<f32>, Vec<f32>) {
    let dim = dataset.latent_dim();
    let mut codes = Vec::with_capacity(rows.len() * dim);
    let mut targets = Vec::with_capacity(rows.len());
    for &r in rows {
        codes.extend(dataset.codes.row(r).iter().map(|&v| v as f32));
        targets.push(dataset.factors[(r, factor)] as f32);
    }
    (codes, targets)
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// RNG stream for one (run seed, factor) pair.
pub fn factor_rng(seed: u64, factor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(factor as u64 + 1);
    rng
}

/// Trains the spine and heads for factor `j` with the given split.
pub fn train_factor(
    dataset: &RepresentationDataset,
    split: &Split,
    j: usize,
    hyper: &GcaHyperparams,
) -> Result<GcaRun, GcaError> {
    hyper.validate()?;
    let k = dataset.num_factors();
    if j >= k {
        return Err(GcaError::FactorOutOfRange { index: j, count: k });
    }
    let dim = dataset.latent_dim();
    let levels = spine_levels(dim, hyper.reduction_step);
    let mut rng = factor_rng(hyper.seed, j);
    let mut model = Model::new(&levels, &hyper.head_spec(), &mut rng);
    let mut adam = AdamState::new(AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    });

    let (train_x, train_y) = gather(dataset, &split.train, j);
    let (val_x, val_y) = gather(dataset, &split.val, j);
    let val_baseline = variance(&val_y.iter().map(|&v| v as f64).collect::<Vec<_>>()).max(f64::MIN_POSITIVE);

    let n_train = train_y.len();
    let bs = hyper.batch_size.min(n_train.max(1));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut xb: Vec<f32> = Vec::with_capacity(bs * dim);
    let mut yb: Vec<f32> = Vec::with_capacity(bs);

    let mut best: Option<(f64, usize, Vec<Dense<f32>>, Vec<MlpHead<f32>>)> = None;
    let mut since_best = 0;
    let mut curve = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch = chunk.len();
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&train_x[i * dim..(i + 1) * dim]);
                yb.push(train_y[i]);
            }
            model.params_mut().into_iter().for_each(Param::zero_grad);

            let mut hs = vec![xb.clone()];
            for layer in model.spine.iter_mut() {
                let next = layer.forward(hs.last().expect("non-empty"), batch);
                hs.push(next);
            }
            let mut total = 0.0f64;
            let mut dxs = Vec::with_capacity(levels.len());
            for (level, head) in model.heads.iter_mut().enumerate() {
                let (loss, dx) = mlp_forward_backward(head, &hs[level], &yb, true)
                    .expect("shapes fixed by construction");
                total += loss as f64;
                dxs.push(dx);
            }
            if !total.is_finite() {
                return Err(GcaError::NonFiniteLoss { epoch, batch: b });
            }
            // gradient w.r.t. the lowest projection, then up through the spine
            let mut g = dxs.pop().expect("at least one head");
            for (layer, dx_above) in model.spine.iter_mut().rev().zip(dxs.into_iter().rev()) {
                let mut up = layer.backward(&g, batch);
                for (u, d) in up.iter_mut().zip(&dx_above) {
                    *u += *d;
                }
                g = up;
            }
            adam.step(model.params_mut());
            epoch_loss += total;
            batches += 1;
        }
        epochs_run = epoch + 1;
        adam.config.lr *= hyper.lr_decay;

        let val_losses = model.evaluate(&val_x, &val_y, dim);
        let val_total: f64 = val_losses.iter().sum();
        if !val_total.is_finite() {
            return Err(GcaError::NonFiniteLoss { epoch, batch: batches });
        }
        curve.push(EpochLog {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_loss: val_total,
            relative_level_losses: val_losses.iter().map(|l| l / val_baseline).collect(),
        });
        log::debug!(
            "factor {j} epoch {epoch}: train {:.5} val {:.5}",
            epoch_loss / batches.max(1) as f64,
            val_total
        );

        let improved = best.as_ref().map_or(true, |(b, ..)| val_total < *b);
        if improved {
            best = Some((val_total, epoch, model.spine.clone(), model.heads.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.early_stop_patience {
                break;
            }
        }
    }

    let (_, best_epoch, spine, heads) = best.expect("at least one epoch ran");
    model.spine = spine;
    model.heads = heads;
    let (test_x, test_y) = gather(dataset, &split.test, j);
    let test_losses = model.evaluate(&test_x, &test_y, dim);

    Ok(GcaRun {
        factor_index: j,
        latent_dim: dim,
        levels,
        spine: model.spine.iter().map(Dense::weight_matrix).collect(),
        heads: model.heads,
        test_losses,
        best_epoch,
        epochs_run,
        curve,
    })
}

/// Baseline, per-dimension losses, and the derived rank for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    /// `L_0`: MSE of predicting the mean, i.e. the factor's variance.
    pub baseline: f64,
    /// Raw test losses `L_1..L_L`.
    pub level_losses: Vec<f64>,
    /// Losses after enforcing monotonicity, `L~_1..L~_L`.
    pub clamped_losses: Vec<f64>,
    /// `dL_l = L~_{l-1} - L~_l` with `L~_0 = L_0`.
    pub deltas: Vec<f64>,
    /// Smallest dimension reaching the best loss within tolerance.
    pub effective_rank: usize,
    /// `L_min = L~_L`.
    pub residual: f64,
}

impl LossProfile {
    /// Builds the profile from raw per-dimension losses.
    ///
    /// Clamping scans from the largest subspace down:
    /// `L~_L = min(L_L, L_0)`, `L~_l = max(L_l, L~_{l+1})` capped at `L_0`.
    pub fn from_losses(baseline: f64, level_losses: &[f64], rank_tolerance: f64) -> Result<Self, GcaError> {
        if !(baseline >= DEGENERATE_VARIANCE) {
            return Err(GcaError::DegenerateFactor { variance: baseline });
        }
        let l = level_losses.len();
        assert!(l >= 1, "need at least one level");
        let mut clamped = vec![0.0; l];
        let mut floor = 0.0f64;
        for d in (0..l).rev() {
            let v = level_losses[d].max(floor).min(baseline);
            clamped[d] = v;
            floor = v;
        }
        let deltas: Vec<f64> = (0..l)
            .map(|d| {
                let above = if d == 0 { baseline } else { clamped[d - 1] };
                above - clamped[d]
            })
            .collect();
        let residual = clamped[l - 1];
        let effective_rank = (0..l)
            .find(|&d| (clamped[d] - residual) / baseline <= rank_tolerance)
            .map_or(l, |d| d + 1);
        Ok(Self {
            baseline,
            level_losses: level_losses.to_vec(),
            clamped_losses: clamped,
            deltas,
            effective_rank,
            residual,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.level_losses.len()
    }

    /// `L~_{R_j}`, the loss at the effective rank.
    pub fn loss_at_rank(&self) -> f64 {
        self.clamped_losses[self.effective_rank - 1]
    }
}

/// Loss profile of a trained run, with `L_0` the variance of the factor on
/// the test split.
pub fn loss_profile(run: &GcaRun, test_targets: &[f64], rank_tolerance: f64) -> Result<LossProfile, GcaError> {
    LossProfile::from_losses(variance(test_targets), &run.losses_by_dimension(), rank_tolerance)
}
