//! End-to-end evaluation of one dataset under one seed.

use crate::basis::{self, FactorBasis};
use crate::gca::{self, EpochLog, GcaHyperparams, LossProfile, Split};
use crate::metrics::{self, MetricSummary, MetricsError};
use crate::synth::RepresentationDataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FactorStatus {
    Ok,
    Failed { reason: String },
}

/// Everything produced for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorOutcome {
    pub factor_index: usize,
    #[serde(flatten)]
    pub status: FactorStatus,
    pub profile: Option<LossProfile>,
    pub basis: Option<FactorBasis>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    /// Per-epoch validation losses relative to the factor's variance.
    pub curve: Vec<EpochLog>,
}

/// Metrics of one dataset under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub factors: Vec<FactorOutcome>,
    #[serde(flatten)]
    pub summary: MetricSummary,
}

impl MetricsReport {
    pub fn failed_factors(&self) -> Vec<usize> {
        self.factors
            .iter()
            .filter(|f| f.status != FactorStatus::Ok)
            .map(|f| f.factor_index)
            .collect()
    }
}

fn run_factor(dataset: &RepresentationDataset, split: &Split, j: usize, hyper: &GcaHyperparams) -> FactorOutcome {
    let mut out = FactorOutcome {
        factor_index: j,
        status: FactorStatus::Ok,
        profile: None,
        basis: None,
        best_epoch: None,
        epochs_run: None,
        curve: Vec::new(),
    };
    let fail = |mut o: FactorOutcome, reason: String| {
        log::warn!("factor {j} failed: {reason}");
        o.status = FactorStatus::Failed { reason };
        o
    };
    let run = match gca::train_factor(dataset, split, j, hyper) {
        Ok(r) => r,
        Err(e) => return fail(out, e.to_string()),
    };
    out.best_epoch = Some(run.best_epoch);
    out.epochs_run = Some(run.epochs_run);
    out.curve = run.curve.clone();
    let targets: Vec<f64> = split.test.iter().map(|&i| dataset.factors[(i, j)]).collect();
    let profile = match gca::loss_profile(&run, &targets, hyper.rank_tolerance) {
        Ok(p) => p,
        Err(e) => return fail(out, e.to_string()),
    };
    out.profile = Some(profile.clone());
    match basis::factor_basis(&run, &profile, hyper.residual_tolerance) {
        Ok(b) => out.basis = Some(b),
        Err(e) => return fail(out, e.to_string()),
    }
    out
}

/// Trains every factor (in parallel up to the current rayon pool size),
/// extracts the bases and computes all metrics. Failed factors are reported
/// and left out of the means.
pub fn evaluate(
    dataset: &RepresentationDataset,
    hyper: &GcaHyperparams,
) -> Result<MetricsReport, EvalError> {
    hyper.validate()?;
    let split = gca::split_dataset(dataset.len(), hyper.train_fraction, hyper.val_fraction, hyper.seed)?;
    let factors: Vec<FactorOutcome> = (0..dataset.num_factors())
        .into_par_iter()
        .map(|j| run_factor(dataset, &split, j, hyper))
        .collect();
    let bases: Vec<Option<FactorBasis>> = factors.iter().map(|f| f.basis.clone()).collect();
    let summary = metrics::summarize(&bases)?;
    Ok(MetricsReport {
        seed: hyper.seed,
        factors,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Gca(#[from] gca::GcaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
