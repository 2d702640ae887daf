//! The synthetic benchmark table: one row per reported configuration, with
//! reference values, oracle values and a desk-scale training profile.

use crate::experiment::{ExperimentConfig, DEFAULT_TOLERANCE};
use crate::gca::GcaHyperparams;
use crate::oracle::{self, GroundTruth};
use crate::synth::{Mapping, SyntheticConfig, DEFAULT_TRIG_LAMBDA};
use serde::{Deserialize, Serialize};

/// Samples per synthetic dataset at desk scale.
pub const DESK_SAMPLES: usize = 20_000;
/// Largest latent dimension run without `--full`.
pub const DEFAULT_MAX_LATENT: usize = 20;
/// Noise std of the additive-noise rows.
pub const NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    /// Stable identifier, also the config file stem.
    pub id: String,
    /// Experiment group, 1 to 5.
    pub experiment: u8,
    pub config: SyntheticConfig,
    /// Published means.
    pub reference_iwo: f64,
    pub reference_iwr: f64,
    pub tolerance: f64,
    pub desk_samples: usize,
}

impl BenchmarkRow {
    pub fn oracle(&self) -> GroundTruth {
        oracle::expected_metrics(&self.config, true)
    }

    /// Part of the default suite (the rest needs `--full`).
    pub fn is_default(&self) -> bool {
        self.config.latent_dim <= DEFAULT_MAX_LATENT
    }

    /// Experiment with the desk-scale sample count and training profile.
    pub fn desk_experiment(&self) -> ExperimentConfig {
        let mut exp = ExperimentConfig::synthetic(SyntheticConfig {
            n_samples: self.desk_samples,
            ..self.config.clone()
        });
        exp.gca = desk_profile();
        exp.tolerance = self.tolerance;
        exp
    }

    /// Full-size experiment with default training settings.
    pub fn full_experiment(&self) -> ExperimentConfig {
        let mut exp = ExperimentConfig::synthetic(self.config.clone());
        exp.tolerance = self.tolerance;
        exp
    }
}

/// Training settings used for the shipped benchmark configs.
pub fn desk_profile() -> GcaHyperparams {
    GcaHyperparams {
        head_hidden_dims: vec![64, 64],
        ..GcaHyperparams::default()
    }
}

fn row(experiment: u8, l: usize, r: usize, mapping: Mapping, rop: bool, iwo: f64, iwr: f64) -> BenchmarkRow {
    let k = 5;
    let mut config = SyntheticConfig::new(l, k, r, mapping);
    config.rop = rop;
    let id = format!(
        "e{experiment}-{}-l{l}-r{r}{}",
        mapping.label(),
        if rop { "-rop" } else { "" }
    );
    BenchmarkRow {
        id,
        experiment,
        config,
        reference_iwo: iwo,
        reference_iwr: iwr,
        tolerance: DEFAULT_TOLERANCE,
        desk_samples: DESK_SAMPLES,
    }
}

/// Every benchmark row, in table order.
pub fn list_benchmarks() -> Vec<BenchmarkRow> {
    let poly = Mapping::Poly;
    let trig = Mapping::Trig { lambda: DEFAULT_TRIG_LAMBDA };
    let noisy = Mapping::AdditiveNoise { sigma: NOISE_SIGMA };
    vec![
        row(1, 5, 1, noisy, false, 0.98, 1.00),
        row(1, 5, 1, Mapping::Permutation, false, 0.98, 1.00),
        row(2, 10, 2, poly, false, 0.98, 0.69),
        row(2, 10, 2, poly, true, 0.98, 0.69),
        row(3, 10, 5, poly, false, 0.61, 0.31),
        row(3, 10, 5, poly, true, 0.61, 0.31),
        row(3, 10, 5, trig, false, 0.62, 0.30),
        row(3, 10, 5, trig, true, 0.62, 0.31),
        row(4, 20, 4, poly, false, 0.97, 0.54),
        row(4, 20, 4, poly, true, 0.97, 0.54),
        row(4, 20, 8, poly, false, 0.76, 0.31),
        row(4, 20, 8, poly, true, 0.76, 0.31),
        row(4, 20, 4, trig, false, 0.98, 0.53),
        row(4, 20, 4, trig, true, 0.98, 0.53),
        row(4, 20, 8, trig, false, 0.76, 0.31),
        row(4, 20, 8, trig, true, 0.76, 0.30),
        row(5, 50, 5, poly, false, 0.99, 0.57),
        row(5, 50, 5, poly, true, 0.99, 0.56),
        row(5, 100, 5, poly, false, 0.98, 0.63),
        row(5, 100, 5, poly, true, 0.98, 0.63),
        row(5, 250, 5, poly, false, 0.98, 0.68),
        row(5, 250, 5, poly, true, 0.98, 0.68),
    ]
}

pub fn find(id: &str) -> Option<BenchmarkRow> {
    list_benchmarks().into_iter().find(|r| r.id == id)
}

/// The rotated twin of a row, if the table has one.
pub fn rop_twin(row: &BenchmarkRow) -> Option<BenchmarkRow> {
    list_benchmarks().into_iter().find(|r| {
        r.config.rop != row.config.rop
            && r.config.latent_dim == row.config.latent_dim
            && r.config.rank == row.config.rank
            && r.config.mapping == row.config.mapping
    })
}

/// TOML text of a row's desk-scale experiment.
pub fn to_toml(row: &BenchmarkRow) -> String {
    toml::to_string(&row.desk_experiment()).expect("benchmark config serializes")
}
