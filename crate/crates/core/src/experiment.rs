//! Experiment configuration, multi-seed orchestration, archives and
//! verification against the synthetic oracle.

use crate::dataset_io::{self, IngestError};
use crate::gca::GcaHyperparams;
use crate::oracle::{self, GroundTruth};
use crate::pipeline::{self, EvalError, MetricsReport};
use crate::synth::{self, RepresentationDataset, SyntheticConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Default tolerance when comparing measured and expected metrics.
pub const DEFAULT_TOLERANCE: f64 = 0.05;
/// Largest accepted metric change between rotated and unrotated runs.
pub const ROTATION_TOLERANCE: f64 = 0.03;

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// Paths of externally produced code and factor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub codes: PathBuf,
    pub factors: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Generate the dataset from this configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Or read it from files (relative paths resolve against the config file).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataFiles>,
    #[serde(default)]
    pub gca: GcaHyperparams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        Self {
            synthetic: Some(config),
            data: None,
            gca: GcaHyperparams::default(),
            seeds: default_seeds(),
            tolerance: DEFAULT_TOLERANCE,
            output: None,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a TOML file; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = &mut config.data {
            for p in [&mut d.codes, &mut d.factors] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match (&self.synthetic, &self.data) {
            (Some(s), None) => s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            (None, Some(_)) => {}
            _ => return bad("exactly one of [synthetic] or [data] must be given".into()),
        }
        self.gca.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Synthetic configuration for one run seed: the data seed is offset by
    /// the run seed so every run sees a fresh sample.
    pub fn synthetic_for_seed(&self, seed: u64) -> Option<SyntheticConfig> {
        self.synthetic.as_ref().map(|s| SyntheticConfig {
            seed: s.seed.wrapping_add(seed),
            ..s.clone()
        })
    }

    pub fn ground_truth(&self) -> Option<GroundTruth> {
        self.synthetic.as_ref().map(|s| oracle::expected_metrics(s, true))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("synthetic generation failed: {0}")]
    Synth(#[from] synth::SynthError),
}

/// Mean and (for two or more values) sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, std })
    }
}

/// Where an archive came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

/// All results of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub runs: Vec<MetricsReport>,
    pub mean_iwo: Option<Stat>,
    pub mean_iwr: Option<Stat>,
    pub ground_truth: Option<GroundTruth>,
}

impl RunArchive {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Dataset for one run seed.
pub fn dataset_for_seed(config: &ExperimentConfig, seed: u64) -> Result<RepresentationDataset, RunError> {
    match (config.synthetic_for_seed(seed), &config.data) {
        (Some(s), _) => Ok(synth::generate(&s)?),
        (None, Some(d)) => Ok(dataset_io::load_dataset(&d.codes, &d.factors)?),
        (None, None) => Err(ConfigError::Invalid("no data source".into()).into()),
    }
}

/// Runs every seed and collects the archive.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArchive, RunError> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut external: Option<RepresentationDataset> = None;
    for &seed in &config.seeds {
        let ds = if config.synthetic.is_some() {
            dataset_for_seed(config, seed)?
        } else {
            if external.is_none() {
                external = Some(dataset_for_seed(config, seed)?);
            }
            external.clone().expect("loaded above")
        };
        let hyper = GcaHyperparams {
            seed,
            ..config.gca.clone()
        };
        log::info!("seed {seed}: {} samples, L={}, K={}", ds.len(), ds.latent_dim(), ds.num_factors());
        let report = pipeline::evaluate(&ds, &hyper)?;
        log::info!(
            "seed {seed}: mean IWO {:?}, mean IWR {:?}",
            report.summary.mean_iwo,
            report.summary.mean_iwr
        );
        runs.push(report);
    }
    let iwo: Vec<f64> = runs.iter().filter_map(|r| r.summary.mean_iwo).collect();
    let iwr: Vec<f64> = runs.iter().filter_map(|r| r.summary.mean_iwr).collect();
    Ok(RunArchive {
        provenance: Provenance {
            config_hash: config.hash(),
            seeds: config.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        config: config.clone(),
        mean_iwo: Stat::of(&iwo),
        mean_iwr: Stat::of(&iwr),
        ground_truth: config.ground_truth(),
        runs,
    })
}

/// One line of a verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: Option<f64>,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: Option<f64>, expected: f64, tolerance: f64) -> Self {
        let pass = measured.is_some_and(|m| (m - expected).abs() <= tolerance);
        Self {
            name: name.into(),
            measured,
            expected,
            tolerance,
            pass,
        }
    }

    pub fn diff(&self) -> Option<f64> {
        self.measured.map(|m| (m - self.expected).abs())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("archive has no ground truth (external data)")]
    MissingGroundTruth,
}

/// Compares the cross-seed means with the oracle.
pub fn verify(archive: &RunArchive, tolerance: f64) -> Result<Vec<Check>, VerifyError> {
    let gt = archive.ground_truth.as_ref().ok_or(VerifyError::MissingGroundTruth)?;
    Ok(vec![
        Check::new("mean_iwo", archive.mean_iwo.map(|s| s.mean), gt.expected_mean_iwo, tolerance),
        Check::new("mean_iwr", archive.mean_iwr.map(|s| s.mean), gt.expected_iwr, tolerance),
    ])
}

/// Checks that two archives (e.g. with and without rotation) agree.
pub fn compare(a: &RunArchive, b: &RunArchive, tolerance: f64) -> Vec<Check> {
    let pair = |x: Option<Stat>, y: Option<Stat>| match (x, y) {
        (Some(x), Some(y)) => Some((x.mean - y.mean).abs()),
        _ => None,
    };
    vec![
        Check::new("delta_mean_iwo", pair(a.mean_iwo, b.mean_iwo), 0.0, tolerance),
        Check::new("delta_mean_iwr", pair(a.mean_iwr, b.mean_iwr), 0.0, tolerance),
    ]
}

/// Plain-text table of checks.
pub fn format_checks(checks: &[Check]) -> String {
    let mut out = format!(
        "{:<18} {:>9} {:>9} {:>9} {:>6}  result\n",
        "check", "measured", "expected", "|diff|", "tol"
    );
    for c in checks {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "{:<18} {:>9} {:>9.4} {:>9} {:>6.3}  {}\n",
            c.name,
            fmt(c.measured),
            c.expected,
            fmt(c.diff()),
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}
