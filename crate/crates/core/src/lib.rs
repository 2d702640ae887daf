//! Importance-weighted orthogonality (IWO) and rank (IWR) of learned
//! representations.
//!
//! For every generative factor a small network learns which nested linear
//! subspaces of the code still predict the factor. The learned subspaces are
//! turned into orthonormal bases with per-direction importance, and the
//! metrics compare those weighted bases across factors.

pub mod basis;
pub mod bench;
pub mod dataset_io;
pub mod experiment;
pub mod gca;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod synth;

pub use basis::FactorBasis;
pub use gca::{GcaHyperparams, LossProfile};
pub use linalg::Matrix;
pub use synth::{Mapping, RepresentationDataset, SyntheticConfig};
