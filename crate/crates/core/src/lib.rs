//! Feed-forward source-free domain adaptation.
//!
//! A pre-trained model is adapted to an unlabeled target domain without any
//! back-propagation: target features are grouped by the model's own
//! pseudo-labels into confidence-weighted class prototypes, and inference
//! becomes a nearest-prototype search. An optional robust step re-labels the
//! target set with a Gaussian generative classifier fitted on Minimum
//! Covariance Determinant estimates before the prototypes are built.
//!
//! The crate works on [`FeatureBundle`]s, i.e. features and logits already
//! extracted by some backbone, so it is independent of any deep learning
//! framework.

pub mod bundle_io;
pub mod classify;
mod error;
pub mod linalg;
pub mod mcd;
pub mod npy;
pub mod pipeline;
pub mod prototypes;
pub mod pseudo_label;
pub mod rog;
pub mod synth;

pub use bundle_io::{
    load_bundle, load_predictions, save_bundle, save_predictions, BundleMeta, FeatureBundle,
    FloatDtype,
};
pub use classify::{accuracy, nearest_prototype, AccuracyReport, Metric, Prediction};
pub use error::{PdaError, Result};
pub use mcd::{fast_mcd, McdConfig, RobustEstimate};
pub use pipeline::{run_all, run_method, Method, PipelineConfig, RunReport};
pub use prototypes::{
    build_prototypes, build_prototypes_onehot, build_prototypes_true,
    build_prototypes_true_weighted, PrototypeSet,
};
pub use pseudo_label::{pseudo_labels, softmax_rows, PseudoLabeling};
pub use rog::{fit_rog, rog_posterior, RogConfig, RogModel};
pub use synth::{generate, ShiftSpec};
