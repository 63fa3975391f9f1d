//! Coupled denoising auto-encoder networks for cross-view recognition.
//!
//! Two stacked auto-encoder networks, one per view, are coupled at every
//! layer by a maximum-margin criterion (intra-class compactness minus a
//! kNN-restricted inter-class penalty) and trained greedily layer by layer
//! with L-BFGS. A PCA front-end scales inputs into the tanh-friendly range
//! and a linear CCA baseline supports head-to-head comparison. Models are
//! scored by rank-1 cross-view recognition over a gallery/probe protocol.

pub mod cca;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod layer;
pub mod lbfgs;
pub mod objective;
pub mod pairs;
pub mod pca;
pub mod trainer;

mod linalg;
mod seed;

pub use cca::{cca_embed, fit_cca, CcaModel};
pub use dataset::{
    corrupt, generate_synthetic, load_dataset, CorruptionKind, CorruptionSpec, Split, ViewDataset,
};
pub use error::{DcanError, Result};
pub use eval::{cross_view_eval, gap_metric, neighbor_preservation, rank1, EvalReport, Metric};
pub use layer::{activate, decode, encode, init_params, LayerParams, View};
pub use lbfgs::{minimize, LbfgsConfig, OptimResult, OptimStatus};
pub use objective::{evaluate, grad_check, GradCheckReport, ObjectiveConfig, ObjectiveEvaluation};
pub use pairs::{build_diff_pairs, build_same_pairs, margin_terms, PairSets};
pub use pca::{fit_pca, project_2d, PcaModel};
pub use trainer::{embed, train, NetworkHyper, NetworkModel, TrainConfig, TrainOutcome};
