//! Decorrelated feature extraction and graph transformer layers for
//! unsupervised node-level graph domain adaptation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` matrices, a reverse-mode tape and Adam.
//! - [`graph`]: graphs, normalised operators, PPMI, positional encodings,
//!   stochastic block models and DropEdge.
//! - [`layers`]: decorrelation steps, sparse attention, transformer and GCN
//!   layers.
//! - [`model`]: the dual-branch network, classifier and domain critic.
//! - [`train`]: losses, the adversarial training loop and its schedule.
//! - [`metrics`]: F1, ICDR, silhouette, the covariate-shift probe and the
//!   feature-correlation analysis.
//! - [`io`]: dataset directories, checkpoints, reports and CSV exports.

pub mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{DftError, Result};
