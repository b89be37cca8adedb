//! Vocal-effort compensation of speaker embeddings.
//!
//! Non-neutrally phonated (shouted, whispered) speech shifts speaker embeddings
//! away from their normal-speech counterparts. Under the additive model
//! `y = x + v`, this crate estimates the transfer vector `v` from the observed
//! embedding `y` and subtracts it. The main estimator works in a PCA domain and
//! combines per-component conditional expectations of a joint `(v, y)`
//! Gaussian mixture, weighted by the component posteriors of `y`.
//!
//! Alongside it live the fixed-partial-estimate baseline (MEMLIN), a direct
//! `E[x|y]` variant, and the verification harness used to compare them:
//! trial lists, cosine scoring, equal error rate and leave-one-speaker-out
//! cross-validation. A seeded generator produces paired synthetic corpora.

pub mod compensation;
pub mod corpus;
mod em;
pub mod error;
pub mod evaluation;
pub mod joint_gmm;
mod kmeans;
pub mod memlin;
pub mod pca;
pub mod synth;
mod util;

pub use compensation::{CompensationModel, EstimatorKind, TrainParams};
pub use corpus::{Corpus, EmbeddingRecord, Mode, PairedSet, RecordKey};
pub use error::{Error, Result};
pub use joint_gmm::{EmConfig, FitReport, JointGmm};
pub use pca::PcaTransform;
