//! Joint extractive summarization and section segmentation for long
//! documents.
//!
//! The pipeline: [`corpus`] documents are labeled by the greedy ROUGE
//! [`oracle`], encoded by an inter-sentence transformer ([`encoder`]) with a
//! summary head and a segmentation head, trained by [`trainer`] on
//! cross-entropy plus an optional [`dpp`] summary-level regularizer, and
//! decoded by [`inference`] into top-K summaries and section boundaries.
//! [`evalseg`] scores the output.

pub mod corpus;
pub mod dpp;
pub mod encoder;
pub mod error;
pub mod evalseg;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod rouge;
pub mod trainer;

pub use corpus::{CorpusRecord, Document, Labels, Sentence, SynthConfig};
pub use dpp::{DppKernel, Ridge};
pub use encoder::{Checkpoint, FeatureConfig, ModelConfig, ModelParams};
pub use error::{Error, Result};
pub use evalseg::EvalReport;
pub use inference::Prediction;

pub use oracle::{LabelSet, SegLabelConvention};
pub use rouge::RougeScore;
pub use trainer::{TrainConfig, Variant};
