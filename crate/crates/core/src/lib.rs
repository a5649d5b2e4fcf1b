//! Financial-term hypernym classification.
//!
//! A term is embedded by summing its token vectors (with out-of-vocabulary
//! tokens replaced by a near neighbour), extended with surface features and
//! distances to the label names, scaled to `[-1, 1]`, and scored by an
//! L2-regularized multinomial logistic regression that returns a top-3 label
//! ranking.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod eval;
pub mod features;
pub mod io;
pub mod model;
pub mod oov;
pub mod persist;
pub mod pipeline;
pub mod synth;

pub use augment::{AugmentedTerm, Augmenter, DefinitionDict};
pub use config::{PipelineConfig, Preset};
pub use dataset::{Dataset, Example};
pub use embeddings::{EmbeddingStore, TermTokens};
pub use eval::EvalReport;
pub use features::{FeatureExtractor, FeatureLayout, LabelSet, MinMaxScaler};
pub use model::{LogRegModel, TrainConfig};
pub use oov::{OovKind, OovResolver, OovStrategy};
pub use persist::ModelBundle;
pub use pipeline::PipelineError;
