//! Active learning with a mixture of LLM annotators.
//!
//! The crate covers the whole loop: corpus and pool management, annotator
//! clients (remote chat-completions endpoints or simulated panels), the
//! annotation model that merges annotator signals, the task classifier and
//! its robust loss, query strategies, the checkpointed loop driver and the
//! evaluation reports.

pub mod annotation_model;
pub mod annotator;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod orchestrator;
pub mod query;
pub mod rng;
pub mod synthetic;

pub use annotation_model::{Annotation, AnnotationModel, FitConfig};
pub use annotator::{AnnotatorSignal, AnnotatorSpec, RemoteSpec, SimulatedSpec};
pub use classifier::{ClassifierConfig, ClassifierModel, SparseVec, TextFeaturizer};
pub use corpus::{Corpus, DataPools, Instance, LabelSource, LabelSpace, LabeledEntry};
pub use error::{Error, Result};
pub use orchestrator::{run, Ablation, RunConfig, RunState, Runner};
pub use query::{QueryContext, QueryStrategy, StrategyName};
