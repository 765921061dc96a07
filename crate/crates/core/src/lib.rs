//! Bug-report triage engine.
//!
//! The crate covers the full experiment pipeline: loading and partitioning
//! bug-report corpora, text cleaning and vocabulary construction, skip-gram
//! word embeddings, a bidirectional LSTM feature learner with attention
//! trained as a language model on untriaged reports, four bag-of-words
//! baseline classifiers, and a chronological cross-validation harness with
//! activity thresholds and top-k accuracy.
//!
//! All numeric code is generic over the floating-point scalar via
//! [`Scalar`]; concrete aliases for the common instantiations live at the
//! crate root. Experiments run in f64; checkpoints store f32.

pub mod checkpoint;
pub mod classifiers;
pub mod corpus;
pub mod dbrnna;
pub mod embed;
pub mod evalharness;
pub mod synth;
pub mod nncore;
pub mod textprep;

mod scalar;
pub mod util;

pub use scalar::Scalar;

pub type Tensor32 = nncore::Tensor<f32>;
pub type Tensor64 = nncore::Tensor<f64>;
