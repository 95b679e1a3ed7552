//! Source-tracing toolkit for spoofed speech.
//!
//! Classifies three generation-pipeline attributes of a spoofed utterance
//! (conversion, speaker representation, waveform generator) with a shared
//! encoder and three classification heads, and fuses the per-head bona fide
//! probabilities into a single spoofing-detection score.
//!
//! Modules:
//! - [`protocol`]: protocol-file parsing and the attack-metadata registry
//! - [`taxonomy`]: attack -> attribute-class label mapping
//! - [`partition`]: speaker-disjoint train/eval splitting with manifests
//! - [`features`]: log mel filterbank extraction and fixed-length cropping
//! - [`model`]: shared encoder, attribute heads, weighted multi-task loss,
//!   training and inference
//! - [`scoring`]: score fusion, accuracy, confusion matrices and EER
//! - [`synthcorpus`]: deterministic synthetic corpus with separable
//!   per-attribute acoustic signatures
//! - [`dataset`]: glue for loading corpora from disk into model inputs

pub mod dataset;
pub mod eval;
pub mod features;
pub mod model;
pub mod partition;
pub mod protocol;
pub mod scoring;
pub mod synthcorpus;
pub mod taxonomy;

pub use features::{FbankConfig, FeatureMatrix, Waveform};
pub use partition::{Partition, SplitSpec};
pub use protocol::{AttackId, AttackProfile, AttackTag, SourceSubset, UtteranceRecord};
pub use scoring::{FusedScore, HeadPosteriors};
pub use taxonomy::{
    AttributeLabels, ConversionClass, LabeledUtterance, SpeakerReprClass, WaveformGenClass,
};
