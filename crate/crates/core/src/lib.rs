//! Core kernels for decoding multichannel EEG trials with vision-language
//! models: stacked chromatic waveform rendering, embedding-space example
//! retrieval, multimodal prompt assembly, decision parsing and balanced
//! accuracy.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! file system, the network or PNG encoding lives in the `raicl` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod digest;
pub mod geometry;
pub mod limiter;
pub mod metrics;
pub mod nearest;
pub mod prompt;
pub mod render;
pub mod selection;
pub mod synth;
pub mod trial;

pub use dataset::{Dataset, DatasetError, DownsamplePolicy, SubjectPool};
pub use geometry::{Centroid, Embedding, GeometryError};
pub use metrics::ConfusionMatrix;
pub use prompt::{Decision, PromptBundle, PromptConfig, Tier};
pub use render::{RenderConfig, Rgb};
pub use selection::{SelectionConfig, Strategy, SupportEntry, SupportSet};
pub use trial::{ClassLabel, EegTrial, Samples, TrialError, TrialRef};
