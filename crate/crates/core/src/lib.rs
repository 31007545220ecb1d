//! Translate music into sequences of generator control vectors that carry
//! the same affective attributes (valence and arousal).
//!
//! The flow is:
//!
//! ```text
//! audio -> features -> audio estimator -> z-score alignment -> interval means
//!       -> translator -> generator backend -> style selection -> frame manifest
//! ```
//!
//! The translator is trained on an [`AttributeView`](view::AttributeView): a
//! pruned, smoothed sample of the generator space in which every attribute
//! cluster maps to a single generator class.

pub mod audio;
#[cfg(not(target_arch = "wasm32"))]
pub mod bridge;
pub mod error;
pub mod estimators;
pub mod generator;
pub mod kmeans;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod stylizer;
pub mod translator;
pub mod types;
pub mod view;

pub use error::{Error, Result};
pub use types::{divergence, AttributeVector, AudioSegment, GeneratorVector, ImageHandle, SamplePair};
