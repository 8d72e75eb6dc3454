//! Training-free few-shot classification with dual hyperbolic adapters.
//!
//! Support images are turned into positive and negative class prototypes in
//! the Poincaré ball, text prompts into positive and negative text banks,
//! and a test embedding is scored by four probability streams:
//!
//! - `iip+`: softmax of negative hyperbolic distance to positive prototypes
//! - `iip-`: softmax of hyperbolic distance to negative prototypes
//! - `itp+`: zero-shot cosine prediction against positive prompts
//! - `itp-`: inverted cosine prediction against negated prompts
//!
//! The image-image pair and the image-text pair are summed and combined as
//! `alpha * P_II + P_IT`. Everything operates on precomputed embeddings;
//! see [`data`] for the on-disk bundle format.

pub mod data;
pub mod eval;
pub mod geomcheck;
pub mod inference;
pub mod poincare;
pub mod prototype;
pub mod seed;
pub mod textbank;

mod error;

pub use error::Error;
pub use inference::{classify_batch, Component, Components, FusionConfig, Metric, PredictionVector};
pub use poincare::{BallPoint, EmbeddingVector, GeometryError};
pub use prototype::{MeanMode, PrototypeSet, SupportSet};
pub use textbank::{PromptBank, TextBank};

pub type Result<T, E = Error> = std::result::Result<T, E>;
