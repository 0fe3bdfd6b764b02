//! Unsupervised induction of joint vision-language structures from
//! image-caption pairs.
//!
//! A caption's dependency tree and its image's scene graph are tied
//! together by zero-, first- and second-order alignments. The crate covers
//! the whole loop: a neural DMV parser conditioned on visual nodes
//! ([`model`]), exact chart inference ([`chart`]) on a small reverse-mode
//! tensor engine ([`tensor`]), rule-based tree-to-graph alignment
//! ([`align`]), metrics ([`eval`]), and file formats plus a synthetic data
//! generator ([`data`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! supported precisions.

pub mod align;
pub mod chart;
pub mod data;
pub mod eval;
pub mod model;
pub mod scalar;
pub mod structure;
pub mod tensor;

pub use model::{Model, Model32, Model64};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type DmvScores32 = chart::DmvScores<f32>;
pub type DmvScores64 = chart::DmvScores<f64>;
pub type ParameterStore32 = tensor::ParameterStore<f32>;
pub type ParameterStore64 = tensor::ParameterStore<f64>;
