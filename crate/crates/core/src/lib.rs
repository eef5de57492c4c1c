//! Frequency-guided spatial adaptation for camouflaged object detection.
//!
//! The crate is organized around a small differentiable tensor core
//! ([`tensor`]) on which the model stack is built: the frequency-guided
//! spatial attention module ([`fgsattn`]), a frozen toy ViT backbone
//! ([`backbone`]), the trainable two-branch adapter ([`adapter`]), a decode
//! head with the weighted segmentation loss ([`head`]), synthetic camouflage
//! data ([`data`]), the four standard evaluation measures ([`metrics`]) and a
//! config-driven run engine ([`config`], [`run`]).

pub mod adapter;
pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod fgsattn;
pub mod head;
pub mod metrics;
pub mod model;
pub mod run;
pub mod tensor;

pub use error::{Error, Result};
