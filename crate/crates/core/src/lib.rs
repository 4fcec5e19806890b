//! embshift: detect, quantify and correct the variance shift that
//! interpolation-based upsampling and train-only data augmentations introduce
//! into ViT positional embeddings.
//!
//! Modules:
//! - [`tensor`]: dense rank-1..4 tensor, seeded RNG streams, exact statistics
//! - [`vspe`]: the `VSPE v1` binary tensor file format
//! - [`interp`]: from-scratch nearest / bilinear / bicubic upsampling
//! - [`augment`]: mixup, cutmix, random erasing, resize-crop, normalization
//! - [`varcal`]: Monte-Carlo variance/mean ratio measurement and the
//!   `1/sqrt(k)` positional-embedding rescaling calibrator
//! - [`vitfront`]: patch projection + layer norm front end with analytic
//!   gradients
//! - [`auditor`]: analytic and empirical train/test pipeline auditing

pub mod augment;
pub mod auditor;
pub mod error;
pub mod interp;
pub mod tensor;
pub mod varcal;
pub mod vitfront;
pub mod vspe;

pub use error::{Error, Result};
pub use interp::{Dims, Method, UpsampleSpec};
pub use tensor::{SeededRng, Stats, Tensor};
