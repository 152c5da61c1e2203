//! cure-forge: a desk-scale adversarial-training laboratory.
//!
//! The crate provides a tape-based f64 autodiff core, a block-structured MLP
//! with a masking-aware SGD optimizer, synthetic datasets with corruption
//! synthesis, L∞ attacks (FGSM/PGD and minimum-perturbation search), the
//! selective conserve/update/revise training scheme with its baselines, and
//! an analysis toolkit (CKA, NRR, attack sweeps, gradient statistics).

pub mod attacks;
pub mod data;
pub mod error;
pub mod nn;
pub mod objectives;
pub mod seeding;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{backward, grad_wrt, Tensor};
