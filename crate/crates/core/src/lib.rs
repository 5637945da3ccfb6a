//! Watermarking for order-agnostic (masked-diffusion style) token generation.
//!
//! The watermark lives in the unmasking order: at each step the decoder
//! prefers positions whose proposed token agrees with a keyed parity bit of
//! the position, and never touches the predictor's probabilities. Detection
//! counts parity matches over the whole response and over sliding windows.
//!
//! - [`parity`]: keyed balanced vocabulary partition
//! - [`predictor`]: predictor interface and toy models
//! - [`strategy`]: reward/candidate rules
//! - [`decoder`]: plain, steered and lookahead decoding, block-wise
//! - [`detector`], [`calibrate`]: statistics, null calibration, decisions
//! - [`attack`]: token edits
//! - [`eval`]: ROC/AUC and TPR@FPR
//! - [`bridge`]: client for an external predictor process

pub mod attack;
pub mod bridge;
pub mod calibrate;
pub mod decoder;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod null;
pub mod parity;
pub mod predictor;
pub mod records;
pub mod rng;
pub mod stats;
pub mod strategy;

pub type TokenId = u32;

pub use error::{Error, Result};
