//! Differentiable mask-based GEV beamforming for multi-channel speech.
//!
//! The crate implements an integrated front-end/back-end chain: a
//! trainable network estimates per-channel speech and noise masks, the
//! median-pooled masks weight spatial covariance estimates, a per-bin
//! generalized eigenvalue problem solved with an unrolled QR iteration
//! yields the beamforming vectors, a blind analytic normalization rescales
//! them, and the enhanced signal feeds a log-mel frame classifier. The
//! training loss back-propagates through every stage - including the QR
//! decomposition - into the mask estimator, which enables a two-pass
//! adaptation scheme: decode once for frame targets, then retune only the
//! mask estimator while everything else stays frozen.
//!
//! Module map:
//! - [`signal`]: STFT analysis/synthesis and log-mel features
//! - [`linalg`]: complex QR, the QR-algorithm eigensolver, Hermitian solves
//! - [`beamform`]: covariances, GEV vectors, BAN, application, posterior SNR
//! - [`maskestim`]: the trainable mask network and median pooling
//! - [`am`]: the frame-classifier surrogate acoustic model
//! - [`grad`]: hand-derived vector-Jacobian products and the gradcheck harness
//! - [`pipeline`]: the recorded end-to-end forward and reverse passes
//! - [`adapt`]: two-pass speaker adaptation
//! - [`sim`]: deterministic synthetic scenes with oracle decompositions
//! - [`wav`], [`matdump`], [`checkpoint`]: file formats

pub mod adapt;
pub mod am;
pub mod beamform;
pub mod checkpoint;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod maskestim;
pub mod matdump;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod sim;
pub mod wav;

pub use error::{Error, Result};
