//! Frequency-domain multi-channel acoustic front-ends.
//!
//! The crate covers the whole pipeline from raw multi-channel audio to
//! frame-level classification:
//!
//! - [`signal`]: STFT framing, DFT features, mel filter banks, log filter-bank
//!   energies, causal mean subtraction and global mean/variance normalization.
//! - [`beamform`]: array geometry, diffuse-noise coherence, super-directive
//!   weight design, complex and real-valued beamforming, max-energy selection.
//! - [`gradnet`]: a minimal reverse-mode differentiable layer stack (affine,
//!   complex affine, pairwise power, max-pooling, LSTM, softmax cross-entropy)
//!   with a finite-difference verification harness.
//! - [`mcmodel`]: the model architectures (LFBE baseline, single-channel DFT,
//!   and the CAT / DSF / ESF multi-channel front-ends), Adam, stage-wise
//!   training, evaluation, and checkpoint serialization.
//! - [`scenesim`]: a deterministic synthetic scene generator producing labeled
//!   multi-channel recordings with plane-wave targets, coherence-matched
//!   diffuse noise, and point interferers.
//! - [`io`]: WAV ingestion, binary feature dumps, and label files.

pub mod beamform;
pub mod error;
pub mod gradnet;
pub mod io;
pub mod mcmodel;
pub mod scenesim;
pub mod signal;

pub use error::{Error, Result};

/// Speed of sound in air, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
