//! Target-source extraction from dual-microphone underdetermined mixtures by
//! combining candidate beamformers in every time-frequency bin.
//!
//! The crate is organized bottom-up:
//!
//! * [`spectral`]: STFT / iSTFT and WAV I/O.
//! * [`scene`]: shoebox image-method simulation, diffuse noise and corpus generation.
//! * [`beamforming`]: steering vectors, RTF estimation, null beamformers and the
//!   distortionless power-minimizing update.
//! * [`combination`]: per-bin switching (TFS) and linear combination (TFLC) plus the
//!   classical iterative refinement loop.
//! * [`neural`]: a small reverse-mode autodiff engine and the attention-gated
//!   combination network.
//! * [`evaluation`]: SI-SDR / SI-SIR and corpus-level reports.
//! * [`pipeline`]: per-mixture method dispatch shared by the CLI and tests.
//! * [`figure`]: grayscale image emission for spectrograms and weight maps.

pub mod beamforming;
pub mod combination;
pub mod error;
pub mod evaluation;
pub mod figure;
pub mod linalg;
pub mod neural;
pub mod pipeline;
pub mod scene;
pub mod spectral;

pub use error::{Error, Result};
pub use beamforming::{Beamformer, BeamformerKind, BeamformerSet, CovarianceField, Rtf};
pub use combination::{BeamOutputs, SelectionMode, WeightField};
pub use num_complex::Complex64 as C64;
pub use scene::{MixtureBundle, SceneSpec};
pub use spectral::{MultichannelSpectrogram, StftConfig, Waveform};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
