//! Key agreement between co-located devices from shared ambient sound.
//!
//! The pipeline: sample buffers are cut into blocks whose coarse magnitude
//! spectra form an observation matrix; the dominant eigenvectors of its Gram
//! matrix are quantized into key bits; a Reed-Solomon fuzzy commitment lets
//! the other side correct the bits it got wrong without either side sending
//! raw audio.

pub mod eigen;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod protocol;
pub mod quantize;
pub mod randomness;
pub mod reconcile;
pub mod scalar;
pub mod spectral;
pub mod syncbleed;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used throughout the harness.
pub type Samples = ingest::SampleBuffer<f64>;
pub type Samples32 = ingest::SampleBuffer<f32>;
pub type Observation = spectral::ObservationMatrix<f64>;
pub type Covariance = eigen::CovarianceMatrix<f64>;
pub type Basis = eigen::EigenBasis<f64>;
