//! Direction-of-arrival estimation for wearable microphone arrays using
//! directional spectra over a steering-vector grid, with direct-path
//! dominance (DPD) tests for selecting reliable time-frequency bins.
//!
//! The pipeline is [`stft`] → [`analysis::Analyzer`] (LSDD, LSDDe, dSDD,
//! dSDDe per bin) → [`eval::evaluate_run`] (block-wise percentile
//! thresholding and error/hit metrics). [`sim`] renders synthetic scenes
//! with exact ground truth.

pub mod analysis;
pub mod array;
pub mod cli;
pub mod doa;
pub mod error;
pub mod eval;
pub mod io;
pub mod sim;
pub mod stft;

pub use analysis::{AnalysisConfig, Analyzer, Estimates, SmoothingPreset};
pub use array::{
    band_similarity_map, build_ideal_spectrum, steering_vector, ArrayGeometry, BandMap, DoaGrid,
    IdealSpectrumMatrix, SteeringSet,
};
pub use doa::{Algorithm, BinEstimate, SimilarityKind};
pub use error::{Error, Result};
pub use eval::{evaluate_run, EvalConfig, GroundTruth, RunReport};
pub use sim::{synthesize, SceneSpec};
pub use stft::{stft, MultichannelAudio, StftConfig, TfAxes, TfGrid};
