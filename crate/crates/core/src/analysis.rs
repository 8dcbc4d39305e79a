//! Runs the estimators over every in-band bin of a [`TfGrid`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{ideal_spectrum_at, ArrayGeometry, DoaGrid, IdealSpectrumMatrix, SteeringSet};
use crate::doa::{
    directional_spectrum, dsdd_estimate, energy_weight, lsdd_estimate, smooth_spectra, Algorithm, BinEstimate,
    SimilarityKind,
};
use crate::error::{Error, Result};
use crate::stft::{TfAxes, TfGrid};

pub const DEFAULT_F_LOW: f64 = 1100.0;
pub const DEFAULT_F_HIGH: f64 = 2000.0;

/// Named frequency-smoothing presets: no smoothing, 3-element and
/// 9-element moving averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingPreset {
    None,
    Three,
    Nine,
}

impl SmoothingPreset {
    pub fn radius(self) -> usize {
        match self {
            Self::None => 0,
            Self::Three => 1,
            Self::Nine => 4,
        }
    }
}

/// Parses `none`, `three`, `nine` or a bare radius.
pub fn parse_smoothing(s: &str) -> Result<usize> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(SmoothingPreset::None.radius()),
        "three" | "3" => Ok(SmoothingPreset::Three.radius()),
        "nine" | "9" => Ok(SmoothingPreset::Nine.radius()),
        other => other
            .strip_prefix("r=")
            .unwrap_or(other)
            .parse()
            .map_err(|_| Error::invalid("smoothing", format!("expected none|three|nine|r=<R>, got '{s}'"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub similarity: SimilarityKind,
    /// Half-width R of the frequency moving average (window 2R+1).
    pub smoothing_radius: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub algorithms: Vec<Algorithm>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityKind::Cosine,
            smoothing_radius: 0,
            f_low: DEFAULT_F_LOW,
            f_high: DEFAULT_F_HIGH,
            algorithms: Algorithm::ALL.to_vec(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_low > 0.0 && self.f_low < self.f_high) {
            return Err(Error::invalid("band", "need 0 < f_low < f_high"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("algorithms", "at least one algorithm required"));
        }
        Ok(())
    }
}

/// Estimates per algorithm, each in (frame, bin) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Estimates {
    pub by_algorithm: BTreeMap<Algorithm, Vec<BinEstimate>>,
}

impl Estimates {
    pub fn get(&self, algorithm: Algorithm) -> &[BinEstimate] {
        self.by_algorithm.get(&algorithm).map_or(&[], Vec::as_slice)
    }

    pub fn all(&self) -> impl Iterator<Item = &BinEstimate> {
        self.by_algorithm.values().flatten()
    }
}

/// Precomputed steering vectors and ideal spectra for one analysis band.
#[derive(Debug, Clone)]
pub struct Analyzer {
    grid: DoaGrid,
    steering: SteeringSet,
    ideal: Vec<IdealSpectrumMatrix>,
    bins: std::ops::Range<usize>,
    config: AnalysisConfig,
}

impl Analyzer {
    /// Free-field steering vectors for the in-band bins of `axes`.
    pub fn free_field(geometry: &ArrayGeometry, grid: DoaGrid, axes: &TfAxes, config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let bins = axes.band_bins(config.f_low, config.f_high);
        if bins.is_empty() {
            return Err(Error::invalid("band", "contains no STFT bins"));
        }
        let freqs: Vec<f64> = bins.clone().map(|b| axes.bin_frequency(b)).collect::<Result<_>>()?;
        let steering = SteeringSet::build(geometry, &grid, &freqs)?;
        Ok(Self::assemble(grid, steering, bins, config))
    }

    /// Uses a measured steering set, which must cover every in-band bin.
    pub fn with_steering(steering: &SteeringSet, grid: DoaGrid, axes: &TfAxes, config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        if steering.num_directions() != grid.len() {
            return Err(Error::invalid("steering", "direction count differs from the grid"));
        }
        let bins = axes.band_bins(config.f_low, config.f_high);
        if bins.is_empty() {
            return Err(Error::invalid("band", "contains no STFT bins"));
        }
        let mut responses = Vec::with_capacity(bins.len());
        let mut freqs = Vec::with_capacity(bins.len());
        for b in bins.clone() {
            let f = axes.bin_frequency(b)?;
            let fi = steering.frequency_index(f)?;
            responses.push((0..grid.len()).map(|l| steering.vector(fi, l).to_vec()).collect());
            freqs.push(f);
        }
        let steering = SteeringSet::from_responses(freqs, responses)?;
        Ok(Self::assemble(grid, steering, bins, config))
    }

    fn assemble(grid: DoaGrid, steering: SteeringSet, bins: std::ops::Range<usize>, config: AnalysisConfig) -> Self {
        let ideal = if config.algorithms.iter().any(|a| a.uses_ideal_spectrum()) {
            (0..steering.frequencies().len())
                .map(|fi| ideal_spectrum_at(&steering, fi))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            grid,
            steering,
            ideal,
            bins,
            config,
        }
    }

    pub fn grid(&self) -> &DoaGrid {
        &self.grid
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn band_bins(&self) -> std::ops::Range<usize> {
        self.bins.clone()
    }

    pub fn analyze(&self, tf: &TfGrid) -> Result<Estimates> {
        if tf.num_channels() != self.steering.num_mics() {
            return Err(Error::ChannelMismatch {
                geometry: self.steering.num_mics(),
                audio: tf.num_channels(),
            });
        }
        if self.bins.end > tf.num_bins() {
            return Err(Error::invalid("band", "exceeds the STFT bin range"));
        }
        let per_frame: Vec<Vec<BinEstimate>> = (0..tf.num_frames())
            .into_par_iter()
            .map(|t| self.analyze_frame(tf, t))
            .collect();
        let mut out = Estimates::default();
        for &a in &self.config.algorithms {
            out.by_algorithm.insert(a, Vec::new());
        }
        for est in per_frame.into_iter().flatten() {
            out.by_algorithm.get_mut(&est.algorithm).expect("algorithm registered").push(est);
        }
        Ok(out)
    }

    fn analyze_frame(&self, tf: &TfGrid, t: usize) -> Vec<BinEstimate> {
        let kind = self.config.similarity;
        let r = self.config.smoothing_radius;
        let needs_lsdd = self.config.algorithms.iter().any(|a| !a.uses_ideal_spectrum());
        let needs_dsdd = self.config.algorithms.iter().any(|a| a.uses_ideal_spectrum());

        let snapshots: Vec<_> = self.bins.clone().map(|b| tf.snapshot(t, b)).collect();
        // dSDD compares against W, which is built with the cosine measure, so
        // its spectrum is always cosine; `kind` then selects the column measure.
        let cosine: Vec<_> = snapshots
            .iter()
            .enumerate()
            .map(|(fi, x)| directional_spectrum(x, &self.steering, fi, SimilarityKind::Cosine))
            .collect();
        let lsdd_spectra = if needs_lsdd {
            let raw = if kind == SimilarityKind::Cosine {
                cosine.clone()
            } else {
                snapshots
                    .iter()
                    .enumerate()
                    .map(|(fi, x)| directional_spectrum(x, &self.steering, fi, kind))
                    .collect()
            };
            smooth_spectra(&raw, r)
        } else {
            Vec::new()
        };
        let dsdd_spectra = if needs_dsdd { smooth_spectra(&cosine, r) } else { Vec::new() };

        let mut out = Vec::with_capacity(snapshots.len() * self.config.algorithms.len());
        for (fi, x) in snapshots.iter().enumerate() {
            let bin = self.bins.start + fi;
            let weight = energy_weight(x);
            for &algorithm in &self.config.algorithms {
                let est = if algorithm.uses_ideal_spectrum() {
                    dsdd_spectra[fi]
                        .as_deref()
                        .and_then(|s| dsdd_estimate(s, &self.ideal[fi], kind))
                } else {
                    lsdd_spectra[fi].as_deref().map(lsdd_estimate)
                };
                let Some(est) = est else { continue };
                let chi = if algorithm.energy_weighted() { est.chi * weight } else { est.chi };
                out.push(BinEstimate {
                    frame: t,
                    bin,
                    theta_deg: self.grid.azimuth(est.index),
                    chi,
                    algorithm,
                });
            }
        }
        out
    }
}
