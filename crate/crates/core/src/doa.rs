//! Similarity measures, directional spectra and the four per-bin DOA/DPD
//! estimators (LSDD, LSDDe, dSDD, dSDDe).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{IdealSpectrumMatrix, SteeringSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// `|<a,b>| / (|a| |b|)`
    #[default]
    Cosine,
    /// Reciprocal of the least-squares residual `min_β |a - βb| / |a|`.
    InverseResidual,
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cosine" => Ok(Self::Cosine),
            "inverse_residual" | "residual" => Ok(Self::InverseResidual),
            _ => Err(Error::invalid("similarity", format!("unknown kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "LSDD")]
    Lsdd,
    #[serde(rename = "LSDDe")]
    Lsdde,
    #[serde(rename = "dSDD")]
    Dsdd,
    #[serde(rename = "dSDDe")]
    Dsdde,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Lsdd, Self::Lsdde, Self::Dsdd, Self::Dsdde];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lsdd => "LSDD",
            Self::Lsdde => "LSDDe",
            Self::Dsdd => "dSDD",
            Self::Dsdde => "dSDDe",
        }
    }

    pub fn uses_ideal_spectrum(self) -> bool {
        matches!(self, Self::Dsdd | Self::Dsdde)
    }

    pub fn energy_weighted(self) -> bool {
        matches!(self, Self::Lsdde | Self::Dsdde)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("algorithm", format!("unknown algorithm '{s}'")))
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
}

/// Cosine similarity of two complex vectors. Returns 0 when either is zero.
pub fn cosine_similarity(a: &[Complex64], b: &[Complex64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        inner(a, b).norm() / denom
    }
}

/// Cosine values within this distance of 1 count as parallel vectors.
const PARALLEL_TOL: f64 = 1e-12;

/// Maps a cosine value c to `1/sqrt(1 - c²)`, the reciprocal of the
/// normalized least-squares residual. Returns `+inf` for parallel vectors
/// (c within 1e-12 of 1).
pub fn inverse_residual_from_cosine(c: f64) -> f64 {
    let r2 = 1.0 - c * c;
    if 1.0 - c <= PARALLEL_TOL {
        f64::INFINITY
    } else {
        1.0 / r2.sqrt()
    }
}

/// Similarity between two nonzero complex vectors.
///
/// For [`SimilarityKind::InverseResidual`] the minimizing β is
/// `<a,b>/|b|²`, which leaves a residual of `|a| sqrt(1 - c²)`, so no
/// numeric search is needed. Parallel vectors give `+inf`.
pub fn similarity(a: &[Complex64], b: &[Complex64], kind: SimilarityKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("vectors", "length mismatch"));
    }
    if norm(a) == 0.0 || norm(b) == 0.0 {
        return Err(Error::invalid("vectors", "zero vector has no direction"));
    }
    let c = cosine_similarity(a, b).min(1.0);
    Ok(match kind {
        SimilarityKind::Cosine => c,
        SimilarityKind::InverseResidual => inverse_residual_from_cosine(c),
    })
}

/// Directional spectrum of one bin snapshot against the L steering vectors
/// of its frequency. `None` when the snapshot is identically zero.
pub fn directional_spectrum(x: &[Complex64], steering: &SteeringSet, freq_index: usize, kind: SimilarityKind) -> Option<Vec<f64>> {
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return None;
    }
    Some(
        steering
            .row(freq_index)
            .map(|v| {
                let c = (inner(x, v).norm() / (x_norm * norm(v))).min(1.0);
                match kind {
                    SimilarityKind::Cosine => c,
                    SimilarityKind::InverseResidual => inverse_residual_from_cosine(c),
                }
            })
            .collect(),
    )
}

/// Moving average over frequency with a `2R+1` window, per direction.
///
/// Near the edges of the supplied bin range, and around bins with no
/// spectrum, the window shrinks to what is available and the mean is taken
/// over the bins actually present. Bins without a spectrum stay `None`.
pub fn smooth_spectra(spectra: &[Option<Vec<f64>>], radius: usize) -> Vec<Option<Vec<f64>>> {
    if radius == 0 {
        return spectra.to_vec();
    }
    let n = spectra.len();
    (0..n)
        .map(|f| {
            let len = spectra[f].as_ref()?.len();
            let lo = f.saturating_sub(radius);
            let hi = (f + radius).min(n - 1);
            let mut acc = vec![0.0; len];
            let mut count = 0usize;
            for s in spectra[lo..=hi].iter().flatten() {
                count += 1;
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
            let count = count as f64;
            acc.iter_mut().for_each(|a| *a /= count);
            Some(acc)
        })
        .collect()
}

/// Grid index and value of a per-bin estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub index: usize,
    pub chi: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Estimate {
    let mut best = Estimate {
        index: 0,
        chi: values[0],
    };
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.chi {
            best = Estimate { index: i, chi: v };
        }
    }
    best
}

pub fn lsdd_estimate(spectrum: &[f64]) -> Estimate {
    argmax(spectrum)
}

/// Median of the per-channel bin energies; mean of the two middle values
/// for an even channel count.
pub fn energy_weight(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut e: Vec<f64> = x.iter().map(Complex64::norm_sqr).collect();
    e.sort_by(f64::total_cmp);
    let mid = e.len() / 2;
    if e.len() % 2 == 1 {
        e[mid]
    } else {
        0.5 * (e[mid - 1] + e[mid])
    }
}

pub fn lsdde_estimate(spectrum: &[f64], x: &[Complex64]) -> Estimate {
    let est = lsdd_estimate(spectrum);
    Estimate {
        chi: est.chi * energy_weight(x),
        ..est
    }
}

fn real_similarity(a: &[f64], b: &[f64], a_norm: f64, kind: SimilarityKind) -> f64 {
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let c = (dot.abs() / (a_norm * b_norm)).min(1.0);
    match kind {
        SimilarityKind::Cosine => c,
        SimilarityKind::InverseResidual => inverse_residual_from_cosine(c),
    }
}

/// Compares the spectrum against every column of the ideal-spectrum matrix.
/// `None` for an all-zero spectrum.
pub fn dsdd_estimate(spectrum: &[f64], ideal: &IdealSpectrumMatrix, kind: SimilarityKind) -> Option<Estimate> {
    let s_norm = spectrum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s_norm == 0.0 || !s_norm.is_finite() {
        return None;
    }
    let scores: Vec<f64> = ideal
        .columns()
        .map(|col| real_similarity(spectrum, col, s_norm, kind))
        .collect();
    Some(argmax(&scores))
}

pub fn dsdde_estimate(spectrum: &[f64], ideal: &IdealSpectrumMatrix, kind: SimilarityKind, x: &[Complex64]) -> Option<Estimate> {
    dsdd_estimate(spectrum, ideal, kind).map(|est| Estimate {
        chi: est.chi * energy_weight(x),
        ..est
    })
}

/// Per-bin DOA estimate and DPD measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub frame: usize,
    pub bin: usize,
    /// Array-frame azimuth of the selected grid direction.
    pub theta_deg: f64,
    pub chi: f64,
    pub algorithm: Algorithm,
}
