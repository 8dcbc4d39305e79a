//! Array geometry, plane-wave steering vectors and the similarity matrices
//! derived from them.
//!
//! Azimuth convention: 0° points along +x, 90° along +y, measured
//! counter-clockwise in the horizontal (x, y) plane of the array frame.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::doa::cosine_similarity;
use crate::error::{Error, Result};

pub type Position = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Two microphones closer than this are treated as coincident.
const MIN_MIC_SEPARATION: f64 = 1e-6;

/// Relative tolerance when matching a requested frequency to a precomputed one.
const FREQ_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    speed_of_sound: f64,
    mic_positions: Vec<Position>,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Position>, speed_of_sound: f64) -> Result<Self> {
        let geometry = Self {
            speed_of_sound,
            mic_positions,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    fn validate(&self) -> Result<()> {
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::invalid("speed_of_sound", "must be positive and finite"));
        }
        if self.mic_positions.len() < 2 {
            return Err(Error::invalid("mic_positions", "need at least two microphones"));
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mic_positions", "coordinates must be finite"));
        }
        for (i, a) in self.mic_positions.iter().enumerate() {
            for (j, b) in self.mic_positions.iter().enumerate().skip(i + 1) {
                if distance(a, b) < MIN_MIC_SEPARATION {
                    return Err(Error::invalid(
                        "mic_positions",
                        format!("microphones {i} and {j} coincide"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Six-microphone layout resembling AR glasses: four capsules on the
    /// frame and two at the ears. Meters, x forward, y left, z up.
    pub fn glasses_fixture() -> Self {
        Self {
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            mic_positions: vec![
                [0.080, 0.070, 0.010],
                [0.080, -0.070, 0.010],
                [0.020, 0.078, 0.015],
                [0.020, -0.078, 0.015],
                [-0.010, 0.080, -0.030],
                [-0.010, -0.080, -0.030],
            ],
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn mic_positions(&self) -> &[Position] {
        &self.mic_positions
    }

    pub fn centroid(&self) -> Position {
        let n = self.mic_positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Far-field arrival delay (seconds) of a horizontal plane wave from
    /// `azimuth_deg` at each microphone, relative to the centroid. Negative
    /// values mean the wave reaches that microphone before the centroid.
    pub fn delays(&self, azimuth_deg: f64) -> Vec<f64> {
        let (s, c) = azimuth_deg.to_radians().sin_cos();
        let origin = self.centroid();
        self.mic_positions
            .iter()
            .map(|p| -((p[0] - origin[0]) * c + (p[1] - origin[1]) * s) / self.speed_of_sound)
            .collect()
    }

    /// The same array rotated about the z axis by `degrees`.
    pub fn rotated(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            speed_of_sound: self.speed_of_sound,
            mic_positions: self
                .mic_positions
                .iter()
                .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let geometry: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<geometry>".into(),
            message: e.to_string(),
        })?;
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("geometry serializes")
    }
}

fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Free-field response of the array to a unit plane wave: element m is
/// `exp(-j 2π f τ_m)` with τ_m from [`ArrayGeometry::delays`].
pub fn steering_vector(geometry: &ArrayGeometry, frequency: f64, azimuth_deg: f64) -> Vec<Complex64> {
    geometry
        .delays(azimuth_deg)
        .into_iter()
        .map(|tau| Complex64::from_polar(1.0, -2.0 * PI * frequency * tau))
        .collect()
}

/// Uniform horizontal grid of candidate azimuths.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaGrid {
    azimuths: Vec<f64>,
}

impl Default for DoaGrid {
    /// 0°, 6°, ..., 354°.
    fn default() -> Self {
        Self::uniform(60).expect("60 points is a valid grid")
    }
}

impl DoaGrid {
    /// `count` azimuths evenly covering the full circle starting at 0°.
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::invalid("grid", "need at least two directions"));
        }
        let step = 360.0 / count as f64;
        Ok(Self {
            azimuths: (0..count).map(|i| i as f64 * step).collect(),
        })
    }

    pub fn from_azimuths(azimuths: Vec<f64>) -> Result<Self> {
        if azimuths.len() < 2 {
            return Err(Error::invalid("grid", "need at least two directions"));
        }
        if azimuths.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(Error::invalid("grid", "azimuths must lie in [0, 360)"));
        }
        let step = azimuths[1] - azimuths[0];
        for w in azimuths.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::invalid("grid", "azimuths must be strictly increasing"));
            }
            if (d - step).abs() > 1e-9 {
                return Err(Error::invalid("grid", "azimuths must be uniformly spaced"));
            }
        }
        Ok(Self { azimuths })
    }

    pub fn len(&self) -> usize {
        self.azimuths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuths.is_empty()
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn azimuth(&self, index: usize) -> f64 {
        self.azimuths[index]
    }

    pub fn step(&self) -> f64 {
        self.azimuths[1] - self.azimuths[0]
    }

    /// Grid index of an azimuth that lies on the grid (modulo 360°).
    pub fn index_of(&self, azimuth_deg: f64) -> Result<usize> {
        let a = azimuth_deg.rem_euclid(360.0);
        self.azimuths
            .iter()
            .position(|g| {
                let d = (g - a).abs();
                d.min(360.0 - d) < 1e-6
            })
            .ok_or(Error::OffGrid(azimuth_deg))
    }
}

/// Steering vectors for every (frequency, grid direction) pair, stored
/// frequency-major so that one frequency's L vectors are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSet {
    frequencies: Vec<f64>,
    num_directions: usize,
    num_mics: usize,
    vectors: Vec<Complex64>,
}

impl SteeringSet {
    pub fn build(geometry: &ArrayGeometry, grid: &DoaGrid, frequencies: &[f64]) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::invalid("frequencies", "must not be empty"));
        }
        if frequencies.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::invalid("frequencies", "must be finite and non-negative"));
        }
        let mut vectors = Vec::with_capacity(frequencies.len() * grid.len() * geometry.num_mics());
        for &f in frequencies {
            for &az in grid.azimuths() {
                vectors.extend(steering_vector(geometry, f, az));
            }
        }
        Ok(Self {
            frequencies: frequencies.to_vec(),
            num_directions: grid.len(),
            num_mics: geometry.num_mics(),
            vectors,
        })
    }

    /// Assemble a set from externally measured responses; `responses[fi][l]`
    /// is the M-vector for `frequencies[fi]` and grid direction `l`.
    pub fn from_responses(frequencies: Vec<f64>, responses: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() != responses.len() {
            return Err(Error::invalid("steering", "one response table per frequency required"));
        }
        let num_directions = responses[0].len();
        let num_mics = responses[0].first().map_or(0, Vec::len);
        if num_directions < 2 || num_mics < 2 {
            return Err(Error::invalid("steering", "need at least two directions and two mics"));
        }
        let mut vectors = Vec::with_capacity(frequencies.len() * num_directions * num_mics);
        for table in responses {
            if table.len() != num_directions {
                return Err(Error::invalid("steering", "ragged direction count"));
            }
            for v in table {
                if v.len() != num_mics {
                    return Err(Error::invalid("steering", "ragged microphone count"));
                }
                if v.iter().all(|z| z.norm_sqr() == 0.0) {
                    return Err(Error::invalid("steering", "zero steering vector"));
                }
                vectors.extend(v);
            }
        }
        Ok(Self {
            frequencies,
            num_directions,
            num_mics,
            vectors,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn num_directions(&self) -> usize {
        self.num_directions
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    pub fn frequency_index(&self, frequency: f64) -> Result<usize> {
        self.frequencies
            .iter()
            .position(|&f| (f - frequency).abs() <= FREQ_MATCH_TOL * f.abs().max(1.0))
            .ok_or(Error::MissingFrequency(frequency))
    }

    pub fn vector(&self, freq_index: usize, direction: usize) -> &[Complex64] {
        let start = (freq_index * self.num_directions + direction) * self.num_mics;
        &self.vectors[start..start + self.num_mics]
    }

    /// The L steering vectors for one frequency.
    pub fn row(&self, freq_index: usize) -> impl ExactSizeIterator<Item = &[Complex64]> {
        let start = freq_index * self.num_directions * self.num_mics;
        self.vectors[start..start + self.num_directions * self.num_mics].chunks_exact(self.num_mics)
    }
}

/// Per-frequency matrix of steering-vector self-similarities. Symmetric,
/// so column h and row h coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealSpectrumMatrix {
    size: usize,
    values: Vec<f64>,
}

impl IdealSpectrumMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, l: usize, h: usize) -> f64 {
        self.values[l * self.size + h]
    }

    pub fn column(&self, h: usize) -> &[f64] {
        &self.values[h * self.size..(h + 1) * self.size]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.size)
    }
}

pub fn build_ideal_spectrum(steering: &SteeringSet, frequency: f64) -> Result<IdealSpectrumMatrix> {
    let fi = steering.frequency_index(frequency)?;
    Ok(ideal_spectrum_at(steering, fi))
}

pub(crate) fn ideal_spectrum_at(steering: &SteeringSet, fi: usize) -> IdealSpectrumMatrix {
    let l_count = steering.num_directions();
    let mut values = vec![0.0; l_count * l_count];
    for l in 0..l_count {
        values[l * l_count + l] = 1.0;
        for h in l + 1..l_count {
            let w = cosine_similarity(steering.vector(fi, l), steering.vector(fi, h)).min(1.0);
            values[l * l_count + h] = w;
            values[h * l_count + l] = w;
        }
    }
    IdealSpectrumMatrix {
        size: l_count,
        values,
    }
}

/// Similarity of one reference steering vector to every grid direction,
/// for every frequency in the set.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMap {
    pub reference_azimuth: f64,
    pub reference_index: usize,
    pub frequencies: Vec<f64>,
    pub azimuths: Vec<f64>,
    /// One row per frequency, one column per grid direction.
    pub values: Vec<Vec<f64>>,
}

pub fn band_similarity_map(steering: &SteeringSet, grid: &DoaGrid, reference_azimuth: f64) -> Result<BandMap> {
    if grid.len() != steering.num_directions() {
        return Err(Error::invalid("grid", "does not match the steering set"));
    }
    let h = grid.index_of(reference_azimuth)?;
    let values = (0..steering.frequencies().len())
        .map(|fi| {
            let reference = steering.vector(fi, h);
            steering
                .row(fi)
                .enumerate()
                .map(|(l, v)| if l == h { 1.0 } else { cosine_similarity(reference, v).min(1.0) })
                .collect()
        })
        .collect();
    Ok(BandMap {
        reference_azimuth: grid.azimuth(h),
        reference_index: h,
        frequencies: steering.frequencies().to_vec(),
        azimuths: grid.azimuths().to_vec(),
        values,
    })
}

/// Number of grid points in the contiguous circular run around `center`
/// whose values are at least `threshold`.
pub fn main_lobe_width(row: &[f64], center: usize, threshold: f64) -> usize {
    let n = row.len();
    if row[center] < threshold {
        return 0;
    }
    if row.iter().all(|&v| v >= threshold) {
        return n;
    }
    let mut width = 1;
    let mut i = center;
    loop {
        i = (i + 1) % n;
        if row[i] < threshold {
            break;
        }
        width += 1;
    }
    let mut i = center;
    loop {
        i = (i + n - 1) % n;
        if row[i] < threshold {
            break;
        }
        width += 1;
    }
    width
}
