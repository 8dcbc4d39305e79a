//! Synthetic plane-wave scenes with known ground truth: moving sources,
//! a rotating array, discrete reflections and per-microphone white noise.
//!
//! Each wave is rendered with per-microphone fractional delays for its
//! array-frame azimuth (room azimuth minus array yaw). Azimuth and yaw are
//! held constant over hop-length segments centered on the STFT frame
//! centers, so the truth written for a frame is exactly what was rendered
//! around that frame's center.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::error::{Error, Result};
use crate::eval::{normalize_deg, GroundTruth, Speaker, TruthFrame};
use crate::stft::{MultichannelAudio, StftConfig};

/// Half the number of taps of the fractional-delay interpolator.
const SINC_HALF_TAPS: i64 = 16;

/// `(time_s, azimuth_deg)` breakpoint of a piecewise-linear trajectory.
pub type Keyframe = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalKind {
    Sinusoids {
        frequencies: Vec<f64>,
        amplitudes: Vec<f64>,
        #[serde(default)]
        phases: Vec<f64>,
    },
    /// Gaussian noise band-limited to `[f_low, f_high]` and scaled to unit
    /// RMS. With `envelope_hz` set, a raised-cosine amplitude envelope at
    /// that rate is applied (syllable-like modulation), then rescaled.
    BandlimitedNoise {
        f_low: f64,
        f_high: f64,
        #[serde(default)]
        envelope_hz: Option<f64>,
    },
    /// One channel of a WAV file at the scene sample rate, zero-padded or
    /// truncated to the scene duration.
    Wav {
        path: PathBuf,
        #[serde(default)]
        channel: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub signal: SignalKind,
    /// Room-frame azimuth keyframes.
    pub trajectory: Vec<Keyframe>,
    #[serde(default = "unit")]
    pub gain: f64,
    /// `[start, end)` intervals in seconds when the source is active.
    /// Absent means active for the whole scene.
    #[serde(default)]
    pub active: Option<Vec<[f64; 2]>>,
}

fn unit() -> f64 {
    1.0
}

/// A delayed, attenuated copy of a source arriving from an offset azimuth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionSpec {
    pub source: usize,
    pub azimuth_offset: f64,
    pub gain: f64,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration: f64,
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the independent white noise added to each mic.
    #[serde(default)]
    pub noise_level: f64,
    /// Geometry file, resolved relative to the scene file by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub reflections: Vec<ReflectionSpec>,
    /// Array yaw keyframes (room frame). Empty means a fixed 0° yaw.
    #[serde(default)]
    pub array_yaw: Vec<Keyframe>,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "<scene>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Collects every violated constraint; each message starts with the
    /// offending field name.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if !(self.duration.is_finite() && self.duration > 0.0) {
            p.push(format!("duration: must be positive (got {})", self.duration));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            p.push(format!("sample_rate: must be positive (got {})", self.sample_rate));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            p.push(format!("noise_level: must be non-negative (got {})", self.noise_level));
        }
        if let Err(e) = self.stft.validate() {
            p.push(format!("stft: {e}"));
        }
        check_trajectory("array_yaw", &self.array_yaw, self.duration, true, &mut p);
        for (i, s) in self.sources.iter().enumerate() {
            let name = format!("sources[{i}]");
            if !(s.gain.is_finite() && s.gain >= 0.0) {
                p.push(format!("{name}.gain: must be non-negative (got {})", s.gain));
            }
            check_trajectory(&format!("{name}.trajectory"), &s.trajectory, self.duration, false, &mut p);
            if let Some(active) = &s.active {
                if active.iter().any(|[a, b]| !(a.is_finite() && b.is_finite() && a <= b)) {
                    p.push(format!("{name}.active: intervals must satisfy start <= end"));
                }
            }
            match &s.signal {
                SignalKind::Sinusoids {
                    frequencies,
                    amplitudes,
                    phases,
                } => {
                    if frequencies.len() != amplitudes.len() {
                        p.push(format!("{name}.signal.amplitudes: need one per frequency"));
                    }
                    if !phases.is_empty() && phases.len() != frequencies.len() {
                        p.push(format!("{name}.signal.phases: need one per frequency or none"));
                    }
                    if frequencies.iter().any(|f| !(*f >= 0.0 && *f <= self.sample_rate / 2.0)) {
                        p.push(format!("{name}.signal.frequencies: must lie in [0, sample_rate/2]"));
                    }
                }
                SignalKind::BandlimitedNoise {
                    f_low,
                    f_high,
                    envelope_hz,
                } => {
                    if !(*f_low >= 0.0 && f_low < f_high && *f_high <= self.sample_rate / 2.0) {
                        p.push(format!("{name}.signal: need 0 <= f_low < f_high <= sample_rate/2"));
                    }
                    if envelope_hz.is_some_and(|e| e.is_nan() || e <= 0.0) {
                        p.push(format!("{name}.signal.envelope_hz: must be positive"));
                    }
                }
                SignalKind::Wav { .. } => {}
            }
        }
        for (i, r) in self.reflections.iter().enumerate() {
            let name = format!("reflections[{i}]");
            if r.source >= self.sources.len() {
                p.push(format!("{name}.source: no source with index {}", r.source));
            }
            if !(r.gain >= 0.0 && r.gain < 1.0) {
                p.push(format!("{name}.gain: must lie in [0, 1) (got {})", r.gain));
            }
            if !(r.delay_ms.is_finite() && r.delay_ms >= 0.0) {
                p.push(format!("{name}.delay_ms: must be non-negative (got {})", r.delay_ms));
            }
            if !r.azimuth_offset.is_finite() {
                p.push(format!("{name}.azimuth_offset: must be finite"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

fn check_trajectory(name: &str, keys: &[Keyframe], duration: f64, may_be_empty: bool, p: &mut Vec<String>) {
    if keys.is_empty() {
        if !may_be_empty {
            p.push(format!("{name}: at least one keyframe required"));
        }
        return;
    }
    if keys.iter().flatten().any(|v| !v.is_finite()) {
        p.push(format!("{name}: keyframes must be finite"));
        return;
    }
    if keys.windows(2).any(|w| w[1][0] < w[0][0]) {
        p.push(format!("{name}: keyframe times must be non-decreasing"));
    }
    if keys.len() > 1 && (keys[0][0] > 0.0 || keys[keys.len() - 1][0] < duration) {
        p.push(format!("{name}: keyframes must span [0, duration]"));
    }
}

/// Piecewise-linear interpolation, clamped at both ends.
pub fn interpolate(keys: &[Keyframe], t: f64) -> f64 {
    match keys {
        [] => 0.0,
        [only] => only[1],
        _ => {
            if t <= keys[0][0] {
                return keys[0][1];
            }
            for w in keys.windows(2) {
                let ([t0, a0], [t1, a1]) = (w[0], w[1]);
                if t <= t1 {
                    return if t1 > t0 { a0 + (a1 - a0) * (t - t0) / (t1 - t0) } else { a1 };
                }
            }
            keys[keys.len() - 1][1]
        }
    }
}

fn is_active(source: &SourceSpec, t: f64) -> bool {
    source
        .active
        .as_ref()
        .is_none_or(|iv| iv.iter().any(|&[a, b]| t >= a && t < b))
}

fn active_fraction(source: &SourceSpec, duration: f64) -> f64 {
    let Some(iv) = &source.active else { return 1.0 };
    let mut spans: Vec<[f64; 2]> = iv
        .iter()
        .map(|&[a, b]| [a.max(0.0), b.min(duration)])
        .filter(|[a, b]| b > a)
        .collect();
    spans.sort_by(|x, y| x[0].total_cmp(&y[0]));
    let mut total = 0.0;
    let mut cur: Option<[f64; 2]> = None;
    for s in spans {
        cur = match cur {
            Some([a, b]) if s[0] <= b => Some([a, b.max(s[1])]),
            Some([a, b]) => {
                total += b - a;
                Some(s)
            }
            None => Some(s),
        };
    }
    if let Some([a, b]) = cur {
        total += b - a;
    }
    total / duration
}

fn source_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

fn dry_signal(spec: &SceneSpec, index: usize) -> Result<Vec<f64>> {
    let n = spec.num_samples();
    let fs = spec.sample_rate;
    let source = &spec.sources[index];
    let mut x = match &source.signal {
        SignalKind::Sinusoids {
            frequencies,
            amplitudes,
            phases,
        } => (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                frequencies
                    .iter()
                    .zip(amplitudes)
                    .enumerate()
                    .map(|(k, (f, a))| a * (2.0 * PI * f * t + phases.get(k).copied().unwrap_or(0.0)).sin())
                    .sum()
            })
            .collect(),
        SignalKind::BandlimitedNoise {
            f_low,
            f_high,
            envelope_hz,
        } => {
            let mut rng = source_rng(spec.seed, index as u64 + 1);
            let mut buf: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
                .collect();
            let mut planner = FftPlanner::new();
            planner.plan_fft_forward(n).process(&mut buf);
            for (k, z) in buf.iter_mut().enumerate() {
                let f = k.min(n - k) as f64 * fs / n as f64;
                if f < *f_low || f > *f_high {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
            planner.plan_fft_inverse(n).process(&mut buf);
            let mut x: Vec<f64> = buf.iter().map(|z| z.re).collect();
            normalize_rms(&mut x);
            if let Some(rate) = envelope_hz {
                let phase = rng.random_range(0.0..2.0 * PI);
                for (i, v) in x.iter_mut().enumerate() {
                    *v *= 0.5 - 0.5 * (2.0 * PI * rate * i as f64 / fs + phase).cos();
                }
                normalize_rms(&mut x);
            }
            x
        }
        SignalKind::Wav { path, channel } => {
            let audio = crate::io::read_wav(path)?;
            if (audio.sample_rate - fs).abs() > 1e-6 {
                return Err(Error::invalid(
                    format!("sources[{index}].signal.path"),
                    format!("sample rate {} differs from scene rate {fs}", audio.sample_rate),
                ));
            }
            let ch = audio.channels.get(*channel).ok_or_else(|| {
                Error::invalid(format!("sources[{index}].signal.channel"), "channel not present in file")
            })?;
            let mut x = ch.clone();
            x.resize(n, 0.0);
            x
        }
    };
    if source.active.is_some() {
        for (i, v) in x.iter_mut().enumerate() {
            if !is_active(source, i as f64 / fs) {
                *v = 0.0;
            }
        }
    }
    Ok(x)
}

/// Mean power of a source's dry signal before gating and gain.
fn dry_power(spec: &SceneSpec, index: usize) -> Result<f64> {
    Ok(match &spec.sources[index].signal {
        SignalKind::Sinusoids { amplitudes, .. } => amplitudes.iter().map(|a| a * a / 2.0).sum(),
        SignalKind::BandlimitedNoise { .. } => 1.0,
        SignalKind::Wav { path, channel } => {
            let audio = crate::io::read_wav(path)?;
            let ch = audio
                .channels
                .get(*channel)
                .ok_or_else(|| Error::invalid("signal.channel", "channel not present in file"))?;
            let n = spec.num_samples().min(ch.len());
            ch[..n].iter().map(|v| v * v).sum::<f64>() / spec.num_samples() as f64
        }
    })
}

/// Blackman-windowed sinc taps for reading a signal at `offset + frac`
/// samples, covering integer offsets `-15..=16` relative to `offset`.
fn sinc_taps(frac: f64) -> [f64; 2 * SINC_HALF_TAPS as usize] {
    let mut h = [0.0; 2 * SINC_HALF_TAPS as usize];
    let half = SINC_HALF_TAPS as f64;
    for (k, tap) in h.iter_mut().enumerate() {
        let j = k as i64 - (SINC_HALF_TAPS - 1);
        let x = frac - j as f64;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let w = 0.42 + 0.5 * (PI * x / half).cos() + 0.08 * (2.0 * PI * x / half).cos();
        *tap = sinc * w;
    }
    h
}

/// Adds `gain * x(n - delay)` to `out[range]` for a delay in (fractional)
/// samples, using 32-tap windowed-sinc interpolation.
pub fn add_delayed(out: &mut [f64], x: &[f64], start: usize, end: usize, delay: f64, gain: f64) {
    let shift = -delay;
    let base = shift.floor();
    let frac = shift - base;
    let taps = sinc_taps(frac);
    let base = base as i64;
    let len = x.len() as i64;
    for (n, y) in out.iter_mut().enumerate().take(end).skip(start) {
        let i0 = n as i64 + base - (SINC_HALF_TAPS - 1);
        let mut acc = 0.0;
        if i0 >= 0 && i0 + taps.len() as i64 <= len {
            let seg = &x[i0 as usize..i0 as usize + taps.len()];
            acc = seg.iter().zip(&taps).map(|(a, b)| a * b).sum();
        } else {
            for (k, t) in taps.iter().enumerate() {
                let i = i0 + k as i64;
                if (0..len).contains(&i) {
                    acc += x[i as usize] * t;
                }
            }
        }
        *y += gain * acc;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub audio: MultichannelAudio,
    pub truth: GroundTruth,
}

/// The clean and noise parts of a scene rendered separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneComponents {
    pub clean: MultichannelAudio,
    pub noise: MultichannelAudio,
    pub truth: GroundTruth,
}

struct Wave {
    source: usize,
    gain: f64,
    delay_s: f64,
    azimuth_offset: f64,
}

pub fn synthesize(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<Scene> {
    let parts = synthesize_components(spec, geometry)?;
    let channels = parts
        .clean
        .channels
        .into_iter()
        .zip(parts.noise.channels)
        .map(|(c, n)| c.into_iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(Scene {
        audio: MultichannelAudio::new(spec.sample_rate, channels)?,
        truth: parts.truth,
    })
}

pub fn synthesize_components(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<SceneComponents> {
    spec.validate()?;
    let n = spec.num_samples();
    let fs = spec.sample_rate;
    let m_count = geometry.num_mics();
    let dry: Vec<Vec<f64>> = (0..spec.sources.len())
        .map(|i| dry_signal(spec, i))
        .collect::<Result<_>>()?;

    let mut waves = Vec::new();
    for (i, s) in spec.sources.iter().enumerate() {
        waves.push(Wave {
            source: i,
            gain: s.gain,
            delay_s: 0.0,
            azimuth_offset: 0.0,
        });
        for r in spec.reflections.iter().filter(|r| r.source == i) {
            waves.push(Wave {
                source: i,
                gain: s.gain * r.gain,
                delay_s: r.delay_ms / 1000.0,
                azimuth_offset: r.azimuth_offset,
            });
        }
    }

    // Segment k spans [center_k - hop/2, center_k + hop/2) around the
    // center sample of STFT frame k.
    let hop = spec.stft.hop as i64;
    let first_center = (spec.stft.window_size / 2) as i64;
    let seg_start = |k: i64| (first_center + k * hop - hop / 2).clamp(0, n as i64) as usize;
    let k_min = -((first_center - hop / 2) / hop) - 1;
    let k_max = (n as i64 - first_center + hop / 2) / hop + 1;

    let clean: Vec<Vec<f64>> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let mut out = vec![0.0; n];
            for wave in &waves {
                let source = &spec.sources[wave.source];
                for k in k_min..=k_max {
                    let (a, b) = (seg_start(k), seg_start(k + 1));
                    if a >= b {
                        continue;
                    }
                    let t = (first_center + k * hop) as f64 / fs;
                    let room = interpolate(&source.trajectory, t) + wave.azimuth_offset;
                    let array_az = room - interpolate(&spec.array_yaw, t);
                    let tau = geometry.delays(array_az)[m];
                    add_delayed(&mut out, &dry[wave.source], a, b, (wave.delay_s + tau) * fs, wave.gain);
                }
            }
            out
        })
        .collect();

    let noise: Vec<Vec<f64>> = (0..m_count)
        .map(|m| {
            if spec.noise_level == 0.0 {
                return vec![0.0; n];
            }
            let mut rng = source_rng(spec.seed, 1_000_000 + m as u64);
            (0..n)
                .map(|_| spec.noise_level * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    Ok(SceneComponents {
        clean: MultichannelAudio::new(fs, clean)?,
        noise: MultichannelAudio::new(fs, noise)?,
        truth: ground_truth(spec),
    })
}

/// Frame-aligned truth: speaker room azimuths, yaw and activity at every
/// STFT frame center.
pub fn ground_truth(spec: &SceneSpec) -> GroundTruth {
    let frames = spec.stft.num_frames(spec.num_samples());
    let fs = spec.sample_rate;
    GroundTruth::new(
        (0..frames)
            .map(|k| {
                let t = (k * spec.stft.hop + spec.stft.window_size / 2) as f64 / fs;
                let speakers: Vec<Speaker> = spec
                    .sources
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.gain > 0.0 && is_active(s, t))
                    .map(|(i, s)| Speaker {
                        id: i as u32,
                        azimuth_deg: normalize_deg(interpolate(&s.trajectory, t)),
                    })
                    .collect();
                TruthFrame {
                    frame_time_s: t,
                    array_yaw_deg: normalize_deg(interpolate(&spec.array_yaw, t)),
                    vad: !speakers.is_empty(),
                    speakers,
                }
            })
            .collect(),
    )
}

/// Expected power of the clean mixture at a microphone (free field, so
/// identical at every mic), treating all waves as mutually uncorrelated.
pub fn expected_signal_power(spec: &SceneSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for (i, s) in spec.sources.iter().enumerate() {
        let refl: f64 = spec
            .reflections
            .iter()
            .filter(|r| r.source == i)
            .map(|r| r.gain * r.gain)
            .sum();
        total += s.gain * s.gain * dry_power(spec, i)? * active_fraction(s, spec.duration) * (1.0 + refl);
    }
    Ok(total)
}

/// Per-microphone SNR in dB implied by the spec. `+inf` without noise.
pub fn snr_at_mics(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<Vec<f64>> {
    let signal = expected_signal_power(spec)?;
    let noise = spec.noise_level * spec.noise_level;
    let snr = if noise == 0.0 { f64::INFINITY } else { 10.0 * (signal / noise).log10() };
    Ok(vec![snr; geometry.num_mics()])
}

/// Noise level giving the requested per-mic SNR.
pub fn noise_level_for_snr(spec: &SceneSpec, snr_db: f64) -> Result<f64> {
    Ok((expected_signal_power(spec)? / 10f64.powf(snr_db / 10.0)).sqrt())
}
