//! Multichannel short-time Fourier transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    pub sample_rate: f64,
    /// One vector per channel, all of equal length.
    pub channels: Vec<Vec<f64>>,
}

impl MultichannelAudio {
    pub fn new(sample_rate: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::invalid("channels", "at least one channel required"));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channels", "all channels must have equal length"));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HannKind {
    /// DFT-even window, `0.5 - 0.5 cos(2πn/N)`.
    #[default]
    Periodic,
    /// `0.5 - 0.5 cos(2πn/(N-1))`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: HannKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop: 512,
            window: HannKind::Periodic,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || !self.window_size.is_multiple_of(2) {
            return Err(Error::invalid("window_size", "must be even and at least 2"));
        }
        if self.hop == 0 || self.hop > self.window_size {
            return Err(Error::invalid("hop", "must satisfy 0 < hop <= window_size"));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frames available for `num_samples`; trailing partial frames are dropped.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_size {
            0
        } else {
            (num_samples - self.window_size) / self.hop + 1
        }
    }

    pub fn window(&self) -> Vec<f64> {
        hann(self.window_size, self.window)
    }
}

pub fn hann(len: usize, kind: HannKind) -> Vec<f64> {
    let denom = match kind {
        HannKind::Periodic => len as f64,
        HannKind::Symmetric => (len - 1).max(1) as f64,
    };
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Time and frequency axes of a [`TfGrid`], detached from its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfAxes {
    pub sample_rate: f64,
    pub window_size: usize,
    pub hop: usize,
    pub num_frames: usize,
}

impl TfAxes {
    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn bin_frequency(&self, index: usize) -> Result<f64> {
        if index >= self.num_bins() {
            return Err(Error::OutOfRange {
                index,
                len: self.num_bins(),
            });
        }
        Ok(index as f64 * self.sample_rate / self.window_size as f64)
    }

    /// Center time of frame `index`, in seconds from the recording start.
    pub fn frame_time(&self, index: usize) -> Result<f64> {
        if index >= self.num_frames {
            return Err(Error::OutOfRange {
                index,
                len: self.num_frames,
            });
        }
        Ok(self.first_frame_time() + index as f64 * self.hop as f64 / self.sample_rate)
    }

    pub fn first_frame_time(&self) -> f64 {
        self.window_size as f64 / 2.0 / self.sample_rate
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.num_frames)
            .map(|t| self.first_frame_time() + t as f64 * self.hop as f64 / self.sample_rate)
            .collect()
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.num_bins())
            .map(|f| f as f64 * self.sample_rate / self.window_size as f64)
            .collect()
    }

    /// Bins whose center frequency lies in `[f_low, f_high]`.
    pub fn band_bins(&self, f_low: f64, f_high: f64) -> std::ops::Range<usize> {
        let df = self.sample_rate / self.window_size as f64;
        let lo = ((f_low / df) - 1e-9).ceil().max(0.0) as usize;
        let hi = (((f_high / df) + 1e-9).floor() as usize + 1).min(self.num_bins());
        lo.min(hi)..hi
    }
}

/// Complex STFT of every channel. Logically indexed (channel, frame, bin);
/// stored frame-major then bin then channel so that each bin's M-vector
/// snapshot is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    axes: TfAxes,
    num_channels: usize,
    data: Vec<Complex64>,
}

impl TfGrid {
    pub fn axes(&self) -> &TfAxes {
        &self.axes
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_frames(&self) -> usize {
        self.axes.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.axes.num_bins()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        self.axes.frame_times()
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        self.axes.bin_frequencies()
    }

    pub fn bin_frequency(&self, index: usize) -> Result<f64> {
        self.axes.bin_frequency(index)
    }

    pub fn frame_time(&self, index: usize) -> Result<f64> {
        self.axes.frame_time(index)
    }

    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.snapshot(frame, bin)[channel]
    }

    /// The M-vector x(t, f).
    pub fn snapshot(&self, frame: usize, bin: usize) -> &[Complex64] {
        let start = (frame * self.num_bins() + bin) * self.num_channels;
        &self.data[start..start + self.num_channels]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let len = self.num_bins() * self.num_channels;
        &self.data[frame * len..(frame + 1) * len]
    }
}

pub fn stft(audio: &MultichannelAudio, config: &StftConfig) -> Result<TfGrid> {
    config.validate()?;
    if audio.channels.is_empty() {
        return Err(Error::invalid("channels", "at least one channel required"));
    }
    let n = audio.num_samples();
    if n < config.window_size {
        return Err(Error::InsufficientSamples {
            needed: config.window_size,
            got: n,
        });
    }
    let num_frames = config.num_frames(n);
    let num_bins = config.num_bins();
    let m_count = audio.num_channels();
    let window = config.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.window_size);

    let mut data = vec![Complex64::new(0.0, 0.0); num_frames * num_bins * m_count];
    data.par_chunks_mut(num_bins * m_count)
        .enumerate()
        .for_each(|(t, out)| {
            let start = t * config.hop;
            let mut buf = vec![Complex64::new(0.0, 0.0); config.window_size];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for (m, channel) in audio.channels.iter().enumerate() {
                for ((b, &s), &w) in buf.iter_mut().zip(&channel[start..start + config.window_size]).zip(&window) {
                    *b = Complex64::new(s * w, 0.0);
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for (f, &z) in buf[..num_bins].iter().enumerate() {
                    out[f * m_count + m] = z;
                }
            }
        });

    Ok(TfGrid {
        axes: TfAxes {
            sample_rate: audio.sample_rate,
            window_size: config.window_size,
            hop: config.hop,
            num_frames,
        },
        num_channels: m_count,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mono(samples: Vec<f64>) -> MultichannelAudio {
        MultichannelAudio::new(48_000.0, vec![samples]).unwrap()
    }

    #[test]
    fn zeros_in_zeros_out() {
        let grid = stft(&mono(vec![0.0; 4096]), &StftConfig::default()).unwrap();
        assert_eq!(grid.num_frames(), 7);
        assert_eq!(grid.num_bins(), 513);
        assert!(grid.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn bin_aligned_sinusoid_peaks_at_its_bin() {
        let k = 37;
        let fs = 48_000.0;
        let f = k as f64 * fs / 1024.0;
        let x: Vec<f64> = (0..8192).map(|n| (2.0 * PI * f * n as f64 / fs).sin()).collect();
        let grid = stft(&mono(x), &StftConfig::default()).unwrap();
        for t in 0..grid.num_frames() {
            let peak = (0..grid.num_bins())
                .max_by(|&a, &b| grid.get(0, t, a).norm().total_cmp(&grid.get(0, t, b).norm()))
                .unwrap();
            assert_eq!(peak, k);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = StftConfig::default();
        let grid = stft(&mono(x.clone()), &cfg).unwrap();
        let w = cfg.window();
        let time_energy: f64 = x.iter().zip(&w).map(|(s, w)| (s * w).powi(2)).sum();
        let n = cfg.window_size;
        let freq_energy: f64 = (0..grid.num_bins())
            .map(|f| {
                let e = grid.get(0, 0, f).norm_sqr();
                if f == 0 || f == n / 2 { e } else { 2.0 * e }
            })
            .sum::<f64>()
            / n as f64;
        assert!((freq_energy - time_energy).abs() / time_energy < 1e-6);
    }

    #[test]
    fn axes_arithmetic() {
        let grid = stft(&mono(vec![0.0; 48_000]), &StftConfig::default()).unwrap();
        assert_eq!(grid.bin_frequency(0).unwrap(), 0.0);
        assert_eq!(grid.bin_frequency(512).unwrap(), 24_000.0);
        assert!(grid.bin_frequency(513).is_err());
        let start = grid.frame_time(0).unwrap();
        assert!((grid.frame_time(10).unwrap() - start - 0.106_666_666_666_666_67).abs() < 1e-12);
        assert!(grid.frame_time(grid.num_frames()).is_err());
    }

    #[test]
    fn too_short_input_is_rejected() {
        let err = stft(&mono(vec![0.0; 100]), &StftConfig::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient samples"));
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig { window_size: 1023, hop: 512, window: HannKind::Periodic }.validate().is_err());
        assert!(StftConfig { window_size: 1024, hop: 0, window: HannKind::Periodic }.validate().is_err());
        assert!(StftConfig { window_size: 1024, hop: 2048, window: HannKind::Periodic }.validate().is_err());
    }

    #[test]
    fn band_bins_inclusive() {
        let axes = TfAxes { sample_rate: 48_000.0, window_size: 1024, hop: 512, num_frames: 1 };
        // 46.875 Hz spacing: 1100 Hz -> bin 24 (1125), 2000 Hz -> bin 42 (1968.75)
        assert_eq!(axes.band_bins(1100.0, 2000.0), 24..43);
        assert_eq!(axes.band_bins(1125.0, 1125.0), 24..25);
    }
}
