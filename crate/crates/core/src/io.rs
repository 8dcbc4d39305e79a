//! File formats: WAV audio, per-bin estimate tables, sweep tables, band
//! maps and measured steering sets.
//!
//! CSV outputs start with a `# dpdloc <kind> v<N>` header comment; readers
//! check it before parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::Estimates;
use crate::array::{BandMap, DoaGrid, SteeringSet};
use crate::doa::{Algorithm, BinEstimate};
use crate::error::{Error, Result};
use crate::stft::{MultichannelAudio, TfAxes};

pub const ESTIMATES_HEADER: &str = "# dpdloc estimates v1";
pub const SWEEP_HEADER: &str = "# dpdloc sweep v1";
pub const BAND_MAP_HEADER: &str = "# dpdloc band-map v1";

/// Reads PCM (16/24/32-bit integer) or 32-bit float WAV, scaling integer
/// samples to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelAudio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 2f64.powi(bits as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::invalid("wav", format!("unsupported sample format {format:?}/{bits} bit")));
        }
    };
    let frames = interleaved.len() / m.max(1);
    let mut channels = vec![Vec::with_capacity(frames); m];
    for frame in interleaved.chunks_exact(m) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    MultichannelAudio::new(f64::from(spec.sample_rate), channels)
}

/// Writes 32-bit float WAV with one channel per microphone.
pub fn write_wav(path: impl AsRef<Path>, audio: &MultichannelAudio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..audio.num_samples() {
        for ch in &audio.channels {
            writer.write_sample(ch[i] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn header_values(line: &str) -> BTreeMap<String, String> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn estimates_to_csv(axes: &TfAxes, estimates: &Estimates) -> String {
    let mut out = String::new();
    writeln!(out, "{ESTIMATES_HEADER}").unwrap();
    writeln!(
        out,
        "# sample_rate={} window_size={} hop={} num_frames={}",
        axes.sample_rate, axes.window_size, axes.hop, axes.num_frames
    )
    .unwrap();
    writeln!(out, "frame,time_s,bin,freq_hz,algorithm,theta_deg,chi").unwrap();
    let times = axes.frame_times();
    let freqs = axes.bin_frequencies();
    for e in estimates.all() {
        writeln!(
            out,
            "{},{:.6},{},{},{},{},{:e}",
            e.frame, times[e.frame], e.bin, freqs[e.bin], e.algorithm, e.theta_deg, e.chi
        )
        .unwrap();
    }
    out
}

pub fn write_estimates(path: impl AsRef<Path>, axes: &TfAxes, estimates: &Estimates) -> Result<()> {
    std::fs::write(path, estimates_to_csv(axes, estimates))?;
    Ok(())
}

pub fn read_estimates(path: impl AsRef<Path>) -> Result<(TfAxes, Estimates)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(ESTIMATES_HEADER) {
        return Err(parse_err(path, format!("missing '{ESTIMATES_HEADER}' header")));
    }
    let meta = header_values(lines.next().unwrap_or_default());
    let get = |k: &str| -> Result<f64> {
        meta.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(path, format!("missing header field {k}")))
    };
    let axes = TfAxes {
        sample_rate: get("sample_rate")?,
        window_size: get("window_size")? as usize,
        hop: get("hop")? as usize,
        num_frames: get("num_frames")? as usize,
    };
    lines.next();
    let mut estimates = Estimates::default();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || parse_err(path, format!("malformed row {}: '{line}'", i + 4));
        if cols.len() != 7 {
            return Err(bad());
        }
        let e = BinEstimate {
            frame: cols[0].parse().map_err(|_| bad())?,
            bin: cols[2].parse().map_err(|_| bad())?,
            algorithm: cols[4].parse().map_err(|_| bad())?,
            theta_deg: cols[5].parse().map_err(|_| bad())?,
            chi: cols[6].parse().map_err(|_| bad())?,
        };
        estimates.by_algorithm.entry(e.algorithm).or_default().push(e);
    }
    Ok((axes, estimates))
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub delta_t_ms: f64,
    pub algorithm: Algorithm,
    /// `None` when no block had valid data.
    pub e_bar_deg: Option<f64>,
    pub h_bar: Option<f64>,
    pub smoothing_r: usize,
    pub valid_bins: usize,
    pub blocks: usize,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
    let mut out = String::new();
    writeln!(out, "{SWEEP_HEADER}").unwrap();
    writeln!(out, "p,delta_T_ms,algorithm,E_bar_deg,H_bar_ratio,smoothing_r,valid_bins,blocks").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.p,
            r.delta_t_ms,
            r.algorithm,
            fmt(r.e_bar_deg),
            fmt(r.h_bar),
            r.smoothing_r,
            r.valid_bins,
            r.blocks
        )
        .unwrap();
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let path = Path::new("<sweep>");
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(parse_err(path, format!("missing '{SWEEP_HEADER}' header")));
    }
    lines.next();
    let opt = |s: &str| -> std::result::Result<Option<f64>, ()> {
        if s == "nan" { Ok(None) } else { s.parse().map(Some).map_err(|_| ()) }
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            let bad = |_| parse_err(path, format!("malformed row '{line}'"));
            if c.len() != 8 {
                return Err(bad(()));
            }
            Ok(SweepRow {
                p: c[0].parse().map_err(|_| bad(()))?,
                delta_t_ms: c[1].parse().map_err(|_| bad(()))?,
                algorithm: c[2].parse().map_err(|_| bad(()))?,
                e_bar_deg: opt(c[3]).map_err(bad)?,
                h_bar: opt(c[4]).map_err(bad)?,
                smoothing_r: c[5].parse().map_err(|_| bad(()))?,
                valid_bins: c[6].parse().map_err(|_| bad(()))?,
                blocks: c[7].parse().map_err(|_| bad(()))?,
            })
        })
        .collect()
}

pub fn band_map_to_csv(map: &BandMap) -> String {
    let mut out = String::new();
    writeln!(out, "{BAND_MAP_HEADER} reference_azimuth_deg={}", map.reference_azimuth).unwrap();
    write!(out, "freq_hz").unwrap();
    for a in &map.azimuths {
        write!(out, ",az_{a}").unwrap();
    }
    writeln!(out).unwrap();
    for (f, row) in map.frequencies.iter().zip(&map.values) {
        write!(out, "{f}").unwrap();
        for v in row {
            write!(out, ",{v:.9}").unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

/// Frequencies, azimuths, and one row of similarities per frequency.
pub type BandMapTable = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

pub fn parse_band_map_csv(text: &str) -> Result<BandMapTable> {
    let path = Path::new("<band-map>");
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with(BAND_MAP_HEADER)) {
        return Err(parse_err(path, "missing band-map header"));
    }
    let azimuths = lines
        .next()
        .ok_or_else(|| parse_err(path, "missing column row"))?
        .split(',')
        .skip(1)
        .map(|c| c.trim_start_matches("az_").parse().map_err(|_| parse_err(path, "bad azimuth column")))
        .collect::<Result<Vec<f64>>>()?;
    let mut freqs = Vec::new();
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let vals = line
            .split(',')
            .map(|c| c.parse().map_err(|_| parse_err(path, format!("bad row '{line}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != azimuths.len() + 1 {
            return Err(parse_err(path, format!("bad row '{line}'")));
        }
        freqs.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((freqs, azimuths, rows))
}

/// Measured steering responses: one entry per (frequency, azimuth) with
/// the M complex responses as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSteering {
    pub entries: Vec<MeasuredEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredEntry {
    pub frequency_hz: f64,
    pub azimuth_deg: f64,
    pub response: Vec<[f64; 2]>,
}

impl MeasuredSteering {
    pub fn from_set(set: &SteeringSet, grid: &DoaGrid) -> Self {
        let mut entries = Vec::new();
        for (fi, &f) in set.frequencies().iter().enumerate() {
            for (l, &az) in grid.azimuths().iter().enumerate() {
                entries.push(MeasuredEntry {
                    frequency_hz: f,
                    azimuth_deg: az,
                    response: set.vector(fi, l).iter().map(|z| [z.re, z.im]).collect(),
                });
            }
        }
        Self { entries }
    }

    /// Builds a steering set over `grid`; every (frequency, grid azimuth)
    /// pair present for some frequency must be present for all.
    pub fn to_set(&self, grid: &DoaGrid) -> Result<SteeringSet> {
        type Row = Vec<Option<Vec<Complex64>>>;
        let mut by_freq: BTreeMap<u64, (f64, Row)> = BTreeMap::new();
        for e in &self.entries {
            let l = grid.index_of(e.azimuth_deg)?;
            let slot = by_freq
                .entry(e.frequency_hz.to_bits())
                .or_insert_with(|| (e.frequency_hz, vec![None; grid.len()]));
            slot.1[l] = Some(e.response.iter().map(|&[re, im]| Complex64::new(re, im)).collect());
        }
        let mut freqs = Vec::new();
        let mut responses = Vec::new();
        let mut sorted: Vec<_> = by_freq.into_values().collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (f, table) in sorted {
            let table = table
                .into_iter()
                .enumerate()
                .map(|(l, v)| {
                    v.ok_or_else(|| {
                        Error::invalid("steering", format!("no response for {f} Hz at {} deg", grid.azimuth(l)))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            freqs.push(f);
            responses.push(table);
        }
        SteeringSet::from_responses(freqs, responses)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("steering serializes"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;

    #[test]
    fn wav_int_formats_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [16u16, 24, 32] {
            let path = dir.path().join(format!("i{bits}.wav"));
            let spec = hound::WavSpec {
                channels: 2,
                sample_rate: 16_000,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let full = (1i64 << (bits - 1)) as f64;
            let mut w = hound::WavWriter::create(&path, spec).unwrap();
            for i in 0..100 {
                w.write_sample((full * 0.5) as i32 * if i % 2 == 0 { 1 } else { -1 }).unwrap();
            }
            w.finalize().unwrap();
            let audio = read_wav(&path).unwrap();
            assert_eq!(audio.num_channels(), 2);
            assert_eq!(audio.num_samples(), 50);
            assert_eq!(audio.sample_rate, 16_000.0);
            assert!(audio.channels[0].iter().all(|&v| (v - 0.5).abs() < 1e-4));
            assert!(audio.channels[1].iter().all(|&v| (v + 0.5).abs() < 1e-4));
        }
    }

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let audio = MultichannelAudio::new(48_000.0, vec![vec![0.25, -0.5, 0.125]; 6]).unwrap();
        write_wav(&path, &audio).unwrap();
        assert_eq!(read_wav(&path).unwrap(), audio);
    }

    #[test]
    fn estimates_csv_round_trip() {
        let axes = TfAxes { sample_rate: 48_000.0, window_size: 1024, hop: 512, num_frames: 3 };
        let mut est = Estimates::default();
        est.by_algorithm.insert(
            Algorithm::Dsdde,
            vec![BinEstimate { frame: 2, bin: 30, theta_deg: 354.0, chi: 1.234_567_890_123e-7, algorithm: Algorithm::Dsdde }],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_estimates(&path, &axes, &est).unwrap();
        let (ax2, est2) = read_estimates(&path).unwrap();
        assert_eq!(ax2, axes);
        assert_eq!(est2, est);
    }

    #[test]
    fn measured_steering_round_trip() {
        let g = ArrayGeometry::glasses_fixture();
        let grid = DoaGrid::default();
        let set = SteeringSet::build(&g, &grid, &[1125.0, 1171.875]).unwrap();
        let measured = MeasuredSteering::from_set(&set, &grid);
        assert_eq!(measured.to_set(&grid).unwrap(), set);
        let mut partial = measured.clone();
        partial.entries.pop();
        assert!(partial.to_set(&grid).is_err());
    }

    #[test]
    fn headers_are_checked() {
        assert!(parse_sweep_csv("p,delta\n").is_err());
        assert!(parse_band_map_csv("freq_hz\n").is_err());
    }
}
