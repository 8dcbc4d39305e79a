//! Block-based evaluation: valid-bin selection, per-block percentile
//! threshold on the DPD measure, head-yaw compensation, circular error and
//! hit ratio, and run-level averages.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doa::BinEstimate;
use crate::error::{Error, Result};
use crate::stft::TfAxes;

pub const DEFAULT_HIT_THRESHOLD_DEG: f64 = 10.0;
pub const TRUTH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub id: u32,
    #[serde(rename = "azimuth_deg_room")]
    pub azimuth_deg: f64,
}

/// Ground truth for one STFT frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub frame_time_s: f64,
    pub array_yaw_deg: f64,
    #[serde(with = "flag")]
    pub vad: bool,
    #[serde(default)]
    pub speakers: Vec<Speaker>,
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("vad must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default = "truth_version")]
    pub version: u32,
    pub frames: Vec<TruthFrame>,
}

fn truth_version() -> u32 {
    TRUTH_FORMAT_VERSION
}

impl GroundTruth {
    pub fn new(frames: Vec<TruthFrame>) -> Self {
        Self {
            version: TRUTH_FORMAT_VERSION,
            frames,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("truth serializes"))?;
        Ok(())
    }

    /// Maps the truth records onto the STFT frame timeline.
    ///
    /// A record set with one entry per frame at matching times is used as
    /// is. Otherwise records are treated as timestamped samples and each
    /// frame takes the latest record at or before its center time. Frames
    /// outside the recorded span (beyond half a hop) are a timeline error.
    pub fn align_to(&self, axes: &TfAxes) -> Result<GroundTruth> {
        let times = axes.frame_times();
        let half_hop = 0.5 * axes.hop as f64 / axes.sample_rate;
        if self.frames.is_empty() {
            return Err(Error::Timeline("ground truth has no records".into()));
        }
        if self.frames.windows(2).any(|w| w[1].frame_time_s < w[0].frame_time_s) {
            return Err(Error::Timeline("ground-truth times are not sorted".into()));
        }
        if self.frames.len() == times.len()
            && self.frames.iter().zip(&times).all(|(r, t)| (r.frame_time_s - t).abs() <= 1e-6)
        {
            return Ok(self.clone());
        }
        let first = self.frames[0].frame_time_s;
        let last = self.frames[self.frames.len() - 1].frame_time_s;
        let outside: Vec<f64> = times
            .iter()
            .copied()
            .filter(|&t| t < first - half_hop || t > last + half_hop)
            .collect();
        if let (Some(lo), Some(hi)) = (outside.first(), outside.last()) {
            return Err(Error::Timeline(format!(
                "{} frame(s) between {lo:.4} s and {hi:.4} s fall outside ground truth span [{first:.4}, {last:.4}] s",
                outside.len()
            )));
        }
        let mut idx = 0;
        let frames = times
            .iter()
            .map(|&t| {
                while idx + 1 < self.frames.len() && self.frames[idx + 1].frame_time_s <= t + 1e-9 {
                    idx += 1;
                }
                TruthFrame {
                    frame_time_s: t,
                    ..self.frames[idx].clone()
                }
            })
            .collect();
        Ok(GroundTruth::new(frames))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub f_low: f64,
    pub f_high: f64,
    /// Block length in seconds.
    pub delta_t: f64,
    /// Percentage of candidate bins kept by the DPD threshold.
    pub p: f64,
    pub hit_threshold_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            f_low: crate::analysis::DEFAULT_F_LOW,
            f_high: crate::analysis::DEFAULT_F_HIGH,
            delta_t: 0.2,
            p: 100.0,
            hit_threshold_deg: DEFAULT_HIT_THRESHOLD_DEG,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.f_low > 0.0 && self.f_low < self.f_high) {
            problems.push("band: need 0 < f_low < f_high".to_string());
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            problems.push("delta_t: must be positive".to_string());
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            problems.push("p: must satisfy 0 < p <= 100".to_string());
        }
        if self.hit_threshold_deg.is_nan() || self.hit_threshold_deg < 0.0 {
            problems.push("hit_threshold_deg: must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Array-frame azimuth rotated into the room frame: `(theta + yaw) mod 360`.
pub fn to_room_frame(theta_deg: f64, yaw_deg: f64) -> f64 {
    normalize_deg(theta_deg + yaw_deg)
}

pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 { 0.0 } else { r }
}

/// Angular distance on the circle, in [0, 180].
pub fn circular_error(psi_deg: f64, theta_deg: f64) -> f64 {
    let d = (psi_deg - theta_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// DPD threshold keeping the top `p` percent of `chis`: the k-th largest
/// value with `k = ceil(p/100 * n)`. Every bin with `chi >= λ` passes, so
/// ties at λ may admit more than k bins. `None` for an empty list.
pub fn percentile_threshold(chis: &[f64], p: f64) -> Option<f64> {
    if chis.is_empty() {
        return None;
    }
    let n = chis.len();
    let k = ((p * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = chis.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(n - k, f64::total_cmp);
    Some(*kth)
}

/// Block containing a frame centered at `time_s`. Blocks are
/// `[b·ΔT, (b+1)·ΔT)` from the recording start, centered at `(b+½)·ΔT`.
pub fn block_index(time_s: f64, delta_t: f64) -> usize {
    (time_s / delta_t).floor().max(0.0) as usize
}

pub fn num_blocks(axes: &TfAxes, delta_t: f64) -> usize {
    if axes.num_frames == 0 {
        return 0;
    }
    block_index(axes.frame_time(axes.num_frames - 1).unwrap_or(0.0), delta_t) + 1
}

/// Smallest circular error to any active speaker after yaw compensation.
/// `None` when nobody is speaking.
pub fn nearest_truth_error(theta_array_deg: f64, truth: &TruthFrame) -> Option<f64> {
    let room = to_room_frame(theta_array_deg, truth.array_yaw_deg);
    truth
        .speakers
        .iter()
        .map(|s| circular_error(s.azimuth_deg, room))
        .min_by(f64::total_cmp)
}

fn in_band(axes: &TfAxes, bin: usize, config: &EvalConfig) -> bool {
    let f = bin as f64 * axes.sample_rate / axes.window_size as f64;
    f >= config.f_low && f <= config.f_high
}

fn candidates<'a>(
    axes: &'a TfAxes,
    estimates: &'a [BinEstimate],
    truth: &'a GroundTruth,
    config: &'a EvalConfig,
    block: usize,
) -> impl Iterator<Item = usize> + 'a {
    let times = axes.frame_times();
    estimates.iter().enumerate().filter_map(move |(i, e)| {
        let t = *times.get(e.frame)?;
        let ok = in_band(axes, e.bin, config)
            && block_index(t, config.delta_t) == block
            && truth.frames.get(e.frame).is_some_and(|r| r.vad);
        ok.then_some(i)
    })
}

/// Indices into `estimates` of the bins that meet all four conditions for
/// `block`: in band, in the block, voice active, and `chi >= λ` where λ is
/// computed from this block's candidates alone.
pub fn select_valid_bins(
    axes: &TfAxes,
    estimates: &[BinEstimate],
    truth: &GroundTruth,
    config: &EvalConfig,
    block: usize,
) -> Vec<usize> {
    let pool: Vec<usize> = candidates(axes, estimates, truth, config, block).collect();
    let chis: Vec<f64> = pool.iter().map(|&i| estimates[i].chi).collect();
    let Some(lambda) = percentile_threshold(&chis, config.p) else {
        return Vec::new();
    };
    pool.into_iter().filter(|&i| estimates[i].chi >= lambda).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub index: usize,
    /// Block center time T in seconds.
    pub center_s: f64,
    pub valid_bin_count: usize,
    pub error_deg: f64,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub e_bar_deg: f64,
    pub h_bar: f64,
    pub total_valid_bins: usize,
    pub blocks_total: usize,
    /// Non-empty blocks only, in time order.
    pub blocks: Vec<BlockReport>,
    pub config: EvalConfig,
}

/// Per-bin error/hit record of an evaluated block, in estimate order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBin {
    pub estimate: usize,
    pub error_deg: f64,
    pub hit: bool,
}

/// Valid bins of one block with their errors. Selected bins whose frame
/// has no active speaker are dropped.
pub fn score_block(
    axes: &TfAxes,
    estimates: &[BinEstimate],
    truth: &GroundTruth,
    config: &EvalConfig,
    block: usize,
) -> Vec<ScoredBin> {
    select_valid_bins(axes, estimates, truth, config, block)
        .into_iter()
        .filter_map(|i| {
            let e = &estimates[i];
            let err = nearest_truth_error(e.theta_deg, &truth.frames[e.frame])?;
            Some(ScoredBin {
                estimate: i,
                error_deg: err,
                hit: err <= config.hit_threshold_deg,
            })
        })
        .collect()
}

fn check_timeline(axes: &TfAxes, estimates: &[BinEstimate], truth: &GroundTruth) -> Result<()> {
    if truth.frames.len() != axes.num_frames {
        return Err(Error::Timeline(format!(
            "ground truth has {} frames, STFT has {} (frames {}..{} unmatched)",
            truth.frames.len(),
            axes.num_frames,
            truth.frames.len().min(axes.num_frames),
            truth.frames.len().max(axes.num_frames)
        )));
    }
    if let Some(e) = estimates.iter().find(|e| e.frame >= axes.num_frames) {
        return Err(Error::Timeline(format!(
            "estimate at frame {} beyond last frame {}",
            e.frame,
            axes.num_frames.saturating_sub(1)
        )));
    }
    Ok(())
}

pub fn evaluate_run(
    axes: &TfAxes,
    estimates: &[BinEstimate],
    truth: &GroundTruth,
    config: &EvalConfig,
) -> Result<RunReport> {
    config.validate()?;
    check_timeline(axes, estimates, truth)?;
    let times = axes.frame_times();
    let blocks_total = num_blocks(axes, config.delta_t);

    // Bucket once by block instead of rescanning per block.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); blocks_total];
    for (i, e) in estimates.iter().enumerate() {
        if in_band(axes, e.bin, config) && truth.frames[e.frame].vad {
            buckets[block_index(times[e.frame], config.delta_t)].push(i);
        }
    }

    let mut blocks = Vec::new();
    for (b, pool) in buckets.iter().enumerate() {
        let chis: Vec<f64> = pool.iter().map(|&i| estimates[i].chi).collect();
        let Some(lambda) = percentile_threshold(&chis, config.p) else { continue };
        let mut count = 0usize;
        let mut err_sum = 0.0;
        let mut hits = 0usize;
        for &i in pool {
            let e = &estimates[i];
            if e.chi < lambda {
                continue;
            }
            let Some(err) = nearest_truth_error(e.theta_deg, &truth.frames[e.frame]) else { continue };
            count += 1;
            err_sum += err;
            hits += usize::from(err <= config.hit_threshold_deg);
        }
        if count > 0 {
            blocks.push(BlockReport {
                index: b,
                center_s: (b as f64 + 0.5) * config.delta_t,
                valid_bin_count: count,
                error_deg: err_sum / count as f64,
                hit_ratio: hits as f64 / count as f64,
            });
        }
    }
    if blocks.is_empty() {
        return Err(Error::NoValidData);
    }
    let n = blocks.len() as f64;
    Ok(RunReport {
        e_bar_deg: blocks.iter().map(|b| b.error_deg).sum::<f64>() / n,
        h_bar: blocks.iter().map(|b| b.hit_ratio).sum::<f64>() / n,
        total_valid_bins: blocks.iter().map(|b| b.valid_bin_count).sum(),
        blocks_total,
        blocks,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doa::Algorithm;

    fn axes(frames: usize) -> TfAxes {
        TfAxes {
            sample_rate: 48_000.0,
            window_size: 1024,
            hop: 512,
            num_frames: frames,
        }
    }

    fn truth_for(axes: &TfAxes, speakers: &[f64], vad: bool) -> GroundTruth {
        GroundTruth::new(
            axes.frame_times()
                .into_iter()
                .map(|t| TruthFrame {
                    frame_time_s: t,
                    array_yaw_deg: 0.0,
                    vad,
                    speakers: speakers
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| Speaker { id: i as u32, azimuth_deg: a })
                        .collect(),
                })
                .collect(),
        )
    }

    fn est(frame: usize, bin: usize, theta: f64, chi: f64) -> BinEstimate {
        BinEstimate { frame, bin, theta_deg: theta, chi, algorithm: Algorithm::Lsdd }
    }

    #[test]
    fn room_frame_rotation() {
        assert_eq!(to_room_frame(123.0, 0.0), 123.0);
        assert_eq!(to_room_frame(350.0, 20.0), 10.0);
        assert_eq!(to_room_frame(10.0, -20.0), 350.0);
    }

    #[test]
    fn circular_errors() {
        assert_eq!(circular_error(90.0, 90.0), 0.0);
        assert_eq!(circular_error(2.0, 358.0), 4.0);
        assert_eq!(circular_error(0.0, 180.0), 180.0);
        assert_eq!(circular_error(-90.0, 270.0), 0.0);
    }

    #[test]
    fn threshold_cases() {
        let chis: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_threshold(&chis, 100.0), Some(1.0));
        assert_eq!(percentile_threshold(&chis, 10.0), Some(91.0));
        assert_eq!(chis.iter().filter(|&&c| c >= 91.0).count(), 10);
        assert_eq!(percentile_threshold(&[0.3; 50], 1.0), Some(0.3));
        assert_eq!(percentile_threshold(&[], 50.0), None);
        // tiny p still keeps one bin
        assert_eq!(percentile_threshold(&chis, 0.001), Some(100.0));
    }

    #[test]
    fn nearest_speaker_rule() {
        let frame = TruthFrame {
            frame_time_s: 0.0,
            array_yaw_deg: 0.0,
            vad: true,
            speakers: vec![Speaker { id: 0, azimuth_deg: 10.0 }, Speaker { id: 1, azimuth_deg: 200.0 }],
        };
        assert_eq!(nearest_truth_error(15.0, &frame), Some(5.0));
        let alone = TruthFrame { speakers: vec![frame.speakers[1].clone()], ..frame.clone() };
        assert_eq!(nearest_truth_error(15.0, &alone), Some(circular_error(200.0, 15.0)));
        let silent = TruthFrame { speakers: vec![], ..frame };
        assert_eq!(nearest_truth_error(15.0, &silent), None);
    }

    #[test]
    fn silent_block_is_empty() {
        let ax = axes(40);
        let truth = truth_for(&ax, &[30.0], false);
        let estimates: Vec<_> = (0..40).map(|t| est(t, 30, 30.0, 1.0)).collect();
        let cfg = EvalConfig::default();
        assert!(select_valid_bins(&ax, &estimates, &truth, &cfg, 0).is_empty());
        assert!(matches!(evaluate_run(&ax, &estimates, &truth, &cfg), Err(Error::NoValidData)));
    }

    #[test]
    fn two_bin_block_arithmetic() {
        let ax = axes(10);
        let truth = truth_for(&ax, &[100.0], true);
        let estimates = vec![est(0, 30, 105.0, 0.9), est(1, 30, 85.0, 0.8)];
        let cfg = EvalConfig { delta_t: 10.0, ..EvalConfig::default() };
        let report = evaluate_run(&ax, &estimates, &truth, &cfg).unwrap();
        assert_eq!(report.blocks.len(), 1);
        assert_eq!(report.blocks[0].error_deg, 10.0);
        assert_eq!(report.blocks[0].hit_ratio, 0.5);
        assert_eq!(report.e_bar_deg, 10.0);
        assert_eq!(report.h_bar, 0.5);
    }

    #[test]
    fn perfect_estimates() {
        let ax = axes(200);
        let truth = truth_for(&ax, &[48.0], true);
        let estimates: Vec<_> = (0..200)
            .flat_map(|t| (24..43).map(move |b| est(t, b, 48.0, (t * b % 17) as f64)))
            .collect();
        for p in [1.0, 10.0, 100.0] {
            let cfg = EvalConfig { p, ..EvalConfig::default() };
            let r = evaluate_run(&ax, &estimates, &truth, &cfg).unwrap();
            assert_eq!(r.e_bar_deg, 0.0);
            assert_eq!(r.h_bar, 1.0);
        }
    }

    #[test]
    fn out_of_band_bins_ignored() {
        let ax = axes(10);
        let truth = truth_for(&ax, &[0.0], true);
        // bin 10 = 468.75 Hz, bin 50 = 2343.75 Hz
        let estimates = vec![est(0, 10, 0.0, 1.0), est(0, 50, 0.0, 1.0)];
        assert!(select_valid_bins(&ax, &estimates, &truth, &EvalConfig::default(), 0).is_empty());
    }

    #[test]
    fn timeline_mismatch_names_range() {
        let ax = axes(10);
        let truth = truth_for(&axes(8), &[0.0], true);
        let err = evaluate_run(&ax, &[est(0, 30, 0.0, 1.0)], &truth, &EvalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("frames 8..10"), "{err}");
    }

    #[test]
    fn align_resamples_timestamped_truth() {
        let ax = axes(100);
        let coarse = GroundTruth::new(
            (0..=12)
                .map(|i| TruthFrame {
                    frame_time_s: i as f64 * 0.1,
                    array_yaw_deg: i as f64,
                    vad: i % 2 == 0,
                    speakers: vec![],
                })
                .collect(),
        );
        let aligned = coarse.align_to(&ax).unwrap();
        assert_eq!(aligned.frames.len(), 100);
        for (f, t) in aligned.frames.iter().zip(ax.frame_times()) {
            assert_eq!(f.frame_time_s, t);
            assert_eq!(f.array_yaw_deg, (t / 0.1 + 1e-9).floor());
        }
        let short = GroundTruth::new(coarse.frames[..3].to_vec());
        assert!(matches!(short.align_to(&ax), Err(Error::Timeline(_))));
    }

    #[test]
    fn truth_json_round_trip_uses_int_flags() {
        let ax = axes(3);
        let truth = truth_for(&ax, &[12.0], true);
        let text = serde_json::to_string(&truth).unwrap();
        assert!(text.contains("\"vad\":1"));
        assert!(text.contains("azimuth_deg_room"));
        let back: GroundTruth = serde_json::from_str(&text).unwrap();
        assert_eq!(back, truth);
        assert!(serde_json::from_str::<GroundTruth>(&text.replace("\"vad\":1", "\"vad\":2")).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig { p: 0.0, ..EvalConfig::default() }.validate().is_err());
        assert!(EvalConfig { p: 101.0, ..EvalConfig::default() }.validate().is_err());
        assert!(EvalConfig { delta_t: 0.0, ..EvalConfig::default() }.validate().is_err());
        assert!(EvalConfig { f_low: 2000.0, f_high: 1000.0, ..EvalConfig::default() }.validate().is_err());
    }
}
