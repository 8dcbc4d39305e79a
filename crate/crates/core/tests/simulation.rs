//! Simulator-driven end-to-end checks.

use dpdloc::eval::{block_index, circular_error, percentile_threshold, to_room_frame};
use dpdloc::sim::{synthesize_components, SignalKind, SourceSpec};
use dpdloc::*;

fn noise_source(trajectory: Vec<[f64; 2]>) -> SourceSpec {
    SourceSpec {
        signal: SignalKind::BandlimitedNoise {
            f_low: 300.0,
            f_high: 4000.0,
            envelope_hz: None,
        },
        trajectory,
        gain: 1.0,
        active: None,
    }
}

fn scene(duration: f64, sources: Vec<SourceSpec>) -> SceneSpec {
    SceneSpec {
        duration,
        sample_rate: 48_000.0,
        seed: 11,
        noise_level: 0.0,
        geometry: None,
        stft: StftConfig::default(),
        sources,
        reflections: vec![],
        array_yaw: vec![],
    }
}

fn analyze(spec: &SceneSpec, algorithm: Algorithm) -> (TfAxes, Vec<BinEstimate>, GroundTruth) {
    let g = ArrayGeometry::glasses_fixture();
    let s = synthesize(spec, &g).unwrap();
    let tf = stft(&s.audio, &spec.stft).unwrap();
    let cfg = AnalysisConfig {
        algorithms: vec![algorithm],
        ..Default::default()
    };
    let est = Analyzer::free_field(&g, DoaGrid::default(), tf.axes(), cfg)
        .unwrap()
        .analyze(&tf)
        .unwrap();
    (tf.axes().clone(), est.get(algorithm).to_vec(), s.truth)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn moving_source_gives_monotone_block_medians() {
    let spec = scene(4.0, vec![noise_source(vec![[0.0, 0.0], [4.0, 90.0]])]);
    let (axes, est, _) = analyze(&spec, Algorithm::Lsdd);
    let times = axes.frame_times();
    let dt = 0.5;
    let mut medians = Vec::new();
    for b in 0..8 {
        let block: Vec<&BinEstimate> = est.iter().filter(|e| block_index(times[e.frame], dt) == b).collect();
        let chis: Vec<f64> = block.iter().map(|e| e.chi).collect();
        let lambda = percentile_threshold(&chis, 20.0).unwrap();
        medians.push(median(block.iter().filter(|e| e.chi >= lambda).map(|e| e.theta_deg).collect()));
    }
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
    assert!(medians[0] <= 12.0 && medians[7] >= 78.0, "{medians:?}");
}

#[test]
fn rotating_array_keeps_room_frame_estimates_fixed() {
    let mut spec = scene(3.0, vec![noise_source(vec![[0.0, 120.0]])]);
    spec.array_yaw = vec![[0.0, 0.0], [3.0, 90.0]];
    let (axes, est, truth) = analyze(&spec, Algorithm::Lsdd);
    let report = evaluate_run(
        &axes,
        &est,
        &truth,
        &EvalConfig {
            p: 20.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.e_bar_deg < 6.0, "{}", report.e_bar_deg);
    // Array-frame estimates move with the yaw; room-frame ones do not.
    let first = est.iter().filter(|e| e.frame < 10).map(|e| e.theta_deg).collect::<Vec<_>>();
    let last = est.iter().filter(|e| e.frame + 10 >= axes.num_frames).map(|e| e.theta_deg).collect::<Vec<_>>();
    assert!(circular_error(median(first), median(last)) > 60.0);
    let room: Vec<f64> = est
        .iter()
        .filter(|e| e.chi > 0.95)
        .map(|e| to_room_frame(e.theta_deg, truth.frames[e.frame].array_yaw_deg))
        .collect();
    assert!(circular_error(median(room), 120.0) <= 6.0);
}

#[test]
fn noise_only_scene_has_no_valid_data() {
    let mut spec = scene(1.0, vec![]);
    spec.noise_level = 0.1;
    let (axes, est, truth) = analyze(&spec, Algorithm::Dsdde);
    assert!(!est.is_empty());
    assert!(truth.frames.iter().all(|f| !f.vad));
    assert!(matches!(
        evaluate_run(&axes, &est, &truth, &EvalConfig::default()),
        Err(Error::NoValidData)
    ));
}

#[test]
fn measured_snr_matches_requested() {
    let g = ArrayGeometry::glasses_fixture();
    for target in [0.0, 6.0, -3.0] {
        let mut spec = scene(10.0, vec![noise_source(vec![[0.0, 45.0]]), noise_source(vec![[0.0, 250.0]])]);
        spec.sources[1].gain = 0.5;
        spec.noise_level = dpdloc::sim::noise_level_for_snr(&spec, target).unwrap();
        let c = synthesize_components(&spec, &g).unwrap();
        for (s, n) in c.clean.channels.iter().zip(&c.noise.channels) {
            let ps = s.iter().map(|v| v * v).sum::<f64>();
            let pn = n.iter().map(|v| v * v).sum::<f64>();
            let snr = 10.0 * (ps / pn).log10();
            assert!((snr - target).abs() < 0.5, "target {target} measured {snr}");
        }
    }
}

/// Straight-line recomputation of the block metrics: sort, cut, and take
/// the nearest speaker for each surviving bin.
fn brute_force_e_bar(axes: &TfAxes, est: &[BinEstimate], truth: &GroundTruth, cfg: &EvalConfig) -> Option<(f64, f64)> {
    let times = axes.frame_times();
    let df = axes.sample_rate / axes.window_size as f64;
    let blocks = block_index(times[times.len() - 1], cfg.delta_t) + 1;
    let mut errs = Vec::new();
    let mut hits = Vec::new();
    for b in 0..blocks {
        let mut pool: Vec<&BinEstimate> = est
            .iter()
            .filter(|e| {
                let f = e.bin as f64 * df;
                f >= cfg.f_low && f <= cfg.f_high && truth.frames[e.frame].vad && (times[e.frame] / cfg.delta_t).floor() as usize == b
            })
            .collect();
        if pool.is_empty() {
            continue;
        }
        pool.sort_by(|a, b| b.chi.total_cmp(&a.chi));
        let k = ((cfg.p / 100.0 * pool.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        let lambda = pool[k - 1].chi;
        let mut block_errs = Vec::new();
        for e in pool.iter().filter(|e| e.chi >= lambda) {
            let frame = &truth.frames[e.frame];
            let room = (e.theta_deg + frame.array_yaw_deg).rem_euclid(360.0);
            let err = frame
                .speakers
                .iter()
                .map(|s| {
                    let d = (s.azimuth_deg - room).abs() % 360.0;
                    d.min(360.0 - d)
                })
                .fold(f64::INFINITY, f64::min);
            if err.is_finite() {
                block_errs.push(err);
            }
        }
        if !block_errs.is_empty() {
            let n = block_errs.len() as f64;
            errs.push(block_errs.iter().sum::<f64>() / n);
            hits.push(block_errs.iter().filter(|&&e| e <= cfg.hit_threshold_deg).count() as f64 / n);
        }
    }
    (!errs.is_empty()).then(|| {
        let n = errs.len() as f64;
        (errs.iter().sum::<f64>() / n, hits.iter().sum::<f64>() / n)
    })
}

#[test]
fn two_speaker_metrics_match_brute_force_over_the_sweep() {
    let mut spec = scene(
        6.0,
        vec![
            noise_source(vec![[0.0, 30.0], [6.0, 60.0]]),
            noise_source(vec![[0.0, 200.0], [6.0, 170.0]]),
        ],
    );
    spec.sources[0].active = Some(vec![[0.0, 4.0]]);
    spec.sources[1].active = Some(vec![[2.0, 6.0]]);
    spec.noise_level = 0.5;
    spec.array_yaw = vec![[0.0, 0.0], [6.0, 30.0]];
    for algorithm in [Algorithm::Lsdd, Algorithm::Dsdde] {
        let (axes, est, truth) = analyze(&spec, algorithm);
        for dt in [0.2, 0.3, 0.5] {
            let mut last_bins = 0;
            for p in [1.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
                let cfg = EvalConfig {
                    delta_t: dt,
                    p,
                    ..Default::default()
                };
                let report = evaluate_run(&axes, &est, &truth, &cfg).unwrap();
                let (e, h) = brute_force_e_bar(&axes, &est, &truth, &cfg).unwrap();
                assert!((report.e_bar_deg - e).abs() < 1e-9, "{algorithm} dt {dt} p {p}");
                assert!((report.h_bar - h).abs() < 1e-9, "{algorithm} dt {dt} p {p}");
                assert!(report.total_valid_bins >= last_bins);
                last_bins = report.total_valid_bins;
            }
        }
    }
}

#[test]
fn overlapping_speakers_are_scored_against_the_nearest() {
    let mut spec = scene(
        2.0,
        vec![noise_source(vec![[0.0, 30.0]]), noise_source(vec![[0.0, 210.0]])],
    );
    spec.sources[1].gain = 0.9;
    let (axes, est, truth) = analyze(&spec, Algorithm::Lsdd);
    assert!(truth.frames.iter().all(|f| f.speakers.len() == 2));
    let cfg = EvalConfig {
        p: 10.0,
        ..Default::default()
    };
    let report = evaluate_run(&axes, &est, &truth, &cfg).unwrap();
    // Confident bins point at one talker or the other, never in between.
    assert!(report.e_bar_deg < 10.0, "{}", report.e_bar_deg);
}
