use dpdloc::array::main_lobe_width;
use dpdloc::doa::{
    directional_spectrum, dsdd_estimate, dsdde_estimate, lsdd_estimate, lsdde_estimate, similarity, smooth_spectra,
};
use dpdloc::eval::{circular_error, percentile_threshold, to_room_frame};
use dpdloc::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn complex_vec(m: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), m)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
        .prop_filter("nonzero", |v: &Vec<Complex64>| v.iter().map(|z| z.norm_sqr()).sum::<f64>() > 1e-6)
}

fn fixture_steering() -> (SteeringSet, Vec<IdealSpectrumMatrix>) {
    let g = ArrayGeometry::glasses_fixture();
    let freqs: Vec<f64> = (24..=42).map(|k| k as f64 * 46.875).collect();
    let set = SteeringSet::build(&g, &DoaGrid::default(), &freqs).unwrap();
    let ideal = freqs.iter().map(|&f| build_ideal_spectrum(&set, f).unwrap()).collect();
    (set, ideal)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scale_leaves_estimates_unchanged(
        x in complex_vec(6),
        fi in 0usize..19,
        mag in 0.01f64..100.0,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let (set, ideal) = fixture_steering();
        let lambda = Complex64::from_polar(mag, phase);
        let y: Vec<Complex64> = x.iter().map(|z| z * lambda).collect();
        let sx = directional_spectrum(&x, &set, fi, SimilarityKind::Cosine).unwrap();
        let sy = directional_spectrum(&y, &set, fi, SimilarityKind::Cosine).unwrap();
        let (a, b) = (lsdd_estimate(&sx), lsdd_estimate(&sy));
        prop_assert_eq!(a.index, b.index);
        prop_assert!((a.chi - b.chi).abs() < 1e-9);
        let (a, b) = (
            dsdd_estimate(&sx, &ideal[fi], SimilarityKind::Cosine).unwrap(),
            dsdd_estimate(&sy, &ideal[fi], SimilarityKind::Cosine).unwrap(),
        );
        prop_assert_eq!(a.index, b.index);
        prop_assert!((a.chi - b.chi).abs() < 1e-9);
        prop_assert_eq!(lsdde_estimate(&sx, &x).index, lsdde_estimate(&sy, &y).index);
        prop_assert_eq!(
            dsdde_estimate(&sx, &ideal[fi], SimilarityKind::Cosine, &x).unwrap().index,
            dsdde_estimate(&sy, &ideal[fi], SimilarityKind::Cosine, &y).unwrap().index
        );
    }

    #[test]
    fn energy_weighting_and_kind_keep_argmax(x in complex_vec(6), fi in 0usize..19) {
        let (set, ideal) = fixture_steering();
        let cos = directional_spectrum(&x, &set, fi, SimilarityKind::Cosine).unwrap();
        let res = directional_spectrum(&x, &set, fi, SimilarityKind::InverseResidual).unwrap();
        prop_assert_eq!(lsdd_estimate(&cos).index, lsdde_estimate(&cos, &x).index);
        prop_assert_eq!(lsdd_estimate(&cos).index, lsdd_estimate(&res).index);
        let d = dsdd_estimate(&cos, &ideal[fi], SimilarityKind::Cosine).unwrap();
        let de = dsdde_estimate(&cos, &ideal[fi], SimilarityKind::Cosine, &x).unwrap();
        let dr = dsdd_estimate(&cos, &ideal[fi], SimilarityKind::InverseResidual).unwrap();
        prop_assert_eq!(d.index, de.index);
        prop_assert_eq!(d.index, dr.index);
    }

    #[test]
    fn cosine_bounds_and_symmetry(a in complex_vec(5), b in complex_vec(5)) {
        let ab = similarity(&a, &b, SimilarityKind::Cosine).unwrap();
        let ba = similarity(&b, &a, SimilarityKind::Cosine).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        let r = similarity(&a, &b, SimilarityKind::InverseResidual).unwrap();
        prop_assert!(r >= 1.0);
    }

    #[test]
    fn smoothing_preserves_constants_and_r0_is_identity(
        n in 1usize..30,
        l in 1usize..10,
        r in 0usize..6,
        c in 0.0f64..2.0,
    ) {
        let constant = vec![Some(vec![c; l]); n];
        for s in smooth_spectra(&constant, r).into_iter().flatten() {
            prop_assert!(s.iter().all(|v| (v - c).abs() < 1e-12));
        }
        let ramp: Vec<Option<Vec<f64>>> = (0..n).map(|f| Some(vec![f as f64; l])).collect();
        prop_assert_eq!(smooth_spectra(&ramp, 0), ramp);
    }

    #[test]
    fn steering_vectors_have_unit_modulus(f in 0.0f64..8000.0, az in 0.0f64..360.0) {
        let v = steering_vector(&ArrayGeometry::glasses_fixture(), f, az);
        prop_assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn circular_error_is_a_bounded_metric(a in -720.0f64..720.0, b in -720.0f64..720.0, yaw in -360.0f64..360.0) {
        let e = circular_error(a, b);
        prop_assert!((0.0..=180.0).contains(&e));
        prop_assert!((e - circular_error(b, a)).abs() < 1e-9);
        prop_assert!(circular_error(a, a) < 1e-9);
        let room = to_room_frame(a, yaw);
        prop_assert!((0.0..360.0).contains(&room));
        prop_assert!((circular_error(room, a + yaw)) < 1e-9);
    }

    #[test]
    fn threshold_keeps_at_least_the_requested_share(
        chis in prop::collection::vec(0u8..20, 1..200),
        p in 0.1f64..100.0,
    ) {
        let chis: Vec<f64> = chis.into_iter().map(f64::from).collect();
        let lambda = percentile_threshold(&chis, p).unwrap();
        let kept = chis.iter().filter(|&&c| c >= lambda).count();
        let strictly_above = chis.iter().filter(|&&c| c > lambda).count();
        let target = p / 100.0 * chis.len() as f64;
        prop_assert!(kept as f64 >= target - 1e-9);
        prop_assert!((strictly_above as f64) < target.max(1.0));
        prop_assert_eq!(percentile_threshold(&chis, 100.0).unwrap(), chis.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn lobe_width_is_bounded(values in prop::collection::vec(0.0f64..1.0, 60), center in 0usize..60) {
        let mut row = values;
        row[center] = 1.0;
        let w = main_lobe_width(&row, center, 0.9);
        prop_assert!((1..=60).contains(&w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_is_linear(
        seed_a in prop::collection::vec(-1.0f64..1.0, 64),
        seed_b in prop::collection::vec(-1.0f64..1.0, 64),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        // Tile the short strategy vectors out to a few frames.
        let tile = |s: &[f64]| -> Vec<f64> { (0..4096).map(|i| s[i % s.len()] * ((i / 64) as f64 * 0.1).cos()).collect() };
        let (x, y) = (tile(&seed_a), tile(&seed_b));
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let cfg = StftConfig::default();
        let run = |s: Vec<f64>| stft(&MultichannelAudio::new(48_000.0, vec![s]).unwrap(), &cfg).unwrap();
        let (tx, ty, tz) = (run(x), run(y), run(z));
        for t in 0..tz.num_frames() {
            for k in 0..tz.num_bins() {
                let expect = tx.get(0, t, k) * alpha + ty.get(0, t, k) * beta;
                prop_assert!((tz.get(0, t, k) - expect).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn hop_shift_moves_frames_by_one(seed in prop::collection::vec(-1.0f64..1.0, 97)) {
        let x: Vec<f64> = (0..4096 + 512).map(|i| seed[i % seed.len()] + (i as f64 * 0.013).sin()).collect();
        let cfg = StftConfig::default();
        let run = |s: &[f64]| stft(&MultichannelAudio::new(48_000.0, vec![s.to_vec()]).unwrap(), &cfg).unwrap();
        let (a, b) = (run(&x[..4096]), run(&x[512..]));
        for t in 0..a.num_frames() - 1 {
            for k in 0..a.num_bins() {
                prop_assert!((a.get(0, t + 1, k) - b.get(0, t, k)).norm() < 1e-9);
            }
        }
    }
}
