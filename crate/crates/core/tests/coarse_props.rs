use otfs_dfrc::channel::radar_receive_dd;
use otfs_dfrc::coarse::{
    coarse_estimate, correlate_2d, extract_angle_profile, indices_to_physical, pick_peaks_1d, pick_peaks_2d,
    signed_doppler, CoarseParams,
};
use otfs_dfrc::rng;
use otfs_dfrc::{ArrayConfig, Complex64, DdFrame, FrameConfig, PeakConfig, Scenario, Target};
use proptest::prelude::*;

fn random_frame(n: usize, m: usize, seed: u64) -> DdFrame {
    let mut r = rng::seeded(seed);
    DdFrame::from_fn(n, m, |_, _| rng::complex_normal(&mut r, 1.0))
}

fn setup(targets: Vec<Target>, seed: u64) -> (Vec<DdFrame>, Vec<DdFrame>, ArrayConfig, FrameConfig) {
    let cfg = FrameConfig::nr_fr2().with_grid(16, 32);
    let arrays = ArrayConfig::half_wavelength(4, 8, 1, &cfg);
    let mut s = Scenario::new(cfg, arrays);
    s.targets = targets;
    let tx: Vec<DdFrame> = (0..4).map(|i| random_frame(16, 32, seed.wrapping_mul(31).wrapping_add(i))).collect();
    let rx = radar_receive_dd(&tx, &s, &mut rng::seeded(0)).unwrap().frames;
    (rx, tx, arrays, cfg)
}

/// Angle whose spatial frequency sits exactly on DFT bin `bin` of an
/// `n_r`-element half-wavelength array.
fn bin_angle(bin: i64, n_r: usize) -> f64 {
    (2.0 * bin as f64 / n_r as f64).asin().to_degrees()
}

#[test]
fn single_target_lands_on_its_bins() {
    let cfg = FrameConfig::nr_fr2().with_grid(16, 32);
    let gain = Complex64::from_polar(0.8, 1.3);
    let theta = bin_angle(1, 8);
    let target = Target::on_grid(theta, -3, 9, gain, &cfg).unwrap();
    let (rx, tx, arrays, cfg) = setup(vec![target], 5);
    let res = coarse_estimate(&rx, &tx, &arrays, &cfg, &CoarseParams { neighbour_bins: 0, ..Default::default() }).unwrap();
    assert_eq!(res.angles.peaks[0].bin, 1);
    assert!((res.angles.peaks[0].theta_deg - theta).abs() < 1e-9);
    let best = res.estimates.iter().max_by(|a, b| a.peak_score.total_cmp(&b.peak_score)).unwrap();
    assert_eq!((best.k, best.doppler_bin, best.l), (13, -3, 9));
    // on-bin beamforming recovers the echo exactly, so the normalized peak is |gain|
    assert!((best.peak_score - gain.norm()).abs() < 1e-10);
    let (range, velocity) = indices_to_physical(best.k, best.l, &cfg);
    assert!((range - 9.0 * cfg.range_resolution()).abs() < 1e-9);
    assert!((velocity + 3.0 * cfg.velocity_resolution()).abs() < 1e-9);
}

#[test]
fn empty_receive_gives_no_peaks() {
    let (rx, tx, arrays, cfg) = setup(Vec::new(), 1);
    let res = coarse_estimate(&rx, &tx, &arrays, &cfg, &CoarseParams::default()).unwrap();
    assert!(res.estimates.is_empty());
}

#[test]
fn signed_doppler_wraps_upper_half() {
    assert_eq!(signed_doppler(0, 64), 0);
    assert_eq!(signed_doppler(31, 64), 31);
    assert_eq!(signed_doppler(32, 64), -32);
    assert_eq!(signed_doppler(55, 64), -9);
}

#[test]
fn peak_pickers_respect_threshold_and_cap() {
    let values = [0.1, 1.0, 0.2, 0.05, 0.6, 0.1, 0.3, 0.0];
    let cfg = PeakConfig { relative_threshold: 0.25, max_peaks: 8 };
    assert_eq!(pick_peaks_1d(&values, &cfg), vec![1, 4, 6]);
    let capped = PeakConfig { relative_threshold: 0.0, max_peaks: 2 };
    assert_eq!(pick_peaks_1d(&values, &capped).len(), 2);
    let mut grid = vec![0.0; 16];
    grid[5] = 1.0;
    grid[15] = 0.5;
    assert_eq!(pick_peaks_2d(&grid, 4, 4, &cfg), vec![(1, 1), (3, 3)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_ignore_receive_scaling(
        re in -5.0f64..5.0,
        im in -5.0f64..5.0,
        angle in -60.0f64..60.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(Complex64::new(re, im).norm() > 1e-3);
        let cfg = FrameConfig::nr_fr2().with_grid(16, 32);
        let targets = vec![
            Target::on_grid(angle, 2, 4, Complex64::new(1.0, 0.0), &cfg).unwrap(),
            Target::on_grid((angle + 40.0).min(80.0), -5, 11, Complex64::new(0.0, 0.9), &cfg).unwrap(),
        ];
        let (rx, tx, arrays, cfg) = setup(targets, seed);
        let s = Complex64::new(re, im);
        let scaled: Vec<DdFrame> = rx.iter().map(|y| y.scaled(s)).collect();
        let a = coarse_estimate(&rx, &tx, &arrays, &cfg, &CoarseParams::default()).unwrap();
        let b = coarse_estimate(&scaled, &tx, &arrays, &cfg, &CoarseParams::default()).unwrap();
        prop_assert_eq!(a.estimates.len(), b.estimates.len());
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            prop_assert_eq!((x.angle_bin, x.k, x.l), (y.angle_bin, y.k, y.l));
            prop_assert!((x.peak_score * s.norm() - y.peak_score).abs() <= 1e-9 * y.peak_score.max(1.0));
        }
    }

    #[test]
    fn beamformer_is_linear(seed in any::<u64>(), omega in -0.5f64..0.5, re in -2.0f64..2.0) {
        let a: Vec<DdFrame> = (0..4).map(|i| random_frame(4, 8, seed.wrapping_add(i))).collect();
        let b: Vec<DdFrame> = (0..4).map(|i| random_frame(4, 8, seed.wrapping_add(10 + i))).collect();
        let s = Complex64::new(re, 0.5);
        let combo: Vec<DdFrame> = a.iter().zip(&b).map(|(x, y)| {
            let mut z = x.clone();
            z.add_scaled(y, s);
            z
        }).collect();
        let mut expected = extract_angle_profile(&a, omega).unwrap();
        expected.add_scaled(&extract_angle_profile(&b, omega).unwrap(), s);
        prop_assert!(extract_angle_profile(&combo, omega).unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn correlation_scales_with_input(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let a = random_frame(8, 8, seed);
        let p = random_frame(8, 8, seed ^ 1);
        let s = Complex64::new(re, im);
        let base = correlate_2d(&a, &p, &PeakConfig::default()).unwrap();
        let scaled = correlate_2d(&a.scaled(s), &p, &PeakConfig::default()).unwrap();
        for (x, y) in base.surface.iter().zip(&scaled.surface) {
            prop_assert!((x * s.norm() - y).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_peaks_at_applied_shift(seed in any::<u64>(), dk in 0usize..8, dl in 0usize..16) {
        let p = random_frame(8, 16, seed);
        let shifted = DdFrame::from_fn(8, 16, |k, l| p[((k + 8 - dk) % 8, (l + 16 - dl) % 16)]);
        let c = correlate_2d(&shifted, &p, &PeakConfig::default()).unwrap();
        prop_assert_eq!((c.peaks[0].k, c.peaks[0].l), (dk, dl));
        prop_assert!((c.peaks[0].score - 1.0).abs() < 1e-12);
    }
}
