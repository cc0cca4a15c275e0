use nalgebra::{DMatrix, DVector};
use otfs_dfrc::channel::radar_receive_tf;
use otfs_dfrc::coarse::{coarse_estimate, CoarseParams};
use otfs_dfrc::harness::{observe_radar, random_tx_frames};
use otfs_dfrc::rng;
use otfs_dfrc::ssr::{solve_ssr, SsrParams};
use otfs_dfrc::virtual_array::{
    build_dictionary, detect_with_refinement, extract_virtual_measurement, Atom, DdScorer, DetectParams,
};
use otfs_dfrc::{ArrayConfig, Complex64, FrameConfig, PrivateBinPlan, Scenario, Target, TargetGrid};
use proptest::prelude::*;

fn small() -> (FrameConfig, ArrayConfig) {
    let cfg = FrameConfig::nr_fr2().with_grid(16, 32);
    (cfg, ArrayConfig::half_wavelength(4, 8, 1, &cfg))
}

fn scenario(targets: Vec<Target>) -> Scenario {
    let (cfg, arrays) = small();
    let mut s = Scenario::new(cfg, arrays);
    s.targets = targets;
    s
}

#[test]
fn plan_zero_counts() {
    let (cfg, _) = small();
    for n_p in 0..=4 {
        for probe in [false, true] {
            let plan = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap().probed(&cfg, probe).unwrap();
            assert_eq!(plan.n_p(), n_p);
            for p in 0..4 {
                let owner = p < n_p;
                let extra = (owner && probe) as usize;
                assert_eq!(plan.dd_zeros(p).len(), n_p - owner as usize + extra);
                assert_eq!(plan.nulled_bins(p).len(), n_p - owner as usize);
                assert_eq!(plan.removed_tf_bins(p).len(), plan.dd_zeros(p).len());
                let mut zeros = plan.dd_zeros(p).to_vec();
                zeros.sort();
                zeros.dedup();
                assert_eq!(zeros.len(), plan.dd_zeros(p).len());
            }
            let probes = if probe { n_p } else { 0 };
            assert_eq!(plan.total_info_symbols(&cfg), 4 * cfg.bins() - n_p * 3 - probes);
        }
    }
}

#[test]
fn private_bins_are_transmitted_by_their_owner_only() {
    let (cfg, _) = small();
    let plan = PrivateBinPlan::diagonal(&cfg, 4, 3).unwrap().probed(&cfg, true).unwrap();
    let (_, _, tf) = random_tx_frames(&plan, &cfg, &mut rng::seeded(1)).unwrap();
    for b in plan.bins() {
        for (p, x) in tf.iter().enumerate() {
            let v = x[(b.n, b.m)];
            if p == b.antenna {
                assert_eq!(v, PrivateBinPlan::rms_probe(&cfg));
            } else {
                assert_eq!(v, Complex64::new(0.0, 0.0));
            }
        }
    }
}

#[test]
fn plan_rejects_too_many_bins() {
    let (cfg, _) = small();
    assert!(PrivateBinPlan::diagonal(&cfg, 4, 5).is_err());
}

#[test]
fn single_bin_cannot_tell_dd_apart() {
    let (cfg, arrays) = small();
    let plan = PrivateBinPlan::diagonal(&cfg, 4, 1).unwrap();
    let grid = TargetGrid {
        atoms: vec![
            Atom { theta_deg: 10.0, doppler_bin: 0, delay_bin: 0 },
            Atom { theta_deg: 10.0, doppler_bin: 5, delay_bin: 17 },
        ],
        spacing_deg: 1.0,
        angle_only: false,
    };
    let dict = build_dictionary(&grid, plan.bins(), arrays.n_r, &cfg, &arrays).unwrap();
    let coherence = dict.phi.column(0).dotc(&dict.phi.column(1)).norm();
    assert!((coherence - 1.0).abs() < 1e-12);

    let plan4 = PrivateBinPlan::diagonal(&cfg, 4, 4).unwrap();
    let dict4 = build_dictionary(&grid, plan4.bins(), arrays.n_r, &cfg, &arrays).unwrap();
    assert!(dict4.phi.column(0).dotc(&dict4.phi.column(1)).norm() < 1.0 - 1e-3);
}

#[test]
fn noiseless_targets_on_grid_are_recovered() {
    let (cfg, _) = small();
    let targets = vec![
        Target::on_grid(-22.0, 3, 6, Complex64::from_polar(1.0, 0.4), &cfg).unwrap(),
        Target::on_grid(33.0, -4, 12, Complex64::from_polar(0.8, -1.0), &cfg).unwrap(),
    ];
    let s = scenario(targets.clone());
    for n_p in [2, 4] {
        let plan = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap().probed(&cfg, true).unwrap();
        let obs = observe_radar(&s, &plan, &mut rng::seeded(2), &mut rng::seeded(3)).unwrap();
        let coarse = coarse_estimate(&obs.rx_dd, &obs.tx_dd, &s.arrays, &cfg, &CoarseParams::default()).unwrap();
        let meas = extract_virtual_measurement(&obs.rx_tf, &plan, &obs.tx_tf).unwrap();
        let scorer = DdScorer { rx: &obs.rx_dd, tx: &obs.tx_dd };
        let det = detect_with_refinement(&meas, &coarse.estimates, &cfg, &s.arrays, &DetectParams::default(), 0.0, Some(scorer))
            .unwrap();
        let mut found: Vec<(i64, i64, usize)> =
            det.targets.iter().map(|t| (t.theta_deg.round() as i64, t.doppler_bin, t.delay_bin)).collect();
        found.sort();
        assert_eq!(found, vec![(-22, 3, 6), (33, -4, 12)], "n_p {n_p}");
        for t in &det.targets {
            let truth = targets.iter().find(|s| s.delay_bin == t.delay_bin).unwrap();
            assert!((t.gain - truth.gain).norm() < 1e-6);
        }
    }
}

fn measurement_for(targets: Vec<Target>, plan: &PrivateBinPlan, seed: u64) -> otfs_dfrc::VirtualMeasurement {
    let s = scenario(targets);
    let (_, _, tx_tf) = random_tx_frames(plan, &s.frame, &mut rng::seeded(seed)).unwrap();
    let rx = radar_receive_tf(&tx_tf, &s, &mut rng::seeded(0)).unwrap().frames;
    extract_virtual_measurement(&rx, plan, &tx_tf).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn private_samples_ignore_other_antennas_data(n_p in 1usize..=4, seed in any::<u64>(), angle in -70.0f64..70.0) {
        let (cfg, _) = small();
        let plan = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap();
        let targets = vec![Target::on_grid(angle, 1, 3, Complex64::new(0.7, 0.2), &cfg).unwrap()];
        // different data everywhere except the private bins themselves
        let a = measurement_for(targets.clone(), &plan, seed);
        let b = measurement_for(targets, &plan, seed.wrapping_add(1));
        prop_assert!((a.r - b.r).camax() < 1e-10);
    }

    #[test]
    fn probe_phase_does_not_change_ratios(phase in -3.1f64..3.1, n_p in 1usize..=4, angle in -70.0f64..70.0) {
        let (cfg, _) = small();
        let targets = vec![Target::on_grid(angle, -2, 7, Complex64::new(0.3, -0.9), &cfg).unwrap()];
        let base = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap();
        let p1 = base.clone().with_probe(&cfg, Complex64::new(1.0, 0.0)).unwrap();
        let p2 = base.with_probe(&cfg, Complex64::from_polar(1.0, phase)).unwrap();
        let a = measurement_for(targets.clone(), &p1, 9);
        let b = measurement_for(targets, &p2, 9);
        prop_assert!((a.r - b.r).camax() < 1e-10);
    }

    #[test]
    fn dictionary_matches_measurement(
        n_p in 1usize..=4,
        angle in -80i32..80,
        k in -8i64..8,
        l in 0usize..32,
        re in -2.0f64..2.0,
        im in -2.0f64..2.0,
    ) {
        let (cfg, arrays) = small();
        let gain = Complex64::new(re, im);
        let target = Target::on_grid(angle as f64, k, l, gain, &cfg).unwrap();
        let plan = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap().probed(&cfg, true).unwrap();
        let meas = measurement_for(vec![target], &plan, 4);
        let grid = TargetGrid {
            atoms: vec![Atom { theta_deg: angle as f64, doppler_bin: k, delay_bin: l }],
            spacing_deg: 1.0,
            angle_only: false,
        };
        let dict = build_dictionary(&grid, plan.bins(), arrays.n_r, &cfg, &arrays).unwrap();
        let predicted = dict.phi.column(0) * Complex64::new(dict.scale, 0.0) * gain;
        prop_assert!((meas.r - predicted).camax() < 1e-10);
    }

    #[test]
    fn solver_objective_never_increases(
        rows in 4usize..16,
        cols in 4usize..24,
        seed in any::<u64>(),
        weight in 1e-4f64..1.0,
        continuation in any::<bool>(),
    ) {
        let mut r = rng::seeded(seed);
        let phi = DMatrix::from_fn(rows, cols, |_, _| rng::complex_normal(&mut r, 1.0));
        let y = DVector::from_fn(rows, |_, _| rng::complex_normal(&mut r, 1.0));
        let sol = solve_ssr(&y, &phi, &SsrParams { lasso_weight: weight, continuation, ..Default::default() }).unwrap();
        for w in sol.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
    }
}
