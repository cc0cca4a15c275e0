use std::f64::consts::PI;

use nalgebra::DVector;
use otfs_dfrc::grid::{build_isfft_matrix, isfft, sfft};
use otfs_dfrc::harness::random_tx_frames;
use otfs_dfrc::rng;
use otfs_dfrc::{Complex64, DdFrame, FrameConfig, PrivateBinPlan};
use proptest::prelude::*;

fn random_frame(n: usize, m: usize, seed: u64) -> DdFrame {
    let mut r = rng::seeded(seed);
    DdFrame::from_fn(n, m, |_, _| rng::complex_normal(&mut r, 1.0))
}

/// `X[n,m] = 1/(NM) sum_k sum_l x[k,l] exp(j2pi(nk/N - ml/M))`, evaluated term by term.
fn isfft_by_definition(x: &DdFrame) -> Vec<Complex64> {
    let (n_len, m_len) = x.dims();
    let mut out = Vec::with_capacity(n_len * m_len);
    for n in 0..n_len {
        for m in 0..m_len {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n_len {
                for l in 0..m_len {
                    let phase = 2.0 * PI * ((n * k) as f64 / n_len as f64 - (m * l) as f64 / m_len as f64);
                    acc += x[(k, l)] * Complex64::from_polar(1.0, phase);
                }
            }
            out.push(acc / (n_len * m_len) as f64);
        }
    }
    out
}

#[test]
fn round_trip_on_full_grid() {
    let cfg = FrameConfig::nr_fr2();
    for seed in 0..3 {
        let x = random_frame(cfg.n, cfg.m, seed);
        let back = sfft(&isfft(&x, &cfg).unwrap(), &cfg).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-10);
        let y = isfft(&x, &cfg).unwrap();
        let again = isfft(&sfft(&y, &cfg).unwrap(), &cfg).unwrap();
        assert!(again.max_abs_diff(&y) < 1e-10);
    }
}

#[test]
fn isfft_matches_double_sum() {
    let cfg = FrameConfig::nr_fr2().with_grid(8, 8);
    for seed in 0..5 {
        let x = random_frame(8, 8, 100 + seed);
        let fast = isfft(&x, &cfg).unwrap();
        let slow = isfft_by_definition(&x);
        let err = fast.as_slice().iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }
}

#[test]
fn non_square_grid_matches_double_sum() {
    let cfg = FrameConfig::nr_fr2().with_grid(4, 6);
    let x = random_frame(4, 6, 7);
    let slow = isfft_by_definition(&x);
    let fast = isfft(&x, &cfg).unwrap();
    let err = fast.as_slice().iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-12);
}

#[test]
fn matrix_form_matches_fast_transform() {
    let cfg = FrameConfig::nr_fr2().with_grid(4, 8);
    let a = build_isfft_matrix(&cfg).unwrap();
    let x = random_frame(4, 8, 3);
    let via_matrix = &a * DVector::from_column_slice(x.as_slice());
    let fast = isfft(&x, &cfg).unwrap();
    let err = fast.as_slice().iter().zip(via_matrix.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-12);
}

#[test]
fn rejects_mismatched_frame() {
    let cfg = FrameConfig::nr_fr2().with_grid(8, 8);
    assert!(isfft(&random_frame(4, 8, 0), &cfg).is_err());
}

/// Kept TF rows of the transmitted frame equal the reduced matrix applied to
/// the kept DD symbols, for every antenna of every plan.
#[test]
fn reduced_system_reproduces_transmitted_rows() {
    let cfg = FrameConfig::nr_fr2().with_grid(8, 16);
    for n_p in 1..=4 {
        for probe in [false, true] {
            let plan = PrivateBinPlan::diagonal(&cfg, 4, n_p).unwrap().probed(&cfg, probe).unwrap();
            let reduced: Vec<_> = (0..4).map(|p| plan.reduced_matrix(p, &cfg).unwrap()).collect();
            for trial in 0..100 {
                let mut r = rng::seeded(1000 * n_p as u64 + trial);
                let (_, dd, tf) = random_tx_frames(&plan, &cfg, &mut r).unwrap();
                for p in 0..4 {
                    let lhs = reduced[p].matrix() * reduced[p].gather_cols(&dd[p]).unwrap();
                    let rhs = reduced[p].keep_rows(&tf[p]).unwrap();
                    assert!((lhs - &rhs).camax() < 1e-12, "n_p {n_p} probe {probe} antenna {p}");
                    let solved = reduced[p].solve(&rhs).unwrap();
                    let back = reduced[p].scatter_cols(&solved).unwrap();
                    assert!(back.max_abs_diff(&dd[p]) < 1e-9);
                }
            }
        }
    }
}

fn frame_strategy() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=4, 1usize..=4, any::<u64>()).prop_map(|(a, b, s)| (1 << a, 1 << b, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_any_grid((n, m, seed) in frame_strategy()) {
        let cfg = FrameConfig::nr_fr2().with_grid(n, m);
        let x = random_frame(n, m, seed);
        let back = sfft(&isfft(&x, &cfg).unwrap(), &cfg).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn isfft_is_linear((n, m, seed) in frame_strategy(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let cfg = FrameConfig::nr_fr2().with_grid(n, m);
        let a = random_frame(n, m, seed);
        let b = random_frame(n, m, seed ^ 0xfeed);
        let s = Complex64::new(re, im);
        let mut combo = a.clone();
        combo.add_scaled(&b, s);
        let mut expected = isfft(&a, &cfg).unwrap();
        expected.add_scaled(&isfft(&b, &cfg).unwrap(), s);
        prop_assert!(isfft(&combo, &cfg).unwrap().max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn energy_scales_by_grid_size((n, m, seed) in frame_strategy()) {
        let cfg = FrameConfig::nr_fr2().with_grid(n, m);
        let x = random_frame(n, m, seed);
        let tf = isfft(&x, &cfg).unwrap();
        let nm = (n * m) as f64;
        prop_assert!((tf.energy() * nm - x.energy()).abs() <= 1e-10 * x.energy().max(1.0));
    }
}
