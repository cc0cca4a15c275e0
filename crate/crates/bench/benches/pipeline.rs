use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};
use otfs_dfrc::channel::{radar_receive_dd, well_separated_targets, DdTap};
use otfs_dfrc::coarse::{coarse_estimate, CoarseParams};
use otfs_dfrc::comm::{lmmse_equalize, CgParams, EqualizerInput, EqualizerMethod};
use otfs_dfrc::grid::{isfft, sfft};
use otfs_dfrc::harness::{preset, run, ExperimentKind};
use otfs_dfrc::rng;
use otfs_dfrc::ssr::{solve_ssr, SsrParams};
use otfs_dfrc::{ArrayConfig, DdFrame, FrameConfig, MimoDdChannel, Scenario, SparseDdChannel};
use rand::Rng;

fn random_frame(n: usize, m: usize, seed: u64) -> DdFrame {
    let mut r = rng::seeded(seed);
    DdFrame::from_fn(n, m, |_, _| rng::complex_normal(&mut r, 1.0))
}

fn transforms(c: &mut Criterion) {
    let cfg = FrameConfig::nr_fr2();
    let x = random_frame(cfg.n, cfg.m, 1);
    let tf = isfft(&x, &cfg).unwrap();
    c.bench_function("isfft 64x128", |b| b.iter(|| isfft(&x, &cfg).unwrap()));
    c.bench_function("sfft 64x128", |b| b.iter(|| sfft(&tf, &cfg).unwrap()));
}

fn coarse(c: &mut Criterion) {
    let cfg = FrameConfig::nr_fr2();
    let arrays = ArrayConfig::half_wavelength(4, 32, 1, &cfg);
    let mut s = Scenario::new(cfg, arrays);
    s.targets = well_separated_targets(&cfg).unwrap();
    let tx: Vec<DdFrame> = (0..4).map(|i| random_frame(cfg.n, cfg.m, i)).collect();
    let rx = radar_receive_dd(&tx, &s, &mut rng::seeded(0)).unwrap().frames;
    c.bench_function("coarse estimate 3 targets", |b| {
        b.iter(|| coarse_estimate(&rx, &tx, &arrays, &cfg, &CoarseParams::default()).unwrap())
    });
}

fn sparse_recovery(c: &mut Criterion) {
    let mut r = rng::seeded(3);
    let phi = DMatrix::from_fn(128, 400, |_, _| rng::complex_normal(&mut r, 1.0 / 128.0));
    let mut beta = DVector::zeros(400);
    for i in [10, 200, 333] {
        beta[i] = rng::unit_phase(&mut r);
    }
    let y = &phi * beta;
    c.bench_function("ssr 128x400", |b| b.iter(|| solve_ssr(&y, &phi, &SsrParams::default()).unwrap()));

    let mut group = c.benchmark_group("ssr-radar preset");
    group.sample_size(10);
    let cfg = preset(ExperimentKind::SsrRadar);
    group.bench_function("full pipeline", |b| b.iter(|| run(&cfg).unwrap()));
    group.finish();
}

fn equalizer(c: &mut Criterion) {
    let cfg = FrameConfig::desk();
    let mut r = rng::seeded(5);
    let blocks = (0..8 * 4)
        .map(|_| {
            let taps: Vec<DdTap> = (0..3)
                .map(|_| DdTap {
                    doppler_shift: r.random_range(0..cfg.n),
                    delay_shift: r.random_range(0..cfg.m),
                    coefficient: rng::complex_normal(&mut r, 1.0),
                })
                .collect();
            SparseDdChannel::from_taps(&cfg, taps)
        })
        .collect();
    let h = MimoDdChannel::new(8, 4, blocks).unwrap();
    let x: Vec<DdFrame> = (0..4).map(|i| random_frame(cfg.n, cfg.m, 10 + i)).collect();
    let y = h.apply(&x).unwrap();
    c.bench_function("cg lmmse 16x32 4x8", |b| {
        b.iter_batched(
            || EqualizerInput { y: &y, channel: &h, noise_var: 0.01 },
            |input| lmmse_equalize(&input, EqualizerMethod::Cg, &CgParams::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, transforms, coarse, sparse_recovery, equalizer);
criterion_main!(benches);
