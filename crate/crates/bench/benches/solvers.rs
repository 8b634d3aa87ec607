use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use goa_bench::synthetic_svm;
use goa_core::goa::EpochBudget;
use goa_core::problems::test2d;
use goa_core::smoothing::{vr_sample, AnchorMode, BallSampler, SmoothingParams};
use goa_core::solvers::{run_projected_svrg, SvrgConfig};
use goa_core::{run_goa, ConvexSet, GoaConfig};

fn vr_samples(c: &mut Criterion) {
    let p = synthetic_svm(1000, 20, 1);
    let mut s = BallSampler::new(20, 2);
    let w = vec![0.1; 20];
    let anchor = goa_core::smoothing::anchor_gradient(
        &p,
        &[0.0; 20],
        &SmoothingParams::new(0.5),
        &mut s,
    )
    .unwrap();
    let u = s.sample();
    c.bench_function("vr_sample full gradient n=1000 d=20", |b| {
        b.iter(|| vr_sample(&p, black_box(&w), &anchor, &u, true, None).unwrap())
    });
    c.bench_function("vr_sample component d=20", |b| {
        b.iter(|| vr_sample(&p, black_box(&w), &anchor, &u, true, Some(17)).unwrap())
    });
}

fn svrg_epoch(c: &mut Criterion) {
    let p = synthetic_svm(1000, 20, 1);
    let set = ConvexSet::ball(vec![0.0; 20], 2.0).unwrap();
    let mut cfg = SvrgConfig::new(0.2, 1000, 1);
    cfg.finite_sum = true;
    c.bench_function("projected SVRG epoch T=1000 finite-sum", |b| {
        b.iter(|| {
            let mut s = BallSampler::new(20, 3);
            run_projected_svrg(&p, &set, &[0.0; 20], AnchorMode::PointApprox, 0.5, &cfg, &mut s)
                .unwrap()
        })
    });
}

fn goa_test2d(c: &mut Criterion) {
    let p = test2d();
    let set = ConvexSet::ball(vec![0.0; 2], 3.0).unwrap();
    let cfg = GoaConfig {
        budget: EpochBudget::Fixed(2),
        ..GoaConfig::default()
    };
    c.bench_function("SVRG-GOA test2d M=10 S=2", |b| {
        b.iter(|| {
            let mut s = BallSampler::new(2, 4);
            run_goa(&p, &set, &cfg, &mut s).unwrap()
        })
    });
}

criterion_group!(benches, vr_samples, svrg_epoch, goa_test2d);
criterion_main!(benches);
