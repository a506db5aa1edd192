use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dnls_kam::dnls::build_quartic;
use dnls_kam::homological::{build_transform, solve_shifted, DiophantineProfile, TransformOptions};
use dnls_kam::{AnalyticityWindow, HamiltonianPoly, RunConfig, TorusFourier, C64};

fn decaying(sites: Vec<i32>, cutoff: u32) -> TorusFourier {
    let mut f = TorusFourier::new(sites.clone(), cutoff).unwrap();
    let c = cutoff as i32;
    for a in -c..=c {
        for b in -c..=c {
            let l1 = (a.abs() + b.abs()) as u32;
            if l1 <= cutoff {
                let v = (-(l1 as f64)).exp() * (1.0 + 0.1 * a as f64);
                f.insert(vec![a, b], C64::new(v, 0.3 * v));
            }
        }
    }
    f
}

fn fourier_mul(c: &mut Criterion) {
    let f = decaying(vec![-1, 1], 12);
    let g = decaying(vec![-1, 1], 12);
    c.bench_function("torus_fourier_mul_k12", |b| b.iter(|| black_box(&f).mul(black_box(&g), 12).unwrap()));
}

fn poisson_bracket(c: &mut Criterion) {
    let mut p = HamiltonianPoly::new(vec![-1, 1], 6, 4, 6).unwrap();
    let mut q = p.zero_like();
    for j in 2..=6 {
        p.add_term(&[1, 0], &[0, 0], &[(j, 1)], &[(j, 1)], C64::new(1.0 / j as f64, 0.0)).unwrap();
        p.add_term(&[0, 1], &[1, 0], &[(-j, 1)], &[], C64::new(0.5, 0.1)).unwrap();
        q.add_term(&[1, -1], &[0, 0], &[(j, 1)], &[(-j, 1)], C64::new(0.2, -0.1)).unwrap();
        q.add_term(&[0, 0], &[0, 1], &[(j, 1), (-j, 1)], &[], C64::new(0.1, 0.0)).unwrap();
    }
    c.bench_function("poisson_bracket_jmax6", |b| b.iter(|| black_box(&p).poisson_bracket(black_box(&q)).unwrap()));
}

fn shifted_solve(c: &mut Criterion) {
    let omega = [1.0, 2f64.sqrt()];
    let p = decaying(vec![-1, 1], 16);
    let profile = DiophantineProfile::single(1e-3, 1e-3, 12.0, 0.01, 2).unwrap();
    c.bench_function("solve_shifted_k16", |b| {
        b.iter(|| solve_shifted(black_box(&omega), C64::new(0.37, 0.0), black_box(&p), &profile, 0.5).unwrap())
    });
}

fn transform(c: &mut Criterion) {
    let omega = [1.0, 2f64.sqrt()];
    let a = decaying(vec![-1, 1], 4).scale(C64::new(1e-3, 0.0));
    let profile = DiophantineProfile::single(1e-3, 1e-3, 12.0, 0.01, 2).unwrap();
    let window = AnalyticityWindow::new(0.5, 0.1, 0.0, 2.0).unwrap();
    let opts = TransformOptions { cutoff: 12, ..TransformOptions::default() };
    c.bench_function("build_transform_k12", |b| {
        b.iter(|| build_transform(black_box(&omega), std::slice::from_ref(&a), &profile, &window, &opts).unwrap())
    });
}

fn quartic(c: &mut Criterion) {
    let cfg = RunConfig::default().dnls(0.002).unwrap();
    c.bench_function("build_quartic_jmax8", |b| b.iter(|| build_quartic(black_box(&cfg)).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = fourier_mul, poisson_bracket, shifted_solve, transform, quartic
}
criterion_main!(kernels);
