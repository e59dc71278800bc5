use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::Rng;

use tfim_core::cavity::{self, CavityModel, Derivative};
use tfim_core::glauber::{Dynamics, Schedule, TimeBc};
use tfim_core::graph::{build_tree, BoundaryKind};
use tfim_core::site_sampler::sample_site;
use tfim_core::transfer::path_kernel;
use tfim_core::{EndpointCondition, ModelParams, PiecewiseField, Sign, SpinConfigMap, StreamFactory};

fn site_sampler(c: &mut Criterion) {
    let params = ModelParams::new(1.0, 1.0, 0.3).unwrap();
    let field = PiecewiseField::new(vec![0.0, 0.3, 0.7, 1.0], vec![2.0, -1.0, 0.5], 1.0).unwrap();
    let mut rng = StreamFactory::new(1).stream(&[0]);
    c.bench_function("path_kernel/3 pieces", |b| b.iter(|| path_kernel(black_box(&field), &params).unwrap()));
    c.bench_function("sample_site/free", |b| {
        b.iter(|| sample_site(black_box(&field), &params, EndpointCondition::Free, &mut rng).unwrap())
    });
    c.bench_function("sample_site/periodic", |b| {
        b.iter(|| sample_site(black_box(&field), &params, EndpointCondition::Periodic, &mut rng).unwrap())
    });
}

fn glauber_sweep(c: &mut Criterion) {
    let params = ModelParams::new(1.0, 1.0, 0.0).unwrap();
    let tree = build_tree(2, 4, &BoundaryKind::Plus, 1.0, None).unwrap();
    c.bench_function("glauber/tree b=2 depth=4, 1 time unit", |b| {
        b.iter(|| {
            let d = Dynamics::new(&tree.graph, &params, TimeBc::Free, Schedule::full(), StreamFactory::new(3)).unwrap();
            let mut s = d.start(SpinConfigMap::uniform(&tree.graph, Sign::Plus, 1.0).unwrap()).unwrap();
            d.advance(&mut s, 1.0).unwrap();
            s.events
        })
    });
}

fn cavity_ops(c: &mut Criterion) {
    let m = CavityModel::new(8, 1.0, 1.0, 0.0, 2).unwrap();
    let rec = cavity::nu_recursion(&m, 100_000, 1e-10);
    let d = Derivative::new(&m, &rec.limit).unwrap();
    let mut rng = StreamFactory::new(2).stream(&[0]);
    let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("cavity/nu_recursion N=8", |b| b.iter(|| cavity::nu_recursion(&m, 100_000, 1e-10)));
    c.bench_function("cavity/R at nu_inf N=8", |b| b.iter(|| d.apply_r_nu(7, black_box(&x))));
    c.bench_function("cavity/kappa_gaps N=8 depth=8", |b| {
        b.iter(|| cavity::kappa_gaps(&m, 8, cavity::LeafBoundary::Plus))
    });
    let dir = cavity::random_positive_direction(&m, &mut rng);
    let mut g = c.benchmark_group("cavity-slow");
    g.sample_size(10);
    g.bench_function("cavity/D apply N=8", |b| b.iter(|| d.apply(black_box(&dir)).unwrap()));
    g.finish();
}

criterion_group!(benches, site_sampler, glauber_sweep, cavity_ops);
criterion_main!(benches);
