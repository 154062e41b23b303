use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use srm_core::distance::{distance, Budget};
use srm_core::flag::{classify_grid, ClassifyOptions, GridSpec};
use srm_core::measures::{ball_profile, MeasureOptions};
use srm_core::par::{set_exec_policy, ExecPolicy};
use srm_core::structure::{grushin, heisenberg};

const POLICIES: [(&str, ExecPolicy); 2] = [("parallel", ExecPolicy::Parallel), ("sequential", ExecPolicy::Sequential)];

fn ball_rays(c: &mut Criterion) {
    let g = grushin();
    let opt = MeasureOptions { directions: 64, budget: Budget::bulk(), seed: 1 };
    let mut group = c.benchmark_group("grushin_ball_rays");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec_policy(policy);
            b.iter(|| ball_profile(&g, black_box(&[1.0, 0.0]), &[0.2], 1.0, &opt).unwrap())
        });
    }
    group.finish();
    set_exec_policy(ExecPolicy::Parallel);
}

fn multistart_distance(c: &mut Criterion) {
    let h = heisenberg();
    let mut group = c.benchmark_group("heisenberg_distance");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec_policy(policy);
            b.iter(|| distance(&h, &[0.0; 3], black_box(&[0.2, -0.1, 0.3]), &Budget::default(), 1).unwrap())
        });
    }
    group.finish();
    set_exec_policy(ExecPolicy::Parallel);
}

fn grid_scan(c: &mut Criterion) {
    let g = grushin();
    let spec = GridSpec::parse("21x21", g.bbox_f64()).unwrap();
    let opt = ClassifyOptions::for_grid(&spec, 1);
    let mut group = c.benchmark_group("grushin_scan_21x21");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec_policy(policy);
            b.iter(|| classify_grid(&g, black_box(&spec), &opt).unwrap())
        });
    }
    group.finish();
    set_exec_policy(ExecPolicy::Parallel);
}

criterion_group!(benches, ball_rays, multistart_distance, grid_scan);
criterion_main!(benches);
