use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use clgn::datasets::gen_circle;
use clgn::generator::{init_params, Architecture, LatentBatch};
use clgn::kernel_oracle::{mmd_squared_exact_with, KernelSpec};
use clgn::rff_sketch::{draw_frequencies, sketch_samples, FrequencyLaw, LawKind};
use clgn::trainer::cl_cost_and_gradient_with;
use clgn::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn sketching(c: &mut Criterion) {
    let data = gen_circle(20_000, 1.0, 0.05, 1).unwrap();
    let law = FrequencyLaw::from_kernel_variance(LawKind::FoldedGaussian, 1e-3, 2).unwrap();
    let omega = draw_frequencies(law, 1000, 1).unwrap();
    let mut g = c.benchmark_group("sketch_20k_m1000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sketch_samples(black_box(&data), &omega, exec).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let data = gen_circle(10_000, 1.0, 0.05, 2).unwrap();
    let law = FrequencyLaw::from_kernel_variance(LawKind::FoldedGaussian, 1e-3, 2).unwrap();
    let omega = draw_frequencies(law, 1000, 2).unwrap();
    let target = sketch_samples(&data, &omega, Exec::default()).unwrap();
    let arch = Architecture::default();
    let params = init_params(&arch, 0).unwrap();
    let z = LatentBatch::sample(arch.latent_dim, 1000, 0).unwrap();
    let mut g = c.benchmark_group("gradient_batch1000_m1000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cl_cost_and_gradient_with(black_box(&params), &target, &z.z, &omega, exec).unwrap())
        });
    }
    g.finish();
}

fn exact_mmd(c: &mut Criterion) {
    let x = gen_circle(1000, 1.0, 0.05, 3).unwrap();
    let y = gen_circle(1000, 1.0, 0.05, 4).unwrap();
    let k = KernelSpec::gaussian(1.0).unwrap();
    let mut g = c.benchmark_group("exact_mmd_1000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mmd_squared_exact_with(black_box(&x), &y, &k, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sketching, gradient, exact_mmd);
criterion_main!(benches);
