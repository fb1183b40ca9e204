//! Data-parallel hot paths on the rayon pool versus a one-thread run.
//!
//! With the default `parallel` feature each workload is measured twice:
//! on the global rayon pool and inside a single-thread pool. Built with
//! `--no-default-features` only the sequential fallback is measured.

use cfcn_core::densecrf::{refine_with, CrfParams, MessagePassing};
use cfcn_core::metrics::evaluate;
use cfcn_core::minifcn::{MiniFcn, NetConfig};
use cfcn_core::phantom::{generate, PhantomSpec};
use cfcn_core::seed::stream_rng;
use cfcn_core::volgrid::{ProbVolume, Volume};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn phantom(n: usize) -> (Volume, cfcn_core::volgrid::LabelVolume) {
    let spec = PhantomSpec {
        shape: [n, n, n],
        seed: 7,
        ..PhantomSpec::default()
    };
    generate(&spec).unwrap()
}

fn soft_probs(labels: &cfcn_core::volgrid::LabelVolume) -> ProbVolume {
    let fg: Vec<f32> = labels.labels().iter().map(|&l| if l != 0 { 0.8 } else { 0.3 }).collect();
    ProbVolume::from_foreground(*labels.grid(), &fg).unwrap()
}

fn run_modes(c: &mut Criterion, group: &str, f: &(dyn Fn() + Sync)) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        g.bench_function(BenchmarkId::new("parallel", rayon::current_num_threads()), |b| b.iter(f));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("sequential", 1), |b| one.install(|| b.iter(f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(f));
    g.finish();
}

fn benches(c: &mut Criterion) {
    let (v, labels) = phantom(32);
    let probs = soft_probs(&labels);
    let params = CrfParams {
        w_pos: 1.0,
        w_bil: 1.0,
        sigma_pos: 1.5,
        sigma_bil: 1.5,
        sigma_int: 0.1,
        iterations: 3,
    };
    let scaled = Volume::new(*v.grid(), v.data().iter().map(|x| x / 300.0).collect()).unwrap();
    run_modes(c, "crf_window_32", &|| {
        black_box(refine_with(&probs, &scaled, &params, MessagePassing::Window).unwrap());
    });

    let net = MiniFcn::<f32>::new(NetConfig::default(), &mut stream_rng(3, 0)).unwrap();
    let slices: Vec<_> = (0..v.shape()[2]).map(|z| scaled.slice_z(z)).collect();
    run_modes(c, "fcn_forward_32_slices", &|| {
        black_box(net.forward(&slices).unwrap());
    });

    let (_, other) = phantom(32);
    run_modes(c, "metrics_32", &|| {
        black_box(evaluate("bench", &labels, &other).unwrap());
    });
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
