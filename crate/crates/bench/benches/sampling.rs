use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use maskdiff::sampler::{sample, Strategy};
use maskdiff::transition::{posterior, reverse_step_dist, sample_forward};
use maskdiff::{BayesOracle, Condition, CountDenoiser, Denoiser, NoiseSchedule, SamplerConfig};
use maskdiff_bench::grid_fixture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn transition_kernels(c: &mut Criterion) {
    let s = NoiseSchedule::linear(100, 16, 0.1).unwrap();
    let mask = s.mask_token();
    c.bench_function("posterior(K=16)", |b| {
        b.iter(|| posterior(black_box(mask), black_box(3), 50, &s))
    });
    let x0 = vec![1.0 / 16.0; 16];
    c.bench_function("reverse_step_dist(K=16, stride 10)", |b| {
        b.iter(|| reverse_step_dist(black_box(mask), &x0, 60, 50, &s))
    });
}

fn denoisers(c: &mut Criterion) {
    let (ts, s) = grid_fixture(100);
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    let counts = CountDenoiser::fit(&ts, &s, 2000, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x_t = sample_forward(&ts.grid(0), 60, &s, &mut rng).unwrap();
    c.bench_function("oracle.predict(4x4, 16 templates)", |b| {
        b.iter(|| oracle.predict(black_box(&x_t), 60, Condition::Class(1)))
    });
    c.bench_function("count.predict(4x4)", |b| {
        b.iter(|| counts.predict(black_box(&x_t), 60, Condition::Class(1)))
    });
}

fn samplers(c: &mut Criterion) {
    let (ts, s) = grid_fixture(100);
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    let mut group = c.benchmark_group("sample(4x4 oracle)");
    for (name, cfg) in [
        (
            "fast T'=10",
            SamplerConfig {
                strategy: Strategy::Fast,
                inference_steps: 10,
                ..Default::default()
            },
        ),
        (
            "fewer_token dz=1",
            SamplerConfig {
                strategy: Strategy::FewerToken,
                delta_z: 1,
                ..Default::default()
            },
        ),
        (
            "fewer_token dz=4",
            SamplerConfig {
                strategy: Strategy::FewerToken,
                delta_z: 4,
                ..Default::default()
            },
        ),
        (
            "purity dz=1",
            SamplerConfig {
                strategy: Strategy::Purity,
                delta_z: 1,
                purity_scale: 1.0,
                ..Default::default()
            },
        ),
    ] {
        let mut seed = 0u64;
        group.bench_function(name, |b| {
            b.iter_batched(
                || {
                    seed += 1;
                    ChaCha8Rng::seed_from_u64(seed)
                },
                |mut rng| sample(&oracle, Condition::Class(1), &cfg, &s, 4, 4, &mut rng),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, transition_kernels, denoisers, samplers);
criterion_main!(benches);
