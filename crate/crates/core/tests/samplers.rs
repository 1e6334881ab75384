//! Output distributions of the four strategies on small template sets.

use maskdiff::sampler::{sample, Selection, Strategy};
use maskdiff::toybench::run_chains;
use maskdiff::{
    evaluate, make_pairs_dataset, BayesOracle, Condition, NoiseSchedule, SamplerConfig, Template,
    TemplateSet, TokenGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn invalid_rate(grids: &[TokenGrid]) -> f64 {
    grids.iter().filter(|g| g.tokens[0] != g.tokens[1]).count() as f64 / grids.len() as f64
}

fn pairs_run(steps: usize, cfg: SamplerConfig, n: usize) -> Vec<TokenGrid> {
    let ts = make_pairs_dataset();
    let s = NoiseSchedule::linear(steps, 2, 0.0).unwrap();
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    run_chains(&oracle, Condition::Null, &cfg, &s, 1, 2, n, 0).unwrap()
}

#[test]
fn vanilla_invalid_mass_matches_enumeration() {
    // At T = 4 both positions first leave MASK together in each of the four steps with
    // probability 1/16 and then disagree half the time. A disagreement before the last
    // step is off-manifold and restarts the chain, so the output invalid rate is
    // (1/32) / (1 - 3/32) = 1/29.
    let n = 10_000;
    let grids = pairs_run(4, SamplerConfig::default(), n);
    let p = invalid_rate(&grids);
    let target = 1.0 / 29.0;
    let sigma = (target * (1.0 - target) / n as f64).sqrt();
    assert!((p - target).abs() < 3.0 * sigma, "invalid rate {p}");
}

#[test]
fn fewer_token_one_at_a_time_is_exact_on_pairs() {
    let n = 10_000;
    let cfg = SamplerConfig {
        strategy: Strategy::FewerToken,
        delta_z: 1,
        ..Default::default()
    };
    let grids = pairs_run(4, cfg, n);
    assert_eq!(invalid_rate(&grids), 0.0);
    let aa = grids.iter().filter(|g| g.tokens == [1, 1]).count() as f64 / n as f64;
    assert!(
        (aa - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(),
        "AA share {aa}"
    );
}

#[test]
fn fast_full_stride_is_vanilla() {
    let ts = make_pairs_dataset();
    let s = NoiseSchedule::linear(8, 2, 0.0).unwrap();
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    let fast = SamplerConfig {
        strategy: Strategy::Fast,
        inference_steps: 8,
        ..Default::default()
    };
    for seed in 0..200 {
        let a = sample(
            &oracle,
            Condition::Null,
            &SamplerConfig::default(),
            &s,
            1,
            2,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        let b = sample(
            &oracle,
            Condition::Null,
            &fast,
            &s,
            1,
            2,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        assert_eq!(a.unwrap(), b.unwrap());
    }
}

#[test]
fn fewer_fast_steps_means_more_invalid_samples() {
    let n = 10_000;
    let one_shot = pairs_run(
        8,
        SamplerConfig {
            strategy: Strategy::Fast,
            inference_steps: 1,
            ..Default::default()
        },
        n,
    );
    let full = pairs_run(
        8,
        SamplerConfig {
            strategy: Strategy::Fast,
            inference_steps: 8,
            ..Default::default()
        },
        n,
    );
    let (a, b) = (invalid_rate(&one_shot), invalid_rate(&full));
    assert!(a >= b, "{a} < {b}");
    assert!((a - 0.5).abs() < 0.03);
}

#[test]
fn whole_grid_step_equals_one_shot() {
    let ts = make_pairs_dataset();
    let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    let cfg = SamplerConfig {
        strategy: Strategy::FewerToken,
        delta_z: 2,
        ..Default::default()
    };
    let grids = run_chains(&oracle, Condition::Null, &cfg, &s, 1, 2, 10_000, 3).unwrap();
    assert!((invalid_rate(&grids) - 0.5).abs() < 0.03);
    let trace = sample(
        &oracle,
        Condition::Null,
        &cfg,
        &s,
        1,
        2,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(trace.len(), 1);
}

#[test]
fn single_template_under_every_strategy() {
    let ts = TemplateSet::new(
        3,
        2,
        2,
        1,
        vec![Template {
            tokens: vec![3, 1, 2, 3],
            class: 1,
            weight: 1.0,
        }],
    )
    .unwrap();
    let s = NoiseSchedule::linear(5, 3, 0.0).unwrap();
    let oracle = BayesOracle::new(&ts, &s).unwrap();
    for strategy in [
        Strategy::Vanilla,
        Strategy::Fast,
        Strategy::FewerToken,
        Strategy::Purity,
    ] {
        for selection in [Selection::Weighted, Selection::TopK] {
            let cfg = SamplerConfig {
                strategy,
                inference_steps: 2,
                delta_z: 3,
                purity_scale: 2.0,
                selection,
                ..Default::default()
            };
            for seed in 0..20 {
                let trace = sample(
                    &oracle,
                    Condition::Class(1),
                    &cfg,
                    &s,
                    2,
                    2,
                    &mut ChaCha8Rng::seed_from_u64(seed),
                )
                .unwrap();
                assert_eq!(
                    trace.final_grid().unwrap().tokens,
                    [3, 1, 2, 3],
                    "{strategy:?}"
                );
            }
        }
    }
}

#[test]
fn purity_without_sharpening_matches_uniform_in_distribution() {
    // Every masked position has the same purity on AA/BB, so weighted selection is uniform.
    let n = 10_000;
    let uniform = pairs_run(
        4,
        SamplerConfig {
            strategy: Strategy::FewerToken,
            ..Default::default()
        },
        n,
    );
    let purity = pairs_run(
        4,
        SamplerConfig {
            strategy: Strategy::Purity,
            ..Default::default()
        },
        n,
    );
    let share = |g: &[TokenGrid]| g.iter().filter(|g| g.tokens == [1, 1]).count() as f64 / n as f64;
    let (a, b) = (share(&uniform), share(&purity));
    // two-proportion z-test at alpha = 0.01
    let pooled = (a + b) / 2.0;
    let z = (a - b) / (pooled * (1.0 - pooled) * 2.0 / n as f64).sqrt();
    assert!(z.abs() < 2.576, "z = {z}");
}

#[test]
fn mask_count_shrinks_by_delta_z() {
    let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
    let big = TemplateSet::new(
        2,
        3,
        3,
        1,
        vec![Template {
            tokens: vec![1; 9],
            class: 1,
            weight: 1.0,
        }],
    )
    .unwrap();
    let big_oracle = BayesOracle::new(&big, &s).unwrap();
    for dz in 1..=9 {
        let cfg = SamplerConfig {
            strategy: Strategy::Purity,
            delta_z: dz,
            purity_scale: 1.0,
            ..Default::default()
        };
        let trace = sample(
            &big_oracle,
            Condition::Null,
            &cfg,
            &s,
            3,
            3,
            &mut ChaCha8Rng::seed_from_u64(dz as u64),
        )
        .unwrap();
        assert_eq!(trace.len(), 9usize.div_ceil(dz));
        let mut prev = 9;
        for step in &trace.steps {
            assert_eq!(step.mask_count, prev - dz.min(prev));
            assert_eq!(step.recovered.len(), dz.min(prev));
            assert!(step.recovered.iter().all(|&i| step.grid.tokens[i] != 3));
            prev = step.mask_count;
        }
    }
}

#[test]
fn report_fields_on_pairs() {
    let cfg = SamplerConfig {
        strategy: Strategy::FewerToken,
        ..Default::default()
    };
    let grids = pairs_run(4, cfg, 2000);
    let r = evaluate(&grids, &make_pairs_dataset(), &[Condition::Null], 9).unwrap();
    assert_eq!(r.validity_rate, 1.0);
    assert_eq!(r.coverage, 1.0);
    assert!((r.entropy - 2f64.ln()).abs() < 0.01);
    assert_eq!((r.n_samples, r.seed), (2000, 9));
}
