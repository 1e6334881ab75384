//! Synthetic template datasets, exact-match metrics, and trend experiments.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{BayesOracle, Condition, CountDenoiser, Denoiser, Template, TemplateSet};
use crate::error::{Error, Result};
use crate::guidance::guided_predict;
use crate::sampler::{purity, sample, SamplerConfig, Selection, Strategy};
use crate::schedule::NoiseSchedule;
use crate::transition::{sample_forward, TokenGrid};

/// The two-sample data set `{AA, BB}` with equal weights, `A = 1`, `B = 2`.
pub fn make_pairs_dataset() -> TemplateSet {
    TemplateSet::new(
        2,
        1,
        2,
        1,
        vec![
            Template {
                tokens: vec![1, 1],
                class: 1,
                weight: 0.5,
            },
            Template {
                tokens: vec![2, 2],
                class: 1,
                weight: 0.5,
            },
        ],
    )
    .expect("pairs data set is valid")
}

/// Parameters of a random template set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub n_templates: usize,
    pub n_classes: u32,
    pub seed: u64,
    /// Pin position 0 to token 1 in every template.
    #[serde(default)]
    pub constant_position: bool,
}

/// Largest support size enumerated explicitly instead of rejection-sampled.
const ENUMERATE_LIMIT: u64 = 1 << 16;

/// `n_templates` distinct uniformly random grids, classes assigned round-robin, uniform weights.
pub fn make_template_dataset(spec: &TemplateSpec) -> Result<TemplateSet> {
    let TemplateSpec {
        k,
        h,
        w,
        n_templates,
        n_classes,
        seed,
        constant_position,
    } = *spec;
    if k == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(
            "k",
            "vocabulary and grid extents must be positive",
        ));
    }
    if n_classes == 0 || n_templates < n_classes as usize {
        return Err(Error::invalid(
            "n_templates",
            "need n_templates >= n_classes >= 1",
        ));
    }
    let free = h * w - usize::from(constant_position);
    let capacity = (k as u64).checked_pow(free as u32).unwrap_or(u64::MAX);
    if n_templates as u64 > capacity {
        return Err(Error::invalid(
            "n_templates",
            format!("{n_templates} distinct grids requested but only {capacity} exist"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decode = |mut code: u64| -> Vec<u32> {
        let mut tokens = Vec::with_capacity(h * w);
        if constant_position {
            tokens.push(1);
        }
        for _ in 0..free {
            tokens.push((code % k as u64) as u32 + 1);
            code /= k as u64;
        }
        tokens
    };
    let grids: Vec<Vec<u32>> = if capacity <= ENUMERATE_LIMIT {
        index::sample(&mut rng, capacity as usize, n_templates)
            .into_iter()
            .map(|code| decode(code as u64))
            .collect()
    } else {
        let mut seen = HashSet::with_capacity(n_templates);
        let mut grids = Vec::with_capacity(n_templates);
        while grids.len() < n_templates {
            let mut tokens = Vec::with_capacity(h * w);
            if constant_position {
                tokens.push(1);
            }
            tokens.extend((0..free).map(|_| rng.gen_range(1..=k as u32)));
            if seen.insert(tokens.clone()) {
                grids.push(tokens);
            }
        }
        grids
    };
    let templates = grids
        .into_iter()
        .enumerate()
        .map(|(m, tokens)| Template {
            tokens,
            class: (m % n_classes as usize) as u32 + 1,
            weight: 1.0,
        })
        .collect();
    TemplateSet::new(k, h, w, n_classes, templates)
}

/// Sample-quality summary against a template set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tv_distance: f64,
    pub validity_rate: f64,
    pub class_accuracy: f64,
    pub coverage: f64,
    pub entropy: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Top-1 accuracy of recovered positions; only set by the purity probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_accuracy: Option<f64>,
}

/// Exact-match evaluation of `samples` against `ts`.
///
/// `labels` holds one condition per sample, or a single condition shared by all.
/// The reference distribution mixes the class-conditional template distributions
/// by label frequency (NULL labels use the full joint). Samples matching no
/// template fall into a single invalid bin.
pub fn evaluate(
    samples: &[TokenGrid],
    ts: &TemplateSet,
    labels: &[Condition],
    seed: u64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "at least one sample is required"));
    }
    if labels.len() != 1 && labels.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            samples.len()
        )));
    }
    let label_of = |i: usize| {
        if labels.len() == 1 {
            labels[0]
        } else {
            labels[i]
        }
    };

    // Distinct template grids form the bins; duplicates pool their weight.
    let mut bin_of: HashMap<&[u32], usize> = HashMap::new();
    let mut bin_classes: Vec<Vec<u32>> = Vec::new();
    let mut template_bin = Vec::with_capacity(ts.templates.len());
    for tpl in &ts.templates {
        let next = bin_of.len();
        let b = *bin_of.entry(tpl.tokens.as_slice()).or_insert(next);
        if b == bin_classes.len() {
            bin_classes.push(Vec::new());
        }
        bin_classes[b].push(tpl.class);
        template_bin.push(b);
    }
    let n_bins = bin_classes.len();

    let mut label_counts: HashMap<Condition, usize> = HashMap::new();
    for i in 0..samples.len() {
        *label_counts.entry(label_of(i)).or_default() += 1;
    }
    let mut reference = vec![0.0; n_bins];
    let mut conds: Vec<_> = label_counts.into_iter().collect();
    conds.sort_by_key(|(c, _)| c.label());
    for (cond, count) in conds {
        let share = count as f64 / samples.len() as f64;
        for (m, p) in ts.prior(cond)?.into_iter().enumerate() {
            reference[template_bin[m]] += share * p;
        }
    }

    let mut hits = vec![0usize; n_bins];
    let mut invalid = 0usize;
    let mut correct = 0usize;
    // ordered so the entropy sum does not depend on hash seeds
    let mut distinct: BTreeMap<&[u32], usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        *distinct.entry(s.tokens.as_slice()).or_default() += 1;
        match bin_of.get(s.tokens.as_slice()) {
            Some(&b) => {
                hits[b] += 1;
                let ok = match label_of(i) {
                    Condition::Class(y) => bin_classes[b].contains(&y),
                    Condition::Null => true,
                };
                correct += usize::from(ok);
            }
            None => invalid += 1,
        }
    }
    let n = samples.len() as f64;
    let tv = 0.5
        * (hits
            .iter()
            .zip(&reference)
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .sum::<f64>()
            + invalid as f64 / n);
    let entropy = -distinct
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    Ok(MetricsReport {
        tv_distance: tv.min(1.0),
        validity_rate: (samples.len() - invalid) as f64 / n,
        class_accuracy: correct as f64 / n,
        coverage: hits.iter().filter(|&&c| c > 0).count() as f64 / n_bins as f64,
        entropy: entropy.max(0.0),
        n_samples: samples.len(),
        seed,
        recovery_accuracy: None,
    })
}

/// Which clean-token predictor an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Oracle,
    Count {
        n_draws: u64,
        drop_frac: f64,
        seed: u64,
    },
}

/// Either an exact oracle borrowing the data set or a fitted count table.
pub enum BuiltDenoiser<'a> {
    Oracle(BayesOracle<'a>),
    Count(CountDenoiser),
}

impl BuiltDenoiser<'_> {
    pub fn as_dyn(&self) -> &dyn Denoiser {
        match self {
            BuiltDenoiser::Oracle(o) => o,
            BuiltDenoiser::Count(c) => c,
        }
    }
}

impl DenoiserSpec {
    pub fn build<'a>(
        &self,
        ts: &'a TemplateSet,
        schedule: &'a NoiseSchedule,
    ) -> Result<BuiltDenoiser<'a>> {
        Ok(match *self {
            DenoiserSpec::Oracle => BuiltDenoiser::Oracle(BayesOracle::new(ts, schedule)?),
            DenoiserSpec::Count {
                n_draws,
                drop_frac,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                BuiltDenoiser::Count(CountDenoiser::fit(
                    ts, schedule, n_draws, drop_frac, &mut rng,
                )?)
            }
        })
    }
}

/// Runs `n_samples` chains with seeds `base_seed + i` and returns the final grids in chain order.
#[allow(clippy::too_many_arguments)]
pub fn run_chains(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<TokenGrid>> {
    (0..n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
            let trace = sample(d, cond, cfg, schedule, h, w, &mut rng)?;
            Ok(trace
                .final_grid()
                .cloned()
                .unwrap_or_else(|| TokenGrid::filled(h, w, schedule.mask_token())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendKind {
    /// Fewer-token sampling across the `delta_z` axis.
    StepCount,
    /// Guidance scale sweep with a class condition.
    GuidanceSweep,
    /// Uniform vs. purity-driven recovery.
    PurityAb,
    /// One-shot parallel decode vs. one-token-at-a-time decode.
    ParallelVsSequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendConfig {
    pub schedule_steps: usize,
    pub denoiser: DenoiserSpec,
    pub cond: Condition,
    pub base: SamplerConfig,
    pub n_samples: usize,
    /// Paired seeds: every cell reuses this list.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub delta_z: Vec<usize>,
    #[serde(default)]
    pub scales: Vec<f64>,
    /// Probe steps and recovered positions per probe for `PurityAb`.
    #[serde(default)]
    pub probe_steps: Vec<usize>,
    #[serde(default)]
    pub probes_per_seed: usize,
}

/// One configuration of a trend experiment and its per-seed reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCell {
    pub label: String,
    pub sampler: SamplerConfig,
    pub reports: Vec<MetricsReport>,
}

impl TrendCell {
    pub fn mean(&self, f: impl Fn(&MetricsReport) -> f64) -> f64 {
        self.reports.iter().map(f).sum::<f64>() / self.reports.len() as f64
    }
}

/// Runs the configuration matrix of `kind` over `ts`, one report per (cell, seed).
pub fn run_trend_experiment(
    kind: TrendKind,
    ts: &TemplateSet,
    cfg: &TrendConfig,
) -> Result<Vec<TrendCell>> {
    if cfg.seeds.is_empty() || cfg.n_samples == 0 {
        return Err(Error::invalid(
            "seeds",
            "need at least one seed and one sample",
        ));
    }
    let schedule = NoiseSchedule::linear(cfg.schedule_steps, ts.k, 0.0)?;
    let built = cfg.denoiser.build(ts, &schedule)?;
    let d = built.as_dyn();
    let cells: Vec<(String, SamplerConfig)> = match kind {
        TrendKind::StepCount => cfg
            .delta_z
            .iter()
            .map(|&dz| {
                (
                    format!("delta_z={dz}"),
                    SamplerConfig {
                        strategy: Strategy::FewerToken,
                        delta_z: dz,
                        ..cfg.base
                    },
                )
            })
            .collect(),
        TrendKind::GuidanceSweep => cfg
            .scales
            .iter()
            .map(|&s| {
                let mut c = cfg.base;
                c.guidance.scale = s;
                (format!("s={s}"), c)
            })
            .collect(),
        TrendKind::ParallelVsSequential => vec![
            (
                "one_shot".into(),
                SamplerConfig {
                    strategy: Strategy::Fast,
                    inference_steps: 1,
                    ..cfg.base
                },
            ),
            (
                "sequential".into(),
                SamplerConfig {
                    strategy: Strategy::FewerToken,
                    delta_z: 1,
                    ..cfg.base
                },
            ),
        ],
        TrendKind::PurityAb => vec![
            (
                "uniform".into(),
                SamplerConfig {
                    strategy: Strategy::FewerToken,
                    ..cfg.base
                },
            ),
            (
                "purity".into(),
                SamplerConfig {
                    strategy: Strategy::Purity,
                    ..cfg.base
                },
            ),
        ],
    };
    if cells.is_empty() {
        return Err(Error::invalid("axes", "experiment axis is empty"));
    }
    let mut out = Vec::with_capacity(cells.len());
    for (label, sampler) in cells {
        let mut reports = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let grids = run_chains(
                d,
                cfg.cond,
                &sampler,
                &schedule,
                ts.h,
                ts.w,
                cfg.n_samples,
                seed,
            )?;
            let mut report = evaluate(&grids, ts, &[cfg.cond], seed)?;
            if kind == TrendKind::PurityAb {
                let selection = (sampler.strategy == Strategy::Purity).then_some(sampler.selection);
                report.recovery_accuracy = Some(recovery_accuracy(
                    d, ts, &schedule, cfg, &sampler, selection, seed,
                )?);
            }
            reports.push(report);
        }
        out.push(TrendCell {
            label,
            sampler,
            reports,
        });
    }
    Ok(out)
}

/// Mean top-1 accuracy of the clean-token prediction at positions chosen for recovery.
///
/// Each probe draws a template (restricted to the condition's class), corrupts it to a
/// probe step, selects `delta_z` masked positions (uniformly when `selection` is `None`,
/// otherwise by purity) and scores the argmax prediction against the true token.
fn recovery_accuracy(
    d: &dyn Denoiser,
    ts: &TemplateSet,
    schedule: &NoiseSchedule,
    cfg: &TrendConfig,
    sampler: &SamplerConfig,
    selection: Option<Selection>,
    seed: u64,
) -> Result<f64> {
    if cfg.probe_steps.is_empty()
        || cfg
            .probe_steps
            .iter()
            .any(|&t| t == 0 || t > schedule.steps())
    {
        return Err(Error::invalid(
            "probe_steps",
            format!("need steps in 1..={}", schedule.steps()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = ts.prior(cfg.cond)?;
    let mask = schedule.mask_token();
    let (mut hits, mut total) = (0usize, 0usize);
    for probe in 0..cfg.probes_per_seed {
        let t = cfg.probe_steps[probe % cfg.probe_steps.len()];
        let m = crate::transition::sample_index(&prior, &mut rng);
        let x0 = ts.grid(m);
        let x_t = sample_forward(&x0, t, schedule, &mut rng)?;
        let masked = x_t.positions_of(mask);
        if masked.is_empty() {
            continue;
        }
        let probs = match cfg.cond {
            Condition::Class(y) => guided_predict(d, &x_t, t, y, &sampler.guidance)?,
            Condition::Null => d.predict(&x_t, t, Condition::Null)?,
        };
        let take = sampler.delta_z.min(masked.len());
        let chosen: Vec<usize> = match selection {
            None => index::sample(&mut rng, masked.len(), take)
                .into_iter()
                .map(|j| masked[j])
                .collect(),
            Some(Selection::TopK) => {
                let mut order = masked.clone();
                order.sort_by(|&a, &b| {
                    purity(&probs, b)
                        .total_cmp(&purity(&probs, a))
                        .then(a.cmp(&b))
                });
                order.truncate(take);
                order
            }
            Some(Selection::Weighted) => {
                index::sample_weighted(&mut rng, masked.len(), |j| purity(&probs, masked[j]), take)
                    .map_err(|e| Error::invalid("purity", e.to_string()))?
                    .into_iter()
                    .map(|j| masked[j])
                    .collect()
            }
        };
        for i in chosen {
            let row = probs.row(i);
            let argmax =
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            hits += usize::from(argmax as u32 + 1 == x0.tokens[i]);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid(
            "probe_steps",
            "no probe produced a masked position",
        ));
    }
    Ok(hits as f64 / total as f64)
}
