use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use maskdiff::sampler::{sample, SampleTrace};
use maskdiff::toybench::evaluate;
use maskdiff::{
    Condition, CountDenoiser, Denoiser, MetricsReport, NoiseSchedule, SamplerConfig, TemplateSet,
    TokenGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{DenoiserConfig, ExperimentConfig};

pub const EVAL_HEADER: &str =
    "strategy,delta_z,s,r,n_samples,seed,tv,validity,class_acc,coverage,entropy";

/// Marks an error as a sampling failure rather than a configuration problem.
#[derive(Debug)]
pub struct SamplingFailure(pub maskdiff::Error);

impl std::fmt::Display for SamplingFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sampling failed: {}", self.0)
    }
}

impl std::error::Error for SamplingFailure {}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn schedule(steps: usize, vocab: usize, eps_beta: f64, out: Option<&Path>) -> Result<()> {
    let s = NoiseSchedule::linear(steps, vocab, eps_beta)?;
    write_or_print(out, &s.to_csv())
}

fn fit_count(
    cfg: &ExperimentConfig,
    ts: &TemplateSet,
    schedule: &NoiseSchedule,
) -> Result<CountDenoiser> {
    let DenoiserConfig::Count {
        n_draws,
        drop_frac,
        seed,
        ..
    } = cfg.denoiser
    else {
        bail!("denoiser: `fit` needs a count denoiser, config has kind=oracle");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CountDenoiser::fit(
        ts, schedule, n_draws, drop_frac, &mut rng,
    )?)
}

pub fn fit(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let schedule = cfg.schedule.build()?;
    let ts = cfg.dataset()?;
    let d = fit_count(cfg, &ts, &schedule)?;
    fs::write(out, d.to_json()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "fitted count denoiser: draws={} drop_frac={} table_cells={} -> {}",
        d.n_draws,
        d.drop_frac,
        d.table_size(),
        out.display()
    );
    Ok(())
}

enum Loaded<'a> {
    Oracle(maskdiff::BayesOracle<'a>),
    Count(CountDenoiser),
}

impl Loaded<'_> {
    fn as_dyn(&self) -> &dyn Denoiser {
        match self {
            Loaded::Oracle(o) => o,
            Loaded::Count(c) => c,
        }
    }
}

fn load_denoiser<'a>(
    cfg: &ExperimentConfig,
    ts: &'a TemplateSet,
    schedule: &'a NoiseSchedule,
) -> Result<Loaded<'a>> {
    match &cfg.denoiser {
        DenoiserConfig::Oracle => Ok(Loaded::Oracle(maskdiff::BayesOracle::new(ts, schedule)?)),
        DenoiserConfig::Count { file: Some(p), .. } => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading denoiser {}", p.display()))?;
            let d = CountDenoiser::from_json(&text)
                .with_context(|| format!("denoiser {}", p.display()))?;
            d.check_schedule(schedule)?;
            if d.positions != ts.positions() || d.c != ts.classes {
                bail!("denoiser: fitted table does not match the dataset shape");
            }
            Ok(Loaded::Count(d))
        }
        DenoiserConfig::Count { .. } => Ok(Loaded::Count(fit_count(cfg, ts, schedule)?)),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| anyhow!("jobs: {e}"))
}

/// Runs chains `0..n` with seeds `base + i`; results are ordered by chain index.
#[allow(clippy::too_many_arguments)]
fn run_chains(
    pool: &rayon::ThreadPool,
    d: &dyn Denoiser,
    cond: Condition,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    ts: &TemplateSet,
    n: usize,
    base_seed: u64,
) -> Result<Vec<SampleTrace>> {
    sampler.validate(schedule)?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
                sample(d, cond, sampler, schedule, ts.h, ts.w, &mut rng)
                    .map_err(|e| anyhow!(SamplingFailure(e)))
            })
            .collect()
    })
}

fn final_grid(trace: &SampleTrace) -> &TokenGrid {
    trace
        .final_grid()
        .expect("every chain runs at least one step")
}

pub fn sample_cmd(cfg: &ExperimentConfig, out: Option<&Path>, jobs: usize) -> Result<()> {
    let schedule = cfg.schedule.build()?;
    let ts = cfg.dataset()?;
    let d = load_denoiser(cfg, &ts, &schedule)?;
    let pool = thread_pool(jobs)?;
    let traces = run_chains(
        &pool,
        d.as_dyn(),
        cfg.evaluation.condition(),
        &cfg.sampler,
        &schedule,
        &ts,
        cfg.evaluation.n_samples,
        cfg.evaluation.seed,
    )?;
    let mut text = String::new();
    for t in &traces {
        text.push_str(&final_grid(t).to_json());
        text.push('\n');
    }
    write_or_print(out, &text)?;
    if let Some(dir) = &cfg.output.trace {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, t) in traces.iter().enumerate() {
            let p = dir.join(format!("chain_{i:05}.jsonl"));
            fs::write(&p, t.to_json_lines()).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

pub fn csv_row(sampler: &SamplerConfig, r: &MetricsReport) -> String {
    format!(
        "{},{},{:?},{:?},{},{},{:?},{:?},{:?},{:?},{:?}",
        sampler.strategy.name(),
        sampler.delta_z,
        sampler.guidance.scale,
        sampler.purity_scale,
        r.n_samples,
        r.seed,
        r.tv_distance,
        r.validity_rate,
        r.class_accuracy,
        r.coverage,
        r.entropy
    )
}

fn read_samples(path: &Path) -> Result<Vec<TokenGrid>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading samples {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| TokenGrid::from_json(l).with_context(|| format!("samples line {}", i + 1)))
        .collect()
}

pub fn eval_cmd(cfg: &ExperimentConfig, samples: &Path, csv: Option<&Path>) -> Result<()> {
    let ts = cfg.dataset()?;
    let grids = read_samples(samples)?;
    if grids.is_empty() {
        bail!("samples: file {} holds no grids", samples.display());
    }
    let report = evaluate(
        &grids,
        &ts,
        &[cfg.evaluation.condition()],
        cfg.evaluation.seed,
    )?;
    let row = csv_row(&cfg.sampler, &report);
    match csv.or(cfg.output.csv.as_deref()) {
        Some(p) => {
            let fresh = !p.exists() || fs::metadata(p)?.len() == 0;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            if fresh {
                writeln!(f, "{EVAL_HEADER}")?;
            }
            writeln!(f, "{row}")?;
        }
        None => println!("{EVAL_HEADER}\n{row}"),
    }
    Ok(())
}

/// Cross product of the configured axes, in strategy, delta_z, scale, purity_scale order.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<SamplerConfig>> {
    let Some(axes) = &cfg.axes else {
        bail!("axes: sweep needs at least one axis list");
    };
    let base = cfg.sampler;
    fn axis<T: Clone>(name: &str, list: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
        match list {
            Some(v) if v.is_empty() => bail!("axes.{name}: axis list is empty"),
            Some(v) => Ok(v.clone()),
            None => Ok(vec![base]),
        }
    }
    let strategies = axis("strategy", &axes.strategy, base.strategy)?;
    let deltas = axis("delta_z", &axes.delta_z, base.delta_z)?;
    let scales = axis("scale", &axes.scale, base.guidance.scale)?;
    let purities = axis("purity_scale", &axes.purity_scale, base.purity_scale)?;
    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &delta_z in &deltas {
            for &scale in &scales {
                for &purity_scale in &purities {
                    let mut c = SamplerConfig {
                        strategy,
                        delta_z,
                        purity_scale,
                        ..base
                    };
                    c.guidance.scale = scale;
                    cells.push(c);
                }
            }
        }
    }
    Ok(cells)
}

pub fn sweep_cmd(cfg: &ExperimentConfig, csv: Option<&Path>, jobs: usize) -> Result<()> {
    let cells = sweep_cells(cfg)?;
    let schedule = cfg.schedule.build()?;
    let ts = cfg.dataset()?;
    let d = load_denoiser(cfg, &ts, &schedule)?;
    let pool = thread_pool(jobs)?;
    let cond = cfg.evaluation.condition();
    let mut text = format!("{EVAL_HEADER}\n");
    for cell in &cells {
        // every cell reuses the same chain seeds
        let traces = run_chains(
            &pool,
            d.as_dyn(),
            cond,
            cell,
            &schedule,
            &ts,
            cfg.evaluation.n_samples,
            cfg.evaluation.seed,
        )?;
        let grids: Vec<TokenGrid> = traces.iter().map(|t| final_grid(t).clone()).collect();
        let report = evaluate(&grids, &ts, &[cond], cfg.evaluation.seed)?;
        text.push_str(&csv_row(cell, &report));
        text.push('\n');
    }
    write_or_print(csv.or(cfg.output.csv.as_deref()), &text)
}
