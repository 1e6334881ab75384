use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maskdiff::sampler::Strategy;
use maskdiff::toybench::{make_pairs_dataset, make_template_dataset, TemplateSpec};
use maskdiff::{Condition, NoiseSchedule, SamplerConfig, TemplateSet};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub schedule: ScheduleConfig,
    pub dataset: DatasetSource,
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Axis lists for `sweep`.
    #[serde(default)]
    pub axes: Option<Axes>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(alias = "T")]
    pub steps: usize,
    #[serde(alias = "K")]
    pub vocab: usize,
    #[serde(default)]
    pub eps_beta: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.vocab, self.eps_beta).context("schedule")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Pairs,
    File(PathBuf),
    Inline(TemplateSet),
    Generate(TemplateSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserConfig {
    Oracle,
    Count {
        n_draws: u64,
        drop_frac: f64,
        #[serde(default)]
        seed: u64,
        /// Pre-fitted table written by `fit`; refitted in memory when absent.
        #[serde(default)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Class label to condition on; unconditional when absent.
    #[serde(default)]
    pub condition: Option<u32>,
}

impl EvaluationConfig {
    pub fn condition(&self) -> Condition {
        self.condition.map_or(Condition::Null, Condition::Class)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub strategy: Option<Vec<Strategy>>,
    #[serde(default)]
    pub delta_z: Option<Vec<usize>>,
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    #[serde(default)]
    pub purity_scale: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::File(p) = &mut cfg.dataset {
            resolve(p);
        }
        if let DenoiserConfig::Count { file: Some(p), .. } = &mut cfg.denoiser {
            resolve(p);
        }
        cfg.output.csv.as_mut().map(resolve);
        cfg.output.trace.as_mut().map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            );
        }
        if self.evaluation.n_samples == 0 {
            bail!("n_samples: must be at least 1");
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<TemplateSet> {
        let ts = match &self.dataset {
            DatasetSource::Pairs => make_pairs_dataset(),
            DatasetSource::File(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading dataset {}", p.display()))?;
                TemplateSet::from_json(&text).with_context(|| format!("dataset {}", p.display()))?
            }
            DatasetSource::Inline(ts) => {
                TemplateSet::new(ts.k, ts.h, ts.w, ts.classes, ts.templates.clone())
                    .context("dataset")?
            }
            DatasetSource::Generate(spec) => make_template_dataset(spec).context("dataset")?,
        };
        if ts.k != self.schedule.vocab {
            bail!(
                "k: dataset has K={}, schedule has vocab={}",
                ts.k,
                self.schedule.vocab
            );
        }
        if let Some(y) = self.evaluation.condition {
            if y == 0 || y > ts.classes {
                bail!("condition: class {y} outside 1..={}", ts.classes);
            }
        }
        Ok(ts)
    }
}
