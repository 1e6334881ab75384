//! Reverse-process samplers.
//!
//! Four strategies share one clean-token predictor:
//!
//! * `Vanilla` walks every step `T..1`, sampling each position from the
//!   reparameterized reverse distribution.
//! * `Fast` does the same over a uniformly strided subsequence of steps.
//! * `FewerToken` recovers exactly `delta_z` masked positions per iteration,
//!   chosen uniformly, writing sampled clean tokens into them. The step fed to
//!   the denoiser is re-estimated from the remaining mask count.
//! * `Purity` is `FewerToken` with purity-driven position selection and
//!   purity-sharpened clean-token distributions.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, Denoiser, ProbField};
use crate::error::{Error, Result};
use crate::guidance::{guided_predict, softmax_into, GuidanceConfig};
use crate::schedule::NoiseSchedule;
use crate::transition::{reverse_step_dist, TokenGrid};

/// Chain restarts allowed after off-manifold or unreachable states.
pub const MAX_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Vanilla,
    Fast,
    FewerToken,
    Purity,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Fast => "fast",
            Strategy::FewerToken => "fewer_token",
            Strategy::Purity => "purity",
        }
    }
}

/// How the purity strategy picks positions to recover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Successive draws without replacement, proportional to purity.
    #[default]
    Weighted,
    /// The `delta_z` highest-purity positions; ties go to the lower index.
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Visited steps for `Fast`.
    pub inference_steps: usize,
    /// Positions recovered per iteration for `FewerToken` and `Purity`.
    pub delta_z: usize,
    pub purity_scale: f64,
    pub selection: Selection,
    pub guidance: GuidanceConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Vanilla,
            inference_steps: 1,
            delta_z: 1,
            purity_scale: 0.0,
            selection: Selection::Weighted,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.delta_z == 0 {
            return Err(Error::invalid("delta_z", "must be at least 1"));
        }
        if self.inference_steps == 0 {
            return Err(Error::invalid("inference_steps", "must be at least 1"));
        }
        if self.strategy == Strategy::Fast && self.inference_steps > schedule.steps() {
            return Err(Error::invalid(
                "inference_steps",
                format!("{} exceeds T={}", self.inference_steps, schedule.steps()),
            ));
        }
        if !self.purity_scale.is_finite() || self.purity_scale < 0.0 {
            return Err(Error::invalid("purity_scale", "must be finite and >= 0"));
        }
        self.guidance.validate(schedule.vocab())
    }
}

/// One iteration of a chain: the step used for prediction, the grid after the
/// update, and the positions that left MASK during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub mask_count: usize,
    pub recovered: Vec<usize>,
    pub grid: TokenGrid,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleTrace {
    pub steps: Vec<TraceStep>,
    /// Chains discarded before this one completed.
    pub restarts: usize,
    /// Fewer-token/purity iterations whose state the denoiser rejected as off-manifold.
    /// Recovered tokens are final, so such a chain can no longer match any template;
    /// it is completed from the no-evidence prediction instead of being discarded.
    pub off_manifold_steps: usize,
}

impl SampleTrace {
    pub fn final_grid(&self) -> Option<&TokenGrid> {
        self.steps.last().map(|s| &s.grid)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// JSON lines, one object per step: `{t, mask_count, recovered, grid}`.
    pub fn to_json_lines(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace serialization cannot fail") + "\n")
            .collect()
    }
}

/// The clean-token prediction used by every strategy: guided for class conditions,
/// plain for NULL.
fn predict_x0(
    d: &dyn Denoiser,
    x_t: &TokenGrid,
    t: usize,
    cond: Condition,
    guidance: &GuidanceConfig,
) -> Result<ProbField> {
    match cond {
        Condition::Class(y) => guided_predict(d, x_t, t, y, guidance),
        Condition::Null => d.predict(x_t, t, Condition::Null),
    }
}

/// Initial state drawn from `q(x_T | x_0)`; all-MASK under a schedule ending fully masked.
///
/// The terminal distribution depends on the clean token only through `cum_alpha[T]`,
/// which must be zero: otherwise `p(x_T)` is not data-independent.
pub fn init_state<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<TokenGrid> {
    let terminal = schedule.cumulative(schedule.steps());
    if terminal.alpha > 0.0 {
        return Err(Error::invalid(
            "cum_alpha",
            "terminal cum_alpha must be zero for a data-independent initial state",
        ));
    }
    let mask = schedule.mask_token();
    if terminal.gamma == 1.0 {
        return Ok(TokenGrid::filled(h, w, mask));
    }
    let vocab = schedule.vocab();
    let mut weights = vec![terminal.beta; vocab + 1];
    weights[vocab] = terminal.gamma;
    let tokens = (0..h * w)
        .map(|_| crate::transition::sample_index(&weights, rng) as u32 + 1)
        .collect();
    TokenGrid::new(h, w, tokens)
}

/// Uniformly strided decreasing steps `T = t_0 > ... > t_n = 0` with `n = inference_steps`.
pub fn strided_timesteps(steps: usize, inference_steps: usize) -> Vec<usize> {
    (0..=inference_steps)
        .map(|k| steps * (inference_steps - k) / inference_steps)
        .collect()
}

/// The step whose cumulative mask rate is nearest the observed mask fraction.
/// Ties go to the smaller step.
pub fn timestep_from_mask_count(
    schedule: &NoiseSchedule,
    mask_count: usize,
    positions: usize,
) -> usize {
    let frac = mask_count as f64 / positions as f64;
    let mut best = (0, f64::INFINITY);
    for t in 0..=schedule.steps() {
        let dist = (frac - schedule.cum_gamma(t)).abs();
        if dist < best.1 {
            best = (t, dist);
        }
    }
    best.0
}

/// Confidence of position `i`: its largest clean-token probability.
pub fn purity(x0_probs: &ProbField, i: usize) -> f64 {
    x0_probs.row(i).iter().copied().fold(0.0, f64::max)
}

/// Raises each row to the power `1 + purity * r` and renormalizes.
pub fn purity_sharpen(x0_probs: &ProbField, r: f64) -> ProbField {
    let mut out = x0_probs.clone();
    if r == 0.0 {
        return out;
    }
    let mut logits = vec![0.0; x0_probs.k];
    for i in 0..x0_probs.positions() {
        let exponent = 1.0 + purity(x0_probs, i) * r;
        for (l, &p) in logits.iter_mut().zip(x0_probs.row(i)) {
            *l = exponent * p.ln();
        }
        softmax_into(&logits, out.row_mut(i));
    }
    out
}

/// Runs the configured strategy.
///
/// Vanilla and fast chains restart (up to [`MAX_RESTARTS`] times) when the denoiser rejects
/// a state as off-manifold; fewer-token and purity chains continue from the no-evidence
/// prediction instead, see [`SampleTrace::off_manifold_steps`].
pub fn sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    cfg.validate(schedule)?;
    if d.vocab() != schedule.vocab() {
        return Err(Error::invalid("k", "denoiser and schedule disagree on K"));
    }
    if matches!(cfg.strategy, Strategy::FewerToken | Strategy::Purity) {
        return fewer_token_chain(d, cond, cfg, schedule, h, w, rng);
    }
    let timesteps = match cfg.strategy {
        Strategy::Fast => strided_timesteps(schedule.steps(), cfg.inference_steps),
        _ => (0..=schedule.steps()).rev().collect(),
    };
    let mut last = String::new();
    for restarts in 0..=MAX_RESTARTS {
        match strided_chain(d, cond, cfg, schedule, &timesteps, h, w, rng) {
            Ok(mut trace) => {
                trace.restarts = restarts;
                return Ok(trace);
            }
            Err(e @ (Error::OffManifold { .. } | Error::Unreachable(_))) => last = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::RestartsExhausted {
        attempts: MAX_RESTARTS,
        last,
    })
}

/// Ancestral sampling over every step.
pub fn vanilla_sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let cfg = SamplerConfig {
        strategy: Strategy::Vanilla,
        ..*cfg
    };
    sample(d, cond, &cfg, schedule, h, w, rng)
}

/// Ancestral sampling over `cfg.inference_steps` uniformly strided steps.
pub fn fast_sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let cfg = SamplerConfig {
        strategy: Strategy::Fast,
        ..*cfg
    };
    sample(d, cond, &cfg, schedule, h, w, rng)
}

/// Recovers `cfg.delta_z` uniformly chosen masked positions per iteration.
pub fn fewer_token_sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let cfg = SamplerConfig {
        strategy: Strategy::FewerToken,
        ..*cfg
    };
    sample(d, cond, &cfg, schedule, h, w, rng)
}

/// Recovers `cfg.delta_z` purity-selected positions per iteration from sharpened predictions.
pub fn purity_sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let cfg = SamplerConfig {
        strategy: Strategy::Purity,
        ..*cfg
    };
    sample(d, cond, &cfg, schedule, h, w, rng)
}

#[allow(clippy::too_many_arguments)]
fn strided_chain<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    timesteps: &[usize],
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let mask = schedule.mask_token();
    let mut x = init_state(schedule, h, w, rng)?;
    let mut trace = SampleTrace::default();
    for pair in timesteps.windows(2) {
        let (t_to, t_from) = (pair[0], pair[1]);
        let x0_probs = predict_x0(d, &x, t_to, cond, &cfg.guidance)?;
        let mut next = Vec::with_capacity(x.len());
        for (i, &xi) in x.tokens.iter().enumerate() {
            let dist = reverse_step_dist(xi, x0_probs.row(i), t_to, t_from, schedule)?;
            next.push(dist.sample(rng));
        }
        let recovered = (0..x.len())
            .filter(|&i| x.tokens[i] == mask && next[i] != mask)
            .collect();
        x.tokens = next;
        trace.steps.push(TraceStep {
            t: t_to,
            mask_count: x.count(mask),
            recovered,
            grid: x.clone(),
        });
    }
    Ok(trace)
}

fn fewer_token_chain<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cond: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    if !schedule.is_pure_mask() {
        return Err(Error::invalid(
            "eps_beta",
            "fewer-token and purity sampling need a pure-mask schedule ending fully masked",
        ));
    }
    let mask = schedule.mask_token();
    let positions = h * w;
    let mut x = init_state(schedule, h, w, rng)?;
    let mut t = schedule.steps();
    let mut trace = SampleTrace::default();
    loop {
        let masked = x.positions_of(mask);
        if masked.is_empty() {
            break;
        }
        let take = cfg.delta_z.min(masked.len());
        let x0_probs = match predict_x0(d, &x, t, cond, &cfg.guidance) {
            Err(Error::OffManifold { .. }) => {
                trace.off_manifold_steps += 1;
                predict_x0(
                    d,
                    &TokenGrid::filled(h, w, mask),
                    schedule.steps(),
                    cond,
                    &cfg.guidance,
                )?
            }
            other => other?,
        };
        let (chosen, values) = match cfg.strategy {
            Strategy::Purity => {
                let purities: Vec<f64> = masked.iter().map(|&i| purity(&x0_probs, i)).collect();
                let chosen = select_by_purity(&masked, &purities, take, cfg.selection, rng)?;
                (chosen, purity_sharpen(&x0_probs, cfg.purity_scale))
            }
            _ => {
                let chosen = index::sample(rng, masked.len(), take)
                    .into_iter()
                    .map(|j| masked[j])
                    .collect();
                (chosen, x0_probs)
            }
        };
        let mut chosen: Vec<usize> = chosen;
        chosen.sort_unstable();
        for &i in &chosen {
            x.tokens[i] = values.sample_at(i, rng);
        }
        let remaining = masked.len() - take;
        trace.steps.push(TraceStep {
            t,
            mask_count: remaining,
            recovered: chosen,
            grid: x.clone(),
        });
        // The denoiser is only defined on 1..=T, so keep t >= 1 while masks remain.
        t = timestep_from_mask_count(schedule, remaining, positions).max(1);
    }
    Ok(trace)
}

fn select_by_purity<R: Rng + ?Sized>(
    masked: &[usize],
    purities: &[f64],
    take: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match selection {
        Selection::TopK => {
            let mut order: Vec<usize> = (0..masked.len()).collect();
            order.sort_by(|&a, &b| purities[b].total_cmp(&purities[a]).then(a.cmp(&b)));
            Ok(order[..take].iter().map(|&j| masked[j]).collect())
        }
        Selection::Weighted => {
            let picked = index::sample_weighted(rng, masked.len(), |j| purities[j], take)
                .map_err(|e| Error::invalid("purity", e.to_string()))?;
            Ok(picked.into_iter().map(|j| masked[j]).collect())
        }
    }
}
