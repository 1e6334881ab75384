//! Transition-matrix mathematics for the mask-and-replace kernel.
//!
//! Token ids are 1-based: `1..=K` are regular tokens and `K + 1` is MASK.
//! A [`Categorical`] over `K + 1` states stores the probability of token `j`
//! at index `j - 1`, so MASK sits at index `K`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, Rates};

/// Tolerance on the total mass of a categorical distribution.
pub const MASS_TOL: f64 = 1e-9;

/// An `H x W` grid of token ids stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenGrid {
    pub h: usize,
    pub w: usize,
    pub tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(h: usize, w: usize, tokens: Vec<u32>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "grid extents must be positive, got {h}x{w}"
            )));
        }
        if tokens.len() != h * w {
            return Err(Error::Shape(format!(
                "{h}x{w} grid needs {} tokens, got {}",
                h * w,
                tokens.len()
            )));
        }
        Ok(Self { h, w, tokens })
    }

    /// Grid with every position set to `token`.
    pub fn filled(h: usize, w: usize, token: u32) -> Self {
        Self {
            h,
            w,
            tokens: vec![token; h * w],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks every token lies in `1..=K+1`.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        let mask = vocab as u32 + 1;
        match self.tokens.iter().position(|&x| x == 0 || x > mask) {
            Some(i) => Err(Error::invalid(
                "tokens",
                format!(
                    "token {} at position {i} outside 1..={mask}",
                    self.tokens[i]
                ),
            )),
            None => Ok(()),
        }
    }

    pub fn count(&self, token: u32) -> usize {
        self.tokens.iter().filter(|&&x| x == token).count()
    }

    /// Positions holding `token`, in ascending order.
    pub fn positions_of(&self, token: u32) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter_map(|(i, &x)| (x == token).then_some(i))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: TokenGrid = serde_json::from_str(s)?;
        TokenGrid::new(g.h, g.w, g.tokens)
    }
}

/// A discrete distribution over token states.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Wraps a probability vector, checking non-negativity and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Shape("empty categorical".into()));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid(
                "probs",
                "entries must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid("probs", format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights. `None` when the total mass is zero.
    pub fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Some(Self { probs: weights })
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Probability of 1-based token id `token`.
    pub fn prob(&self, token: u32) -> f64 {
        self.probs[token as usize - 1]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Draws a 1-based token id.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_index(&self.probs, rng) as u32 + 1
    }

    /// Half the L1 distance to `other`.
    pub fn total_variation(&self, other: &Categorical) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Index drawn proportionally to `weights` (which need not be normalized).
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(weights)
        .expect("weights must contain positive finite mass")
        .sample(rng)
}

fn check_token(token: u32, vocab: usize, allow_mask: bool) -> Result<()> {
    let max = if allow_mask { vocab + 1 } else { vocab };
    if token == 0 || token as usize > max {
        return Err(Error::invalid(
            "token",
            format!("token id {token} outside 1..={max}"),
        ));
    }
    Ok(())
}

/// Probability `q(x_next = to | x_prev = from)` under one transition with `rates`.
fn forward_prob(to: u32, from: u32, rates: Rates, vocab: usize) -> f64 {
    let mask = vocab as u32 + 1;
    match (from == mask, to == mask) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        (false, true) => rates.gamma,
        (false, false) if to == from => rates.alpha + rates.beta,
        (false, false) => rates.beta,
    }
}

/// Column `Q v(x_prev)` of a mask-and-replace transition: the distribution of the next state.
pub fn transition_column(x_prev: u32, rates: Rates, vocab: usize) -> Result<Categorical> {
    check_token(x_prev, vocab, true)?;
    let probs = (1..=vocab as u32 + 1)
        .map(|to| forward_prob(to, x_prev, rates, vocab))
        .collect();
    Ok(Categorical { probs })
}

/// Closed-form `Q_t ... Q_1 v(x_0)` given cumulative rates.
pub fn cumulative_column(x0: u32, cum: Rates, vocab: usize) -> Result<Categorical> {
    check_token(x0, vocab, false)?;
    transition_column(x0, cum, vocab)
}

/// Corrupts every position of `x0` independently to step `t`.
pub fn sample_forward<R: Rng + ?Sized>(
    x0: &TokenGrid,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<TokenGrid> {
    if t > schedule.steps() {
        return Err(Error::invalid(
            "t",
            format!("{t} exceeds T={}", schedule.steps()),
        ));
    }
    let vocab = schedule.vocab();
    let cum = schedule.cumulative(t);
    let mut tokens = Vec::with_capacity(x0.len());
    for &x in &x0.tokens {
        let col = cumulative_column(x, cum, vocab)?;
        tokens.push(col.sample(rng));
    }
    Ok(TokenGrid {
        h: x0.h,
        w: x0.w,
        tokens,
    })
}

/// Unnormalized posterior weights over `x_{t_from}` given `x_{t_to}` and `x_0`.
fn posterior_weights(
    x_t: u32,
    x0: u32,
    seg: Rates,
    prior: Rates,
    vocab: usize,
) -> impl Iterator<Item = f64> {
    (1..=vocab as u32 + 1)
        .map(move |mid| forward_prob(x_t, mid, seg, vocab) * forward_prob(mid, x0, prior, vocab))
}

/// `q(x_{t_from} | x_{t_to}, x_0)` for `t_from < t_to`.
///
/// The forward factor uses the composite rates of steps `t_from + 1 ..= t_to`
/// and the prior factor the cumulative rates at `t_from`.
pub fn strided_posterior(
    x_t: u32,
    x0: u32,
    t_to: usize,
    t_from: usize,
    schedule: &NoiseSchedule,
) -> Result<Categorical> {
    let vocab = schedule.vocab();
    check_token(x_t, vocab, true)?;
    check_token(x0, vocab, false)?;
    let seg = schedule.segment_rates(t_from, t_to)?;
    let prior = schedule.cumulative(t_from);
    let weights: Vec<f64> = posterior_weights(x_t, x0, seg, prior, vocab).collect();
    Categorical::from_weights(weights).ok_or_else(|| {
        Error::Unreachable(format!(
            "x_t={x_t} at t={t_to} cannot be produced from x_0={x0}"
        ))
    })
}

/// The single-step reverse posterior `q(x_{t-1} | x_t, x_0)`.
pub fn posterior(x_t: u32, x0: u32, t: usize, schedule: &NoiseSchedule) -> Result<Categorical> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::invalid(
            "t",
            format!("must lie in 1..={}, got {t}", schedule.steps()),
        ));
    }
    strided_posterior(x_t, x0, t, t - 1, schedule)
}

/// Reverse step distribution `sum_j q(x_{t_from} | x_{t_to}, x_0 = j) p(x_0 = j)`.
///
/// Terms whose clean token cannot produce `x_t` contribute nothing; the mixture is renormalized.
pub fn reverse_step_dist(
    x_t: u32,
    x0_probs: &[f64],
    t_to: usize,
    t_from: usize,
    schedule: &NoiseSchedule,
) -> Result<Categorical> {
    let vocab = schedule.vocab();
    if x0_probs.len() != vocab {
        return Err(Error::Shape(format!(
            "x0 distribution has {} entries, expected K={vocab}",
            x0_probs.len()
        )));
    }
    check_token(x_t, vocab, true)?;
    let seg = schedule.segment_rates(t_from, t_to)?;
    let prior = schedule.cumulative(t_from);
    let mut mix = vec![0.0; vocab + 1];
    for (j, &p) in x0_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let weights: Vec<f64> = posterior_weights(x_t, j as u32 + 1, seg, prior, vocab).collect();
        let norm: f64 = weights.iter().sum();
        if norm == 0.0 {
            continue;
        }
        for (m, w) in mix.iter_mut().zip(&weights) {
            *m += p * w / norm;
        }
    }
    Categorical::from_weights(mix).ok_or_else(|| {
        Error::Unreachable(format!(
            "x_t={x_t} at t={t_to} is unreachable from every clean token with positive mass"
        ))
    })
}

/// Probability that a masked position stays masked from `t_to` back to `t_from`:
/// `cum_gamma[t_from] / cum_gamma[t_to]`, independent of the clean token.
pub fn mask_persistence(t_to: usize, t_from: usize, schedule: &NoiseSchedule) -> Result<f64> {
    if t_from > t_to || t_to > schedule.steps() {
        return Err(Error::invalid(
            "t_from",
            format!("need t_from <= t_to <= T, got ({t_from}, {t_to})"),
        ));
    }
    let denom = schedule.cum_gamma(t_to);
    if denom == 0.0 {
        return Err(Error::invalid("t_to", format!("cum_gamma[{t_to}] is zero")));
    }
    Ok(schedule.cum_gamma(t_from) / denom)
}
