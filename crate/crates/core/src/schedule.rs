//! Mask-and-replace noise schedules.
//!
//! A schedule stores per-step rates `(alpha_t, beta_t, gamma_t)` for `t = 1..=T`
//! and cumulative rates for `t = 0..=T`, where index 0 is the identity state.
//! Every transition column satisfies `alpha + K * beta + gamma = 1`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance below zero tolerated for a derived `beta` before rejecting the schedule.
const NEGATIVE_BETA_TOL: f64 = 1e-12;
/// Derived `beta` values this close to zero are rounding residue and snap to exactly zero.
const BETA_SNAP: f64 = 1e-14;

/// The three rates of one mask-and-replace transition column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Probability of keeping the token (on top of the uniform `beta` share).
    pub alpha: f64,
    /// Probability of moving to each specific non-mask token.
    pub beta: f64,
    /// Probability of moving to MASK.
    pub gamma: f64,
}

impl Rates {
    pub const IDENTITY: Rates = Rates {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };

    /// `alpha + K * beta + gamma`.
    pub fn column_sum(&self, vocab: usize) -> f64 {
        self.alpha + vocab as f64 * self.beta + self.gamma
    }
}

/// Immutable noise schedule over `T` steps and a vocabulary of `K` non-mask tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    vocab: usize,
    // index 0 holds the identity rates so that step(t) indexing is direct
    step: Vec<Rates>,
    cumulative: Vec<Rates>,
}

impl NoiseSchedule {
    /// Linear cumulative schedule: `cum_gamma[t] = t/T` and
    /// `cum_alpha[t] = (1 - t/T)(1 - eps_beta * t/T)`. `eps_beta = 0` is a pure absorbing process.
    pub fn linear(steps: usize, vocab: usize, eps_beta: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&eps_beta) {
            return Err(Error::invalid(
                "eps_beta",
                format!("must lie in [0, 1), got {eps_beta}"),
            ));
        }
        let t_max = steps as f64;
        let mut cum_alpha = Vec::with_capacity(steps + 1);
        let mut cum_gamma = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            let frac = t as f64 / t_max;
            cum_gamma.push(frac);
            cum_alpha.push((1.0 - frac) * (1.0 - eps_beta * frac));
        }
        // Pin the endpoints exactly.
        cum_alpha[steps] = 0.0;
        cum_gamma[steps] = 1.0;
        Self::from_cumulative(vocab, &cum_alpha, &cum_gamma)
    }

    /// Builds a schedule from cumulative keep and mask rates indexed `0..=T`.
    ///
    /// Index 0 must be the identity state. Per-step rates are recovered from
    /// consecutive ratios; `cum_beta` is `(1 - cum_alpha - cum_gamma) / K`.
    pub fn from_cumulative(vocab: usize, cum_alpha: &[f64], cum_gamma: &[f64]) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::invalid("vocab", "must be at least 1"));
        }
        if cum_alpha.len() != cum_gamma.len() {
            return Err(Error::Shape(format!(
                "cum_alpha has {} entries, cum_gamma has {}",
                cum_alpha.len(),
                cum_gamma.len()
            )));
        }
        if cum_alpha.len() < 2 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if cum_alpha[0] != 1.0 || cum_gamma[0] != 0.0 {
            return Err(Error::invalid(
                "cum_alpha",
                "index 0 must be the identity state (cum_alpha=1, cum_gamma=0)",
            ));
        }
        let k = vocab as f64;
        let steps = cum_alpha.len() - 1;
        let mut cumulative = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            let (ca, cg) = (cum_alpha[t], cum_gamma[t]);
            if !(0.0..=1.0).contains(&ca) || !(0.0..=1.0).contains(&cg) {
                return Err(Error::invalid(
                    "cum_alpha",
                    format!("cumulative rates at t={t} leave [0, 1]"),
                ));
            }
            let cb = clamp_beta((1.0 - ca - cg) / k, t)?;
            cumulative.push(Rates {
                alpha: ca,
                beta: cb,
                gamma: cg,
            });
        }

        let mut step = Vec::with_capacity(steps + 1);
        step.push(Rates::IDENTITY);
        for t in 1..=steps {
            let (prev, cur) = (cumulative[t - 1], cumulative[t]);
            if cur.alpha > prev.alpha || cur.gamma < prev.gamma {
                return Err(Error::invalid(
                    "cum_alpha",
                    format!(
                        "cum_alpha must be non-increasing and cum_gamma non-decreasing (t={t})"
                    ),
                ));
            }
            let alpha = if prev.alpha == 0.0 {
                0.0
            } else {
                cur.alpha / prev.alpha
            };
            let gamma = if prev.gamma == 1.0 {
                1.0
            } else {
                1.0 - (1.0 - cur.gamma) / (1.0 - prev.gamma)
            };
            let beta = clamp_beta((1.0 - alpha - gamma) / k, t)?;
            step.push(Rates { alpha, beta, gamma });
        }

        Ok(Self {
            vocab,
            step,
            cumulative,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.step.len() - 1
    }

    /// Vocabulary size `K`, excluding MASK.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Token id of MASK, `K + 1`.
    pub fn mask_token(&self) -> u32 {
        self.vocab as u32 + 1
    }

    /// Rates of `Q_t`, `1 <= t <= T`. `t = 0` yields the identity.
    pub fn step_rates(&self, t: usize) -> Rates {
        self.step[t]
    }

    /// Cumulative rates of `Q_t ... Q_1`, `0 <= t <= T`.
    pub fn cumulative(&self, t: usize) -> Rates {
        self.cumulative[t]
    }

    pub fn cum_gamma(&self, t: usize) -> f64 {
        self.cumulative[t].gamma
    }

    /// True when no replace noise is ever applied and the terminal state is all-MASK.
    pub fn is_pure_mask(&self) -> bool {
        self.cumulative[self.steps()].gamma == 1.0 && self.cumulative.iter().all(|r| r.beta == 0.0)
    }

    /// Rates of the composite transition `Q_{t_to} ... Q_{t_from + 1}`.
    pub fn segment_rates(&self, t_from: usize, t_to: usize) -> Result<Rates> {
        if t_from >= t_to {
            return Err(Error::invalid(
                "t_from",
                format!("segment needs t_from < t_to, got ({t_from}, {t_to})"),
            ));
        }
        if t_to > self.steps() {
            return Err(Error::invalid(
                "t_to",
                format!("{t_to} exceeds the schedule length {}", self.steps()),
            ));
        }
        let from = self.cumulative[t_from];
        let to = self.cumulative[t_to];
        if from.alpha == 0.0 {
            return Err(Error::invalid(
                "t_from",
                format!("cum_alpha[{t_from}] = 0 makes the segment degenerate"),
            ));
        }
        if from.gamma == 1.0 {
            return Err(Error::invalid(
                "t_from",
                format!("cum_gamma[{t_from}] = 1 makes the segment degenerate"),
            ));
        }
        if t_from + 1 == t_to {
            return Ok(self.step[t_to]);
        }
        if t_from == 0 {
            return Ok(to);
        }
        let alpha = to.alpha / from.alpha;
        let gamma = 1.0 - (1.0 - to.gamma) / (1.0 - from.gamma);
        let beta = ((1.0 - alpha - gamma) / self.vocab as f64).max(0.0);
        Ok(Rates { alpha, beta, gamma })
    }

    /// Schedule dump: `t,alpha,beta,gamma,cum_alpha,cum_beta,cum_gamma`, one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha,beta,gamma,cum_alpha,cum_beta,cum_gamma\n");
        for t in 1..=self.steps() {
            let s = self.step[t];
            let c = self.cumulative[t];
            writeln!(
                out,
                "{t},{},{},{},{},{},{}",
                fmt_f64(s.alpha),
                fmt_f64(s.beta),
                fmt_f64(s.gamma),
                fmt_f64(c.alpha),
                fmt_f64(c.beta),
                fmt_f64(c.gamma)
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Stable fingerprint of the schedule, used to pair fitted denoisers with their schedule.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("K={}\n{}", self.vocab, self.to_csv()).as_bytes());
        hex::encode(digest)
    }
}

fn clamp_beta(beta: f64, t: usize) -> Result<f64> {
    if beta < -NEGATIVE_BETA_TOL {
        return Err(Error::invalid(
            "eps_beta",
            format!("derived beta at t={t} is negative ({beta:e})"),
        ));
    }
    Ok(if beta < BETA_SNAP { 0.0 } else { beta })
}

/// Formats with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
