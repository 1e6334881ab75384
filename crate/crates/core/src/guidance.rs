//! Discrete classifier-free guidance on clean-token predictions.
//!
//! The guided distribution is `log u + (s + 1)(log c - log u)`, renormalized per
//! position, where `c` and `u` are the conditional and unconditional predictions.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, Denoiser, ProbField};
use crate::error::{Error, Result};
use crate::transition::TokenGrid;

pub const DEFAULT_PROB_FLOOR: f64 = 1e-9;

/// How the unconditional prediction is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMode {
    /// The denoiser never saw the NULL condition during fitting; its NULL output is
    /// the uniform smoothing prior.
    ZeroShot,
    /// The denoiser's own NULL condition, trained by condition dropout.
    #[default]
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub null_mode: NullMode,
    pub prob_floor: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: 0.0,
            null_mode: NullMode::Learnable,
            prob_floor: DEFAULT_PROB_FLOOR,
        }
    }
}

impl GuidanceConfig {
    pub fn with_scale(scale: f64) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::invalid(
                "scale",
                format!("must be finite and >= 0, got {}", self.scale),
            ));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0 / vocab as f64) {
            return Err(Error::invalid(
                "prob_floor",
                format!(
                    "must lie in (0, 1/K) = (0, {}), got {}",
                    1.0 / vocab as f64,
                    self.prob_floor
                ),
            ));
        }
        Ok(())
    }
}

/// Combines conditional and unconditional fields with guidance scale `scale`.
pub fn guided_probs(
    cond: &ProbField,
    uncond: &ProbField,
    scale: f64,
    prob_floor: f64,
) -> Result<ProbField> {
    if !cond.same_shape(uncond) {
        return Err(Error::Shape(format!(
            "conditional field is {}x{}x{}, unconditional is {}x{}x{}",
            cond.h, cond.w, cond.k, uncond.h, uncond.w, uncond.k
        )));
    }
    if scale.is_nan() || scale < 0.0 {
        return Err(Error::invalid("scale", "must be >= 0"));
    }
    let mut out = ProbField::zeros(cond.h, cond.w, cond.k);
    let mut logits = vec![0.0; cond.k];
    for i in 0..cond.positions() {
        for ((g, &c), &u) in logits.iter_mut().zip(cond.row(i)).zip(uncond.row(i)) {
            let lu = u.max(prob_floor).ln();
            let lc = c.max(prob_floor).ln();
            *g = lu + (scale + 1.0) * (lc - lu);
        }
        softmax_into(&logits, out.row_mut(i));
    }
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Clean-token prediction for class `y`, guided against the unconditional prediction.
///
/// A zero scale returns the conditional prediction untouched.
pub fn guided_predict(
    d: &dyn Denoiser,
    x_t: &TokenGrid,
    t: usize,
    y: u32,
    cfg: &GuidanceConfig,
) -> Result<ProbField> {
    cfg.validate(d.vocab())?;
    let cond = d.predict(x_t, t, Condition::Class(y))?;
    if cfg.scale == 0.0 {
        return Ok(cond);
    }
    let uncond = match cfg.null_mode {
        NullMode::Learnable => d.predict(x_t, t, Condition::Null)?,
        NullMode::ZeroShot => ProbField::uniform(cond.h, cond.w, cond.k),
    };
    guided_probs(&cond, &uncond, cfg.scale, cfg.prob_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{BayesOracle, CountDenoiser, Template, TemplateSet};
    use crate::schedule::NoiseSchedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(rows: &[&[f64]]) -> ProbField {
        let k = rows[0].len();
        ProbField::from_rows(1, rows.len(), k, rows.concat()).unwrap()
    }

    #[test]
    fn zero_scale_is_conditional() {
        let c = field(&[&[0.6, 0.3, 0.1], &[0.2, 0.2, 0.6]]);
        let u = field(&[&[0.1, 0.1, 0.8], &[0.5, 0.25, 0.25]]);
        let g = guided_probs(&c, &u, 0.0, 1e-9).unwrap();
        for i in 0..2 {
            for (a, b) in g.row(i).iter().zip(c.row(i)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_inputs_are_a_fixed_point() {
        let c = field(&[&[0.6, 0.3, 0.1]]);
        for s in [0.0, 1.0, 3.0, 20.0] {
            let g = guided_probs(&c, &c, s, 1e-9).unwrap();
            for (a, b) in g.row(0).iter().zip(c.row(0)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_token_example() {
        let g = guided_probs(&field(&[&[0.6, 0.4]]), &field(&[&[0.5, 0.5]]), 1.0, 1e-9).unwrap();
        // (0.36/0.5, 0.16/0.5) normalized = (0.72, 0.32)/1.04
        assert!((g.row(0)[0] - 0.72 / 1.04).abs() < 1e-14);
        assert!((g.row(0)[1] - 0.32 / 1.04).abs() < 1e-14);
    }

    #[test]
    fn large_scale_concentrates_on_the_ratio_argmax() {
        let c = field(&[&[0.5, 0.3, 0.2]]);
        let u = field(&[&[0.6, 0.1, 0.3]]);
        let g = guided_probs(&c, &u, 50.0, 1e-9).unwrap();
        assert!(g.row(0)[1] > 1.0 - 1e-3);
        let mut prev = 0.0;
        for s in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let p = guided_probs(&c, &u, s, 1e-9).unwrap().row(0)[1];
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn rejects_mismatch_and_bad_config() {
        let a = field(&[&[0.5, 0.5]]);
        let b = field(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(guided_probs(&a, &b, 1.0, 1e-9).is_err());
        assert!(GuidanceConfig {
            scale: -1.0,
            ..Default::default()
        }
        .validate(2)
        .is_err());
        assert!(GuidanceConfig {
            prob_floor: 0.6,
            ..Default::default()
        }
        .validate(2)
        .is_err());
        assert!(GuidanceConfig {
            prob_floor: 0.0,
            ..Default::default()
        }
        .validate(2)
        .is_err());
    }

    #[test]
    fn single_class_guidance_is_inert() {
        let ts = TemplateSet::new(
            2,
            1,
            2,
            1,
            vec![
                Template {
                    tokens: vec![1, 1],
                    class: 1,
                    weight: 0.3,
                },
                Template {
                    tokens: vec![2, 1],
                    class: 1,
                    weight: 0.7,
                },
            ],
        )
        .unwrap();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        let base = oracle.predict(&x_t, 4, Condition::Class(1)).unwrap();
        for scale in [1.0, 3.0, 5.0] {
            let g =
                guided_predict(&oracle, &x_t, 4, 1, &GuidanceConfig::with_scale(scale)).unwrap();
            // zero entries come back at the floor level
            assert!(g.max_row_tv(&base) < 2.0 * DEFAULT_PROB_FLOOR);
        }
    }

    #[test]
    fn guidance_strengthens_class_signal() {
        let ts = TemplateSet::new(
            2,
            1,
            2,
            2,
            vec![
                Template {
                    tokens: vec![1, 1],
                    class: 1,
                    weight: 1.0,
                },
                Template {
                    tokens: vec![2, 2],
                    class: 1,
                    weight: 1.0,
                },
                Template {
                    tokens: vec![2, 1],
                    class: 2,
                    weight: 1.0,
                },
                Template {
                    tokens: vec![2, 2],
                    class: 2,
                    weight: 1.0,
                },
            ],
        )
        .unwrap();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        let probs: Vec<f64> = [0.0, 1.0, 3.0]
            .iter()
            .map(|&scale| {
                guided_predict(&oracle, &x_t, 4, 1, &GuidanceConfig::with_scale(scale))
                    .unwrap()
                    .row(0)[0]
            })
            .collect();
        assert!(probs[0] < probs[1] && probs[1] < probs[2], "{probs:?}");
    }

    #[test]
    fn zero_shot_null_matches_undropped_count_table() {
        let ts = TemplateSet::new(
            2,
            1,
            2,
            2,
            vec![
                Template {
                    tokens: vec![1, 1],
                    class: 1,
                    weight: 1.0,
                },
                Template {
                    tokens: vec![2, 2],
                    class: 2,
                    weight: 1.0,
                },
            ],
        )
        .unwrap();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let d = CountDenoiser::fit(&ts, &s, 2000, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        let cfg = GuidanceConfig {
            scale: 2.0,
            null_mode: NullMode::ZeroShot,
            ..Default::default()
        };
        let zero_shot = guided_predict(&d, &x_t, 3, 1, &cfg).unwrap();
        let learnable = guided_predict(
            &d,
            &x_t,
            3,
            1,
            &GuidanceConfig {
                null_mode: NullMode::Learnable,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(zero_shot, learnable);
    }
}
