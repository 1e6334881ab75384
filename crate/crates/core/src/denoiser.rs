//! Clean-token predictors `p(x_0 | x_t, y)`.
//!
//! [`BayesOracle`] computes the exact posterior over a finite [`TemplateSet`];
//! [`CountDenoiser`] is a per-position factorized estimator fitted from simulated
//! forward corruptions, with a dedicated NULL-condition table trained by condition dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::transition::{sample_forward, sample_index, Categorical, TokenGrid, MASS_TOL};

/// Additive smoothing applied to every count cell.
pub const LAPLACE: f64 = 1.0;

/// Conditioning input: a class label in `1..=C` or the unconditional NULL condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Class(u32),
    Null,
}

impl Condition {
    pub fn label(self) -> Option<u32> {
        match self {
            Condition::Class(y) => Some(y),
            Condition::Null => None,
        }
    }
}

/// One clean grid of a [`TemplateSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub tokens: Vec<u32>,
    pub class: u32,
    pub weight: f64,
}

/// A finite weighted set of clean grids: an exactly known data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub classes: u32,
    pub templates: Vec<Template>,
}

impl TemplateSet {
    /// Validates shapes, token ranges and labels, and normalizes the weights.
    pub fn new(
        k: usize,
        h: usize,
        w: usize,
        classes: u32,
        mut templates: Vec<Template>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "grid extents must be positive, got {h}x{w}"
            )));
        }
        if classes == 0 {
            return Err(Error::invalid("classes", "must be at least 1"));
        }
        if templates.is_empty() {
            return Err(Error::invalid(
                "templates",
                "at least one template is required",
            ));
        }
        for (m, tpl) in templates.iter().enumerate() {
            if tpl.tokens.len() != h * w {
                return Err(Error::Shape(format!(
                    "template {m} has {} tokens, expected {}",
                    tpl.tokens.len(),
                    h * w
                )));
            }
            if tpl.tokens.iter().any(|&x| x == 0 || x as usize > k) {
                return Err(Error::invalid(
                    "templates",
                    format!("template {m} has a token outside 1..={k}"),
                ));
            }
            if tpl.class == 0 || tpl.class > classes {
                return Err(Error::invalid(
                    "class",
                    format!("template {m} has class {} outside 1..={classes}", tpl.class),
                ));
            }
            if !tpl.weight.is_finite() || tpl.weight <= 0.0 {
                return Err(Error::invalid(
                    "weight",
                    format!("template {m} weight must be positive"),
                ));
            }
        }
        let total: f64 = templates.iter().map(|t| t.weight).sum();
        templates.iter_mut().for_each(|t| t.weight /= total);
        Ok(Self {
            k,
            h,
            w,
            classes,
            templates,
        })
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    pub fn grid(&self, m: usize) -> TokenGrid {
        TokenGrid {
            h: self.h,
            w: self.w,
            tokens: self.templates[m].tokens.clone(),
        }
    }

    /// Prior weight of each template under `cond`, normalized. Errors for an empty class.
    pub fn prior(&self, cond: Condition) -> Result<Vec<f64>> {
        let raw: Vec<f64> = self
            .templates
            .iter()
            .map(|t| match cond {
                Condition::Null => t.weight,
                Condition::Class(y) if t.class == y => t.weight,
                Condition::Class(_) => 0.0,
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Err(Error::invalid(
                "condition",
                format!("no template carries {cond:?}"),
            ));
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }

    /// Total weight of class `y`.
    pub fn class_weight(&self, y: u32) -> f64 {
        self.templates
            .iter()
            .filter(|t| t.class == y)
            .map(|t| t.weight)
            .sum()
    }

    /// Per-position marginal of the clean tokens under `cond`.
    pub fn marginal(&self, cond: Condition) -> Result<ProbField> {
        let prior = self.prior(cond)?;
        let mut field = ProbField::zeros(self.h, self.w, self.k);
        for (tpl, p) in self.templates.iter().zip(&prior) {
            for (i, &x) in tpl.tokens.iter().enumerate() {
                field.row_mut(i)[x as usize - 1] += p;
            }
        }
        Ok(field)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("template set serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: TemplateSet = serde_json::from_str(s)?;
        TemplateSet::new(raw.k, raw.h, raw.w, raw.classes, raw.templates)
    }
}

/// Per-position categorical distributions over the `K` non-mask tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    probs: Vec<f64>,
}

impl ProbField {
    pub fn zeros(h: usize, w: usize, k: usize) -> Self {
        Self {
            h,
            w,
            k,
            probs: vec![0.0; h * w * k],
        }
    }

    pub fn uniform(h: usize, w: usize, k: usize) -> Self {
        Self {
            h,
            w,
            k,
            probs: vec![1.0 / k as f64; h * w * k],
        }
    }

    /// Builds a field from row-major rows, checking each row is a distribution.
    pub fn from_rows(h: usize, w: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != h * w * k {
            return Err(Error::Shape(format!(
                "expected {} entries, got {}",
                h * w * k,
                probs.len()
            )));
        }
        let field = Self { h, w, k, probs };
        field.validate()?;
        Ok(field)
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.k)
    }

    pub fn same_shape(&self, other: &ProbField) -> bool {
        self.h == other.h && self.w == other.w && self.k == other.k
    }

    /// Every row non-negative and of unit mass.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            if row.iter().any(|&p| p.is_nan() || p < 0.0) {
                return Err(Error::invalid(
                    "probs",
                    format!("row {i} has a negative or NaN entry"),
                ));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > MASS_TOL {
                return Err(Error::invalid("probs", format!("row {i} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn categorical(&self, i: usize) -> Categorical {
        Categorical::new(self.row(i).to_vec()).expect("rows are valid distributions")
    }

    /// Draws a 1-based token at position `i`.
    pub fn sample_at<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> u32 {
        sample_index(self.row(i), rng) as u32 + 1
    }

    /// Largest total-variation distance between matching rows.
    pub fn max_row_tv(&self, other: &ProbField) -> f64 {
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// A predictor of the clean-token distribution at every position.
pub trait Denoiser: Sync {
    fn vocab(&self) -> usize;

    /// `p(x_0 | x_t, cond)` at step `t` in `1..=T`.
    fn predict(&self, x_t: &TokenGrid, t: usize, cond: Condition) -> Result<ProbField>;
}

/// Exact posterior over a template set, conditioned on the full noisy grid.
#[derive(Debug, Clone)]
pub struct BayesOracle<'a> {
    templates: &'a TemplateSet,
    schedule: &'a NoiseSchedule,
}

impl<'a> BayesOracle<'a> {
    pub fn new(templates: &'a TemplateSet, schedule: &'a NoiseSchedule) -> Result<Self> {
        if templates.k != schedule.vocab() {
            return Err(Error::invalid(
                "k",
                format!(
                    "template set has K={}, schedule has K={}",
                    templates.k,
                    schedule.vocab()
                ),
            ));
        }
        Ok(Self {
            templates,
            schedule,
        })
    }

    /// Log-likelihood of `x_t` under each template at step `t`; `-inf` when unreachable.
    fn log_likelihoods(&self, x_t: &TokenGrid, t: usize) -> Vec<f64> {
        let cum = self.schedule.cumulative(t);
        let mask = self.schedule.mask_token();
        self.templates
            .templates
            .iter()
            .map(|tpl| {
                tpl.tokens
                    .iter()
                    .zip(&x_t.tokens)
                    .map(|(&x0, &xt)| {
                        let p = if xt == mask {
                            cum.gamma
                        } else if xt == x0 {
                            cum.alpha + cum.beta
                        } else {
                            cum.beta
                        };
                        p.ln()
                    })
                    .sum()
            })
            .collect()
    }

    /// Posterior weight of each template given `x_t` and `cond`.
    pub fn template_posterior(
        &self,
        x_t: &TokenGrid,
        t: usize,
        cond: Condition,
    ) -> Result<Vec<f64>> {
        let ts = self.templates;
        if x_t.h != ts.h || x_t.w != ts.w {
            return Err(Error::Shape(format!(
                "state is {}x{}, templates are {}x{}",
                x_t.h, x_t.w, ts.h, ts.w
            )));
        }
        x_t.validate(ts.k)?;
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(
                "t",
                format!("must lie in 1..={}, got {t}", self.schedule.steps()),
            ));
        }
        let prior = ts.prior(cond)?;
        let logs: Vec<f64> = self
            .log_likelihoods(x_t, t)
            .into_iter()
            .zip(&prior)
            .map(|(ll, &p)| {
                if p > 0.0 {
                    ll + p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::OffManifold { t });
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

impl Denoiser for BayesOracle<'_> {
    fn vocab(&self) -> usize {
        self.templates.k
    }

    fn predict(&self, x_t: &TokenGrid, t: usize, cond: Condition) -> Result<ProbField> {
        let weights = self.template_posterior(x_t, t, cond)?;
        let ts = self.templates;
        let mut field = ProbField::zeros(ts.h, ts.w, ts.k);
        for (tpl, &wt) in ts.templates.iter().zip(&weights) {
            if wt == 0.0 {
                continue;
            }
            for (i, &x) in tpl.tokens.iter().enumerate() {
                field.row_mut(i)[x as usize - 1] += wt;
            }
        }
        for i in 0..field.positions() {
            let row = field.row_mut(i);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Ok(field)
    }
}

/// Per-position count table estimator `p(x_0^i | x_t^i, t, cond)`.
///
/// Counts are indexed `[t - 1][cond][position][x_t^i - 1][x_0^i - 1]`, where
/// `cond` runs over the classes `0..C` followed by NULL at index `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDenoiser {
    pub schedule_hash: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "C")]
    pub c: u32,
    pub positions: usize,
    pub drop_frac: f64,
    pub n_draws: u64,
    pub counts: Vec<Vec<Vec<Vec<Vec<u64>>>>>,
}

impl CountDenoiser {
    /// Simulates `n_draws` forward corruptions of the template set and tallies them.
    ///
    /// Each draw picks a template by weight, a step uniformly in `1..=T`, and with
    /// probability `drop_frac` files the draw under NULL instead of its class.
    pub fn fit<R: Rng + ?Sized>(
        ts: &TemplateSet,
        schedule: &NoiseSchedule,
        n_draws: u64,
        drop_frac: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_draws == 0 {
            return Err(Error::invalid("n_draws", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&drop_frac) {
            return Err(Error::invalid(
                "drop_frac",
                format!("must lie in [0, 1], got {drop_frac}"),
            ));
        }
        if ts.k != schedule.vocab() {
            return Err(Error::invalid(
                "k",
                "template set and schedule disagree on K",
            ));
        }
        let (k, steps, n) = (ts.k, schedule.steps(), ts.positions());
        let c = ts.classes;
        let mut counts = vec![vec![vec![vec![vec![0u64; k]; k + 1]; n]; c as usize + 1]; steps];
        let weights: Vec<f64> = ts.templates.iter().map(|t| t.weight).collect();
        for _ in 0..n_draws {
            let m = sample_index(&weights, rng);
            let t = rng.gen_range(1..=steps);
            let x0 = ts.grid(m);
            let x_t = sample_forward(&x0, t, schedule, rng)?;
            let dropped = rng.gen::<f64>() < drop_frac;
            let cond = if dropped {
                c as usize
            } else {
                ts.templates[m].class as usize - 1
            };
            let table = &mut counts[t - 1][cond];
            for (i, (&noisy, &clean)) in x_t.tokens.iter().zip(&x0.tokens).enumerate() {
                table[i][noisy as usize - 1][clean as usize - 1] += 1;
            }
        }
        Ok(Self {
            schedule_hash: schedule.fingerprint(),
            k,
            t: steps,
            c,
            positions: n,
            drop_frac,
            n_draws,
            counts,
        })
    }

    /// Number of count cells.
    pub fn table_size(&self) -> usize {
        self.t * (self.c as usize + 1) * self.positions * (self.k + 1) * self.k
    }

    /// Checks the table was fitted against `schedule`.
    pub fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.schedule_hash != schedule.fingerprint() {
            return Err(Error::invalid(
                "schedule_hash",
                "denoiser was fitted against a different schedule",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("count table serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: CountDenoiser = serde_json::from_str(s)?;
        let shape_ok = d.counts.len() == d.t
            && d.counts.iter().all(|by_cond| {
                by_cond.len() == d.c as usize + 1
                    && by_cond.iter().all(|by_pos| {
                        by_pos.len() == d.positions
                            && by_pos.iter().all(|by_xt| {
                                by_xt.len() == d.k + 1 && by_xt.iter().all(|row| row.len() == d.k)
                            })
                    })
            });
        if !shape_ok {
            return Err(Error::Shape(
                "count table dimensions disagree with its header".into(),
            ));
        }
        Ok(d)
    }
}

impl Denoiser for CountDenoiser {
    fn vocab(&self) -> usize {
        self.k
    }

    fn predict(&self, x_t: &TokenGrid, t: usize, cond: Condition) -> Result<ProbField> {
        if x_t.len() != self.positions {
            return Err(Error::Shape(format!(
                "state has {} positions, table has {}",
                x_t.len(),
                self.positions
            )));
        }
        x_t.validate(self.k)?;
        if t == 0 || t > self.t {
            return Err(Error::invalid(
                "t",
                format!("must lie in 1..={}, got {t}", self.t),
            ));
        }
        let cond_idx = match cond {
            Condition::Null => self.c as usize,
            Condition::Class(y) if y >= 1 && y <= self.c => y as usize - 1,
            Condition::Class(y) => {
                return Err(Error::invalid(
                    "condition",
                    format!("class {y} outside 1..={}", self.c),
                ))
            }
        };
        let table = &self.counts[t - 1][cond_idx];
        let mut field = ProbField::zeros(x_t.h, x_t.w, self.k);
        for (i, &noisy) in x_t.tokens.iter().enumerate() {
            let counts = &table[i][noisy as usize - 1];
            let total = counts.iter().sum::<u64>() as f64 + LAPLACE * self.k as f64;
            for (p, &n) in field.row_mut(i).iter_mut().zip(counts) {
                *p = (n as f64 + LAPLACE) / total;
            }
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs() -> TemplateSet {
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
        .unwrap()
    }

    fn two_class() -> TemplateSet {
        TemplateSet::new(
            3,
            1,
            3,
            2,
            vec![
                Template {
                    tokens: vec![1, 2, 3],
                    class: 1,
                    weight: 1.0,
                },
                Template {
                    tokens: vec![1, 3, 3],
                    class: 1,
                    weight: 2.0,
                },
                Template {
                    tokens: vec![2, 2, 1],
                    class: 2,
                    weight: 1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn template_set_validation() {
        let bad_token = vec![Template {
            tokens: vec![3, 1],
            class: 1,
            weight: 1.0,
        }];
        assert!(TemplateSet::new(2, 1, 2, 1, bad_token).is_err());
        let bad_class = vec![Template {
            tokens: vec![1, 1],
            class: 2,
            weight: 1.0,
        }];
        assert!(TemplateSet::new(2, 1, 2, 1, bad_class).is_err());
        let bad_shape = vec![Template {
            tokens: vec![1],
            class: 1,
            weight: 1.0,
        }];
        assert!(TemplateSet::new(2, 1, 2, 1, bad_shape).is_err());
        let ts = two_class();
        assert!((ts.templates[1].weight - 0.5).abs() < 1e-15);
        let json = r#"{"k":2,"h":1,"w":2,"classes":1,"templates":[{"tokens":[1,1],"class":1,"weight":1}],"extra":0}"#;
        assert!(TemplateSet::from_json(json).is_err());
    }

    #[test]
    fn oracle_symmetric_at_full_mask() {
        let ts = pairs();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        let p = oracle.predict(&x_t, 4, Condition::Null).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn oracle_locks_second_position_after_observing_first() {
        let ts = pairs();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::new(1, 2, vec![1, 3]).unwrap();
        for t in 1..4 {
            let p = oracle.predict(&x_t, t, Condition::Null).unwrap();
            assert_eq!(p.row(1), &[1.0, 0.0]);
        }
    }

    #[test]
    fn oracle_terminal_prediction_is_marginal() {
        let ts = two_class();
        let s = NoiseSchedule::linear(5, 3, 0.1).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::filled(1, 3, 4);
        for cond in [Condition::Null, Condition::Class(1), Condition::Class(2)] {
            let p = oracle.predict(&x_t, 5, cond).unwrap();
            assert!(p.max_row_tv(&ts.marginal(cond).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn oracle_single_template_is_one_hot() {
        let ts = TemplateSet::new(
            3,
            1,
            3,
            1,
            vec![Template {
                tokens: vec![3, 1, 2],
                class: 1,
                weight: 1.0,
            }],
        )
        .unwrap();
        let s = NoiseSchedule::linear(6, 3, 0.2).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=6 {
            let x_t = sample_forward(&ts.grid(0), t, &s, &mut rng).unwrap();
            let p = oracle.predict(&x_t, t, Condition::Class(1)).unwrap();
            for (i, &x) in ts.templates[0].tokens.iter().enumerate() {
                assert_eq!(p.row(i)[x as usize - 1], 1.0);
            }
        }
    }

    #[test]
    fn oracle_off_manifold() {
        let ts = pairs();
        let s = NoiseSchedule::linear(4, 2, 0.0).unwrap();
        let oracle = BayesOracle::new(&ts, &s).unwrap();
        let x_t = TokenGrid::new(1, 2, vec![1, 2]).unwrap();
        assert_eq!(
            oracle.predict(&x_t, 2, Condition::Null),
            Err(Error::OffManifold { t: 2 })
        );
        assert!(oracle.predict(&x_t, 0, Condition::Null).is_err());
        assert!(oracle.predict(&x_t, 2, Condition::Class(2)).is_err());
    }

    #[test]
    fn count_dropout_extremes() {
        let ts = pairs();
        let s = NoiseSchedule::linear(3, 2, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let never = CountDenoiser::fit(&ts, &s, 500, 0.0, &mut rng).unwrap();
        let always = CountDenoiser::fit(&ts, &s, 500, 1.0, &mut rng).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        for t in 1..=3 {
            assert_eq!(
                never.predict(&x_t, t, Condition::Null).unwrap(),
                ProbField::uniform(1, 2, 2)
            );
            assert_eq!(
                always.predict(&x_t, t, Condition::Class(1)).unwrap(),
                ProbField::uniform(1, 2, 2)
            );
        }
        assert!(never.counts.iter().all(|by_cond| by_cond[1]
            .iter()
            .flatten()
            .flatten()
            .all(|&n| n == 0)));
        assert!(always.counts.iter().all(|by_cond| by_cond[0]
            .iter()
            .flatten()
            .flatten()
            .all(|&n| n == 0)));
    }

    #[test]
    fn count_denoiser_converges_on_pairs() {
        let ts = pairs();
        let s = NoiseSchedule::linear(10, 2, 0.0).unwrap();
        let d =
            CountDenoiser::fit(&ts, &s, 200_000, 0.1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let x_t = TokenGrid::filled(1, 2, 3);
        for t in 1..=10 {
            let p = d.predict(&x_t, t, Condition::Class(1)).unwrap();
            for row in p.rows() {
                assert!((row[0] - 0.5).abs() < 0.02, "t={t}: {row:?}");
            }
        }
    }

    #[test]
    fn count_denoiser_json_roundtrip() {
        let ts = two_class();
        let s = NoiseSchedule::linear(3, 3, 0.0).unwrap();
        let d = CountDenoiser::fit(&ts, &s, 100, 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let back = CountDenoiser::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        assert!(back.check_schedule(&s).is_ok());
        assert!(back
            .check_schedule(&NoiseSchedule::linear(4, 3, 0.0).unwrap())
            .is_err());
        assert!(d.to_json().contains("\"K\":3"));
    }

    #[test]
    fn count_denoiser_rejects_bad_inputs() {
        let ts = pairs();
        let s = NoiseSchedule::linear(3, 2, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(CountDenoiser::fit(&ts, &s, 0, 0.1, &mut rng).is_err());
        assert!(CountDenoiser::fit(&ts, &s, 10, 1.5, &mut rng).is_err());
        let d = CountDenoiser::fit(&ts, &s, 10, 0.1, &mut rng).unwrap();
        assert!(d
            .predict(&TokenGrid::filled(1, 2, 3), 4, Condition::Null)
            .is_err());
        assert!(d
            .predict(&TokenGrid::filled(1, 2, 3), 1, Condition::Class(2))
            .is_err());
        assert!(d
            .predict(&TokenGrid::filled(1, 3, 3), 1, Condition::Null)
            .is_err());
    }
}
