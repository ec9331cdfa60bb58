//! Dist-family SFuncs: unconditional distributions (no parents).
//!
//! π messages in belief propagation are represented as [`Dist`] values rather
//! than raw probability vectors, so closed-form implementations (e.g. linear
//! Gaussian composition) can stay symbolic until a consumer needs densities
//! over a concrete range.

use ordered_float::OrderedFloat;
use rand::Rng;
use rand_distr::Distribution as _;
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::error::{Error, Result};
use crate::value::Value;

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Bernoulli over booleans. `prob_true` is P(true).
#[derive(Clone, Debug, PartialEq)]
pub struct Flip {
    pub prob_true: f64,
}

impl Flip {
    pub fn new(prob_true: f64) -> Result<Flip> {
        if !(0.0..=1.0).contains(&prob_true) || !prob_true.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Flip probability must lie in [0,1], got {prob_true}"
            )));
        }
        Ok(Flip { prob_true })
    }
}

/// Categorical over an explicit finite value list.
#[derive(Clone, Debug, PartialEq)]
pub struct Cat {
    pub values: Vec<Value>,
    pub probs: Vec<f64>,
}

impl Cat {
    pub fn new(values: Vec<Value>, probs: Vec<f64>) -> Result<Cat> {
        if values.len() != probs.len() {
            return Err(Error::InvalidParameter(format!(
                "Cat has {} values but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter("Cat must be non-empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::InvalidParameter(format!(
                    "Cat values must be distinct; `{v}` repeats"
                )));
            }
        }
        if probs.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
            return Err(Error::InvalidParameter(
                "Cat probabilities must lie in [0,1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "Cat probabilities must sum to 1, got {total}"
            )));
        }
        Ok(Cat { values, probs })
    }

    /// Normalizes arbitrary nonnegative weights into a Cat.
    pub fn from_weights(values: Vec<Value>, weights: Vec<f64>) -> Result<Cat> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateInput);
        }
        Cat::new(values, weights.iter().map(|w| w / total).collect())
    }

    pub fn prob_of(&self, v: &Value) -> f64 {
        self.values
            .iter()
            .position(|x| x == v)
            .map_or(0.0, |i| self.probs[i])
    }
}

/// Gaussian with fixed mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalDist {
    pub mean: f64,
    pub variance: f64,
}

impl NormalDist {
    pub fn new(mean: f64, variance: f64) -> Result<NormalDist> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Normal requires finite mean and variance > 0, got ({mean}, {variance})"
            )));
        }
        Ok(NormalDist { mean, variance })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * ((2.0 * std::f64::consts::PI * self.variance).ln() + d * d / self.variance)
    }

    /// Deterministic quantile grid: the k mid-quantiles at (i - 0.5)/k.
    pub fn quantile_grid(&self, k: usize) -> Vec<f64> {
        let n = StatNormal::new(self.mean, self.variance.sqrt()).expect("validated params");
        (1..=k)
            .map(|i| n.inverse_cdf((i as f64 - 0.5) / k as f64))
            .collect()
    }
}

/// Point mass on a single value.
#[derive(Clone, Debug, PartialEq)]
pub struct Constant {
    pub value: Value,
}

impl Constant {
    pub fn new(value: Value) -> Constant {
        Constant { value }
    }
}

/// An unconditional distribution; the payload of Dist-family SFuncs and the
/// representation of π messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Dist {
    Flip(Flip),
    Cat(Cat),
    Normal(NormalDist),
    Constant(Constant),
}

impl Dist {
    pub fn flip(p: f64) -> Result<Dist> {
        Ok(Dist::Flip(Flip::new(p)?))
    }

    pub fn cat(values: Vec<Value>, probs: Vec<f64>) -> Result<Dist> {
        Ok(Dist::Cat(Cat::new(values, probs)?))
    }

    pub fn normal(mean: f64, variance: f64) -> Result<Dist> {
        Ok(Dist::Normal(NormalDist::new(mean, variance)?))
    }

    pub fn constant(value: Value) -> Dist {
        Dist::Constant(Constant::new(value))
    }

    /// Log mass/density of `value`; −∞ outside the support.
    pub fn logcpdf(&self, value: &Value) -> Result<f64> {
        match self {
            Dist::Flip(f) => match value {
                Value::Bool(true) => Ok(f.prob_true.ln()),
                Value::Bool(false) => Ok((1.0 - f.prob_true).ln()),
                _ => Ok(f64::NEG_INFINITY),
            },
            Dist::Cat(c) => Ok(c.prob_of(value).ln()),
            Dist::Normal(n) => match value.as_f64() {
                Some(x) => Ok(n.log_density(x)),
                None => Ok(f64::NEG_INFINITY),
            },
            Dist::Constant(c) => Ok(if *value == c.value {
                0.0
            } else {
                f64::NEG_INFINITY
            }),
        }
    }

    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> Result<Value> {
        match self {
            Dist::Flip(f) => Ok(Value::Bool(rng.random::<f64>() < f.prob_true)),
            Dist::Cat(c) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in c.values.iter().zip(&c.probs) {
                    acc += p;
                    if u < acc {
                        return Ok(v.clone());
                    }
                }
                // Rounding slack: fall back to the last positive-probability value.
                let last = c
                    .values
                    .iter()
                    .zip(&c.probs)
                    .filter(|(_, p)| **p > 0.0)
                    .last()
                    .map(|(v, _)| v.clone())
                    .unwrap_or_else(|| c.values.last().unwrap().clone());
                Ok(last)
            }
            Dist::Normal(n) => {
                let d = rand_distr::Normal::new(n.mean, n.variance.sqrt())
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                Ok(Value::real(d.sample(rng)))
            }
            Dist::Constant(c) => Ok(c.value.clone()),
        }
    }

    pub fn expectation(&self) -> Result<f64> {
        match self {
            Dist::Flip(f) => Ok(f.prob_true),
            Dist::Cat(c) => {
                let mut acc = 0.0;
                for (v, p) in c.values.iter().zip(&c.probs) {
                    let x = v.as_f64().ok_or_else(|| Error::UnsupportedOperation {
                        operation: "expectation".into(),
                        kind: crate::sfunc::Kind::Cat,
                    })?;
                    acc += x * p;
                }
                Ok(acc)
            }
            Dist::Normal(n) => Ok(n.mean),
            Dist::Constant(c) => c.value.as_f64().ok_or_else(|| Error::UnsupportedOperation {
                operation: "expectation".into(),
                kind: crate::sfunc::Kind::Constant,
            }),
        }
    }

    pub fn variance(&self) -> Result<f64> {
        match self {
            Dist::Flip(f) => Ok(f.prob_true * (1.0 - f.prob_true)),
            Dist::Cat(_) => {
                let mean = self.expectation()?;
                if let Dist::Cat(c) = self {
                    let mut acc = 0.0;
                    for (v, p) in c.values.iter().zip(&c.probs) {
                        let x = v.as_f64().unwrap();
                        acc += (x - mean) * (x - mean) * p;
                    }
                    Ok(acc)
                } else {
                    unreachable!()
                }
            }
            Dist::Normal(n) => Ok(n.variance),
            Dist::Constant(c) => {
                c.value.as_f64().ok_or_else(|| Error::UnsupportedOperation {
                    operation: "variance".into(),
                    kind: crate::sfunc::Kind::Constant,
                })?;
                Ok(0.0)
            }
        }
    }

    /// Positive-probability values. Finite kinds return the exact support;
    /// Normal returns a quantile grid of `target_size` points merged with
    /// `prior` so successive calls produce supersets.
    pub fn support(&self, target_size: usize, prior: &[Value]) -> Vec<Value> {
        match self {
            Dist::Flip(f) => {
                let mut out = Vec::new();
                if f.prob_true < 1.0 {
                    out.push(Value::Bool(false));
                }
                if f.prob_true > 0.0 {
                    out.push(Value::Bool(true));
                }
                out
            }
            Dist::Cat(c) => c
                .values
                .iter()
                .zip(&c.probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| v.clone())
                .collect(),
            Dist::Normal(n) => {
                let grid = n.quantile_grid(target_size.max(1));
                merge_numeric_support(prior, &grid)
            }
            Dist::Constant(c) => vec![c.value.clone()],
        }
    }
}

/// Union of a prior support and a new grid of reals, sorted ascending.
pub fn merge_numeric_support(prior: &[Value], grid: &[f64]) -> Vec<Value> {
    let mut merged: Vec<Value> = prior.to_vec();
    for x in grid {
        let v = Value::Float(OrderedFloat(*x));
        if !merged.contains(&v) {
            merged.push(v);
        }
    }
    merged.sort();
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_rejects_bad_rows() {
        assert!(Cat::new(vec![Value::Int(0), Value::Int(1)], vec![0.5, 0.4]).is_err());
        assert!(Cat::new(vec![Value::Int(0), Value::Int(0)], vec![0.5, 0.5]).is_err());
        assert!(Cat::new(vec![Value::Int(0)], vec![1.0]).is_ok());
    }

    #[test]
    fn normal_grid_is_symmetric_and_merges() {
        let n = NormalDist::new(0.0, 1.0).unwrap();
        let g5 = n.quantile_grid(5);
        assert_eq!(g5.len(), 5);
        assert!((g5[2]).abs() < 1e-12);
        let s5 = Dist::Normal(n.clone()).support(5, &[]);
        let s8 = Dist::Normal(n).support(8, &s5);
        for v in &s5 {
            assert!(s8.contains(v));
        }
    }

    #[test]
    fn flip_support_filters_degenerate_mass() {
        assert_eq!(
            Dist::flip(1.0).unwrap().support(4, &[]),
            vec![Value::Bool(true)]
        );
        assert_eq!(
            Dist::flip(0.0).unwrap().support(4, &[]),
            vec![Value::Bool(false)]
        );
        assert_eq!(Dist::flip(0.5).unwrap().support(4, &[]).len(), 2);
    }
}
