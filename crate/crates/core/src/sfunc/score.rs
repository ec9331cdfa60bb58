//! Score-family SFuncs: input scorers with no output value.
//!
//! Scores carry evidence and soft constraints, and they are the representation
//! of λ messages. `get_score` values are nonnegative reals in the linear
//! domain.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::value::Value;

/// Allows exactly one value: score 1 on `allowed`, 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct HardScore {
    pub allowed: Value,
}

impl HardScore {
    pub fn new(allowed: Value) -> HardScore {
        HardScore { allowed }
    }
}

/// Explicit nonnegative weight per value; absent values score 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftScore {
    pub entries: BTreeMap<Value, f64>,
}

impl SoftScore {
    pub fn new(entries: BTreeMap<Value, f64>) -> Result<SoftScore> {
        if entries.values().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "SoftScore weights must be finite and nonnegative".into(),
            ));
        }
        if !entries.values().any(|w| *w > 0.0) {
            return Err(Error::InvalidParameter(
                "SoftScore needs at least one positive weight".into(),
            ));
        }
        Ok(SoftScore { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Value, f64)>) -> Result<SoftScore> {
        SoftScore::new(pairs.into_iter().collect())
    }
}

/// Score defined by a function; useful when the value space is infinite.
#[derive(Clone)]
pub struct FunctionalScore {
    pub arity: usize,
    pub func: Arc<dyn Fn(&Value) -> Result<f64> + Send + Sync>,
}

impl FunctionalScore {
    pub fn new(func: impl Fn(&Value) -> Result<f64> + Send + Sync + 'static) -> FunctionalScore {
        FunctionalScore {
            arity: 1,
            func: Arc::new(func),
        }
    }

    /// Score over a tuple of `arity` inputs, passed as `Value::List`.
    pub fn with_arity(
        arity: usize,
        func: impl Fn(&Value) -> Result<f64> + Send + Sync + 'static,
    ) -> FunctionalScore {
        FunctionalScore {
            arity,
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for FunctionalScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalScore")
            .field("arity", &self.arity)
            .finish_non_exhaustive()
    }
}

/// Any score; also the λ message representation.
#[derive(Clone, Debug)]
pub enum Score {
    Hard(HardScore),
    Soft(SoftScore),
    Functional(FunctionalScore),
}

impl Score {
    pub fn hard(allowed: Value) -> Score {
        Score::Hard(HardScore::new(allowed))
    }

    pub fn soft(pairs: impl IntoIterator<Item = (Value, f64)>) -> Result<Score> {
        Ok(Score::Soft(SoftScore::from_pairs(pairs)?))
    }

    /// Uninformative score: 1 everywhere.
    pub fn uniform() -> Score {
        Score::Functional(FunctionalScore::new(|_| Ok(1.0)))
    }

    pub fn get(&self, value: &Value) -> Result<f64> {
        match self {
            Score::Hard(h) => Ok(if *value == h.allowed { 1.0 } else { 0.0 }),
            Score::Soft(s) => Ok(s.entries.get(value).copied().unwrap_or(0.0)),
            Score::Functional(f) => {
                let w = (f.func)(value).map_err(|e| Error::ScoreEval {
                    value: value.to_string(),
                    message: e.to_string(),
                })?;
                if w < 0.0 || w.is_nan() {
                    return Err(Error::ScoreEval {
                        value: value.to_string(),
                        message: format!("score must be a nonnegative real, got {w}"),
                    });
                }
                Ok(w)
            }
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Score::Hard(_) | Score::Soft(_) => 1,
            Score::Functional(f) => f.arity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_score_is_an_indicator() {
        let s = Score::hard(Value::Str("a".into()));
        assert_eq!(s.get(&Value::Str("a".into())).unwrap(), 1.0);
        assert_eq!(s.get(&Value::Str("b".into())).unwrap(), 0.0);
    }

    #[test]
    fn soft_score_defaults_to_zero() {
        let s = Score::soft([(Value::from("a"), 0.8), (Value::from("b"), 0.2)]).unwrap();
        assert_eq!(s.get(&Value::from("b")).unwrap(), 0.2);
        assert_eq!(s.get(&Value::from("c")).unwrap(), 0.0);
    }

    #[test]
    fn functional_failures_carry_the_value() {
        let s = Score::Functional(FunctionalScore::new(|_| {
            Err(Error::InvalidParameter("boom".into()))
        }));
        let err = s.get(&Value::Int(9)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('9'), "{msg}");
    }

    #[test]
    fn negative_functional_scores_are_rejected() {
        let s = Score::Functional(FunctionalScore::new(|_| Ok(-1.0)));
        assert!(s.get(&Value::Int(0)).is_err());
    }
}
