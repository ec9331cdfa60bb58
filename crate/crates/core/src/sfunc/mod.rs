//! Stochastic functions (SFuncs): model components defined implicitly by the
//! operations registered for them.
//!
//! An SFunc maps a (possibly empty) tuple of parent values to an output value;
//! the relationship may be stochastic, deterministic, or score-only (no
//! output). Concrete kinds form an explicit lattice ([`Kind`]) so operation
//! implementations registered for an abstract kind apply to every descendant.

pub mod compose;
pub mod dist;
pub mod score;

use std::collections::BTreeMap;

pub use compose::{
    if_then_else, make_separable, Conditional, Det, Extend, Generator, LinearGaussian, Mixture,
    ParamGenTable, Switch, TableKind,
};
pub use dist::{Cat, Constant, Dist, Flip, NormalDist};
pub use score::{FunctionalScore, HardScore, Score, SoftScore};

use crate::error::{Error, Result};
use crate::value::{SFuncSignature, Value, ValueKind};

/// SFunc kinds arranged in an explicit subsumption lattice. Each concrete
/// kind names its parent; operation lookups walk ancestors so an
/// implementation registered for, say, [`Kind::Dist`] serves every leaf
/// distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    SFunc,
    Dist,
    Flip,
    Cat,
    Normal,
    Constant,
    Score,
    HardScore,
    SoftScore,
    FunctionalScore,
    Mixture,
    Extend,
    Conditional,
    ParamGen,
    Table,
    DiscreteCpt,
    Clg,
    LinearGaussian,
    Det,
    Switch,
}

impl Kind {
    pub fn parent(self) -> Option<Kind> {
        use Kind::*;
        match self {
            SFunc => None,
            Dist | Score | Mixture | Extend | Conditional | Det => Some(SFunc),
            Flip | Cat | Normal | Constant => Some(Dist),
            HardScore | SoftScore | FunctionalScore => Some(Score),
            ParamGen => Some(Conditional),
            Table | LinearGaussian => Some(ParamGen),
            DiscreteCpt | Clg => Some(Table),
            Switch => Some(Det),
        }
    }

    /// `self` plus its ancestors, most specific first.
    pub fn lineage(self) -> Vec<Kind> {
        let mut out = vec![self];
        let mut cur = self;
        while let Some(p) = cur.parent() {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn is_descendant_of(self, other: Kind) -> bool {
        self.lineage().contains(&other)
    }
}

/// A model component. See the module docs; operations on SFuncs are invoked
/// through the registry (see [`crate::ops`]), not through inherent methods.
#[derive(Clone, Debug)]
pub enum SFunc {
    Flip(Flip),
    Cat(Cat),
    Normal(NormalDist),
    Constant(Constant),
    HardScore(HardScore),
    SoftScore(SoftScore),
    FunctionalScore(FunctionalScore),
    Mixture(Mixture),
    Extend(Extend),
    Conditional(Conditional),
    Det(Det),
    Switch(Switch),
}

impl SFunc {
    // ----- constructors -------------------------------------------------

    pub fn flip(prob_true: f64) -> Result<SFunc> {
        Ok(SFunc::Flip(Flip::new(prob_true)?))
    }

    pub fn cat(values: Vec<Value>, probs: Vec<f64>) -> Result<SFunc> {
        Ok(SFunc::Cat(Cat::new(values, probs)?))
    }

    pub fn normal(mean: f64, variance: f64) -> Result<SFunc> {
        Ok(SFunc::Normal(NormalDist::new(mean, variance)?))
    }

    pub fn constant(value: impl Into<Value>) -> SFunc {
        SFunc::Constant(Constant::new(value.into()))
    }

    pub fn hard_score(allowed: impl Into<Value>) -> SFunc {
        SFunc::HardScore(HardScore::new(allowed.into()))
    }

    pub fn soft_score(pairs: impl IntoIterator<Item = (Value, f64)>) -> Result<SFunc> {
        Ok(SFunc::SoftScore(SoftScore::from_pairs(pairs)?))
    }

    pub fn mixture(components: Vec<SFunc>, probabilities: Vec<f64>) -> Result<SFunc> {
        Ok(SFunc::Mixture(Mixture::new(components, probabilities)?))
    }

    /// Conditional probability table over finite selector parents.
    pub fn discrete_cpt(
        i_ranges: Vec<Vec<Value>>,
        outputs: Vec<Value>,
        rows: Vec<(Vec<Value>, Vec<f64>)>,
    ) -> Result<SFunc> {
        let table = ParamGenTable {
            i_ranges,
            kind: TableKind::Cpt {
                outputs,
                rows: rows.into_iter().collect(),
            },
        };
        compose::validate_table(&table)?;
        Ok(SFunc::Conditional(Conditional {
            i_arity: table.i_ranges.len(),
            j_arity: 0,
            generator: Generator::Table(table),
        }))
    }

    pub fn linear_gaussian(
        coefficients: Vec<f64>,
        intercept: f64,
        noise_variance: f64,
    ) -> Result<SFunc> {
        let lg = LinearGaussian::new(coefficients, intercept, noise_variance)?;
        Ok(SFunc::Conditional(Conditional {
            i_arity: lg.coefficients.len(),
            j_arity: 0,
            generator: Generator::LinearGaussian(lg),
        }))
    }

    /// Conditional linear Gaussian: discrete selectors index linear-Gaussian
    /// parameters over the remaining continuous parents.
    pub fn clg(
        i_ranges: Vec<Vec<Value>>,
        rows: Vec<(Vec<Value>, LinearGaussian)>,
    ) -> Result<SFunc> {
        let j_arity = rows
            .first()
            .map(|(_, lg)| lg.coefficients.len())
            .unwrap_or(0);
        if rows.iter().any(|(_, lg)| lg.coefficients.len() != j_arity) {
            return Err(Error::InvalidParameter(
                "all CLG rows must have the same number of continuous parents".into(),
            ));
        }
        let table = ParamGenTable {
            i_ranges,
            kind: TableKind::Clg {
                rows: rows.into_iter().collect::<BTreeMap<_, _>>(),
            },
        };
        compose::validate_table(&table)?;
        Ok(SFunc::Conditional(Conditional {
            i_arity: table.i_ranges.len(),
            j_arity,
            generator: Generator::Table(table),
        }))
    }

    pub fn det(arity: usize, f: impl Fn(&[Value]) -> Result<Value> + Send + Sync + 'static) -> SFunc {
        SFunc::Det(Det::new(arity, f))
    }

    pub fn det_linear(matrix: nalgebra::DMatrix<f64>) -> SFunc {
        SFunc::Det(Det::from_matrix(matrix))
    }

    pub fn switch(choices: Vec<SFunc>) -> Result<SFunc> {
        Ok(SFunc::Switch(Switch::new(choices)?))
    }

    // ----- structure ----------------------------------------------------

    pub fn kind(&self) -> Kind {
        match self {
            SFunc::Flip(_) => Kind::Flip,
            SFunc::Cat(_) => Kind::Cat,
            SFunc::Normal(_) => Kind::Normal,
            SFunc::Constant(_) => Kind::Constant,
            SFunc::HardScore(_) => Kind::HardScore,
            SFunc::SoftScore(_) => Kind::SoftScore,
            SFunc::FunctionalScore(_) => Kind::FunctionalScore,
            SFunc::Mixture(_) => Kind::Mixture,
            SFunc::Extend(_) => Kind::Extend,
            SFunc::Conditional(c) => match &c.generator {
                Generator::Table(t) => match t.kind {
                    TableKind::Cpt { .. } => Kind::DiscreteCpt,
                    TableKind::Clg { .. } => Kind::Clg,
                },
                Generator::LinearGaussian(_) => Kind::LinearGaussian,
                Generator::Func(_) => Kind::Conditional,
            },
            SFunc::Det(_) => Kind::Det,
            SFunc::Switch(_) => Kind::Switch,
        }
    }

    /// Number of parents.
    pub fn arity(&self) -> usize {
        match self {
            SFunc::Flip(_) | SFunc::Cat(_) | SFunc::Normal(_) | SFunc::Constant(_) => 0,
            SFunc::HardScore(_) | SFunc::SoftScore(_) => 1,
            SFunc::FunctionalScore(f) => f.arity,
            SFunc::Mixture(m) => m.arity(),
            SFunc::Extend(e) => e.full_arity,
            SFunc::Conditional(c) => c.arity(),
            SFunc::Det(d) => d.arity,
            SFunc::Switch(s) => s.arity(),
        }
    }

    pub fn is_score(&self) -> bool {
        self.kind().is_descendant_of(Kind::Score)
    }

    pub fn is_dist(&self) -> bool {
        self.kind().is_descendant_of(Kind::Dist)
    }

    /// Dist payload of Dist-family SFuncs.
    pub fn as_dist(&self) -> Option<Dist> {
        match self {
            SFunc::Flip(f) => Some(Dist::Flip(f.clone())),
            SFunc::Cat(c) => Some(Dist::Cat(c.clone())),
            SFunc::Normal(n) => Some(Dist::Normal(n.clone())),
            SFunc::Constant(c) => Some(Dist::Constant(c.clone())),
            _ => None,
        }
    }

    /// Score payload of Score-family SFuncs.
    pub fn as_score(&self) -> Option<Score> {
        match self {
            SFunc::HardScore(h) => Some(Score::Hard(h.clone())),
            SFunc::SoftScore(s) => Some(Score::Soft(s.clone())),
            SFunc::FunctionalScore(f) => Some(Score::Functional(f.clone())),
            _ => None,
        }
    }

    /// Declared input/output/parameter value spaces.
    pub fn signature(&self) -> SFuncSignature {
        let output_kind = match self {
            SFunc::Flip(_) => ValueKind::Bool,
            SFunc::Cat(c) => c.values[0].kind(),
            SFunc::Normal(_) => ValueKind::Real,
            SFunc::Constant(c) => c.value.kind(),
            SFunc::HardScore(_) | SFunc::SoftScore(_) | SFunc::FunctionalScore(_) => {
                ValueKind::None
            }
            SFunc::Mixture(m) => m.components[0].signature().output_kind,
            SFunc::Extend(e) => e.inner.signature().output_kind,
            SFunc::Conditional(c) => match &c.generator {
                Generator::Table(t) => match &t.kind {
                    TableKind::Cpt { outputs, .. } => outputs
                        .first()
                        .map(|v| v.kind())
                        .unwrap_or(ValueKind::Any),
                    TableKind::Clg { .. } => ValueKind::Real,
                },
                Generator::LinearGaussian(_) => ValueKind::Real,
                Generator::Func(_) => ValueKind::Any,
            },
            SFunc::Det(_) => ValueKind::Any,
            SFunc::Switch(s) => s.choices[0].signature().output_kind,
        };
        let input_kinds = match self {
            SFunc::Conditional(c) => {
                let mut kinds = match &c.generator {
                    Generator::Table(t) => {
                        t.i_ranges
                            .iter()
                            .map(|r| r.first().map(|v| v.kind()).unwrap_or(ValueKind::Any))
                            .collect::<Vec<_>>()
                    }
                    Generator::LinearGaussian(lg) => vec![ValueKind::Real; lg.coefficients.len()],
                    Generator::Func(_) => vec![ValueKind::Any; c.i_arity],
                };
                kinds.extend(vec![ValueKind::Real; c.j_arity]);
                kinds
            }
            _ => vec![ValueKind::Any; self.arity()],
        };
        SFuncSignature {
            input_kinds,
            output_kind,
            param_kind: ValueKind::Real,
        }
    }
}

impl From<Dist> for SFunc {
    fn from(d: Dist) -> SFunc {
        match d {
            Dist::Flip(f) => SFunc::Flip(f),
            Dist::Cat(c) => SFunc::Cat(c),
            Dist::Normal(n) => SFunc::Normal(n),
            Dist::Constant(c) => SFunc::Constant(c),
        }
    }
}

impl From<Score> for SFunc {
    fn from(s: Score) -> SFunc {
        match s {
            Score::Hard(h) => SFunc::HardScore(h),
            Score::Soft(s) => SFunc::SoftScore(s),
            Score::Functional(f) => SFunc::FunctionalScore(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_lineage() {
        assert_eq!(
            Kind::DiscreteCpt.lineage(),
            vec![
                Kind::DiscreteCpt,
                Kind::Table,
                Kind::ParamGen,
                Kind::Conditional,
                Kind::SFunc
            ]
        );
        assert!(Kind::Flip.is_descendant_of(Kind::Dist));
        assert!(Kind::Switch.is_descendant_of(Kind::Det));
        assert!(!Kind::Flip.is_descendant_of(Kind::Score));
    }

    #[test]
    fn score_signature_has_no_output() {
        let s = SFunc::hard_score(Value::Int(1));
        assert_eq!(s.signature().output_kind, ValueKind::None);
        assert_eq!(s.arity(), 1);
    }

    #[test]
    fn cpt_kind_and_arity() {
        let cpt = SFunc::discrete_cpt(
            vec![vec![Value::Bool(false), Value::Bool(true)]],
            vec![Value::Int(0), Value::Int(1)],
            vec![
                (vec![Value::Bool(false)], vec![0.3, 0.7]),
                (vec![Value::Bool(true)], vec![0.9, 0.1]),
            ],
        )
        .unwrap();
        assert_eq!(cpt.kind(), Kind::DiscreteCpt);
        assert_eq!(cpt.arity(), 1);
    }

    #[test]
    fn cpt_rejects_unnormalized_rows() {
        let bad = SFunc::discrete_cpt(
            vec![vec![Value::Bool(false)]],
            vec![Value::Int(0), Value::Int(1)],
            vec![(vec![Value::Bool(false)], vec![0.3, 0.6])],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn separable_is_a_mixture_of_extends() {
        let p1 = SFunc::discrete_cpt(
            vec![vec![Value::Bool(false), Value::Bool(true)]],
            vec![Value::Int(0), Value::Int(1)],
            vec![
                (vec![Value::Bool(false)], vec![0.2, 0.8]),
                (vec![Value::Bool(true)], vec![0.6, 0.4]),
            ],
        )
        .unwrap();
        let sep = make_separable(vec![p1.clone(), p1], vec![0.5, 0.5]).unwrap();
        assert_eq!(sep.kind(), Kind::Mixture);
        assert_eq!(sep.arity(), 2);
    }
}
