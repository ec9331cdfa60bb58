//! Compositional SFuncs whose operation implementations are derived from
//! their components: Mixture, Extend/Separable, the Conditional family
//! (tables, linear Gaussians, CLGs), and deterministic functions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sfunc::dist::{NormalDist, PROB_SUM_TOLERANCE};
use crate::sfunc::SFunc;
use crate::value::Value;

/// Random choice among components sharing one signature.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub components: Vec<SFunc>,
    pub probabilities: Vec<f64>,
}

impl Mixture {
    pub fn new(components: Vec<SFunc>, probabilities: Vec<f64>) -> Result<Mixture> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "Mixture needs at least one component".into(),
            ));
        }
        if components.len() != probabilities.len() {
            return Err(Error::InvalidParameter(format!(
                "Mixture has {} components but {} probabilities",
                components.len(),
                probabilities.len()
            )));
        }
        let arity = components[0].arity();
        if components.iter().any(|c| c.arity() != arity) {
            return Err(Error::InvalidParameter(
                "Mixture components must share one input signature".into(),
            ));
        }
        if probabilities.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidParameter(
                "Mixture probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "Mixture probabilities must sum to 1, got {total}"
            )));
        }
        Ok(Mixture {
            components,
            probabilities,
        })
    }

    pub fn arity(&self) -> usize {
        self.components[0].arity()
    }
}

/// Widens a one-parent SFunc to `full_arity` parents, ignoring all but the
/// parent at `active_index` (0-based).
#[derive(Clone, Debug)]
pub struct Extend {
    pub inner: Box<SFunc>,
    pub full_arity: usize,
    pub active_index: usize,
}

impl Extend {
    pub fn new(inner: SFunc, full_arity: usize, active_index: usize) -> Result<Extend> {
        if inner.arity() != 1 {
            return Err(Error::InvalidParameter(
                "Extend wraps SFuncs with exactly one parent".into(),
            ));
        }
        if active_index >= full_arity {
            return Err(Error::InvalidParameter(format!(
                "Extend active_index {active_index} out of range for arity {full_arity}"
            )));
        }
        Ok(Extend {
            inner: Box::new(inner),
            full_arity,
            active_index,
        })
    }
}

/// Builds a separable conditional P(X | U_1..U_n) = Σ_i w_i · P_i(X | U_i) as
/// a Mixture over Extend-wrapped single-parent components. All operations are
/// derived from the Mixture/Extend implementations, which is what makes the
/// per-component (linear in n) message cost fall out for free.
pub fn make_separable(component_cpds: Vec<SFunc>, weights: Vec<f64>) -> Result<SFunc> {
    if component_cpds.is_empty() {
        return Err(Error::InvalidParameter(
            "Separable needs at least one component".into(),
        ));
    }
    let n = component_cpds.len();
    let mut extended = Vec::with_capacity(n);
    for (i, cpd) in component_cpds.into_iter().enumerate() {
        if cpd.arity() != 1 {
            return Err(Error::InvalidParameter(format!(
                "Separable component {i} must have exactly one parent, got {}",
                cpd.arity()
            )));
        }
        extended.push(SFunc::Extend(Extend::new(cpd, n, i)?));
    }
    Ok(SFunc::Mixture(Mixture::new(extended, weights)?))
}

/// Parameters of one linear-Gaussian relationship: the child is Normal with
/// mean `coefficients · parents + intercept` and fixed `noise_variance`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub noise_variance: f64,
}

impl LinearGaussian {
    pub fn new(coefficients: Vec<f64>, intercept: f64, noise_variance: f64) -> Result<LinearGaussian> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "LinearGaussian noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(LinearGaussian {
            coefficients,
            intercept,
            noise_variance,
        })
    }

    pub fn mean_given(&self, parents: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(parents)
            .map(|(c, x)| c * x)
            .sum::<f64>()
            + self.intercept
    }
}

/// Table contents of a `ParamGenTable`.
#[derive(Clone, Debug)]
pub enum TableKind {
    /// Conditional probability table: each selector tuple indexes a row of
    /// probabilities over the shared output list (embedded SFunc is Cat).
    Cpt {
        outputs: Vec<Value>,
        rows: BTreeMap<Vec<Value>, Vec<f64>>,
    },
    /// Conditional linear Gaussian: each selector tuple indexes linear
    /// Gaussian parameters over the continuous (J) parents.
    Clg {
        rows: BTreeMap<Vec<Value>, LinearGaussian>,
    },
}

/// Parameter table of a fixed embedded SFunc kind, indexed by selector tuples.
#[derive(Clone, Debug)]
pub struct ParamGenTable {
    /// Finite range of each selector (I) parent, in parent order.
    pub i_ranges: Vec<Vec<Value>>,
    pub kind: TableKind,
}

impl ParamGenTable {
    fn validate_total(&self) -> Result<()> {
        let expected: usize = self.i_ranges.iter().map(Vec::len).product();
        let got = match &self.kind {
            TableKind::Cpt { rows, .. } => rows.len(),
            TableKind::Clg { rows } => rows.len(),
        };
        if expected != got {
            return Err(Error::InvalidParameter(format!(
                "parameter table must cover all {expected} selector tuples, got {got} rows"
            )));
        }
        Ok(())
    }
}

/// How a Conditional turns selector values into the embedded SFunc.
#[derive(Clone)]
pub enum Generator {
    Table(ParamGenTable),
    /// All parents are selectors feeding a linear function; embedded SFunc is
    /// Normal with the computed mean and fixed variance.
    LinearGaussian(LinearGaussian),
    /// Arbitrary generator.
    Func(Arc<dyn Fn(&[Value]) -> Result<SFunc> + Send + Sync>),
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Generator::LinearGaussian(l) => f.debug_tuple("LinearGaussian").field(l).finish(),
            Generator::Func(_) => f.write_str("Func(..)"),
        }
    }
}

/// General conditional dependence: the first `i_arity` parents select an
/// embedded SFunc over the remaining `j_arity` parents.
#[derive(Clone, Debug)]
pub struct Conditional {
    pub i_arity: usize,
    pub j_arity: usize,
    pub generator: Generator,
}

impl Conditional {
    /// Embedded SFunc selected by the given selector values.
    pub fn gen_sf(&self, i_values: &[Value]) -> Result<SFunc> {
        if i_values.len() != self.i_arity {
            return Err(Error::ArityMismatch {
                kind: crate::sfunc::Kind::Conditional,
                expected: self.i_arity,
                got: i_values.len(),
            });
        }
        match &self.generator {
            Generator::Table(table) => {
                for (k, (v, range)) in i_values.iter().zip(&table.i_ranges).enumerate() {
                    if !range.contains(v) {
                        return Err(Error::InvalidParameter(format!(
                            "selector value `{v}` at position {k} is outside the table domain"
                        )));
                    }
                }
                match &table.kind {
                    TableKind::Cpt { outputs, rows } => {
                        let row = rows.get(i_values).ok_or_else(|| {
                            Error::InvalidParameter(format!(
                                "no table row for selector tuple {i_values:?}"
                            ))
                        })?;
                        SFunc::cat(outputs.clone(), row.clone())
                    }
                    TableKind::Clg { rows } => {
                        let lg = rows.get(i_values).ok_or_else(|| {
                            Error::InvalidParameter(format!(
                                "no table row for selector tuple {i_values:?}"
                            ))
                        })?;
                        Ok(SFunc::Conditional(Conditional {
                            i_arity: lg.coefficients.len(),
                            j_arity: 0,
                            generator: Generator::LinearGaussian(lg.clone()),
                        }))
                    }
                }
            }
            Generator::LinearGaussian(lg) => {
                let mut xs = Vec::with_capacity(i_values.len());
                for v in i_values {
                    xs.push(v.as_f64().ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "LinearGaussian parents must be numeric, got `{v}`"
                        ))
                    })?);
                }
                Ok(SFunc::normal(
                    lg.mean_given(&xs),
                    lg.noise_variance,
                )?)
            }
            Generator::Func(f) => f(i_values),
        }
    }

    pub fn arity(&self) -> usize {
        self.i_arity + self.j_arity
    }

    /// Splits a full parent tuple into (selector, passthrough) halves.
    pub fn split<'a, T>(&self, parents: &'a [T]) -> (&'a [T], &'a [T]) {
        parents.split_at(self.i_arity)
    }
}

/// Deterministic function of the parent tuple. An optional linear form
/// (`fn(x) = matrix · x` over numeric parents) enables exact inversion.
#[derive(Clone)]
pub struct Det {
    pub arity: usize,
    pub func: Arc<dyn Fn(&[Value]) -> Result<Value> + Send + Sync>,
    pub linear: Option<DMatrix<f64>>,
}

impl Det {
    pub fn new(
        arity: usize,
        func: impl Fn(&[Value]) -> Result<Value> + Send + Sync + 'static,
    ) -> Det {
        Det {
            arity,
            func: Arc::new(func),
            linear: None,
        }
    }

    /// Deterministic linear map. With one output row the result is a scalar
    /// float; otherwise a list of floats.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Det {
        let m = matrix.clone();
        let func = move |parents: &[Value]| -> Result<Value> {
            if parents.len() != m.ncols() {
                return Err(Error::ArityMismatch {
                    kind: crate::sfunc::Kind::Det,
                    expected: m.ncols(),
                    got: parents.len(),
                });
            }
            let mut x = Vec::with_capacity(parents.len());
            for v in parents {
                x.push(v.as_f64().ok_or_else(|| {
                    Error::InvalidParameter(format!("linear Det parents must be numeric, got `{v}`"))
                })?);
            }
            let y = &m * DMatrix::from_column_slice(m.ncols(), 1, &x);
            if y.nrows() == 1 {
                Ok(Value::real(y[(0, 0)]))
            } else {
                Ok(Value::List(
                    (0..y.nrows()).map(|r| Value::real(y[(r, 0)])).collect(),
                ))
            }
        };
        Det {
            arity: matrix.ncols(),
            func: Arc::new(func),
            linear: Some(matrix),
        }
    }

    pub fn apply(&self, parents: &[Value]) -> Result<Value> {
        if parents.len() != self.arity {
            return Err(Error::ArityMismatch {
                kind: crate::sfunc::Kind::Det,
                expected: self.arity,
                got: parents.len(),
            });
        }
        (self.func)(parents)
    }
}

impl fmt::Debug for Det {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Det")
            .field("arity", &self.arity)
            .field("linear", &self.linear.is_some())
            .finish_non_exhaustive()
    }
}

/// Deterministic choice among SFuncs: the first parent selects which of the
/// `choices` governs the remaining parents.
#[derive(Clone, Debug)]
pub struct Switch {
    pub choices: Vec<SFunc>,
}

impl Switch {
    pub fn new(choices: Vec<SFunc>) -> Result<Switch> {
        if choices.is_empty() {
            return Err(Error::InvalidParameter(
                "Switch needs at least one choice".into(),
            ));
        }
        let arity = choices[0].arity();
        if choices.iter().any(|c| c.arity() != arity) {
            return Err(Error::InvalidParameter(
                "Switch choices must share one input signature".into(),
            ));
        }
        Ok(Switch { choices })
    }

    pub fn choice_arity(&self) -> usize {
        self.choices[0].arity()
    }

    pub fn arity(&self) -> usize {
        1 + self.choice_arity()
    }

    /// Maps a selector value onto a choice index. Integers index directly;
    /// booleans pick the first (true) or second (false) choice.
    pub fn choice_index(&self, selector: &Value) -> Result<usize> {
        let idx = match selector {
            Value::Int(i) if *i >= 0 => *i as usize,
            Value::Bool(true) => 0,
            Value::Bool(false) => 1,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "Switch selector must be a nonnegative integer or boolean, got `{other}`"
                )))
            }
        };
        if idx >= self.choices.len() {
            return Err(Error::InvalidParameter(format!(
                "Switch selector `{selector}` exceeds {} choices",
                self.choices.len()
            )));
        }
        Ok(idx)
    }
}

/// Boolean two-way Switch: `true` selects `then_sf`, `false` selects `else_sf`.
pub fn if_then_else(then_sf: SFunc, else_sf: SFunc) -> Result<SFunc> {
    Ok(SFunc::Switch(Switch::new(vec![then_sf, else_sf])?))
}

pub(crate) fn validate_table(table: &ParamGenTable) -> Result<()> {
    table.validate_total()?;
    if let TableKind::Cpt { outputs, rows } = &table.kind {
        for (key, row) in rows {
            if row.len() != outputs.len() {
                return Err(Error::InvalidParameter(format!(
                    "CPT row {key:?} has {} entries for {} outputs",
                    row.len(),
                    outputs.len()
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "CPT row {key:?} must sum to 1, got {total}"
                )));
            }
            if row.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "CPT row {key:?} has a negative probability"
                )));
            }
        }
    }
    Ok(())
}
