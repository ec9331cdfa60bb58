//! Runtime values flowing through networks, and descriptors for value spaces.
//!
//! Every SFunc consumes and produces [`Value`]s. Using a closed enum keeps
//! heterogeneous networks (booleans next to reals next to symbols) simple to
//! store in ranges, factor tables, and particle assignments. Floats are wrapped
//! in [`OrderedFloat`] so values can key maps and be compared deterministically.

use std::fmt;

use ordered_float::OrderedFloat;

/// A single runtime value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(OrderedFloat<f64>),
    Str(String),
    /// Tuple of values; used for multi-input scores and vector-valued
    /// deterministic functions.
    List(Vec<Value>),
}

impl Value {
    pub fn real(x: f64) -> Value {
        Value::Float(OrderedFloat(x))
    }

    /// Numeric view. Booleans coerce true→1, false→0.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(f.0),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Bool(_) => ValueKind::Bool,
            Value::Int(_) => ValueKind::Int,
            Value::Float(_) => ValueKind::Real,
            Value::Str(_) => ValueKind::Str,
            Value::List(_) => ValueKind::Tuple,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{}", x.0),
            Value::Str(s) => write!(f, "{s}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Value {
        Value::real(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Str(s.to_string())
    }
}

/// Descriptor for a value space.
///
/// `None` is the distinguished output kind of Score-family SFuncs, which
/// consume inputs without producing a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Bool,
    Int,
    Real,
    Str,
    Tuple,
    /// No value; permitted as the output kind of scores only.
    None,
    /// Unconstrained (e.g. opaque deterministic functions).
    Any,
}

impl ValueKind {
    /// Whether a value of kind `self` may appear where `other` is declared.
    pub fn accepts(self, other: ValueKind) -> bool {
        self == ValueKind::Any || other == ValueKind::Any || self == other
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Bool | ValueKind::Int | ValueKind::Real)
    }
}

/// Input/output/parameter value spaces declared by an SFunc.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SFuncSignature {
    /// One entry per parent; empty for Dist-family SFuncs.
    pub input_kinds: Vec<ValueKind>,
    /// `ValueKind::None` for Score-family SFuncs only.
    pub output_kind: ValueKind,
    /// Value space of learnable parameters.
    pub param_kind: ValueKind,
}

impl SFuncSignature {
    pub fn arity(&self) -> usize {
        self.input_kinds.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_coercions() {
        assert_eq!(Value::Bool(true).as_f64(), Some(1.0));
        assert_eq!(Value::Bool(false).as_f64(), Some(0.0));
        assert_eq!(Value::Int(-3).as_f64(), Some(-3.0));
        assert_eq!(Value::real(2.5).as_f64(), Some(2.5));
        assert_eq!(Value::Str("a".into()).as_f64(), None);
    }

    #[test]
    fn values_order_deterministically() {
        let mut vs = vec![Value::real(2.0), Value::real(1.0), Value::Bool(true)];
        vs.sort();
        assert_eq!(vs[0], Value::Bool(true));
        assert_eq!(vs[1], Value::real(1.0));
    }

    #[test]
    fn display_is_stable() {
        assert_eq!(Value::Bool(true).to_string(), "true");
        assert_eq!(Value::Int(7).to_string(), "7");
        assert_eq!(Value::real(0.5).to_string(), "0.5");
        assert_eq!(
            Value::List(vec![Value::Int(1), Value::Int(2)]).to_string(),
            "[1, 2]"
        );
    }
}
