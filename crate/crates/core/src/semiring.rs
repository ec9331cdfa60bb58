//! Pluggable semirings for generalized sum-of-products elimination.
//!
//! A semiring supplies commutative `add` and `mul` with identities, where
//! `mul` distributes over `add` and `zero` absorbs `mul`. Instantiations:
//! probability (sum/product), most-likely-explanation (max/product), logic
//! (or/and), and a mixed logical–probabilistic pair semiring whose product
//! zeros out the probabilistic entry whenever the logical entry is false.

use crate::error::{Error, Result};

/// A value in some semiring's carrier set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SemiVal {
    Real(f64),
    Bool(bool),
    /// Paired (logical, probabilistic) value. Valid elements keep the
    /// invariant: logical false implies probabilistic 0.
    Mixed(bool, f64),
}

impl SemiVal {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            SemiVal::Real(x) => Some(*x),
            SemiVal::Mixed(_, x) => Some(*x),
            SemiVal::Bool(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            SemiVal::Bool(b) => Some(*b),
            SemiVal::Mixed(b, _) => Some(*b),
            SemiVal::Real(_) => None,
        }
    }
}

fn real(v: SemiVal) -> f64 {
    match v {
        SemiVal::Real(x) => x,
        other => panic!("expected a real semiring value, got {other:?}"),
    }
}

fn boolean(v: SemiVal) -> bool {
    match v {
        SemiVal::Bool(b) => b,
        other => panic!("expected a boolean semiring value, got {other:?}"),
    }
}

fn mixed(v: SemiVal) -> (bool, f64) {
    match v {
        SemiVal::Mixed(b, x) => (b, x),
        other => panic!("expected a mixed semiring value, got {other:?}"),
    }
}

pub trait Semiring: Send + Sync {
    fn name(&self) -> &'static str;
    fn zero(&self) -> SemiVal;
    fn one(&self) -> SemiVal;
    fn add(&self, a: SemiVal, b: SemiVal) -> SemiVal;
    fn mul(&self, a: SemiVal, b: SemiVal) -> SemiVal;
    /// Embeds a conditional probability / mass / score into the carrier.
    fn from_prob(&self, p: f64) -> SemiVal;
    /// Whether `add` selects one operand (enables most-likely decoding).
    fn is_selective(&self) -> bool {
        false
    }
    /// Whether final query results should be normalized over the real part.
    fn normalizes(&self) -> bool {
        false
    }
}

/// Ordinary probability calculus: (+, ×) on reals.
pub struct SumProduct;

impl Semiring for SumProduct {
    fn name(&self) -> &'static str {
        "sum_product"
    }
    fn zero(&self) -> SemiVal {
        SemiVal::Real(0.0)
    }
    fn one(&self) -> SemiVal {
        SemiVal::Real(1.0)
    }
    fn add(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Real(real(a) + real(b))
    }
    fn mul(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Real(real(a) * real(b))
    }
    fn from_prob(&self, p: f64) -> SemiVal {
        SemiVal::Real(p)
    }
    fn normalizes(&self) -> bool {
        true
    }
}

/// Most-likely-explanation calculus: (max, ×) on nonnegative reals.
pub struct MaxProduct;

impl Semiring for MaxProduct {
    fn name(&self) -> &'static str {
        "max_product"
    }
    fn zero(&self) -> SemiVal {
        SemiVal::Real(0.0)
    }
    fn one(&self) -> SemiVal {
        SemiVal::Real(1.0)
    }
    fn add(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Real(real(a).max(real(b)))
    }
    fn mul(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Real(real(a) * real(b))
    }
    fn from_prob(&self, p: f64) -> SemiVal {
        SemiVal::Real(p)
    }
    fn is_selective(&self) -> bool {
        true
    }
}

/// Logical calculus: sum is disjunction, product is conjunction.
pub struct BooleanRing;

impl Semiring for BooleanRing {
    fn name(&self) -> &'static str {
        "boolean"
    }
    fn zero(&self) -> SemiVal {
        SemiVal::Bool(false)
    }
    fn one(&self) -> SemiVal {
        SemiVal::Bool(true)
    }
    fn add(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Bool(boolean(a) | boolean(b))
    }
    fn mul(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        SemiVal::Bool(boolean(a) & boolean(b))
    }
    fn from_prob(&self, p: f64) -> SemiVal {
        SemiVal::Bool(p > 0.0)
    }
}

/// Joint logical–probabilistic calculus over pairs. The product zeros out the
/// probabilistic value when the combined logical value is false; the sum is
/// pointwise (or, +). Carrier elements keep logical-false paired with 0.
pub struct MixedRing;

impl Semiring for MixedRing {
    fn name(&self) -> &'static str {
        "mixed"
    }
    fn zero(&self) -> SemiVal {
        SemiVal::Mixed(false, 0.0)
    }
    fn one(&self) -> SemiVal {
        SemiVal::Mixed(true, 1.0)
    }
    fn add(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        let (ba, pa) = mixed(a);
        let (bb, pb) = mixed(b);
        SemiVal::Mixed(ba | bb, pa + pb)
    }
    fn mul(&self, a: SemiVal, b: SemiVal) -> SemiVal {
        let (ba, pa) = mixed(a);
        let (bb, pb) = mixed(b);
        let both = ba & bb;
        SemiVal::Mixed(both, if both { pa * pb } else { 0.0 })
    }
    fn from_prob(&self, p: f64) -> SemiVal {
        SemiVal::Mixed(p > 0.0, p)
    }
    fn normalizes(&self) -> bool {
        true
    }
}

/// Product of a logical value and a probabilistic value in the mixed pair
/// semiring: the probabilistic part survives only when both logical parts
/// hold.
pub fn mixed_product(logical: SemiVal, probabilistic: SemiVal) -> SemiVal {
    MixedRing.mul(logical, probabilistic)
}

/// Semiring lookup for runtime selection (e.g. by CLI flag).
pub fn semiring_by_name(name: &str) -> Result<Box<dyn Semiring>> {
    match name {
        "sum_product" => Ok(Box::new(SumProduct)),
        "max_product" => Ok(Box::new(MaxProduct)),
        "boolean" => Ok(Box::new(BooleanRing)),
        "mixed" => Ok(Box::new(MixedRing)),
        other => Err(Error::InvalidParameter(format!(
            "unknown semiring `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_product_zeros_on_logical_false() {
        let out = mixed_product(SemiVal::Mixed(true, 0.5), SemiVal::Mixed(false, 0.9));
        assert_eq!(out, SemiVal::Mixed(false, 0.0));
    }

    #[test]
    fn mixed_one_is_an_identity() {
        let x = SemiVal::Mixed(true, 0.37);
        assert_eq!(mixed_product(MixedRing.one(), x), x);
        let z = SemiVal::Mixed(false, 0.0);
        assert_eq!(mixed_product(MixedRing.one(), z), z);
    }

    #[test]
    fn boolean_sum_is_disjunction() {
        let r = BooleanRing;
        assert_eq!(
            r.add(SemiVal::Bool(false), SemiVal::Bool(true)),
            SemiVal::Bool(true)
        );
        assert_eq!(
            r.mul(SemiVal::Bool(true), SemiVal::Bool(false)),
            SemiVal::Bool(false)
        );
    }
}
