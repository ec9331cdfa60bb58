//! Factors: dense tables of semiring values over assignments to finite-range
//! variables, with the combine/sum-out algebra used by elimination.

use crate::error::{Error, Result};
use crate::network::VarId;
use crate::semiring::{SemiVal, Semiring};
use crate::value::Value;

/// A table of semiring values indexed row-major by assignments to `vars`;
/// `ranges[i]` is the finite range of `vars[i]`.
#[derive(Clone, Debug)]
pub struct Factor {
    pub vars: Vec<VarId>,
    pub ranges: Vec<Vec<Value>>,
    pub table: Vec<SemiVal>,
}

impl Factor {
    /// A zero-variable factor holding a single value.
    pub fn scalar(value: SemiVal) -> Factor {
        Factor {
            vars: Vec::new(),
            ranges: Vec::new(),
            table: vec![value],
        }
    }

    /// Builds a factor by evaluating `f` on every assignment (indices aligned
    /// with `vars`).
    pub fn from_fn(
        vars: Vec<VarId>,
        ranges: Vec<Vec<Value>>,
        mut f: impl FnMut(&[usize]) -> Result<SemiVal>,
    ) -> Result<Factor> {
        assert_eq!(vars.len(), ranges.len());
        if ranges.iter().any(|r| r.is_empty()) {
            return Err(Error::InfiniteRange);
        }
        let size: usize = ranges.iter().map(Vec::len).product();
        let mut table = Vec::with_capacity(size);
        let mut idx = vec![0usize; vars.len()];
        for _ in 0..size {
            table.push(f(&idx)?);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < ranges[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Factor { vars, ranges, table })
    }

    pub fn size(&self) -> usize {
        self.table.len()
    }

    fn position(&self, idx: &[usize]) -> usize {
        let mut pos = 0;
        for (d, i) in idx.iter().enumerate() {
            pos = pos * self.ranges[d].len() + i;
        }
        pos
    }

    pub fn get(&self, idx: &[usize]) -> SemiVal {
        self.table[self.position(idx)]
    }

    /// Value at a named assignment; variables missing from the factor are
    /// ignored, but every factor variable must be assigned.
    pub fn get_named(&self, assignment: &std::collections::BTreeMap<VarId, Value>) -> Result<SemiVal> {
        let mut idx = Vec::with_capacity(self.vars.len());
        for (v, range) in self.vars.iter().zip(&self.ranges) {
            let val = assignment
                .get(v)
                .ok_or_else(|| Error::InvalidParameter(format!("assignment missing {v:?}")))?;
            let i = range
                .iter()
                .position(|x| x == val)
                .ok_or_else(|| Error::RangeMismatch(format!("{v:?}")))?;
            idx.push(i);
        }
        Ok(self.get(&idx))
    }

    /// Pointwise semiring product over the union variable set. Shared
    /// variables must carry identical ranges.
    pub fn combine(&self, other: &Factor, ring: &dyn Semiring) -> Result<Factor> {
        let mut vars = self.vars.clone();
        let mut ranges = self.ranges.clone();
        for (v, r) in other.vars.iter().zip(&other.ranges) {
            match vars.iter().position(|x| x == v) {
                Some(i) => {
                    if &ranges[i] != r {
                        return Err(Error::RangeMismatch(format!("{v:?}")));
                    }
                }
                None => {
                    vars.push(*v);
                    ranges.push(r.clone());
                }
            }
        }
        // Map each result dimension onto the operand dimensions.
        let left_pos: Vec<Option<usize>> = vars
            .iter()
            .map(|v| self.vars.iter().position(|x| x == v))
            .collect();
        let right_pos: Vec<Option<usize>> = vars
            .iter()
            .map(|v| other.vars.iter().position(|x| x == v))
            .collect();
        let mut left_idx = vec![0usize; self.vars.len()];
        let mut right_idx = vec![0usize; other.vars.len()];
        Factor::from_fn(vars.clone(), ranges, |idx| {
            for (d, i) in idx.iter().enumerate() {
                if let Some(l) = left_pos[d] {
                    left_idx[l] = *i;
                }
                if let Some(r) = right_pos[d] {
                    right_idx[r] = *i;
                }
            }
            Ok(ring.mul(self.get(&left_idx), other.get(&right_idx)))
        })
    }

    /// Semiring-sums `var` out of the factor.
    pub fn sum_out(&self, var: VarId, ring: &dyn Semiring) -> Result<Factor> {
        Ok(self.eliminate(var, ring)?.0)
    }

    /// Sums `var` out and, for selective (max) semirings, records which index
    /// of `var`'s range attained each surviving cell.
    pub fn eliminate(&self, var: VarId, ring: &dyn Semiring) -> Result<(Factor, Vec<usize>)> {
        let dim = self
            .vars
            .iter()
            .position(|v| *v == var)
            .ok_or_else(|| Error::InvalidParameter(format!("factor lacks variable {var:?}")))?;
        let mut vars = self.vars.clone();
        let mut ranges = self.ranges.clone();
        vars.remove(dim);
        let removed_range = ranges.remove(dim);

        let mut argmax = Vec::new();
        let mut full_idx = vec![0usize; self.vars.len()];
        let reduced = Factor::from_fn(vars, ranges, |idx| {
            for (d, i) in idx.iter().enumerate() {
                let fd = if d < dim { d } else { d + 1 };
                full_idx[fd] = *i;
            }
            let mut best_i = 0usize;
            let mut acc = {
                full_idx[dim] = 0;
                self.get(&full_idx)
            };
            for i in 1..removed_range.len() {
                full_idx[dim] = i;
                let v = self.get(&full_idx);
                let summed = ring.add(acc, v);
                if ring.is_selective() && summed != acc {
                    // The newcomer strictly improved the selection; earlier
                    // range order wins ties because equality keeps `acc`.
                    best_i = i;
                }
                acc = summed;
            }
            argmax.push(best_i);
            Ok(acc)
        })?;
        Ok((reduced, argmax))
    }

    /// Normalizes the real parts to sum to 1 (sum-product / mixed results).
    pub fn normalized(&self) -> Result<Factor> {
        let total: f64 = self
            .table
            .iter()
            .map(|v| v.as_real().unwrap_or(0.0))
            .sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateInput);
        }
        let table = self
            .table
            .iter()
            .map(|v| match v {
                SemiVal::Real(x) => SemiVal::Real(x / total),
                SemiVal::Mixed(b, x) => SemiVal::Mixed(*b, x / total),
                SemiVal::Bool(b) => SemiVal::Bool(*b),
            })
            .collect();
        Ok(Factor {
            vars: self.vars.clone(),
            ranges: self.ranges.clone(),
            table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiring::{BooleanRing, MaxProduct, SumProduct};

    fn v(i: usize) -> VarId {
        VarId(i)
    }

    fn vec_factor(var: usize, vals: &[f64]) -> Factor {
        Factor {
            vars: vec![v(var)],
            ranges: vec![(0..vals.len()).map(|i| Value::Int(i as i64)).collect()],
            table: vals.iter().map(|x| SemiVal::Real(*x)).collect(),
        }
    }

    #[test]
    fn combine_with_ones_is_identity() {
        let f = vec_factor(0, &[0.3, 0.7]);
        let ones = vec_factor(0, &[1.0, 1.0]);
        let out = f.combine(&ones, &SumProduct).unwrap();
        assert_eq!(out.table, f.table);
    }

    #[test]
    fn combine_with_zeros_absorbs() {
        let f = vec_factor(0, &[0.3, 0.7]);
        let zeros = vec_factor(0, &[0.0, 0.0]);
        let out = f.combine(&zeros, &SumProduct).unwrap();
        assert!(out.table.iter().all(|x| *x == SemiVal::Real(0.0)));
    }

    #[test]
    fn pointwise_product_of_single_var_factors() {
        let a = vec_factor(0, &[0.5, 0.5]);
        let b = vec_factor(0, &[0.2, 0.8]);
        let out = a.combine(&b, &SumProduct).unwrap();
        assert_eq!(out.table, vec![SemiVal::Real(0.1), SemiVal::Real(0.4)]);
    }

    #[test]
    fn sum_out_matches_semiring() {
        let f = vec_factor(0, &[0.1, 0.4]);
        let s = f.sum_out(v(0), &SumProduct).unwrap();
        assert_eq!(s.table, vec![SemiVal::Real(0.5)]);
        let m = f.sum_out(v(0), &MaxProduct).unwrap();
        assert_eq!(m.table, vec![SemiVal::Real(0.4)]);
    }

    #[test]
    fn boolean_or_over_range() {
        let f = Factor {
            vars: vec![v(0)],
            ranges: vec![vec![Value::Bool(false), Value::Bool(true)]],
            table: vec![SemiVal::Bool(false), SemiVal::Bool(true)],
        };
        let s = f.sum_out(v(0), &BooleanRing).unwrap();
        assert_eq!(s.table, vec![SemiVal::Bool(true)]);
    }

    #[test]
    fn mismatched_shared_ranges_error() {
        let a = vec_factor(0, &[0.5, 0.5]);
        let b = vec_factor(0, &[0.2, 0.3, 0.5]);
        assert!(a.combine(&b, &SumProduct).is_err());
    }

    #[test]
    fn absent_variable_errors() {
        let a = vec_factor(0, &[0.5, 0.5]);
        assert!(a.sum_out(v(3), &SumProduct).is_err());
    }
}
