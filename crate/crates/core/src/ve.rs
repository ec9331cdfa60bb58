//! Variable elimination over pluggable semirings, with max-product decoding.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::kernel::{Policy, Registry};
use crate::network::{Evidence, EvidenceValue, Network, VarId};
use crate::ops;
use crate::semiring::{MaxProduct, SemiVal, Semiring};
use crate::value::Value;

/// Default discretization size for continuous supports.
pub const DEFAULT_SUPPORT_TARGET: usize = 21;

pub type RangeMap = BTreeMap<VarId, Vec<Value>>;

/// Elimination-order choice.
#[derive(Clone, Debug)]
pub enum OrderHeuristic {
    /// Greedy min-degree on the factor interaction graph, ties by variable id.
    MinDegree,
    /// Explicit order over the eliminable variables.
    Given(Vec<VarId>),
}

fn node_factors(
    net: &Network,
    evidence: &Evidence,
    ring: &dyn Semiring,
    ranges: &RangeMap,
    registry: &Registry,
    policy: &Policy,
) -> Result<Vec<Factor>> {
    let mut factors = Vec::new();
    for v in net.var_ids() {
        let sf = net.sfunc(v);
        let (vars, var_ranges): (Vec<VarId>, Vec<Vec<Value>>) = if sf.is_score() {
            let vars: Vec<VarId> = net.parents(v).to_vec();
            let rs = vars
                .iter()
                .map(|p| ranges.get(p).cloned().ok_or(Error::InfiniteRange))
                .collect::<Result<Vec<_>>>()?;
            (vars, rs)
        } else {
            let mut vars = vec![v];
            vars.extend_from_slice(net.parents(v));
            let rs = vars
                .iter()
                .map(|p| ranges.get(p).cloned().ok_or(Error::InfiniteRange))
                .collect::<Result<Vec<_>>>()?;
            (vars, rs)
        };
        let fs = ops::make_factors(registry, policy, sf, ring, &vars, &var_ranges)
            .map_err(|e| match e {
                Error::UnsupportedOperation { operation, kind } => Error::UnsupportedOperation {
                    operation: format!("{operation} (variable `{}`)", net.name(v)),
                    kind,
                },
                other => other,
            })?;
        factors.extend(fs);
    }
    // Soft evidence becomes a score factor over the bound variable; hard
    // evidence is already folded in through singleton ranges.
    for (v, binding) in evidence.iter() {
        if let EvidenceValue::Score(score) = binding {
            let range = ranges.get(v).cloned().ok_or(Error::InfiniteRange)?;
            let score = score.clone();
            let f = Factor::from_fn(vec![*v], vec![range.clone()], |idx| {
                Ok(ring.from_prob(score.get(&range[idx[0]])?))
            })?;
            factors.push(f);
        }
    }
    Ok(factors)
}

fn min_degree_order(factors: &[Factor], eliminable: &[VarId]) -> Vec<VarId> {
    let mut adjacency: BTreeMap<VarId, std::collections::BTreeSet<VarId>> = BTreeMap::new();
    for f in factors {
        for a in &f.vars {
            for b in &f.vars {
                if a != b {
                    adjacency.entry(*a).or_default().insert(*b);
                }
            }
        }
        for a in &f.vars {
            adjacency.entry(*a).or_default();
        }
    }
    let mut remaining: Vec<VarId> = eliminable.to_vec();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let (pos, &next) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, v)| {
                (
                    adjacency.get(v).map(|s| s.len()).unwrap_or(0),
                    **v,
                )
            })
            .expect("remaining is nonempty");
        order.push(next);
        remaining.remove(pos);
        // Connect the neighborhood, then drop the eliminated variable.
        let neighbors: Vec<VarId> = adjacency
            .get(&next)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for a in &neighbors {
            for b in &neighbors {
                if a != b {
                    adjacency.entry(*a).or_default().insert(*b);
                }
            }
            if let Some(s) = adjacency.get_mut(a) {
                s.remove(&next);
            }
        }
        adjacency.remove(&next);
    }
    order
}

fn eliminate_var(factors: &mut Vec<Factor>, var: VarId, ring: &dyn Semiring) -> Result<Vec<usize>> {
    let (touching, rest): (Vec<Factor>, Vec<Factor>) =
        factors.drain(..).partition(|f| f.vars.contains(&var));
    *factors = rest;
    if touching.is_empty() {
        return Ok(Vec::new());
    }
    let mut combined = touching[0].clone();
    for f in &touching[1..] {
        combined = combined.combine(f, ring)?;
    }
    let (reduced, argmax) = combined.eliminate(var, ring)?;
    factors.push(reduced);
    Ok(argmax)
}

/// Semiring marginal over `query` given evidence, proportional to the
/// sum-of-products over all eliminated variables. Results are normalized for
/// semirings that declare normalization (sum-product, mixed).
pub fn ve_query(
    net: &Network,
    evidence: &Evidence,
    query: &[VarId],
    ring: &dyn Semiring,
    order: OrderHeuristic,
    registry: &Registry,
    policy: &Policy,
    ranges: Option<&RangeMap>,
) -> Result<Factor> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    let owned_ranges;
    let ranges = match ranges {
        Some(r) => r,
        None => {
            owned_ranges =
                net.working_ranges(evidence, registry, policy, DEFAULT_SUPPORT_TARGET, None)?;
            &owned_ranges
        }
    };
    let mut factors = node_factors(net, evidence, ring, ranges, registry, policy)?;

    let eliminable: Vec<VarId> = net
        .var_ids()
        .filter(|v| !net.sfunc(*v).is_score() && !query.contains(v))
        .collect();
    let order = match order {
        OrderHeuristic::MinDegree => min_degree_order(&factors, &eliminable),
        OrderHeuristic::Given(vs) => {
            let mut sorted_a: Vec<VarId> = vs.clone();
            let mut sorted_b = eliminable.clone();
            sorted_a.sort();
            sorted_b.sort();
            if sorted_a != sorted_b {
                return Err(Error::InvalidParameter(
                    "elimination order must be a permutation of the non-query variables".into(),
                ));
            }
            vs
        }
    };
    for v in order {
        eliminate_var(&mut factors, v, ring)?;
    }

    let mut result = Factor::scalar(ring.one());
    for f in &factors {
        result = result.combine(f, ring)?;
    }
    let result = reorder(result, query)?;
    if ring.normalizes() {
        result.normalized()
    } else {
        Ok(result)
    }
}

/// Reorders a factor's variables to match `query` exactly.
fn reorder(f: Factor, query: &[VarId]) -> Result<Factor> {
    if f.vars == query {
        return Ok(f);
    }
    let positions: Vec<usize> = query
        .iter()
        .map(|q| {
            f.vars
                .iter()
                .position(|v| v == q)
                .ok_or_else(|| Error::InvalidParameter(format!("result lacks query variable {q:?}")))
        })
        .collect::<Result<_>>()?;
    if positions.len() != f.vars.len() {
        return Err(Error::InvalidParameter(
            "query does not cover the result factor".into(),
        ));
    }
    let ranges: Vec<Vec<Value>> = positions.iter().map(|p| f.ranges[*p].clone()).collect();
    let mut src_idx = vec![0usize; f.vars.len()];
    Factor::from_fn(query.to_vec(), ranges, |idx| {
        for (d, i) in idx.iter().enumerate() {
            src_idx[positions[d]] = *i;
        }
        Ok(f.get(&src_idx))
    })
}

/// Log probability of the evidence: unnormalized sum-product elimination of
/// every variable. Impossible evidence yields −∞ rather than an error.
pub fn evidence_log_probability(
    net: &Network,
    evidence: &Evidence,
    registry: &Registry,
    policy: &Policy,
    ranges: Option<&RangeMap>,
) -> Result<f64> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    let owned_ranges;
    let ranges_ref = match ranges {
        Some(r) => r,
        None => {
            owned_ranges =
                net.working_ranges(evidence, registry, policy, DEFAULT_SUPPORT_TARGET, None)?;
            &owned_ranges
        }
    };
    let ring = crate::semiring::SumProduct;
    let mut factors = node_factors(net, evidence, &ring, ranges_ref, registry, policy)?;
    let eliminable: Vec<VarId> = net
        .var_ids()
        .filter(|v| !net.sfunc(*v).is_score())
        .collect();
    for v in min_degree_order(&factors, &eliminable) {
        eliminate_var(&mut factors, v, &ring)?;
    }
    let mut total = 1.0;
    for f in &factors {
        for cell in &f.table {
            total *= cell.as_real().unwrap_or(0.0);
        }
    }
    Ok(total.ln())
}

/// Normalized joint posterior over a node and its parents (the node's
/// "family"), used for expected sufficient statistics.
pub fn family_marginal(
    net: &Network,
    evidence: &Evidence,
    v: VarId,
    registry: &Registry,
    policy: &Policy,
) -> Result<Factor> {
    let mut query = vec![v];
    query.extend_from_slice(net.parents(v));
    ve_query(
        net,
        evidence,
        &query,
        &crate::semiring::SumProduct,
        OrderHeuristic::MinDegree,
        registry,
        policy,
        None,
    )
}

/// Most likely explanation: the assignment to all (non-score) variables that
/// maximizes the joint mass consistent with the evidence, plus that mass.
/// Ties break toward earlier range values.
pub fn mpe_decode(
    net: &Network,
    evidence: &Evidence,
    registry: &Registry,
    policy: &Policy,
) -> Result<(BTreeMap<VarId, Value>, f64)> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    let ring = MaxProduct;
    let ranges = net.working_ranges(evidence, registry, policy, DEFAULT_SUPPORT_TARGET, None)?;
    let mut factors = node_factors(net, evidence, &ring, &ranges, registry, policy)?;

    let eliminable: Vec<VarId> = net
        .var_ids()
        .filter(|v| !net.sfunc(*v).is_score())
        .collect();
    let order = min_degree_order(&factors, &eliminable);

    struct Step {
        var: VarId,
        range: Vec<Value>,
        scope: Vec<VarId>,
        scope_ranges: Vec<Vec<Value>>,
        argmax: Vec<usize>,
    }
    let mut steps: Vec<Step> = Vec::new();
    for v in order {
        let range = ranges.get(&v).cloned().unwrap_or_default();
        let before: Vec<(Vec<VarId>, Vec<Vec<Value>>)> = factors
            .iter()
            .filter(|f| f.vars.contains(&v))
            .map(|f| (f.vars.clone(), f.ranges.clone()))
            .collect();
        let argmax = eliminate_var(&mut factors, v, &ring)?;
        if before.is_empty() {
            // Variable untouched by any factor (cannot happen for valid
            // networks, every node owns a factor).
            continue;
        }
        // The reduced factor is the last one pushed; recover its scope.
        let scope = factors.last().map(|f| f.vars.clone()).unwrap_or_default();
        let scope_ranges = factors.last().map(|f| f.ranges.clone()).unwrap_or_default();
        steps.push(Step {
            var: v,
            range,
            scope,
            scope_ranges,
            argmax,
        });
    }

    let mut value = 1.0;
    for f in &factors {
        for cell in &f.table {
            if let SemiVal::Real(x) = cell {
                value *= x;
            }
        }
    }

    // Traceback in reverse elimination order.
    let mut assignment: BTreeMap<VarId, Value> = BTreeMap::new();
    for step in steps.iter().rev() {
        let mut idx = Vec::with_capacity(step.scope.len());
        for (sv, sr) in step.scope.iter().zip(&step.scope_ranges) {
            let val = assignment
                .get(sv)
                .ok_or_else(|| Error::InvalidParameter("traceback scope unassigned".into()))?;
            idx.push(
                sr.iter()
                    .position(|x| x == val)
                    .ok_or_else(|| Error::RangeMismatch(format!("{sv:?}")))?,
            );
        }
        let mut pos = 0usize;
        for (d, i) in idx.iter().enumerate() {
            pos = pos * step.scope_ranges[d].len() + i;
        }
        let best = step.argmax.get(pos).copied().unwrap_or(0);
        assignment.insert(step.var, step.range[best].clone());
    }
    Ok((assignment, value))
}

/// Sum-product marginals for every non-score variable, as (range, probs).
pub fn all_marginals(
    net: &Network,
    evidence: &Evidence,
    registry: &Registry,
    policy: &Policy,
    ranges: Option<&RangeMap>,
) -> Result<BTreeMap<VarId, (Vec<Value>, Vec<f64>)>> {
    let mut out = BTreeMap::new();
    for v in net.var_ids() {
        if net.sfunc(v).is_score() {
            continue;
        }
        let f = ve_query(
            net,
            evidence,
            &[v],
            &crate::semiring::SumProduct,
            OrderHeuristic::MinDegree,
            registry,
            policy,
            ranges,
        )?;
        let probs: Vec<f64> = f.table.iter().map(|x| x.as_real().unwrap_or(0.0)).collect();
        out.insert(v, (f.ranges[0].clone(), probs));
    }
    Ok(out)
}
