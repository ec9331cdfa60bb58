//! Pearl-style π/λ belief propagation honoring per-variable capability
//! layers: exact on polytrees, damped synchronous iteration on loopy graphs.
//!
//! Variables whose SFuncs lack required operations degrade coverage instead
//! of failing the run: a variable that cannot send λ leaves its ancestors
//! with prior-only beliefs, and the coverage report says so.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kernel::{Policy, Registry};
use crate::network::{Evidence, EvidenceValue, LayerTag, Network, VarId};
use crate::ops;
use crate::sfunc::{Cat, Dist, SFunc, Score};
use crate::value::Value;
use crate::ve::{RangeMap, DEFAULT_SUPPORT_TARGET};

#[derive(Clone, Debug)]
pub struct BpOptions {
    pub max_iterations: usize,
    /// Damping on message updates for loopy graphs (fraction of the old
    /// message retained). Polytrees always run undamped.
    pub damping: f64,
    pub tolerance: f64,
    pub support_target: usize,
}

impl Default for BpOptions {
    fn default() -> BpOptions {
        BpOptions {
            max_iterations: 50,
            damping: 0.5,
            tolerance: 1e-6,
            support_target: DEFAULT_SUPPORT_TARGET,
        }
    }
}

/// How much of a variable's posterior the run could actually compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefStatus {
    /// Both π and λ information incorporated.
    Full,
    /// Some λ inflow edges were unavailable.
    Partial,
    /// No λ information reaches this variable; belief equals its prior.
    PriorOnly,
    /// No π side; no belief reported.
    Uncovered,
}

#[derive(Clone, Debug)]
pub struct VarCoverage {
    pub tag: LayerTag,
    pub status: BeliefStatus,
    pub reason: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BpResult {
    /// Per-variable working range and normalized belief.
    pub beliefs: BTreeMap<VarId, (Vec<Value>, Vec<f64>)>,
    pub coverage: BTreeMap<VarId, VarCoverage>,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
}

/// Local (per-variable) message state; the λ fusion and π-message operations
/// live here.
#[derive(Clone, Debug)]
pub struct BeliefState {
    pub range: Vec<Value>,
    /// π side evaluated over the range, normalized.
    pub pi: Vec<f64>,
    /// Evidence score over the range, if any.
    pub evidence: Option<Vec<f64>>,
    /// Incoming λ per child edge.
    pub child_lambdas: BTreeMap<VarId, Vec<f64>>,
}

impl BeliefState {
    /// Pointwise product of child λ messages and the evidence score; all-ones
    /// when there is nothing to fuse.
    pub fn compute_lambda(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.range.len()];
        if let Some(ev) = &self.evidence {
            for (o, e) in out.iter_mut().zip(ev) {
                *o *= e;
            }
        }
        for lam in self.child_lambdas.values() {
            for (o, l) in out.iter_mut().zip(lam) {
                *o *= l;
            }
        }
        out
    }

    /// Normalized product of the π side and the λ fusion.
    pub fn belief(&self) -> Result<Vec<f64>> {
        let lam = self.compute_lambda();
        let mut out: Vec<f64> = self.pi.iter().zip(&lam).map(|(p, l)| p * l).collect();
        let total: f64 = out.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateInput);
        }
        for o in &mut out {
            *o /= total;
        }
        Ok(out)
    }

    /// π message to `target_child`: the belief divided by that child's λ
    /// contribution. Division by zero falls back to recomputing the product
    /// of the other children's messages.
    pub fn send_pi(&self, target_child: VarId) -> Result<Vec<f64>> {
        let belief = self.belief()?;
        if let Some(lam) = self.child_lambdas.get(&target_child) {
            if lam.iter().all(|l| *l > 0.0) {
                let mut out: Vec<f64> = belief.iter().zip(lam).map(|(b, l)| b / l).collect();
                let total: f64 = out.iter().sum();
                if total > 0.0 && total.is_finite() {
                    for o in &mut out {
                        *o /= total;
                    }
                    return Ok(out);
                }
            }
        }
        // Fallback: π · evidence · product of the other children's λs.
        let mut out = self.pi.clone();
        if let Some(ev) = &self.evidence {
            for (o, e) in out.iter_mut().zip(ev) {
                *o *= e;
            }
        }
        for (c, lam) in &self.child_lambdas {
            if *c == target_child {
                continue;
            }
            for (o, l) in out.iter_mut().zip(lam) {
                *o *= l;
            }
        }
        let total: f64 = out.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateInput);
        }
        for o in &mut out {
            *o /= total;
        }
        Ok(out)
    }
}

/// A π message: kept as a Dist when it passed through unmodified (so closed
/// forms stay available downstream), plus its evaluation over the range.
#[derive(Clone, Debug)]
struct PiMsg {
    dist: Dist,
    vec: Vec<f64>,
}

fn uniform_pi(range: &[Value]) -> PiMsg {
    let n = range.len().max(1);
    let probs = vec![1.0 / n as f64; n];
    PiMsg {
        dist: Dist::Cat(Cat {
            values: range.to_vec(),
            probs: probs.clone(),
        }),
        vec: probs,
    }
}

fn eval_dist(dist: &Dist, range: &[Value]) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(range.len());
    for x in range {
        v.push(dist.logcpdf(x)?.exp());
    }
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        for e in &mut v {
            *e /= total;
        }
    }
    Ok(v)
}

fn score_over(range: &[Value], weights: &[f64]) -> Score {
    let entries: BTreeMap<Value, f64> = range
        .iter()
        .cloned()
        .zip(weights.iter().copied())
        .collect();
    Score::Soft(crate::sfunc::SoftScore { entries })
}

fn normalize_lambda(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        for e in v {
            *e /= total;
        }
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn bp_infer(
    net: &Network,
    evidence: &Evidence,
    registry: &Registry,
    policy: &Policy,
    options: &BpOptions,
    ranges: Option<&RangeMap>,
) -> Result<BpResult> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    let diags_cell = std::cell::RefCell::new(Vec::<String>::new());
    let owned_ranges;
    let ranges = match ranges {
        Some(r) => r,
        None => {
            owned_ranges =
                net.working_ranges(evidence, registry, policy, options.support_target, None)?;
            &owned_ranges
        }
    };
    let tags = net.classify_layers(registry)?;
    let order = net.topological_order()?;

    // π availability along ancestor paths.
    let pi_ok: BTreeMap<VarId, bool> = tags
        .iter()
        .map(|(v, t)| {
            (
                *v,
                matches!(t, LayerTag::Bidirectional | LayerTag::PiOnly),
            )
        })
        .collect();
    // Whether each node can emit λ to its parents.
    let send_ok: BTreeMap<VarId, bool> = net
        .var_ids()
        .map(|v| {
            let sf = net.sfunc(v);
            let ok = if sf.is_score() {
                sf.arity() == 1
            } else {
                registry.supports(ops::SEND_LAMBDA, sf.kind())
            };
            (v, ok)
        })
        .collect();

    let evidence_scores: BTreeMap<VarId, Vec<f64>> = {
        let mut m = BTreeMap::new();
        for (v, binding) in evidence.iter() {
            if let EvidenceValue::Score(score) = binding {
                let range = &ranges[v];
                let mut vec = Vec::with_capacity(range.len());
                for x in range {
                    vec.push(score.get(x)?);
                }
                m.insert(*v, vec);
            }
        }
        m
    };

    // Edges. π messages flow parent→child, λ messages child→parent (over the
    // parent's range). Score nodes have no range and only emit λ.
    let mut pi_edges: Vec<(VarId, VarId)> = Vec::new();
    let mut lambda_edges: Vec<(VarId, VarId)> = Vec::new();
    for v in net.var_ids() {
        for (k, p) in net.parents(v).iter().enumerate() {
            let _ = k;
            if !net.sfunc(v).is_score() {
                pi_edges.push((*p, v));
            }
            lambda_edges.push((v, *p));
        }
    }

    let mut pi_msgs: HashMap<(VarId, VarId), PiMsg> = HashMap::new();
    for (p, c) in &pi_edges {
        pi_msgs.insert((*p, *c), uniform_pi(&ranges[p]));
    }
    let mut lambda_msgs: HashMap<(VarId, VarId), Vec<f64>> = HashMap::new();
    for (c, p) in &lambda_edges {
        lambda_msgs.insert((*c, *p), vec![1.0; ranges[p].len()]);
    }

    let polytree = net.is_polytree();
    let damping = if polytree { 0.0 } else { options.damping };
    let max_iterations = if polytree {
        net.len() + 2
    } else {
        options.max_iterations
    };

    let node_pi = |pi_msgs: &HashMap<(VarId, VarId), PiMsg>, v: VarId| -> Result<Option<PiMsg>> {
        if !pi_ok[&v] {
            return Ok(None);
        }
        let parents = net.parents(v);
        let parranges: Vec<Vec<Value>> = parents.iter().map(|p| ranges[p].clone()).collect();
        let pis: Vec<Dist> = parents
            .iter()
            .map(|p| pi_msgs[&(*p, v)].dist.clone())
            .collect();
        let dist = ops::compute_pi(registry, policy, net.sfunc(v), &ranges[&v], &parranges, &pis)?;
        let vec = eval_dist(&dist, &ranges[&v])?;
        Ok(Some(PiMsg { dist, vec }))
    };

    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iterations {
        iterations += 1;
        let mut max_change = 0.0f64;

        // Node π sides and λ fusions from the current messages.
        let mut node_pis: BTreeMap<VarId, Option<PiMsg>> = BTreeMap::new();
        let mut states: BTreeMap<VarId, BeliefState> = BTreeMap::new();
        for v in &order {
            if net.sfunc(*v).is_score() {
                continue;
            }
            let np = node_pi(&pi_msgs, *v)?;
            let state = BeliefState {
                range: ranges[v].clone(),
                pi: np
                    .as_ref()
                    .map(|m| m.vec.clone())
                    .unwrap_or_else(|| vec![1.0; ranges[v].len()]),
                evidence: evidence_scores.get(v).cloned(),
                child_lambdas: net
                    .children(*v)
                    .iter()
                    .filter_map(|c| lambda_msgs.get(&(*c, *v)).map(|l| (*c, l.clone())))
                    .collect(),
            };
            node_pis.insert(*v, np);
            states.insert(*v, state);
        }

        // Fresh π messages.
        let mut new_pi: HashMap<(VarId, VarId), PiMsg> = HashMap::new();
        for (p, c) in &pi_edges {
            if !pi_ok[p] {
                new_pi.insert((*p, *c), uniform_pi(&ranges[p]));
                continue;
            }
            let state = &states[p];
            let unmodified = state.evidence.is_none()
                && state
                    .child_lambdas
                    .iter()
                    .all(|(cc, lam)| cc == c || lam.iter().all(|l| (*l - lam[0]).abs() == 0.0));
            let msg = if unmodified {
                let dist = node_pis[p].as_ref().unwrap().dist.clone();
                let vec = eval_dist(&dist, &ranges[p])?;
                PiMsg { dist, vec }
            } else {
                let vec = state.send_pi(*c)?;
                PiMsg {
                    dist: Dist::Cat(Cat {
                        values: ranges[p].clone(),
                        probs: vec.clone(),
                    }),
                    vec,
                }
            };
            let old = &pi_msgs[&(*p, *c)];
            let mixed = if damping > 0.0 {
                let vec: Vec<f64> = old
                    .vec
                    .iter()
                    .zip(&msg.vec)
                    .map(|(o, n)| damping * o + (1.0 - damping) * n)
                    .collect();
                PiMsg {
                    dist: Dist::Cat(Cat {
                        values: ranges[p].clone(),
                        probs: vec.clone(),
                    }),
                    vec,
                }
            } else {
                msg
            };
            max_change = max_change.max(linf(&mixed.vec, &old.vec));
            new_pi.insert((*p, *c), mixed);
        }

        // Fresh λ messages.
        let mut new_lambda: HashMap<(VarId, VarId), Vec<f64>> = HashMap::new();
        for (c, p) in &lambda_edges {
            let target_range = &ranges[p];
            let old = &lambda_msgs[&(*c, *p)];
            if !send_ok[c] {
                new_lambda.insert((*c, *p), vec![1.0; target_range.len()]);
                continue;
            }
            let sf = net.sfunc(*c);
            let parents = net.parents(*c);
            let target_idx = parents.iter().position(|x| x == p).unwrap();
            let parranges: Vec<Vec<Value>> =
                parents.iter().map(|q| ranges[q].clone()).collect();
            let pis: Vec<Dist> = parents
                .iter()
                .map(|q| {
                    pi_msgs
                        .get(&(*q, *c))
                        .map(|m| m.dist.clone())
                        .unwrap_or_else(|| uniform_pi(&ranges[q]).dist)
                })
                .collect();
            let (lambda, range_c): (Score, Vec<Value>) = if sf.is_score() {
                (Score::uniform(), Vec::new())
            } else {
                let state = &states[c];
                let fused = state.compute_lambda();
                (score_over(&state.range, &fused), state.range.clone())
            };
            let msg = match ops::send_lambda(
                registry,
                policy,
                sf,
                &lambda,
                &range_c,
                &parranges,
                &pis,
                target_idx,
            ) {
                Ok(score) => {
                    let mut vec = Vec::with_capacity(target_range.len());
                    for u in target_range {
                        vec.push(score.get(u)?);
                    }
                    normalize_lambda(&mut vec);
                    vec
                }
                Err(Error::UnsupportedOperation { .. }) => {
                    diags_cell.borrow_mut().push(format!(
                        "`{}` cannot send λ to `{}`",
                        net.name(*c),
                        net.name(*p)
                    ));
                    vec![1.0; target_range.len()]
                }
                Err(e) => return Err(e),
            };
            let mixed: Vec<f64> = if damping > 0.0 {
                old.iter()
                    .zip(&msg)
                    .map(|(o, n)| damping * o + (1.0 - damping) * n)
                    .collect()
            } else {
                msg
            };
            max_change = max_change.max(linf(&mixed, old));
            new_lambda.insert((*c, *p), mixed);
        }

        pi_msgs = new_pi;
        lambda_msgs = new_lambda;

        let threshold = if polytree { 0.0 } else { options.tolerance };
        if max_change <= threshold {
            converged = true;
            break;
        }
    }

    // Final beliefs and coverage.
    let mut beliefs = BTreeMap::new();
    let mut coverage = BTreeMap::new();
    for v in net.var_ids() {
        if net.sfunc(v).is_score() {
            continue;
        }
        let tag = tags[&v];
        let own_pi = registry.supports(ops::COMPUTE_PI, net.sfunc(v).kind());
        let children = net.children(v);
        let blocked: Vec<VarId> = children
            .iter()
            .copied()
            .filter(|c| !send_ok[c])
            .collect();

        if !pi_ok[&v] {
            let reason = if own_pi {
                "compute_pi unsupported on an ancestor".to_string()
            } else {
                "compute_pi unsupported".to_string()
            };
            coverage.insert(
                v,
                VarCoverage {
                    tag,
                    status: BeliefStatus::Uncovered,
                    reason: Some(reason),
                },
            );
            continue;
        }

        let np = node_pi(&pi_msgs, v)?.expect("pi_ok implies a π side");
        let state = BeliefState {
            range: ranges[&v].clone(),
            pi: np.vec,
            evidence: evidence_scores.get(&v).cloned(),
            child_lambdas: children
                .iter()
                .filter_map(|c| lambda_msgs.get(&(*c, v)).map(|l| (*c, l.clone())))
                .collect(),
        };
        let belief = state.belief()?;
        beliefs.insert(v, (state.range.clone(), belief));

        let has_evidence =
            evidence_scores.contains_key(&v) || matches!(evidence.get(v), Some(EvidenceValue::Exact(_)));
        let status = if blocked.is_empty() {
            BeliefStatus::Full
        } else if blocked.len() == children.len() && !has_evidence {
            BeliefStatus::PriorOnly
        } else {
            BeliefStatus::Partial
        };
        let reason = if !send_ok[&v] && !net.parents(v).is_empty() {
            Some("send_lambda unsupported".to_string())
        } else if !blocked.is_empty() {
            let names: Vec<&str> = blocked.iter().map(|c| net.name(*c)).collect();
            Some(format!(
                "no λ from {} (send_lambda unsupported)",
                names.join(", ")
            ))
        } else {
            None
        };
        coverage.insert(v, VarCoverage { tag, status, reason });
    }
    for v in net.var_ids() {
        if net.sfunc(v).is_score() {
            let reason = if send_ok[&v] {
                None
            } else {
                Some("multi-parent scores are handled by elimination only".to_string())
            };
            coverage.insert(
                v,
                VarCoverage {
                    tag: tags[&v],
                    status: BeliefStatus::Uncovered,
                    reason,
                },
            );
        }
    }

    Ok(BpResult {
        beliefs,
        coverage,
        converged,
        iterations,
        diagnostics: diags_cell.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(pi: Vec<f64>, ev: Option<Vec<f64>>, lams: Vec<(usize, Vec<f64>)>) -> BeliefState {
        let n = pi.len();
        BeliefState {
            range: (0..n).map(|i| Value::Int(i as i64)).collect(),
            pi,
            evidence: ev,
            child_lambdas: lams.into_iter().map(|(c, l)| (VarId(c), l)).collect(),
        }
    }

    #[test]
    fn lambda_fusion_empty_is_ones() {
        let s = state(vec![0.5, 0.5], None, vec![]);
        assert_eq!(s.compute_lambda(), vec![1.0, 1.0]);
    }

    #[test]
    fn lambda_fusion_single_evidence_is_that_score() {
        let s = state(vec![0.5, 0.5], Some(vec![0.0, 1.0]), vec![]);
        assert_eq!(s.compute_lambda(), vec![0.0, 1.0]);
    }

    #[test]
    fn lambda_fusion_is_pointwise_product() {
        let s = state(
            vec![0.5, 0.5],
            None,
            vec![(1, vec![0.5, 1.0]), (2, vec![0.4, 0.1])],
        );
        let lam = s.compute_lambda();
        assert!((lam[0] - 0.2).abs() < 1e-12);
        assert!((lam[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn send_pi_with_single_child_is_normalized_pi_side() {
        let s = state(vec![0.3, 0.7], None, vec![(1, vec![0.9, 0.1])]);
        let msg = s.send_pi(VarId(1)).unwrap();
        assert!((msg[0] - 0.3).abs() < 1e-12);
        assert!((msg[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn send_pi_with_uniform_child_lambda_is_belief() {
        let s = state(
            vec![0.3, 0.7],
            None,
            vec![(1, vec![1.0, 1.0]), (2, vec![0.5, 0.25])],
        );
        let msg = s.send_pi(VarId(1)).unwrap();
        let belief = s.belief().unwrap();
        for (m, b) in msg.iter().zip(&belief) {
            assert!((m - b).abs() < 1e-12);
        }
    }

    #[test]
    fn send_pi_division_by_zero_falls_back() {
        let s = state(
            vec![0.5, 0.5],
            None,
            vec![(1, vec![0.0, 1.0]), (2, vec![1.0, 0.5])],
        );
        let msg = s.send_pi(VarId(1)).unwrap();
        // Fallback: π · λ_2 renormalized = [0.5, 0.25] → [2/3, 1/3].
        assert!((msg[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((msg[1] - 1.0 / 3.0).abs() < 1e-12);
    }
}
