//! Generate-and-score inference: rejection sampling, likelihood weighting,
//! and lookahead importance sampling that propagates λ scores upward and uses
//! them to guide and reweight sampling.
//!
//! Particles carry log-domain weights internally; linear weights are exposed
//! through accessors. Each particle draws from its own RNG substream, so runs
//! are reproducible and order-independent.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::kernel::{Policy, Registry};
use crate::network::{Evidence, EvidenceValue, Network, VarId};
use crate::ops;
use crate::sfunc::{Cat, Dist, Score};
use crate::value::Value;
use crate::ve::{RangeMap, DEFAULT_SUPPORT_TARGET};

/// One weighted assignment.
#[derive(Clone, Debug)]
pub struct Particle {
    pub assignment: BTreeMap<VarId, Value>,
    pub log_weight: f64,
}

impl Particle {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// A set of weighted particles plus run diagnostics.
#[derive(Clone, Debug, Default)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    /// Number of attempted draws (rejection may discard some).
    pub attempted: usize,
    pub diagnostics: Vec<String>,
}

impl ParticleSet {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(Particle::weight).sum()
    }

    /// Estimate of the normalizing constant (mean weight over attempts).
    pub fn norm_estimate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.total_weight() / self.attempted as f64
        }
    }
}

/// Weight-degeneracy diagnostic: (Σw)² / Σw², computed scale-free from log
/// weights.
pub fn effective_sample_size(ps: &ParticleSet) -> Result<f64> {
    let max_lw = ps
        .particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::ZeroWeight);
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in &ps.particles {
        let w = (p.log_weight - max_lw).exp();
        sum += w;
        sum_sq += w * w;
    }
    if sum <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(sum * sum / sum_sq)
}

/// Self-normalized estimate of P(variable = value) for each value in `range`.
pub fn estimate_marginal(ps: &ParticleSet, variable: VarId, range: &[Value]) -> Result<Vec<f64>> {
    let max_lw = ps
        .particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::ZeroWeight);
    }
    let mut total = 0.0;
    let mut out = vec![0.0; range.len()];
    for p in &ps.particles {
        let w = (p.log_weight - max_lw).exp();
        total += w;
        let val = p.assignment.get(&variable).ok_or_else(|| {
            Error::InvalidParameter(format!("particles carry no value for {variable:?}"))
        })?;
        if let Some(pos) = range.iter().position(|x| x == val) {
            out[pos] += w;
        }
    }
    if total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

fn particle_rng(seed: u64, index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn ensure_samplable(net: &Network) -> Result<()> {
    if !net.placeholders().is_empty() {
        return Err(Error::Evidence(
            "sampling inference requires a network without placeholders".into(),
        ));
    }
    Ok(())
}

/// Generate-and-test: keep only samples that reproduce the (hard) evidence
/// exactly. Accepted particles carry weight 1.
pub fn rejection_infer(
    net: &Network,
    evidence: &Evidence,
    n: usize,
    seed: u64,
    registry: &Registry,
    policy: &Policy,
) -> Result<ParticleSet> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    ensure_samplable(net)?;
    if !evidence.is_all_hard() {
        return Err(Error::Evidence(
            "rejection sampling accepts hard evidence only".into(),
        ));
    }
    if net.var_ids().any(|v| net.sfunc(v).is_score()) {
        return Err(Error::Evidence(
            "rejection sampling cannot honor score nodes; use likelihood weighting".into(),
        ));
    }
    let order = net.topological_order()?;
    let mut out = ParticleSet {
        attempted: n,
        ..ParticleSet::default()
    };
    for i in 0..n {
        let mut rng = particle_rng(seed, i);
        let mut assignment: BTreeMap<VarId, Value> = BTreeMap::new();
        let mut accept = true;
        for v in &order {
            let parent_vals: Vec<Value> = net
                .parents(*v)
                .iter()
                .map(|p| assignment[p].clone())
                .collect();
            let x = ops::sample(registry, policy, net.sfunc(*v), &parent_vals, &mut rng)?;
            if let Some(EvidenceValue::Exact(e)) = evidence.get(*v) {
                if *e != x {
                    accept = false;
                    break;
                }
            }
            assignment.insert(*v, x);
        }
        if accept {
            out.particles.push(Particle {
                assignment,
                log_weight: 0.0,
            });
        }
    }
    if out.particles.is_empty() {
        out.diagnostics
            .push(format!("0 of {n} samples satisfied the evidence"));
    }
    Ok(out)
}

fn score_log_weight(
    net: &Network,
    registry: &Registry,
    policy: &Policy,
    assignment: &BTreeMap<VarId, Value>,
    v: VarId,
) -> Result<f64> {
    let parents = net.parents(v);
    let subject = if parents.len() == 1 {
        assignment[&parents[0]].clone()
    } else {
        Value::List(parents.iter().map(|p| assignment[p].clone()).collect())
    };
    Ok(ops::get_score(registry, policy, net.sfunc(v), &subject)?.ln())
}

/// Likelihood weighting: hard-evidence variables are clamped (never sampled)
/// and weighted by their conditional density; soft evidence and score nodes
/// weight the sampled values.
pub fn lw_infer(
    net: &Network,
    evidence: &Evidence,
    n: usize,
    seed: u64,
    registry: &Registry,
    policy: &Policy,
) -> Result<ParticleSet> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    ensure_samplable(net)?;
    let order = net.topological_order()?;
    let mut out = ParticleSet {
        attempted: n,
        ..ParticleSet::default()
    };
    for i in 0..n {
        let mut rng = particle_rng(seed, i);
        let mut assignment: BTreeMap<VarId, Value> = BTreeMap::new();
        let mut log_w = 0.0;
        for v in &order {
            let sf = net.sfunc(*v);
            if sf.is_score() {
                log_w += score_log_weight(net, registry, policy, &assignment, *v)?;
                continue;
            }
            let parent_vals: Vec<Value> = net
                .parents(*v)
                .iter()
                .map(|p| assignment[p].clone())
                .collect();
            match evidence.get(*v) {
                Some(EvidenceValue::Exact(e)) => {
                    log_w += ops::logcpdf(registry, policy, sf, &parent_vals, e)?;
                    assignment.insert(*v, e.clone());
                }
                Some(EvidenceValue::Score(score)) => {
                    let x = ops::sample(registry, policy, sf, &parent_vals, &mut rng)?;
                    log_w += score.get(&x)?.ln();
                    assignment.insert(*v, x);
                }
                None => {
                    let x = ops::sample(registry, policy, sf, &parent_vals, &mut rng)?;
                    assignment.insert(*v, x);
                }
            }
        }
        out.particles.push(Particle {
            assignment,
            log_weight: log_w,
        });
    }
    if out.particles.iter().all(|p| !p.log_weight.is_finite()) {
        out.diagnostics
            .push("all particle weights are zero".to_string());
    }
    Ok(out)
}

/// λ guides for lookahead sampling: per-variable fused λ over its working
/// range, propagated upward from evidence as far as send_lambda support
/// allows.
struct Guides {
    ranges: RangeMap,
    /// Per-variable fused λ over the range; `None` when effectively uniform.
    lambda: BTreeMap<VarId, Vec<f64>>,
    any_informative: bool,
}

fn uniformish(v: &[f64]) -> bool {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min <= 1e-12 * max.abs().max(1.0)
}

fn build_guides(
    net: &Network,
    evidence: &Evidence,
    registry: &Registry,
    policy: &Policy,
) -> Result<Guides> {
    let ranges = net.working_ranges(evidence, registry, policy, DEFAULT_SUPPORT_TARGET, None)?;
    let order = net.topological_order()?;

    // Prior π messages (no evidence on the π side; evidence enters via λ).
    let mut prior_pi: BTreeMap<VarId, Dist> = BTreeMap::new();
    for v in &order {
        let sf = net.sfunc(*v);
        if sf.is_score() {
            continue;
        }
        let parents = net.parents(*v);
        if parents.iter().all(|p| prior_pi.contains_key(p))
            && registry.supports(ops::COMPUTE_PI, sf.kind())
        {
            let parranges: Vec<Vec<Value>> = parents.iter().map(|p| ranges[p].clone()).collect();
            let pis: Vec<Dist> = parents.iter().map(|p| prior_pi[p].clone()).collect();
            if let Ok(dist) = ops::compute_pi(registry, policy, sf, &ranges[v], &parranges, &pis) {
                prior_pi.insert(*v, dist);
            }
        }
    }
    let pi_or_uniform = |q: VarId| -> Dist {
        prior_pi.get(&q).cloned().unwrap_or_else(|| {
            let n = ranges[&q].len().max(1);
            Dist::Cat(Cat {
                values: ranges[&q].clone(),
                probs: vec![1.0 / n as f64; n],
            })
        })
    };

    // λ pass, children before parents.
    let mut fused: BTreeMap<VarId, Vec<f64>> = BTreeMap::new();
    let mut messages: BTreeMap<(VarId, VarId), Vec<f64>> = BTreeMap::new();
    for v in order.iter().rev() {
        let sf = net.sfunc(*v);
        if !sf.is_score() {
            let range = &ranges[v];
            let mut lam = vec![1.0; range.len()];
            if let Some(EvidenceValue::Score(score)) = evidence.get(*v) {
                for (l, x) in lam.iter_mut().zip(range) {
                    *l *= score.get(x)?;
                }
            }
            for c in net.children(*v) {
                if let Some(msg) = messages.get(&(c, *v)) {
                    for (l, m) in lam.iter_mut().zip(msg) {
                        *l *= m;
                    }
                }
            }
            fused.insert(*v, lam);
        }
        // Send upward where supported.
        let sendable = if sf.is_score() {
            sf.arity() == 1
        } else {
            registry.supports(ops::SEND_LAMBDA, sf.kind())
        };
        if !sendable || net.parents(*v).is_empty() {
            continue;
        }
        let parents = net.parents(*v);
        let parranges: Vec<Vec<Value>> = parents.iter().map(|p| ranges[p].clone()).collect();
        let pis: Vec<Dist> = parents.iter().map(|p| pi_or_uniform(*p)).collect();
        let (lambda, range_v): (Score, Vec<Value>) = if sf.is_score() {
            (Score::uniform(), Vec::new())
        } else {
            let lam = &fused[v];
            let entries: BTreeMap<Value, f64> = ranges[v]
                .iter()
                .cloned()
                .zip(lam.iter().copied())
                .collect();
            (
                Score::Soft(crate::sfunc::SoftScore { entries }),
                ranges[v].clone(),
            )
        };
        for (k, p) in parents.iter().enumerate() {
            match ops::send_lambda(
                registry, policy, sf, &lambda, &range_v, &parranges, &pis, k,
            ) {
                Ok(score) => {
                    let mut vec = Vec::with_capacity(ranges[p].len());
                    for u in &ranges[p] {
                        vec.push(score.get(u)?);
                    }
                    messages.insert((*v, *p), vec);
                }
                Err(Error::UnsupportedOperation { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let mut lambda = BTreeMap::new();
    let mut any = false;
    for (v, lam) in fused {
        if !uniformish(&lam) {
            any = true;
            lambda.insert(v, lam);
        }
    }
    Ok(Guides {
        ranges,
        lambda,
        any_informative: any,
    })
}

/// Lookahead importance sampling.
///
/// λ scores are propagated from the evidence toward the top of the network;
/// variables with an informative λ over a complete finite range are sampled
/// from the λ-reweighted conditional, and the weight accounts for the guide
/// so estimates stay consistent: w = Π_v Z_v/λ_v(x_v) · Π_e P(e | parents).
/// With exact λ this collapses every weight to P(evidence); without any λ it
/// reduces to likelihood weighting (with a diagnostic).
pub fn lookahead_infer(
    net: &Network,
    evidence: &Evidence,
    n: usize,
    seed: u64,
    registry: &Registry,
    policy: &Policy,
) -> Result<ParticleSet> {
    registry.ensure_frozen()?;
    evidence.validate(net)?;
    ensure_samplable(net)?;
    let guides = build_guides(net, evidence, registry, policy)?;
    let mut out = ParticleSet {
        attempted: n,
        ..ParticleSet::default()
    };
    if !guides.any_informative {
        out.diagnostics
            .push("no λ reached the sampling frontier; degraded to likelihood weighting".into());
    }
    // Guided sampling needs an exact finite conditional over the range.
    let complete: BTreeMap<VarId, bool> = net
        .var_ids()
        .filter(|v| !net.sfunc(*v).is_score())
        .map(|v| {
            let q = ops::support_quality(registry, policy, net.sfunc(v))
                .map(|q| q == crate::kernel::SupportQuality::Complete)
                .unwrap_or(false);
            (v, q)
        })
        .collect();
    let order = net.topological_order()?;

    for i in 0..n {
        let mut rng = particle_rng(seed, i);
        let mut assignment: BTreeMap<VarId, Value> = BTreeMap::new();
        let mut log_w = 0.0;
        for v in &order {
            let sf = net.sfunc(*v);
            if sf.is_score() {
                log_w += score_log_weight(net, registry, policy, &assignment, *v)?;
                continue;
            }
            let parent_vals: Vec<Value> = net
                .parents(*v)
                .iter()
                .map(|p| assignment[p].clone())
                .collect();
            match evidence.get(*v) {
                Some(EvidenceValue::Exact(e)) => {
                    log_w += ops::logcpdf(registry, policy, sf, &parent_vals, e)?;
                    assignment.insert(*v, e.clone());
                    continue;
                }
                Some(EvidenceValue::Score(score)) => {
                    let x = ops::sample(registry, policy, sf, &parent_vals, &mut rng)?;
                    log_w += score.get(&x)?.ln();
                    assignment.insert(*v, x);
                    continue;
                }
                None => {}
            }
            let guide = guides.lambda.get(v).filter(|_| complete[v]);
            match guide {
                Some(lam) => {
                    let range = &guides.ranges[v];
                    let mut weights = Vec::with_capacity(range.len());
                    for (x, g) in range.iter().zip(lam) {
                        let p = ops::logcpdf(registry, policy, sf, &parent_vals, x)?.exp();
                        weights.push(p * g);
                    }
                    let z: f64 = weights.iter().sum();
                    if z <= 0.0 {
                        // The guide contradicts this branch entirely.
                        log_w = f64::NEG_INFINITY;
                        let x = ops::sample(registry, policy, sf, &parent_vals, &mut rng)?;
                        assignment.insert(*v, x);
                        continue;
                    }
                    let u: f64 = rand::Rng::random::<f64>(&mut rng) * z;
                    let mut acc = 0.0;
                    let mut pick = range.len() - 1;
                    for (j, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    log_w += z.ln() - lam[pick].ln();
                    assignment.insert(*v, range[pick].clone());
                }
                None => {
                    let x = ops::sample(registry, policy, sf, &parent_vals, &mut rng)?;
                    assignment.insert(*v, x);
                }
            }
        }
        out.particles.push(Particle {
            assignment,
            log_weight: log_w,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_set(weights: &[f64]) -> ParticleSet {
        ParticleSet {
            particles: weights
                .iter()
                .map(|w| Particle {
                    assignment: BTreeMap::new(),
                    log_weight: w.ln(),
                })
                .collect(),
            attempted: weights.len(),
            diagnostics: Vec::new(),
        }
    }

    #[test]
    fn ess_equal_weights_is_n() {
        let ps = fake_set(&vec![1.0; 100]);
        assert!((effective_sample_size(&ps).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn ess_single_survivor_is_one() {
        let mut ws = vec![0.0; 9];
        ws.push(2.0);
        let ps = fake_set(&ws);
        assert!((effective_sample_size(&ps).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_hand_formula() {
        let ps = fake_set(&[1.0, 1.0, 2.0]);
        assert!((effective_sample_size(&ps).unwrap() - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ess_zero_weights_error() {
        let ps = fake_set(&[0.0, 0.0]);
        assert!(matches!(
            effective_sample_size(&ps),
            Err(Error::ZeroWeight)
        ));
    }

    #[test]
    fn marginal_equal_weights_is_frequency() {
        let mut ps = fake_set(&[1.0, 1.0, 1.0, 1.0]);
        for (i, p) in ps.particles.iter_mut().enumerate() {
            p.assignment
                .insert(VarId(0), Value::Bool(i % 2 == 0));
        }
        let m = estimate_marginal(&ps, VarId(0), &[Value::Bool(false), Value::Bool(true)]).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn marginal_single_particle_is_point_mass() {
        let mut ps = fake_set(&[3.0]);
        ps.particles[0].assignment.insert(VarId(0), Value::Int(1));
        let m = estimate_marginal(&ps, VarId(0), &[Value::Int(0), Value::Int(1)]).unwrap();
        assert_eq!(m, vec![0.0, 1.0]);
    }
}
