//! The standard registry: operation declarations, implementations per SFunc
//! kind, and their performance characteristics.
//!
//! Implementations for compositional SFuncs delegate to their components
//! through the operation drivers, so a policy choice applies at every level.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{
    HyperParam, Measure, MeasureValue, OpImplRecord, OpPerfRecord, OperationDecl, PerfCtx, Policy,
    Registry, SupportQuality,
};
use crate::ops::{self, dist_cpdf, OpCallable, OpCtx};
use crate::sfunc::dist::merge_numeric_support;
use crate::sfunc::score::SoftScore;
use crate::sfunc::{
    Cat, Conditional, Dist, Generator, Kind, NormalDist, SFunc, Score, Switch, TableKind,
};
use crate::value::Value;

/// Options controlling which optional implementations the standard registry
/// carries.
#[derive(Clone, Copy, Debug)]
pub struct RegistryOptions {
    /// Register the interpolation-based `send_lambda` for deterministic
    /// SFuncs. Off by default: inverting a Det is approximate, and the safe
    /// default is to keep Det nodes π-only (top layer).
    pub det_send_lambda: bool,
}

impl Default for RegistryOptions {
    fn default() -> RegistryOptions {
        RegistryOptions {
            det_send_lambda: false,
        }
    }
}

/// Frozen registry with the standard operation set and default options.
pub fn standard_registry() -> Registry {
    standard_registry_with(RegistryOptions::default())
}

/// Frozen registry with the standard operation set.
pub fn standard_registry_with(options: RegistryOptions) -> Registry {
    let mut reg = Registry::new();
    declare_operations(&mut reg).expect("fresh registry accepts declarations");
    register_standard_impls(&mut reg, options).expect("fresh registry accepts implementations");
    reg.freeze();
    reg
}

fn declare_operations(reg: &mut Registry) -> Result<()> {
    let decls = [
        (ops::SAMPLE, "(I,O): I -> O"),
        (ops::SAMPLE_N, "(I,O): (I, Int) -> Vector{O}"),
        (ops::LOGCPDF, "(I,O): (I, O) -> Real"),
        (ops::EXPECTATION, "(I,O): I -> Real"),
        (ops::VARIANCE, "(I,O): I -> Real"),
        (
            ops::SUPPORT,
            "(I,O): (Ranges{I}, Int, Vector{O}) -> Vector{O}",
        ),
        (ops::GET_SCORE, "(I,_): I -> Real"),
        (ops::GEN_SF, "(I++J,O): I -> SFunc{J,O}"),
        (ops::COMPUTE_PI, "(I,O): Dist{I} -> Dist{O}"),
        (
            ops::SEND_LAMBDA,
            "(I,O): (Score{O}, Dist{I}, Int) -> Score{I_k}",
        ),
        (ops::COMPUTE_BEL, "(_,O): (Dist{O}, Score{O}) -> Score{O}"),
        (ops::INVERT, "(I,O): O -> I"),
        (
            ops::MAKE_FACTORS,
            "(I,O): (Semiring, Ranges) -> Vector{Factor}",
        ),
    ];
    for (name, sig) in decls {
        reg.register_operation(OperationDecl::new(name, sig))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Iterates the Cartesian product of the given ranges in row-major order.
fn cartesian<'a>(ranges: &'a [Vec<Value>]) -> Box<dyn Iterator<Item = Vec<Value>> + 'a> {
    if ranges.iter().any(Vec::is_empty) {
        return Box::new(std::iter::empty());
    }
    let total: usize = ranges.iter().map(Vec::len).product();
    let mut idx = vec![0usize; ranges.len()];
    let mut emitted = 0usize;
    Box::new(std::iter::from_fn(move || {
        if emitted == total {
            return None;
        }
        let combo: Vec<Value> = idx
            .iter()
            .enumerate()
            .map(|(d, i)| ranges[d][*i].clone())
            .collect();
        emitted += 1;
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < ranges[d].len() {
                break;
            }
            idx[d] = 0;
        }
        Some(combo)
    }))
}

/// Masses of a π message over a finite range; errors if the total is zero.
fn pi_masses(pi: &Dist, range: &[Value]) -> Result<Vec<f64>> {
    let mut masses = Vec::with_capacity(range.len());
    for v in range {
        masses.push(dist_cpdf(pi, v)?);
    }
    if masses.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateInput);
    }
    Ok(masses)
}

fn lambda_vec(lambda: &Score, range: &[Value]) -> Result<Vec<f64>> {
    range.iter().map(|v| lambda.get(v)).collect()
}

fn soft_score_over(range: &[Value], weights: Vec<f64>) -> Score {
    // λ messages may legitimately be all-zero (contradictory evidence), so
    // this bypasses the SoftScore positivity invariant for model components.
    let entries: BTreeMap<Value, f64> = range.iter().cloned().zip(weights).collect();
    Score::Soft(SoftScore { entries })
}

fn expect_conditional(sf: &SFunc) -> Result<&Conditional> {
    match sf {
        SFunc::Conditional(c) => Ok(c),
        _ => Err(Error::NotApplicable),
    }
}

fn expect_switch(sf: &SFunc) -> Result<&Switch> {
    match sf {
        SFunc::Switch(s) => Ok(s),
        _ => Err(Error::NotApplicable),
    }
}

/// λ to one parent by brute-force enumeration over finite parent ranges:
/// λ_t(u_t) ∝ Σ_x λ(x) Σ_{u_-t} Π_{k≠t} π_k(u_k) · P(x | u).
fn lambda_by_enumeration(
    ctx: &OpCtx,
    sf: &SFunc,
    lambda: &Score,
    range: &[Value],
    parranges: &[Vec<Value>],
    pis: &[Dist],
    target: usize,
) -> Result<Score> {
    if parranges.len() != sf.arity() || pis.len() != sf.arity() || target >= sf.arity() {
        return Err(Error::ArityMismatch {
            kind: sf.kind(),
            expected: sf.arity(),
            got: parranges.len(),
        });
    }
    let lam = lambda_vec(lambda, range)?;
    // Mass lookups for the non-target parents.
    let mut masses: Vec<Option<Vec<f64>>> = Vec::with_capacity(pis.len());
    for (k, pi) in pis.iter().enumerate() {
        if k == target {
            masses.push(None);
        } else {
            masses.push(Some(pi_masses(pi, &parranges[k])?));
        }
    }
    let other_ranges: Vec<Vec<Value>> = parranges
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != target)
        .map(|(_, r)| r.clone())
        .collect();

    let mut out = vec![0.0; parranges[target].len()];
    for (t_idx, t_val) in parranges[target].iter().enumerate() {
        let mut acc = 0.0;
        let mut other_idx = vec![0usize; other_ranges.len()];
        let total: usize = other_ranges.iter().map(Vec::len).product::<usize>().max(1);
        for _ in 0..total {
            // Reassemble the full parent tuple and its π weight.
            let mut combo = Vec::with_capacity(sf.arity());
            let mut weight = 1.0;
            let mut oi = 0usize;
            for k in 0..sf.arity() {
                if k == target {
                    combo.push(t_val.clone());
                } else {
                    let idx = other_idx[oi];
                    combo.push(other_ranges[oi][idx].clone());
                    weight *= masses[k].as_ref().unwrap()[idx];
                    oi += 1;
                }
            }
            if weight > 0.0 {
                for (x, lx) in range.iter().zip(&lam) {
                    if *lx > 0.0 {
                        let p = ops::logcpdf(ctx.registry, ctx.policy, sf, &combo, x)?.exp();
                        acc += lx * weight * p;
                    }
                }
            }
            for d in (0..other_idx.len()).rev() {
                other_idx[d] += 1;
                if other_idx[d] < other_ranges[d].len() {
                    break;
                }
                other_idx[d] = 0;
            }
        }
        out[t_idx] = acc;
    }
    Ok(soft_score_over(&parranges[target], out))
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

fn register_standard_impls(reg: &mut Registry, options: RegistryOptions) -> Result<()> {
    use Kind::*;

    // --- sample ---
    reg.register_impl(OpImplRecord::new(
        "sample_dist",
        ops::SAMPLE,
        Dist,
        OpCallable::Sample(Arc::new(|_, sf, _, rng| {
            sf.as_dist().ok_or(Error::NotApplicable)?.sample(rng)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "sample_mixture",
        ops::SAMPLE,
        Mixture,
        OpCallable::Sample(Arc::new(|ctx, sf, parents, rng| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            let pick = crate::sfunc::Dist::Cat(Cat::new(
                (0..m.components.len()).map(|i| Value::Int(i as i64)).collect(),
                m.probabilities.clone(),
            )?)
            .sample(rng)?;
            let Value::Int(i) = pick else { unreachable!() };
            ops::sample(ctx.registry, ctx.policy, &m.components[i as usize], parents, rng)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "sample_extend",
        ops::SAMPLE,
        Extend,
        OpCallable::Sample(Arc::new(|ctx, sf, parents, rng| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            let active = [parents[e.active_index].clone()];
            ops::sample(ctx.registry, ctx.policy, &e.inner, &active, rng)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "sample_switch",
        ops::SAMPLE,
        Switch,
        OpCallable::Sample(Arc::new(|ctx, sf, parents, rng| {
            let s = expect_switch(sf)?;
            let idx = s.choice_index(&parents[0])?;
            ops::sample(ctx.registry, ctx.policy, &s.choices[idx], &parents[1..], rng)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "sample_conditional",
        ops::SAMPLE,
        Conditional,
        OpCallable::Sample(Arc::new(|ctx, sf, parents, rng| {
            let c = expect_conditional(sf)?;
            let (ivals, jvals) = c.split(parents);
            let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, ivals)?;
            ops::sample(ctx.registry, ctx.policy, &gen, jvals, rng)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "sample_det",
        ops::SAMPLE,
        Det,
        OpCallable::Sample(Arc::new(|_, sf, parents, _| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            d.apply(parents)
        })),
    ))?;

    // --- sample_n: generic repetition over `sample` ---
    reg.register_impl(OpImplRecord::new(
        "sample_n_repeat",
        ops::SAMPLE_N,
        SFunc,
        OpCallable::SampleN(Arc::new(|ctx, sf, parents, n, rng| {
            (0..n)
                .map(|_| ops::sample(ctx.registry, ctx.policy, sf, parents, rng))
                .collect()
        })),
    ))?;

    // --- logcpdf ---
    reg.register_impl(OpImplRecord::new(
        "logcpdf_dist",
        ops::LOGCPDF,
        Dist,
        OpCallable::Logcpdf(Arc::new(|_, sf, _, value| {
            sf.as_dist().ok_or(Error::NotApplicable)?.logcpdf(value)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "logcpdf_mixture",
        ops::LOGCPDF,
        Mixture,
        OpCallable::Logcpdf(Arc::new(|ctx, sf, parents, value| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            let mut mass = 0.0;
            for (comp, w) in m.components.iter().zip(&m.probabilities) {
                if *w == 0.0 {
                    continue;
                }
                let lp = ops::logcpdf(ctx.registry, ctx.policy, comp, parents, value)?;
                mass += w * lp.exp();
            }
            Ok(mass.ln())
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "logcpdf_extend",
        ops::LOGCPDF,
        Extend,
        OpCallable::Logcpdf(Arc::new(|ctx, sf, parents, value| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            let active = [parents[e.active_index].clone()];
            ops::logcpdf(ctx.registry, ctx.policy, &e.inner, &active, value)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "logcpdf_switch",
        ops::LOGCPDF,
        Switch,
        OpCallable::Logcpdf(Arc::new(|ctx, sf, parents, value| {
            let s = expect_switch(sf)?;
            let idx = s.choice_index(&parents[0])?;
            ops::logcpdf(ctx.registry, ctx.policy, &s.choices[idx], &parents[1..], value)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "logcpdf_conditional",
        ops::LOGCPDF,
        Conditional,
        OpCallable::Logcpdf(Arc::new(|ctx, sf, parents, value| {
            let c = expect_conditional(sf)?;
            let (ivals, jvals) = c.split(parents);
            let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, ivals)?;
            ops::logcpdf(ctx.registry, ctx.policy, &gen, jvals, value)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "logcpdf_det",
        ops::LOGCPDF,
        Det,
        OpCallable::Logcpdf(Arc::new(|_, sf, parents, value| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            Ok(if d.apply(parents)? == *value {
                0.0
            } else {
                f64::NEG_INFINITY
            })
        })),
    ))?;

    // --- expectation / variance ---
    register_moments(reg)?;

    // --- support ---
    register_support(reg)?;

    // --- get_score ---
    reg.register_impl(OpImplRecord::new(
        "get_score_score",
        ops::GET_SCORE,
        Score,
        OpCallable::GetScore(Arc::new(|_, sf, value| {
            sf.as_score().ok_or(Error::NotApplicable)?.get(value)
        })),
    ))?;

    // --- gen_sf ---
    reg.register_impl(OpImplRecord::new(
        "gen_sf_conditional",
        ops::GEN_SF,
        Conditional,
        OpCallable::GenSf(Arc::new(|_, sf, ivals| {
            expect_conditional(sf)?.gen_sf(ivals)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "gen_sf_switch",
        ops::GEN_SF,
        Switch,
        OpCallable::GenSf(Arc::new(|_, sf, ivals| {
            let s = expect_switch(sf)?;
            if ivals.len() != 1 {
                return Err(Error::ArityMismatch {
                    kind: Kind::Switch,
                    expected: 1,
                    got: ivals.len(),
                });
            }
            Ok(s.choices[s.choice_index(&ivals[0])?].clone())
        })),
    ))?;

    // --- compute_pi ---
    register_compute_pi(reg)?;

    // --- send_lambda ---
    register_send_lambda(reg, options)?;

    // --- compute_bel ---
    reg.register_impl(
        OpImplRecord::new(
            "EagerComputeBel",
            ops::COMPUTE_BEL,
            SFunc,
            OpCallable::ComputeBel(Arc::new(|ctx, dist, score, rng| {
                let n = ctx.hyper_int("num_samples").unwrap_or(100).max(1) as usize;
                let mut entries: BTreeMap<Value, f64> = BTreeMap::new();
                for _ in 0..n {
                    let x = dist.sample(rng)?;
                    let s = score.get(&x)?;
                    *entries.entry(x).or_insert(0.0) += s;
                }
                Ok(Score::Soft(SoftScore { entries }))
            })),
        )
        .with_hyperparams(vec![HyperParam::new("num_samples", 100i64)]),
    )?;
    reg.register_perf(OpPerfRecord::constant(
        "EagerComputeBel",
        Measure::IsLazy,
        MeasureValue::Lazy(false),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "LazyComputeBel",
        ops::COMPUTE_BEL,
        SFunc,
        OpCallable::ComputeBel(Arc::new(|_, dist, score, _| {
            let d = dist.clone();
            let s = score.clone();
            Ok(Score::Functional(crate::sfunc::FunctionalScore::new(
                move |x: &Value| Ok(d.logcpdf(x)?.exp() * s.get(x)?),
            )))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "LazyComputeBel",
        Measure::IsLazy,
        MeasureValue::Lazy(true),
    ))?;

    // --- invert ---
    reg.register_impl(OpImplRecord::new(
        "InvFullMatMul",
        ops::INVERT,
        Det,
        OpCallable::Invert(Arc::new(|_, sf, observed| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            let m = d.linear.as_ref().ok_or_else(|| {
                Error::InvalidParameter("exact inversion requires a linear form".into())
            })?;
            if m.nrows() != m.ncols() || m.nrows() != observed.len() {
                return Err(Error::SingularMatrix);
            }
            let y = DMatrix::from_column_slice(observed.len(), 1, observed);
            let lu = m.clone().lu();
            let x = lu.solve(&y).ok_or(Error::SingularMatrix)?;
            Ok(x.as_slice().to_vec())
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "InvFullMatMul",
        Measure::SupportQuality,
        MeasureValue::Quality(SupportQuality::Complete),
    ))?;
    reg.register_impl(
        OpImplRecord::new(
            "InvIterativeMatMul",
            ops::INVERT,
            Det,
            OpCallable::Invert(Arc::new(|ctx, sf, observed| {
                let SFunc::Det(d) = sf else {
                    return Err(Error::NotApplicable);
                };
                let m = d.linear.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("iterative inversion requires a linear form".into())
                })?;
                let num_iters = ctx.hyper_int("num_iters").unwrap_or(5).max(0) as usize;
                let step = ctx.hyper_f64("step_size").unwrap_or(1.0);
                let y = DMatrix::from_column_slice(observed.len(), 1, observed);
                let mut x = DMatrix::zeros(m.ncols(), 1);
                for _ in 0..num_iters {
                    let res = m * &x - &y;
                    x -= step * m.transpose() * res;
                }
                Ok(x.as_slice().to_vec())
            })),
        )
        .with_hyperparams(vec![
            HyperParam::new("num_iters", 5i64),
            HyperParam::new("step_size", 1.0),
        ]),
    )?;
    reg.register_perf(OpPerfRecord::constant(
        "InvIterativeMatMul",
        Measure::SupportQuality,
        MeasureValue::Quality(SupportQuality::BestEffort),
    ))?;

    // --- make_factors ---
    reg.register_impl(OpImplRecord::new(
        "make_factors_score",
        ops::MAKE_FACTORS,
        Score,
        OpCallable::MakeFactors(Arc::new(|ctx, sf, ring, vars, ranges| {
            let score = sf.as_score().ok_or(Error::NotApplicable)?;
            if vars.len() != sf.arity() {
                return Err(Error::ArityMismatch {
                    kind: sf.kind(),
                    expected: sf.arity(),
                    got: vars.len(),
                });
            }
            let _ = ctx;
            let f = crate::factor::Factor::from_fn(
                vars.to_vec(),
                ranges.to_vec(),
                |idx| {
                    let vals: Vec<Value> = idx
                        .iter()
                        .enumerate()
                        .map(|(d, i)| ranges[d][*i].clone())
                        .collect();
                    let subject = if vals.len() == 1 {
                        vals[0].clone()
                    } else {
                        Value::List(vals)
                    };
                    ops::bump_cost(1);
                    Ok(ring.from_prob(score.get(&subject)?))
                },
            )?;
            Ok(vec![f])
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "make_factors_from_logcpdf",
        ops::MAKE_FACTORS,
        SFunc,
        OpCallable::MakeFactors(Arc::new(|ctx, sf, ring, vars, ranges| {
            if vars.len() != sf.arity() + 1 {
                return Err(Error::ArityMismatch {
                    kind: sf.kind(),
                    expected: sf.arity() + 1,
                    got: vars.len(),
                });
            }
            let f = crate::factor::Factor::from_fn(
                vars.to_vec(),
                ranges.to_vec(),
                |idx| {
                    let value = &ranges[0][idx[0]];
                    let parents: Vec<Value> = idx[1..]
                        .iter()
                        .enumerate()
                        .map(|(d, i)| ranges[d + 1][*i].clone())
                        .collect();
                    let lp = ops::logcpdf(ctx.registry, ctx.policy, sf, &parents, value)?;
                    Ok(ring.from_prob(lp.exp()))
                },
            )?;
            Ok(vec![f])
        })),
    ))?;

    Ok(())
}

fn register_moments(reg: &mut Registry) -> Result<()> {
    use Kind::*;
    reg.register_impl(OpImplRecord::new(
        "expectation_dist",
        ops::EXPECTATION,
        Dist,
        OpCallable::Expectation(Arc::new(|_, sf, _| {
            sf.as_dist().ok_or(Error::NotApplicable)?.expectation()
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_dist",
        ops::VARIANCE,
        Dist,
        OpCallable::Variance(Arc::new(|_, sf, _| {
            sf.as_dist().ok_or(Error::NotApplicable)?.variance()
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "expectation_mixture",
        ops::EXPECTATION,
        Mixture,
        OpCallable::Expectation(Arc::new(|ctx, sf, parents| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            let mut acc = 0.0;
            for (c, w) in m.components.iter().zip(&m.probabilities) {
                if *w > 0.0 {
                    acc += w * ops::expectation(ctx.registry, ctx.policy, c, parents)?;
                }
            }
            Ok(acc)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_mixture",
        ops::VARIANCE,
        Mixture,
        OpCallable::Variance(Arc::new(|ctx, sf, parents| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            // Law of total variance over the component choice.
            let mut mean = 0.0;
            let mut second = 0.0;
            for (c, w) in m.components.iter().zip(&m.probabilities) {
                if *w > 0.0 {
                    let e = ops::expectation(ctx.registry, ctx.policy, c, parents)?;
                    let v = ops::variance(ctx.registry, ctx.policy, c, parents)?;
                    mean += w * e;
                    second += w * (v + e * e);
                }
            }
            Ok(second - mean * mean)
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "expectation_extend",
        ops::EXPECTATION,
        Extend,
        OpCallable::Expectation(Arc::new(|ctx, sf, parents| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            let active = [parents[e.active_index].clone()];
            ops::expectation(ctx.registry, ctx.policy, &e.inner, &active)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_extend",
        ops::VARIANCE,
        Extend,
        OpCallable::Variance(Arc::new(|ctx, sf, parents| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            let active = [parents[e.active_index].clone()];
            ops::variance(ctx.registry, ctx.policy, &e.inner, &active)
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "expectation_switch",
        ops::EXPECTATION,
        Switch,
        OpCallable::Expectation(Arc::new(|ctx, sf, parents| {
            let s = expect_switch(sf)?;
            let idx = s.choice_index(&parents[0])?;
            ops::expectation(ctx.registry, ctx.policy, &s.choices[idx], &parents[1..])
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_switch",
        ops::VARIANCE,
        Switch,
        OpCallable::Variance(Arc::new(|ctx, sf, parents| {
            let s = expect_switch(sf)?;
            let idx = s.choice_index(&parents[0])?;
            ops::variance(ctx.registry, ctx.policy, &s.choices[idx], &parents[1..])
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "expectation_conditional",
        ops::EXPECTATION,
        Conditional,
        OpCallable::Expectation(Arc::new(|ctx, sf, parents| {
            let c = expect_conditional(sf)?;
            let (ivals, jvals) = c.split(parents);
            let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, ivals)?;
            ops::expectation(ctx.registry, ctx.policy, &gen, jvals)
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_conditional",
        ops::VARIANCE,
        Conditional,
        OpCallable::Variance(Arc::new(|ctx, sf, parents| {
            let c = expect_conditional(sf)?;
            let (ivals, jvals) = c.split(parents);
            let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, ivals)?;
            ops::variance(ctx.registry, ctx.policy, &gen, jvals)
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "expectation_det",
        ops::EXPECTATION,
        Det,
        OpCallable::Expectation(Arc::new(|_, sf, parents| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            d.apply(parents)?
                .as_f64()
                .ok_or_else(|| Error::UnsupportedOperation {
                    operation: ops::EXPECTATION.into(),
                    kind: Kind::Det,
                })
        })),
    ))?;
    reg.register_impl(OpImplRecord::new(
        "variance_det",
        ops::VARIANCE,
        Det,
        OpCallable::Variance(Arc::new(|_, sf, parents| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            d.apply(parents)?
                .as_f64()
                .ok_or_else(|| Error::UnsupportedOperation {
                    operation: ops::VARIANCE.into(),
                    kind: Kind::Det,
                })?;
            Ok(0.0)
        })),
    ))?;
    Ok(())
}

fn register_support(reg: &mut Registry) -> Result<()> {
    use Kind::*;

    reg.register_impl(OpImplRecord::new(
        "support_dist",
        ops::SUPPORT,
        Dist,
        OpCallable::Support(Arc::new(|_, sf, _, target, prior| {
            Ok(sf.as_dist().ok_or(Error::NotApplicable)?.support(target, prior))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "support_dist",
        Measure::SupportQuality,
        |ctx: &PerfCtx| {
            Ok(MeasureValue::Quality(match ctx.sfunc.kind() {
                Kind::Normal => SupportQuality::Incremental,
                _ => SupportQuality::Complete,
            }))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "support_mixture",
        ops::SUPPORT,
        Mixture,
        OpCallable::Support(Arc::new(|ctx, sf, parranges, target, prior| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            let mut out: Vec<Value> = prior.to_vec();
            for (c, w) in m.components.iter().zip(&m.probabilities) {
                if *w == 0.0 {
                    continue;
                }
                for v in ops::support(ctx.registry, ctx.policy, c, parranges, target, prior)? {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
            out.sort();
            Ok(out)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "support_mixture",
        Measure::SupportQuality,
        |ctx: &PerfCtx| {
            let SFunc::Mixture(m) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            let mut q = SupportQuality::Complete;
            for c in &m.components {
                q = q.min(component_support_quality(ctx.registry, c)?);
            }
            Ok(MeasureValue::Quality(q))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "support_extend",
        ops::SUPPORT,
        Extend,
        OpCallable::Support(Arc::new(|ctx, sf, parranges, target, prior| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            let active = [parranges
                .get(e.active_index)
                .cloned()
                .unwrap_or_default()];
            ops::support(ctx.registry, ctx.policy, &e.inner, &active, target, prior)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "support_extend",
        Measure::SupportQuality,
        |ctx: &PerfCtx| {
            let SFunc::Extend(e) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            Ok(MeasureValue::Quality(component_support_quality(
                ctx.registry,
                &e.inner,
            )?))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "support_switch",
        ops::SUPPORT,
        Switch,
        OpCallable::Support(Arc::new(|ctx, sf, parranges, target, prior| {
            let s = expect_switch(sf)?;
            let rest = if parranges.is_empty() {
                &[][..]
            } else {
                &parranges[1..]
            };
            let mut out: Vec<Value> = prior.to_vec();
            for c in &s.choices {
                for v in ops::support(ctx.registry, ctx.policy, c, rest, target, prior)? {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
            out.sort();
            Ok(out)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "support_switch",
        Measure::SupportQuality,
        |ctx: &PerfCtx| {
            let SFunc::Switch(s) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            let mut q = SupportQuality::Complete;
            for c in &s.choices {
                q = q.min(component_support_quality(ctx.registry, c)?);
            }
            Ok(MeasureValue::Quality(q))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "support_conditional",
        ops::SUPPORT,
        Conditional,
        OpCallable::Support(Arc::new(|ctx, sf, parranges, target, prior| {
            let c = expect_conditional(sf)?;
            match &c.generator {
                Generator::Table(t) => match &t.kind {
                    TableKind::Cpt { outputs, rows } => {
                        let mut out: Vec<Value> = prior.to_vec();
                        for row in rows.values() {
                            for (v, p) in outputs.iter().zip(row) {
                                if *p > 0.0 && !out.contains(v) {
                                    out.push(v.clone());
                                }
                            }
                        }
                        Ok(out)
                    }
                    TableKind::Clg { rows } => {
                        let jranges = if parranges.len() >= c.i_arity {
                            &parranges[c.i_arity..]
                        } else {
                            &[][..]
                        };
                        let mut cases = Vec::new();
                        for lg in rows.values() {
                            for combo in cartesian(jranges) {
                                let xs: Vec<f64> =
                                    combo.iter().filter_map(Value::as_f64).collect();
                                cases.push((lg.mean_given(&xs), lg.noise_variance));
                            }
                            if jranges.is_empty() || jranges.iter().any(Vec::is_empty) {
                                cases.push((lg.intercept, lg.noise_variance));
                            }
                        }
                        Ok(moment_matched_grid(&cases, target, prior))
                    }
                },
                Generator::LinearGaussian(lg) => {
                    let mut cases = Vec::new();
                    for combo in cartesian(parranges) {
                        let xs: Vec<f64> = combo.iter().filter_map(Value::as_f64).collect();
                        cases.push((lg.mean_given(&xs), lg.noise_variance));
                    }
                    if cases.is_empty() {
                        cases.push((lg.intercept, lg.noise_variance));
                    }
                    Ok(moment_matched_grid(&cases, target, prior))
                }
                Generator::Func(_) => {
                    let (iranges, jranges) = parranges.split_at(c.i_arity.min(parranges.len()));
                    let mut out: Vec<Value> = prior.to_vec();
                    for combo in cartesian(iranges) {
                        let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, &combo)?;
                        for v in
                            ops::support(ctx.registry, ctx.policy, &gen, jranges, target, prior)?
                        {
                            if !out.contains(&v) {
                                out.push(v);
                            }
                        }
                    }
                    out.sort();
                    Ok(out)
                }
            }
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "support_conditional",
        Measure::SupportQuality,
        |ctx: &PerfCtx| {
            Ok(MeasureValue::Quality(match ctx.sfunc.kind() {
                Kind::DiscreteCpt => SupportQuality::Complete,
                Kind::Clg | Kind::LinearGaussian => SupportQuality::Incremental,
                _ => SupportQuality::BestEffort,
            }))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "support_det",
        ops::SUPPORT,
        Det,
        OpCallable::Support(Arc::new(|_, sf, parranges, _, prior| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            let mut out: Vec<Value> = prior.to_vec();
            for combo in cartesian(parranges) {
                let y = d.apply(&combo)?;
                if !out.contains(&y) {
                    out.push(y);
                }
            }
            out.sort();
            Ok(out)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "support_det",
        Measure::SupportQuality,
        MeasureValue::Quality(SupportQuality::BestEffort),
    ))?;

    Ok(())
}

/// Support quality of a component under default (first-registered) dispatch.
fn component_support_quality(registry: &Registry, sfunc: &SFunc) -> Result<SupportQuality> {
    let recs = registry.find_impls(ops::SUPPORT, sfunc.kind());
    let rec = recs.first().ok_or_else(|| Error::UnsupportedOperation {
        operation: ops::SUPPORT.into(),
        kind: sfunc.kind(),
    })?;
    registry
        .query_perf(&rec.impl_name, Measure::SupportQuality, sfunc)?
        .as_quality()
        .ok_or_else(|| {
            Error::InvalidParameter("support_quality evaluator returned a non-quality value".into())
        })
}

/// Quantile grid of a Normal moment-matched to a set of (mean, variance)
/// cases, merged with the prior support.
fn moment_matched_grid(cases: &[(f64, f64)], target: usize, prior: &[Value]) -> Vec<Value> {
    if cases.is_empty() {
        return prior.to_vec();
    }
    let n = cases.len() as f64;
    let mean = cases.iter().map(|(m, _)| m).sum::<f64>() / n;
    let avg_var = cases.iter().map(|(_, v)| v).sum::<f64>() / n;
    let spread = cases.iter().map(|(m, _)| (m - mean) * (m - mean)).sum::<f64>() / n;
    let nd = NormalDist::new(mean, (avg_var + spread).max(1e-12)).expect("positive variance");
    merge_numeric_support(prior, &nd.quantile_grid(target.max(1)))
}

fn register_compute_pi(reg: &mut Registry) -> Result<()> {
    use Kind::*;

    reg.register_impl(OpImplRecord::new(
        "compute_pi_dist",
        ops::COMPUTE_PI,
        Dist,
        OpCallable::ComputePi(Arc::new(|_, sf, _, _, _| {
            ops::bump_cost(1);
            sf.as_dist().ok_or(Error::NotApplicable)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "compute_pi_dist",
        Measure::Runtime,
        MeasureValue::Cost(1.0),
    ))?;

    // Closed form for a linear-Gaussian child: when every parent π has
    // computable moments, the result is Normal(Σ aᵢμᵢ + b, Σ aᵢ²σᵢ² + σ²).
    // Exact for Normal/Constant parent messages, moment matching otherwise.
    reg.register_impl(OpImplRecord::new(
        "compute_pi_lg_closed_form",
        ops::COMPUTE_PI,
        LinearGaussian,
        OpCallable::ComputePi(Arc::new(|_, sf, _, _, pis| {
            let c = expect_conditional(sf)?;
            let Generator::LinearGaussian(lg) = &c.generator else {
                return Err(Error::NotApplicable);
            };
            if pis.len() != lg.coefficients.len() {
                return Err(Error::NotApplicable);
            }
            let mut mean = lg.intercept;
            let mut var = lg.noise_variance;
            for (a, pi) in lg.coefficients.iter().zip(pis) {
                let (m, v) = match (pi.expectation(), pi.variance()) {
                    (Ok(m), Ok(v)) => (m, v),
                    _ => return Err(Error::NotApplicable),
                };
                mean += a * m;
                var += a * a * v;
            }
            ops::bump_cost(1);
            Ok(Dist::Normal(NormalDist::new(mean, var)?))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "compute_pi_lg_closed_form",
        Measure::Runtime,
        MeasureValue::Cost(1.0),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "compute_pi_lg_closed_form",
        Measure::SupportQuality,
        MeasureValue::Quality(SupportQuality::Complete),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "compute_pi_mixture",
        ops::COMPUTE_PI,
        Mixture,
        OpCallable::ComputePi(Arc::new(|ctx, sf, range, parranges, pis| {
            let SFunc::Mixture(m) = sf else {
                return Err(Error::NotApplicable);
            };
            if range.is_empty() {
                return Err(Error::InfiniteRange);
            }
            let mut result = vec![0.0; range.len()];
            for (comp, w) in m.components.iter().zip(&m.probabilities) {
                if *w == 0.0 {
                    continue;
                }
                let cp = ops::compute_pi(ctx.registry, ctx.policy, comp, range, parranges, pis)?;
                for (slot, x) in result.iter_mut().zip(range) {
                    *slot += w * dist_cpdf(&cp, x)?;
                }
            }
            Ok(Dist::Cat(Cat::from_weights(range.to_vec(), result)?))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "compute_pi_mixture",
        Measure::Runtime,
        |ctx: &PerfCtx| {
            let SFunc::Mixture(m) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            let mut total = 0.0;
            for c in &m.components {
                total += component_compute_pi_runtime(ctx.registry, c)?;
            }
            Ok(MeasureValue::Cost(total))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "compute_pi_extend",
        ops::COMPUTE_PI,
        Extend,
        OpCallable::ComputePi(Arc::new(|ctx, sf, range, parranges, pis| {
            let SFunc::Extend(e) = sf else {
                return Err(Error::NotApplicable);
            };
            if parranges.len() != e.full_arity || pis.len() != e.full_arity {
                return Err(Error::ArityMismatch {
                    kind: Kind::Extend,
                    expected: e.full_arity,
                    got: parranges.len(),
                });
            }
            let active_range = [parranges[e.active_index].clone()];
            let active_pi = [pis[e.active_index].clone()];
            ops::compute_pi(ctx.registry, ctx.policy, &e.inner, range, &active_range, &active_pi)
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "compute_pi_extend",
        Measure::Runtime,
        |ctx: &PerfCtx| {
            let SFunc::Extend(e) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            Ok(MeasureValue::Cost(component_compute_pi_runtime(
                ctx.registry,
                &e.inner,
            )?))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "compute_pi_switch",
        ops::COMPUTE_PI,
        Switch,
        OpCallable::ComputePi(Arc::new(|ctx, sf, range, parranges, pis| {
            let s = expect_switch(sf)?;
            if parranges.len() != s.arity() || pis.len() != s.arity() {
                return Err(Error::ArityMismatch {
                    kind: Kind::Switch,
                    expected: s.arity(),
                    got: parranges.len(),
                });
            }
            if range.is_empty() {
                return Err(Error::InfiniteRange);
            }
            let sel_masses = pi_masses(&pis[0], &parranges[0])?;
            let mut result = vec![0.0; range.len()];
            for (sel, w) in parranges[0].iter().zip(&sel_masses) {
                if *w == 0.0 {
                    continue;
                }
                let idx = s.choice_index(sel)?;
                let cp = ops::compute_pi(
                    ctx.registry,
                    ctx.policy,
                    &s.choices[idx],
                    range,
                    &parranges[1..],
                    &pis[1..],
                )?;
                for (slot, x) in result.iter_mut().zip(range) {
                    *slot += w * dist_cpdf(&cp, x)?;
                }
            }
            Ok(Dist::Cat(Cat::from_weights(range.to_vec(), result)?))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "compute_pi_switch",
        Measure::Runtime,
        |ctx: &PerfCtx| {
            let SFunc::Switch(s) = ctx.sfunc else {
                return Err(Error::NotApplicable);
            };
            let mut total = 1.0;
            for c in &s.choices {
                total += component_compute_pi_runtime(ctx.registry, c)?;
            }
            Ok(MeasureValue::Cost(total))
        },
    ))?;

    // Generic enumeration for conditionals: sum over selector tuples of the
    // tuple's π weight times the embedded SFunc's π, mixed over `range`.
    reg.register_impl(OpImplRecord::new(
        "compute_pi_conditional_enum",
        ops::COMPUTE_PI,
        Conditional,
        OpCallable::ComputePi(Arc::new(|ctx, sf, range, parranges, pis| {
            let c = expect_conditional(sf)?;
            if parranges.len() != c.arity() || pis.len() != c.arity() {
                return Err(Error::ArityMismatch {
                    kind: sf.kind(),
                    expected: c.arity(),
                    got: parranges.len(),
                });
            }
            if range.is_empty() {
                return Err(Error::InfiniteRange);
            }
            let (iranges, jranges) = parranges.split_at(c.i_arity);
            let (ipis, jpis) = pis.split_at(c.i_arity);
            let imasses: Vec<Vec<f64>> = iranges
                .iter()
                .zip(ipis)
                .map(|(r, pi)| pi_masses(pi, r))
                .collect::<Result<_>>()?;
            for (r, pi) in jranges.iter().zip(jpis) {
                // J-parents enter through the embedded SFunc; still reject
                // degenerate messages up front when their range is finite.
                if !r.is_empty() {
                    pi_masses(pi, r)?;
                }
            }
            let mut result = vec![0.0; range.len()];
            let mut idx = vec![0usize; iranges.len()];
            let total: usize = iranges.iter().map(Vec::len).product::<usize>().max(1);
            for _ in 0..total {
                let combo: Vec<Value> = idx
                    .iter()
                    .enumerate()
                    .map(|(d, i)| iranges[d][*i].clone())
                    .collect();
                let p_i: f64 = idx
                    .iter()
                    .enumerate()
                    .map(|(d, i)| imasses[d][*i])
                    .product();
                if p_i > 0.0 {
                    let gen = ops::gen_sf(ctx.registry, ctx.policy, sf, &combo)?;
                    let p_j =
                        ops::compute_pi(ctx.registry, ctx.policy, &gen, range, jranges, jpis)?;
                    for (slot, x) in result.iter_mut().zip(range) {
                        *slot += p_i * dist_cpdf(&p_j, x)?;
                    }
                }
                for d in (0..idx.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < iranges[d].len() {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            Ok(Dist::Cat(Cat::from_weights(range.to_vec(), result)?))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::new(
        "compute_pi_conditional_enum",
        Measure::Runtime,
        |ctx: &PerfCtx| {
            let cost = match ctx.sfunc {
                SFunc::Conditional(c) => match &c.generator {
                    Generator::Table(t) => t
                        .i_ranges
                        .iter()
                        .map(|r| r.len() as f64)
                        .product::<f64>()
                        .max(1.0),
                    _ => 1.0,
                },
                _ => return Err(Error::NotApplicable),
            };
            Ok(MeasureValue::Cost(cost))
        },
    ))?;

    reg.register_impl(OpImplRecord::new(
        "compute_pi_det",
        ops::COMPUTE_PI,
        Det,
        OpCallable::ComputePi(Arc::new(|_, sf, range, parranges, pis| {
            let SFunc::Det(d) = sf else {
                return Err(Error::NotApplicable);
            };
            if parranges.len() != d.arity || pis.len() != d.arity {
                return Err(Error::ArityMismatch {
                    kind: Kind::Det,
                    expected: d.arity,
                    got: parranges.len(),
                });
            }
            if range.is_empty() {
                return Err(Error::InfiniteRange);
            }
            let masses: Vec<Vec<f64>> = parranges
                .iter()
                .zip(pis)
                .map(|(r, pi)| pi_masses(pi, r))
                .collect::<Result<_>>()?;
            let mut result = vec![0.0; range.len()];
            let mut idx = vec![0usize; parranges.len()];
            let total: usize = parranges.iter().map(Vec::len).product::<usize>().max(1);
            for _ in 0..total {
                let combo: Vec<Value> = idx
                    .iter()
                    .enumerate()
                    .map(|(d2, i)| parranges[d2][*i].clone())
                    .collect();
                let w: f64 = idx.iter().enumerate().map(|(d2, i)| masses[d2][*i]).product();
                if w > 0.0 {
                    ops::bump_cost(1);
                    let y = d.apply(&combo)?;
                    if let Some(pos) = range.iter().position(|x| *x == y) {
                        result[pos] += w;
                    }
                }
                for d2 in (0..idx.len()).rev() {
                    idx[d2] += 1;
                    if idx[d2] < parranges[d2].len() {
                        break;
                    }
                    idx[d2] = 0;
                }
            }
            Ok(Dist::Cat(Cat::from_weights(range.to_vec(), result)?))
        })),
    ))?;
    reg.register_perf(OpPerfRecord::constant(
        "compute_pi_det",
        Measure::Runtime,
        MeasureValue::Cost(1.0),
    ))?;

    Ok(())
}

/// Runtime of a component's compute_pi under default dispatch.
fn component_compute_pi_runtime(registry: &Registry, sfunc: &SFunc) -> Result<f64> {
    let recs = registry.find_impls(ops::COMPUTE_PI, sfunc.kind());
    let rec = recs.first().ok_or_else(|| Error::UnsupportedOperation {
        operation: ops::COMPUTE_PI.into(),
        kind: sfunc.kind(),
    })?;
    registry
        .query_perf(&rec.impl_name, Measure::Runtime, sfunc)?
        .as_cost()
        .ok_or_else(|| Error::InvalidParameter("runtime evaluator returned a non-cost value".into()))
}

fn register_send_lambda(reg: &mut Registry, options: RegistryOptions) -> Result<()> {
    use Kind::*;

    reg.register_impl(OpImplRecord::new(
        "send_lambda_score",
        ops::SEND_LAMBDA,
        Score,
        OpCallable::SendLambda(Arc::new(|_, sf, _, _, parranges, _, target| {
            let score = sf.as_score().ok_or(Error::NotApplicable)?;
            // Multi-parent scores are handled by elimination, not by π/λ
            // message passing.
            if sf.arity() != 1 || target != 0 {
                return Err(Error::UnsupportedOperation {
                    operation: ops::SEND_LAMBDA.into(),
                    kind: sf.kind(),
                });
            }
            let mut weights = Vec::with_capacity(parranges[0].len());
            for u in &parranges[0] {
                ops::bump_cost(1);
                weights.push(score.get(u)?);
            }
            Ok(soft_score_over(&parranges[0], weights))
        })),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "send_lambda_mixture",
        ops::SEND_LAMBDA,
        Mixture,
        OpCallable::SendLambda(Arc::new(
            |ctx, sf, lambda, range, parranges, pis, target| {
                let SFunc::Mixture(m) = sf else {
                    return Err(Error::NotApplicable);
                };
                let target_range = &parranges[target];
                let mut out = vec![0.0; target_range.len()];
                for (comp, w) in m.components.iter().zip(&m.probabilities) {
                    if *w == 0.0 {
                        continue;
                    }
                    let msg = ops::send_lambda(
                        ctx.registry,
                        ctx.policy,
                        comp,
                        lambda,
                        range,
                        parranges,
                        pis,
                        target,
                    )?;
                    for (slot, u) in out.iter_mut().zip(target_range) {
                        *slot += w * msg.get(u)?;
                    }
                }
                Ok(soft_score_over(target_range, out))
            },
        )),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "send_lambda_extend",
        ops::SEND_LAMBDA,
        Extend,
        OpCallable::SendLambda(Arc::new(
            |ctx, sf, lambda, range, parranges, pis, target| {
                let SFunc::Extend(e) = sf else {
                    return Err(Error::NotApplicable);
                };
                if target == e.active_index {
                    let active_range = [parranges[e.active_index].clone()];
                    let active_pi = [pis[e.active_index].clone()];
                    ops::send_lambda(
                        ctx.registry,
                        ctx.policy,
                        &e.inner,
                        lambda,
                        range,
                        &active_range,
                        &active_pi,
                        0,
                    )
                } else {
                    // Ignored parents receive an uninformative message.
                    let ones = vec![1.0; parranges[target].len()];
                    Ok(soft_score_over(&parranges[target], ones))
                }
            },
        )),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "send_lambda_switch",
        ops::SEND_LAMBDA,
        Switch,
        OpCallable::SendLambda(Arc::new(
            |ctx, sf, lambda, range, parranges, pis, target| {
                lambda_by_enumeration(&ctx, sf, lambda, range, parranges, pis, target)
            },
        )),
    ))?;

    reg.register_impl(OpImplRecord::new(
        "send_lambda_conditional",
        ops::SEND_LAMBDA,
        Conditional,
        OpCallable::SendLambda(Arc::new(
            |ctx, sf, lambda, range, parranges, pis, target| {
                lambda_by_enumeration(&ctx, sf, lambda, range, parranges, pis, target)
            },
        )),
    ))?;

    if options.det_send_lambda {
        reg.register_impl(OpImplRecord::new(
            "send_lambda_det_interpolation",
            ops::SEND_LAMBDA,
            Det,
            OpCallable::SendLambda(Arc::new(
                |_, sf, lambda, range, parranges, pis, target| {
                    det_interpolation_lambda(sf, lambda, range, parranges, pis, target)
                },
            )),
        ))?;
        reg.register_perf(OpPerfRecord::constant(
            "send_lambda_det_interpolation",
            Measure::SupportQuality,
            MeasureValue::Quality(SupportQuality::BestEffort),
        ))?;
    }

    Ok(())
}

/// Interpolation-based λ for deterministic numeric SFuncs.
///
/// Candidate parent values are pushed through the function; a generated
/// output that exactly matches a scored value inherits its λ weight, while
/// non-matching outputs are smoothed with a Gaussian kernel over distance,
/// with bandwidth set to the median pairwise distance among generated
/// outputs.
fn det_interpolation_lambda(
    sf: &SFunc,
    lambda: &Score,
    range: &[Value],
    parranges: &[Vec<Value>],
    pis: &[Dist],
    target: usize,
) -> Result<Score> {
    let SFunc::Det(d) = sf else {
        return Err(Error::NotApplicable);
    };
    if parranges.len() != d.arity || target >= d.arity {
        return Err(Error::ArityMismatch {
            kind: Kind::Det,
            expected: d.arity,
            got: parranges.len(),
        });
    }
    let lam = lambda_vec(lambda, range)?;
    let range_nums: Vec<Option<f64>> = range.iter().map(Value::as_f64).collect();

    // Generate outputs for every parent combination (target value included),
    // remembering each combination's target index and other-parent π weight.
    let mut masses: Vec<Option<Vec<f64>>> = Vec::with_capacity(pis.len());
    for (k, pi) in pis.iter().enumerate() {
        if k == target {
            masses.push(None);
        } else {
            masses.push(Some(pi_masses(pi, &parranges[k])?));
        }
    }
    struct Generated {
        target_idx: usize,
        weight: f64,
        output: Value,
    }
    let mut generated: Vec<Generated> = Vec::new();
    let mut idx = vec![0usize; d.arity];
    let total: usize = parranges.iter().map(Vec::len).product::<usize>().max(1);
    for _ in 0..total {
        let combo: Vec<Value> = idx
            .iter()
            .enumerate()
            .map(|(k, i)| parranges[k][*i].clone())
            .collect();
        let weight: f64 = idx
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != target)
            .map(|(k, i)| masses[k].as_ref().unwrap()[*i])
            .product();
        ops::bump_cost(1);
        generated.push(Generated {
            target_idx: idx[target],
            weight,
            output: d.apply(&combo)?,
        });
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < parranges[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }

    // Bandwidth: median pairwise distance among generated numeric outputs.
    let outputs: Vec<f64> = generated
        .iter()
        .filter_map(|g| g.output.as_f64())
        .collect();
    if outputs.len() != generated.len() || range_nums.iter().any(Option::is_none) {
        return Err(Error::UnsupportedOperation {
            operation: ops::SEND_LAMBDA.into(),
            kind: Kind::Det,
        });
    }
    let mut dists = Vec::new();
    for i in 0..outputs.len() {
        for j in (i + 1)..outputs.len() {
            dists.push((outputs[i] - outputs[j]).abs());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let bandwidth = dists
        .get(dists.len() / 2)
        .copied()
        .filter(|h| *h > 0.0)
        .unwrap_or(1e-9);

    let mut out = vec![0.0; parranges[target].len()];
    for g in &generated {
        if g.weight == 0.0 {
            continue;
        }
        let y = g.output.as_f64().unwrap();
        // Exact matches take their λ weight directly; otherwise smooth over
        // all scored values.
        let exact: Option<f64> = range
            .iter()
            .zip(&lam)
            .find(|(x, _)| **x == g.output)
            .map(|(_, l)| *l);
        let contribution = match exact {
            Some(l) => l,
            None => range_nums
                .iter()
                .zip(&lam)
                .map(|(x, l)| {
                    let dd = (y - x.unwrap()) / bandwidth;
                    l * (-0.5 * dd * dd).exp()
                })
                .sum(),
        };
        out[g.target_idx] += g.weight * contribution;
    }
    Ok(soft_score_over(&parranges[target], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_impls_for_linear_gaussian_lists_closed_form_then_enumeration() {
        let reg = standard_registry();
        let names: Vec<_> = reg
            .find_impls(ops::COMPUTE_PI, Kind::LinearGaussian)
            .iter()
            .map(|r| r.impl_name.clone())
            .collect();
        assert_eq!(
            names,
            vec!["compute_pi_lg_closed_form", "compute_pi_conditional_enum"]
        );
    }

    #[test]
    fn det_send_lambda_is_opt_in() {
        let reg = standard_registry();
        assert!(reg.find_impls(ops::SEND_LAMBDA, Kind::Det).is_empty());
        let reg = standard_registry_with(RegistryOptions {
            det_send_lambda: true,
        });
        assert_eq!(reg.find_impls(ops::SEND_LAMBDA, Kind::Det).len(), 1);
    }

    #[test]
    fn invert_candidates_in_registration_order() {
        let reg = standard_registry();
        let names: Vec<_> = reg
            .find_impls(ops::INVERT, Kind::Det)
            .iter()
            .map(|r| r.impl_name.clone())
            .collect();
        assert_eq!(names, vec!["InvFullMatMul", "InvIterativeMatMul"]);
    }

    #[test]
    fn compute_bel_candidates_and_policies() {
        let reg = standard_registry();
        let sf = SFunc::flip(0.5).unwrap();
        let (rec, _) = reg
            .select_impl(&Policy::first_registered(), ops::COMPUTE_BEL, &sf)
            .unwrap();
        assert_eq!(rec.impl_name, "EagerComputeBel");
        let (rec, _) = reg
            .select_impl(&Policy::prefer_lazy(), ops::COMPUTE_BEL, &sf)
            .unwrap();
        assert_eq!(rec.impl_name, "LazyComputeBel");
    }

    #[test]
    fn prefer_exact_picks_full_inversion() {
        let reg = standard_registry();
        let sf = SFunc::det_linear(DMatrix::identity(2, 2));
        let (rec, _) = reg
            .select_impl(&Policy::prefer_exact(), ops::INVERT, &sf)
            .unwrap();
        assert_eq!(rec.impl_name, "InvFullMatMul");
    }
}
