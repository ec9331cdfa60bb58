//! Operation entry points.
//!
//! Algorithms call these drivers instead of touching SFuncs directly. Each
//! driver asks the registry (under the active policy) for an implementation,
//! resolves hyperparameters, and invokes the chosen callable. Implementations
//! of compositional SFuncs recurse through the same drivers, so the policy
//! governs every level of a derived computation.
//!
//! An implementation may return [`Error::NotApplicable`] to decline a call
//! (e.g. a closed form that needs a particular parent message); drivers then
//! fall back to the remaining candidates in registration order.

pub mod standard;

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use rand::RngCore;

pub use standard::{standard_registry, standard_registry_with, RegistryOptions};

use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::kernel::{HyperValues, Measure, Policy, Registry, SupportQuality};
use crate::network::VarId;
use crate::semiring::Semiring;
use crate::sfunc::{Dist, SFunc, Score};
use crate::value::Value;

// Operation names. Each is declared in the standard registry together with a
// description of its signature transform.
pub const SAMPLE: &str = "sample";
pub const SAMPLE_N: &str = "sample_n";
pub const LOGCPDF: &str = "logcpdf";
pub const EXPECTATION: &str = "expectation";
pub const VARIANCE: &str = "variance";
pub const SUPPORT: &str = "support";
pub const GET_SCORE: &str = "get_score";
pub const GEN_SF: &str = "gen_sf";
pub const COMPUTE_PI: &str = "compute_pi";
pub const SEND_LAMBDA: &str = "send_lambda";
pub const COMPUTE_BEL: &str = "compute_bel";
pub const INVERT: &str = "invert";
pub const MAKE_FACTORS: &str = "make_factors";

/// Call context handed to implementations: registry and policy for recursive
/// dispatch, plus the resolved hyperparameters of this call.
pub struct OpCtx<'a> {
    pub registry: &'a Registry,
    pub policy: &'a Policy,
    pub hyper: HyperValues,
}

impl OpCtx<'_> {
    pub fn hyper_int(&self, name: &str) -> Option<i64> {
        match self.hyper.get(name) {
            Some(Value::Int(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn hyper_f64(&self, name: &str) -> Option<f64> {
        self.hyper.get(name).and_then(Value::as_f64)
    }
}

pub type SampleFn =
    Arc<dyn Fn(&OpCtx, &SFunc, &[Value], &mut dyn RngCore) -> Result<Value> + Send + Sync>;
pub type SampleNFn = Arc<
    dyn Fn(&OpCtx, &SFunc, &[Value], usize, &mut dyn RngCore) -> Result<Vec<Value>> + Send + Sync,
>;
pub type LogcpdfFn = Arc<dyn Fn(&OpCtx, &SFunc, &[Value], &Value) -> Result<f64> + Send + Sync>;
pub type MomentFn = Arc<dyn Fn(&OpCtx, &SFunc, &[Value]) -> Result<f64> + Send + Sync>;
pub type SupportFn =
    Arc<dyn Fn(&OpCtx, &SFunc, &[Vec<Value>], usize, &[Value]) -> Result<Vec<Value>> + Send + Sync>;
pub type GetScoreFn = Arc<dyn Fn(&OpCtx, &SFunc, &Value) -> Result<f64> + Send + Sync>;
pub type GenSfFn = Arc<dyn Fn(&OpCtx, &SFunc, &[Value]) -> Result<SFunc> + Send + Sync>;
pub type ComputePiFn = Arc<
    dyn Fn(&OpCtx, &SFunc, &[Value], &[Vec<Value>], &[Dist]) -> Result<Dist> + Send + Sync,
>;
pub type SendLambdaFn = Arc<
    dyn Fn(&OpCtx, &SFunc, &Score, &[Value], &[Vec<Value>], &[Dist], usize) -> Result<Score>
        + Send
        + Sync,
>;
pub type ComputeBelFn =
    Arc<dyn Fn(&OpCtx, &Dist, &Score, &mut dyn RngCore) -> Result<Score> + Send + Sync>;
pub type InvertFn = Arc<dyn Fn(&OpCtx, &SFunc, &[f64]) -> Result<Vec<f64>> + Send + Sync>;
pub type MakeFactorsFn = Arc<
    dyn Fn(&OpCtx, &SFunc, &dyn Semiring, &[VarId], &[Vec<Value>]) -> Result<Vec<Factor>>
        + Send
        + Sync,
>;
pub type CustomFn = Arc<dyn Fn(&OpCtx, &SFunc) -> Result<Value> + Send + Sync>;

/// Typed implementation handle stored in an [`crate::kernel::OpImplRecord`].
#[derive(Clone)]
pub enum OpCallable {
    Sample(SampleFn),
    SampleN(SampleNFn),
    Logcpdf(LogcpdfFn),
    Expectation(MomentFn),
    Variance(MomentFn),
    Support(SupportFn),
    GetScore(GetScoreFn),
    GenSf(GenSfFn),
    ComputePi(ComputePiFn),
    SendLambda(SendLambdaFn),
    ComputeBel(ComputeBelFn),
    Invert(InvertFn),
    MakeFactors(MakeFactorsFn),
    /// Open slot for operations outside the standard set.
    Custom(CustomFn),
}

impl fmt::Debug for OpCallable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            OpCallable::Sample(_) => "Sample",
            OpCallable::SampleN(_) => "SampleN",
            OpCallable::Logcpdf(_) => "Logcpdf",
            OpCallable::Expectation(_) => "Expectation",
            OpCallable::Variance(_) => "Variance",
            OpCallable::Support(_) => "Support",
            OpCallable::GetScore(_) => "GetScore",
            OpCallable::GenSf(_) => "GenSf",
            OpCallable::ComputePi(_) => "ComputePi",
            OpCallable::SendLambda(_) => "SendLambda",
            OpCallable::ComputeBel(_) => "ComputeBel",
            OpCallable::Invert(_) => "Invert",
            OpCallable::MakeFactors(_) => "MakeFactors",
            OpCallable::Custom(_) => "Custom",
        };
        write!(f, "OpCallable::{tag}")
    }
}

thread_local! {
    static COST: Cell<u64> = const { Cell::new(0) };
}

/// Resets the abstract operation-count counter for this thread.
pub fn reset_cost() {
    COST.with(|c| c.set(0));
}

/// Abstract operation count accumulated on this thread since the last reset.
/// One unit is one elementary density/mass/score evaluation.
pub fn cost() -> u64 {
    COST.with(|c| c.get())
}

pub(crate) fn bump_cost(n: u64) {
    COST.with(|c| c.set(c.get() + n));
}

/// Density/mass of a message Dist at one value, counted as one cost unit.
pub(crate) fn dist_cpdf(d: &Dist, x: &Value) -> Result<f64> {
    bump_cost(1);
    Ok(d.logcpdf(x)?.exp())
}

fn wrong_callable(op: &str, impl_name: &str) -> Error {
    Error::InvalidParameter(format!(
        "implementation `{impl_name}` registered for `{op}` carries a mismatched callable"
    ))
}

/// Runs a call against the policy's choice, falling back through the
/// remaining candidates when an implementation declines with `NotApplicable`.
fn drive<T>(
    registry: &Registry,
    policy: &Policy,
    operation: &str,
    sfunc: &SFunc,
    mut call: impl FnMut(OpCtx, &OpCallable) -> Result<T>,
) -> Result<T> {
    let ranked = registry.select_ranked(policy, operation, sfunc)?;
    let mut declined = 0usize;
    let total = ranked.len();
    for (record, hyper) in ranked {
        let ctx = OpCtx {
            registry,
            policy,
            hyper,
        };
        match call(ctx, &record.callable) {
            Err(Error::NotApplicable) => declined += 1,
            other => return other,
        }
    }
    debug_assert_eq!(declined, total);
    Err(Error::UnsupportedOperation {
        operation: operation.to_string(),
        kind: sfunc.kind(),
    })
}

fn check_arity(sfunc: &SFunc, parents: &[Value]) -> Result<()> {
    if parents.len() != sfunc.arity() {
        return Err(Error::ArityMismatch {
            kind: sfunc.kind(),
            expected: sfunc.arity(),
            got: parents.len(),
        });
    }
    Ok(())
}

pub fn sample(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parents: &[Value],
    rng: &mut dyn RngCore,
) -> Result<Value> {
    check_arity(sfunc, parents)?;
    drive(registry, policy, SAMPLE, sfunc, |ctx, callable| match callable {
        OpCallable::Sample(f) => f(&ctx, sfunc, parents, rng),
        _ => Err(wrong_callable(SAMPLE, "?")),
    })
}

pub fn sample_n(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parents: &[Value],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Value>> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample_n requires n >= 1".into(),
        ));
    }
    check_arity(sfunc, parents)?;
    drive(registry, policy, SAMPLE_N, sfunc, |ctx, callable| match callable {
        OpCallable::SampleN(f) => f(&ctx, sfunc, parents, n, rng),
        _ => Err(wrong_callable(SAMPLE_N, "?")),
    })
}

pub fn logcpdf(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parents: &[Value],
    value: &Value,
) -> Result<f64> {
    check_arity(sfunc, parents)?;
    bump_cost(1);
    drive(registry, policy, LOGCPDF, sfunc, |ctx, callable| match callable {
        OpCallable::Logcpdf(f) => f(&ctx, sfunc, parents, value),
        _ => Err(wrong_callable(LOGCPDF, "?")),
    })
}

pub fn expectation(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parents: &[Value],
) -> Result<f64> {
    check_arity(sfunc, parents)?;
    drive(registry, policy, EXPECTATION, sfunc, |ctx, callable| {
        match callable {
            OpCallable::Expectation(f) => f(&ctx, sfunc, parents),
            _ => Err(wrong_callable(EXPECTATION, "?")),
        }
    })
}

pub fn variance(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parents: &[Value],
) -> Result<f64> {
    check_arity(sfunc, parents)?;
    drive(registry, policy, VARIANCE, sfunc, |ctx, callable| match callable {
        OpCallable::Variance(f) => f(&ctx, sfunc, parents),
        _ => Err(wrong_callable(VARIANCE, "?")),
    })
}

/// Support over the output space given finite parent ranges. The result is a
/// superset of `prior` (a previous result for the same SFunc, or empty).
pub fn support(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    parent_ranges: &[Vec<Value>],
    target_size: usize,
    prior: &[Value],
) -> Result<Vec<Value>> {
    drive(registry, policy, SUPPORT, sfunc, |ctx, callable| match callable {
        OpCallable::Support(f) => f(&ctx, sfunc, parent_ranges, target_size, prior),
        _ => Err(wrong_callable(SUPPORT, "?")),
    })
}

/// Declared guarantee of the support implementation selected for `sfunc`.
pub fn support_quality(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
) -> Result<SupportQuality> {
    let (record, _) = registry.select_impl(policy, SUPPORT, sfunc)?;
    registry
        .query_perf(&record.impl_name, Measure::SupportQuality, sfunc)?
        .as_quality()
        .ok_or_else(|| Error::InvalidParameter("support_quality evaluator returned a non-quality value".into()))
}

pub fn get_score(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    value: &Value,
) -> Result<f64> {
    drive(registry, policy, GET_SCORE, sfunc, |ctx, callable| {
        match callable {
            OpCallable::GetScore(f) => f(&ctx, sfunc, value),
            _ => Err(wrong_callable(GET_SCORE, "?")),
        }
    })
}

/// Embedded SFunc selected by the given selector (I-parent) values.
pub fn gen_sf(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    i_values: &[Value],
) -> Result<SFunc> {
    drive(registry, policy, GEN_SF, sfunc, |ctx, callable| match callable {
        OpCallable::GenSf(f) => f(&ctx, sfunc, i_values),
        _ => Err(wrong_callable(GEN_SF, "?")),
    })
}

/// π message for `sfunc` over `range`, from parent π messages.
pub fn compute_pi(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    range: &[Value],
    parent_ranges: &[Vec<Value>],
    incoming_pis: &[Dist],
) -> Result<Dist> {
    drive(registry, policy, COMPUTE_PI, sfunc, |ctx, callable| {
        match callable {
            OpCallable::ComputePi(f) => f(&ctx, sfunc, range, parent_ranges, incoming_pis),
            _ => Err(wrong_callable(COMPUTE_PI, "?")),
        }
    })
}

/// λ message to the parent at `target_parent`, from a λ over `range` and π
/// messages of the other parents.
pub fn send_lambda(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    lambda: &Score,
    range: &[Value],
    parent_ranges: &[Vec<Value>],
    incoming_pis: &[Dist],
    target_parent: usize,
) -> Result<Score> {
    drive(registry, policy, SEND_LAMBDA, sfunc, |ctx, callable| {
        match callable {
            OpCallable::SendLambda(f) => f(
                &ctx,
                sfunc,
                lambda,
                range,
                parent_ranges,
                incoming_pis,
                target_parent,
            ),
            _ => Err(wrong_callable(SEND_LAMBDA, "?")),
        }
    })
}

/// Belief (unnormalized product law) from a π-side Dist and a λ-side Score.
pub fn compute_bel(
    registry: &Registry,
    policy: &Policy,
    dist: &Dist,
    score: &Score,
    rng: &mut dyn RngCore,
) -> Result<Score> {
    let subject: SFunc = dist.clone().into();
    drive(registry, policy, COMPUTE_BEL, &subject, |ctx, callable| {
        match callable {
            OpCallable::ComputeBel(f) => f(&ctx, dist, score, rng),
            _ => Err(wrong_callable(COMPUTE_BEL, "?")),
        }
    })
}

/// Input tuple mapping to `observed` under a deterministic SFunc.
pub fn invert(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    observed: &[f64],
) -> Result<Vec<f64>> {
    drive(registry, policy, INVERT, sfunc, |ctx, callable| match callable {
        OpCallable::Invert(f) => f(&ctx, sfunc, observed),
        _ => Err(wrong_callable(INVERT, "?")),
    })
}

/// Semiring factors for `sfunc` over the given variables and finite ranges.
/// For output-producing SFuncs, `vars[0]`/`ranges[0]` name the SFunc's own
/// variable and the rest its parents; Score SFuncs list parents only.
pub fn make_factors(
    registry: &Registry,
    policy: &Policy,
    sfunc: &SFunc,
    semiring: &dyn Semiring,
    vars: &[VarId],
    ranges: &[Vec<Value>],
) -> Result<Vec<Factor>> {
    drive(registry, policy, MAKE_FACTORS, sfunc, |ctx, callable| {
        match callable {
            OpCallable::MakeFactors(f) => f(&ctx, sfunc, semiring, vars, ranges),
            _ => Err(wrong_callable(MAKE_FACTORS, "?")),
        }
    })
}
