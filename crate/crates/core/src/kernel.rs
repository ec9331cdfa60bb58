//! Operation registry: named operations, their implementations with
//! hyperparameters, performance characteristics (OpPerfs), and policy-driven
//! selection among candidate implementations.
//!
//! SFuncs are defined implicitly by the operations registered for them here;
//! algorithms never match on concrete kinds, they ask the registry. A registry
//! is built single-threaded, then frozen; frozen registries are read-only and
//! safe to share across concurrent inference runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::OpCallable;
use crate::sfunc::{Kind, SFunc};
use crate::value::Value;

/// Declaration of an operation: a unique name plus a human-readable
/// description of how it transforms an SFunc signature into argument/result
/// value spaces.
#[derive(Clone, Debug)]
pub struct OperationDecl {
    pub name: String,
    pub signature_transform: String,
}

impl OperationDecl {
    pub fn new(name: &str, signature_transform: &str) -> OperationDecl {
        OperationDecl {
            name: name.to_string(),
            signature_transform: signature_transform.to_string(),
        }
    }
}

/// A named hyperparameter with its default value. Every hyperparameter has a
/// default; policies may override per call.
#[derive(Clone, Debug)]
pub struct HyperParam {
    pub name: String,
    pub default: Value,
}

impl HyperParam {
    pub fn new(name: &str, default: impl Into<Value>) -> HyperParam {
        HyperParam {
            name: name.to_string(),
            default: default.into(),
        }
    }
}

/// Resolved hyperparameter values for one call.
pub type HyperValues = BTreeMap<String, Value>;

/// One implementation of one operation for one SFunc kind (possibly abstract,
/// matching all descendants).
#[derive(Clone)]
pub struct OpImplRecord {
    pub impl_name: String,
    pub operation: String,
    pub applicable_kind: Kind,
    pub hyperparams: Vec<HyperParam>,
    pub callable: OpCallable,
}

impl OpImplRecord {
    pub fn new(
        impl_name: &str,
        operation: &str,
        applicable_kind: Kind,
        callable: OpCallable,
    ) -> OpImplRecord {
        OpImplRecord {
            impl_name: impl_name.to_string(),
            operation: operation.to_string(),
            applicable_kind,
            hyperparams: Vec::new(),
            callable,
        }
    }

    pub fn with_hyperparams(mut self, hyperparams: Vec<HyperParam>) -> OpImplRecord {
        self.hyperparams = hyperparams;
        self
    }

    pub fn default_hypers(&self) -> HyperValues {
        self.hyperparams
            .iter()
            .map(|h| (h.name.clone(), h.default.clone()))
            .collect()
    }
}

impl fmt::Debug for OpImplRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpImplRecord")
            .field("impl_name", &self.impl_name)
            .field("operation", &self.operation)
            .field("applicable_kind", &self.applicable_kind)
            .field("hyperparams", &self.hyperparams)
            .finish_non_exhaustive()
    }
}

/// Performance measures an implementation may declare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    /// Abstract cost units (operation counts), not wall-clock time.
    Runtime,
    SupportQuality,
    IsLazy,
}

/// Guarantee levels of a support computation, ordered weakest to strongest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SupportQuality {
    BestEffort,
    Incremental,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasureValue {
    Cost(f64),
    Quality(SupportQuality),
    Lazy(bool),
}

impl MeasureValue {
    pub fn as_cost(&self) -> Option<f64> {
        match self {
            MeasureValue::Cost(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_quality(&self) -> Option<SupportQuality> {
        match self {
            MeasureValue::Quality(q) => Some(*q),
            _ => None,
        }
    }

    pub fn as_lazy(&self) -> Option<bool> {
        match self {
            MeasureValue::Lazy(l) => Some(*l),
            _ => None,
        }
    }
}

/// Context handed to performance evaluators. Compositional SFuncs recurse by
/// querying the registry for their components.
pub struct PerfCtx<'a> {
    pub registry: &'a Registry,
    pub sfunc: &'a SFunc,
}

pub type PerfEvaluator = Arc<dyn Fn(&PerfCtx) -> Result<MeasureValue> + Send + Sync>;

/// Declares one performance characteristic of one implementation.
#[derive(Clone)]
pub struct OpPerfRecord {
    pub impl_name: String,
    pub measure: Measure,
    pub evaluator: PerfEvaluator,
}

impl OpPerfRecord {
    pub fn new(
        impl_name: &str,
        measure: Measure,
        evaluator: impl Fn(&PerfCtx) -> Result<MeasureValue> + Send + Sync + 'static,
    ) -> OpPerfRecord {
        OpPerfRecord {
            impl_name: impl_name.to_string(),
            measure,
            evaluator: Arc::new(evaluator),
        }
    }

    /// A constant measure value independent of the SFunc.
    pub fn constant(impl_name: &str, measure: Measure, value: MeasureValue) -> OpPerfRecord {
        OpPerfRecord::new(impl_name, measure, move |_| Ok(value))
    }
}

/// Inputs available to a policy when it picks among candidates.
pub struct SelectionCtx<'a> {
    pub operation: &'a str,
    pub sfunc: &'a SFunc,
    pub candidates: &'a [&'a OpImplRecord],
    pub registry: &'a Registry,
}

impl SelectionCtx<'_> {
    /// Perf query access for selectors; missing records surface as errors.
    pub fn perf(&self, impl_name: &str, measure: Measure) -> Result<MeasureValue> {
        self.registry.query_perf(impl_name, measure, self.sfunc)
    }
}

/// A policy's verdict: which candidate, and which hyperparameters to override.
#[derive(Clone, Debug, Default)]
pub struct Selection {
    pub impl_name: String,
    pub overrides: Vec<(String, Value)>,
}

/// Deterministic rule selecting one of the candidate implementations and
/// setting hyperparameters. Policies must be stateless (or internally
/// synchronized); selection must be a pure function of its inputs.
#[derive(Clone)]
pub struct Policy {
    pub name: String,
    selector: Arc<dyn Fn(&SelectionCtx) -> Selection + Send + Sync>,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Policy({})", self.name)
    }
}

impl Policy {
    pub fn new(
        name: &str,
        selector: impl Fn(&SelectionCtx) -> Selection + Send + Sync + 'static,
    ) -> Policy {
        Policy {
            name: name.to_string(),
            selector: Arc::new(selector),
        }
    }

    /// Default policy: the first-registered matching implementation, default
    /// hyperparameters.
    pub fn first_registered() -> Policy {
        Policy::new("default", |ctx| Selection {
            impl_name: ctx.candidates[0].impl_name.clone(),
            overrides: Vec::new(),
        })
    }

    /// Prefers implementations whose `is_lazy` OpPerf is true; falls back to
    /// the first candidate.
    pub fn prefer_lazy() -> Policy {
        Policy::new("prefer_lazy", |ctx| {
            for c in ctx.candidates {
                if let Ok(v) = ctx.perf(&c.impl_name, Measure::IsLazy) {
                    if v.as_lazy() == Some(true) {
                        return Selection {
                            impl_name: c.impl_name.clone(),
                            overrides: Vec::new(),
                        };
                    }
                }
            }
            Selection {
                impl_name: ctx.candidates[0].impl_name.clone(),
                overrides: Vec::new(),
            }
        })
    }

    /// Prefers the candidate with the strongest declared `support_quality`
    /// tag (undeclared ranks lowest); ties break toward registration order.
    pub fn prefer_exact() -> Policy {
        Policy::new("prefer_exact", |ctx| {
            let mut best: (Option<SupportQuality>, usize) = (None, 0);
            for (i, c) in ctx.candidates.iter().enumerate() {
                let q = ctx
                    .perf(&c.impl_name, Measure::SupportQuality)
                    .ok()
                    .and_then(|v| v.as_quality());
                if q > best.0 {
                    best = (q, i);
                }
            }
            Selection {
                impl_name: ctx.candidates[best.1].impl_name.clone(),
                overrides: Vec::new(),
            }
        })
    }

    pub fn by_name(name: &str) -> Option<Policy> {
        match name {
            "default" => Some(Policy::first_registered()),
            "prefer_lazy" => Some(Policy::prefer_lazy()),
            "prefer_exact" => Some(Policy::prefer_exact()),
            _ => None,
        }
    }

    pub fn select(&self, ctx: &SelectionCtx) -> Selection {
        (self.selector)(ctx)
    }
}

/// The operation registry. Construction is single-threaded; [`freeze`]
/// (`Registry::freeze`) makes it read-only for concurrent use.
#[derive(Default)]
pub struct Registry {
    operations: Vec<OperationDecl>,
    impls: Vec<OpImplRecord>,
    perfs: HashMap<(String, Measure), OpPerfRecord>,
    frozen: bool,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    pub fn register_operation(&mut self, decl: OperationDecl) -> Result<()> {
        self.ensure_mutable()?;
        if self.operations.iter().any(|o| o.name == decl.name) {
            return Err(Error::DuplicateOperation(decl.name));
        }
        self.operations.push(decl);
        Ok(())
    }

    pub fn operation(&self, name: &str) -> Option<&OperationDecl> {
        self.operations.iter().find(|o| o.name == name)
    }

    /// Registers one implementation. The operation must exist and the
    /// implementation name must be unused.
    pub fn register_impl(&mut self, record: OpImplRecord) -> Result<()> {
        self.ensure_mutable()?;
        if self.operation(&record.operation).is_none() {
            return Err(Error::UnknownOperation(record.operation));
        }
        if self.impls.iter().any(|r| r.impl_name == record.impl_name) {
            return Err(Error::DuplicateImplName(record.impl_name));
        }
        self.impls.push(record);
        Ok(())
    }

    pub fn register_perf(&mut self, record: OpPerfRecord) -> Result<()> {
        self.ensure_mutable()?;
        self.perfs
            .insert((record.impl_name.clone(), record.measure), record);
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn ensure_frozen(&self) -> Result<()> {
        if self.frozen {
            Ok(())
        } else {
            Err(Error::RegistryNotFrozen)
        }
    }

    fn ensure_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::RegistryFrozen)
        } else {
            Ok(())
        }
    }

    pub fn impl_by_name(&self, impl_name: &str) -> Option<&OpImplRecord> {
        self.impls.iter().find(|r| r.impl_name == impl_name)
    }

    /// All implementations of `operation` applicable to `kind` or one of its
    /// ancestors, in registration order.
    pub fn find_impls(&self, operation: &str, kind: Kind) -> Vec<&OpImplRecord> {
        self.impls
            .iter()
            .filter(|r| r.operation == operation && kind.is_descendant_of(r.applicable_kind))
            .collect()
    }

    pub fn supports(&self, operation: &str, kind: Kind) -> bool {
        !self.find_impls(operation, kind).is_empty()
    }

    /// Policy-driven choice among the candidates for (operation, sfunc).
    /// Returns the chosen record and its resolved hyperparameters (defaults
    /// overlaid with policy overrides).
    pub fn select_impl(
        &self,
        policy: &Policy,
        operation: &str,
        sfunc: &SFunc,
    ) -> Result<(&OpImplRecord, HyperValues)> {
        let ranked = self.select_ranked(policy, operation, sfunc)?;
        Ok(ranked.into_iter().next().expect("ranked is nonempty"))
    }

    /// Like [`Registry::select_impl`] but also returns the remaining
    /// candidates (registration order) so drivers can fall back when an
    /// implementation declines a call.
    pub fn select_ranked(
        &self,
        policy: &Policy,
        operation: &str,
        sfunc: &SFunc,
    ) -> Result<Vec<(&OpImplRecord, HyperValues)>> {
        let kind = sfunc.kind();
        let candidates = self.find_impls(operation, kind);
        if candidates.is_empty() {
            return Err(Error::UnsupportedOperation {
                operation: operation.to_string(),
                kind,
            });
        }
        let ctx = SelectionCtx {
            operation,
            sfunc,
            candidates: &candidates,
            registry: self,
        };
        let selection = policy.select(&ctx);
        let chosen_idx = candidates
            .iter()
            .position(|c| c.impl_name == selection.impl_name)
            .ok_or_else(|| Error::PolicyOutsideCandidates {
                policy: policy.name.clone(),
                selected: selection.impl_name.clone(),
                operation: operation.to_string(),
            })?;

        let mut out = Vec::with_capacity(candidates.len());
        let chosen = candidates[chosen_idx];
        let mut hypers = chosen.default_hypers();
        for (name, value) in &selection.overrides {
            if hypers.contains_key(name) {
                hypers.insert(name.clone(), value.clone());
            }
        }
        out.push((chosen, hypers));
        for (i, c) in candidates.iter().enumerate() {
            if i != chosen_idx {
                out.push((*c, c.default_hypers()));
            }
        }
        Ok(out)
    }

    /// Evaluates a declared performance characteristic. A missing record is
    /// an `UnknownPerfMeasure` error, distinct from an unsupported operation.
    pub fn query_perf(
        &self,
        impl_name: &str,
        measure: Measure,
        sfunc: &SFunc,
    ) -> Result<MeasureValue> {
        let record = self
            .perfs
            .get(&(impl_name.to_string(), measure))
            .ok_or_else(|| Error::UnknownPerfMeasure {
                impl_name: impl_name.to_string(),
                measure,
            })?;
        (record.evaluator)(&PerfCtx {
            registry: self,
            sfunc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    fn dummy_callable() -> OpCallable {
        OpCallable::Custom(Arc::new(|_, _| Ok(Value::Int(0))))
    }

    fn base_registry() -> Registry {
        let mut reg = Registry::new();
        reg.register_operation(OperationDecl::new(ops::SAMPLE, "(I,O): I -> O"))
            .unwrap();
        reg
    }

    #[test]
    fn register_then_find_round_trips() {
        let mut reg = base_registry();
        reg.register_impl(OpImplRecord::new(
            "sample_flip",
            ops::SAMPLE,
            Kind::Flip,
            dummy_callable(),
        ))
        .unwrap();
        let found = reg.find_impls(ops::SAMPLE, Kind::Flip);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].impl_name, "sample_flip");
    }

    #[test]
    fn duplicate_impl_names_are_rejected() {
        let mut reg = base_registry();
        let rec = OpImplRecord::new("dup", ops::SAMPLE, Kind::Flip, dummy_callable());
        reg.register_impl(rec.clone()).unwrap();
        assert!(matches!(
            reg.register_impl(rec),
            Err(Error::DuplicateImplName(_))
        ));
    }

    #[test]
    fn unknown_operation_is_rejected() {
        let mut reg = base_registry();
        let rec = OpImplRecord::new("x", "no_such_op", Kind::Flip, dummy_callable());
        assert!(matches!(
            reg.register_impl(rec),
            Err(Error::UnknownOperation(_))
        ));
    }

    #[test]
    fn abstract_kind_matches_descendants_in_registration_order() {
        let mut reg = base_registry();
        reg.register_impl(OpImplRecord::new(
            "specialized",
            ops::SAMPLE,
            Kind::Flip,
            dummy_callable(),
        ))
        .unwrap();
        reg.register_impl(OpImplRecord::new(
            "generic",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        let names: Vec<_> = reg
            .find_impls(ops::SAMPLE, Kind::Flip)
            .iter()
            .map(|r| r.impl_name.clone())
            .collect();
        assert_eq!(names, vec!["specialized", "generic"]);
        // Cat only sees the abstract impl.
        let names: Vec<_> = reg
            .find_impls(ops::SAMPLE, Kind::Cat)
            .iter()
            .map(|r| r.impl_name.clone())
            .collect();
        assert_eq!(names, vec!["generic"]);
    }

    #[test]
    fn select_prefers_first_registered_by_default_and_is_deterministic() {
        let mut reg = base_registry();
        reg.register_impl(OpImplRecord::new(
            "a",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        reg.register_impl(OpImplRecord::new(
            "b",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        reg.freeze();
        let sf = SFunc::flip(0.5).unwrap();
        let pol = Policy::first_registered();
        let (rec1, _) = reg.select_impl(&pol, ops::SAMPLE, &sf).unwrap();
        let (rec2, _) = reg.select_impl(&pol, ops::SAMPLE, &sf).unwrap();
        assert_eq!(rec1.impl_name, "a");
        assert_eq!(rec1.impl_name, rec2.impl_name);
    }

    #[test]
    fn selection_closure_property_holds_for_all_builtin_policies() {
        let mut reg = base_registry();
        reg.register_impl(OpImplRecord::new(
            "eager",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        reg.register_impl(OpImplRecord::new(
            "lazy",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        reg.register_perf(OpPerfRecord::constant(
            "eager",
            Measure::IsLazy,
            MeasureValue::Lazy(false),
        ))
        .unwrap();
        reg.register_perf(OpPerfRecord::constant(
            "lazy",
            Measure::IsLazy,
            MeasureValue::Lazy(true),
        ))
        .unwrap();
        reg.freeze();
        let sf = SFunc::flip(0.5).unwrap();
        for pol in [
            Policy::first_registered(),
            Policy::prefer_lazy(),
            Policy::prefer_exact(),
        ] {
            let (rec, _) = reg.select_impl(&pol, ops::SAMPLE, &sf).unwrap();
            let names: Vec<_> = reg
                .find_impls(ops::SAMPLE, sf.kind())
                .iter()
                .map(|r| r.impl_name.clone())
                .collect();
            assert!(names.contains(&rec.impl_name));
        }
        let (lazy_rec, _) = reg
            .select_impl(&Policy::prefer_lazy(), ops::SAMPLE, &sf)
            .unwrap();
        assert_eq!(lazy_rec.impl_name, "lazy");
    }

    #[test]
    fn unsupported_selection_names_operation_and_kind() {
        let mut reg = base_registry();
        reg.freeze();
        let sf = SFunc::flip(0.5).unwrap();
        let err = reg
            .select_impl(&Policy::first_registered(), ops::SAMPLE, &sf)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample") && msg.contains("Flip"), "{msg}");
    }

    #[test]
    fn missing_perf_is_a_distinct_error() {
        let mut reg = base_registry();
        reg.register_impl(OpImplRecord::new(
            "a",
            ops::SAMPLE,
            Kind::Dist,
            dummy_callable(),
        ))
        .unwrap();
        reg.freeze();
        let sf = SFunc::flip(0.5).unwrap();
        assert!(matches!(
            reg.query_perf("a", Measure::Runtime, &sf),
            Err(Error::UnknownPerfMeasure { .. })
        ));
    }

    #[test]
    fn frozen_registry_rejects_registration() {
        let mut reg = base_registry();
        reg.freeze();
        assert!(matches!(
            reg.register_impl(OpImplRecord::new(
                "late",
                ops::SAMPLE,
                Kind::Flip,
                dummy_callable()
            )),
            Err(Error::RegistryFrozen)
        ));
    }

    #[test]
    fn hyperparameters_resolve_defaults_then_policy_overrides() {
        let mut reg = base_registry();
        reg.register_impl(
            OpImplRecord::new("counting", ops::SAMPLE, Kind::Dist, dummy_callable())
                .with_hyperparams(vec![HyperParam::new("count", 100i64)]),
        )
        .unwrap();
        reg.freeze();
        let sf = SFunc::flip(0.5).unwrap();

        let (_, hypers) = reg
            .select_impl(&Policy::first_registered(), ops::SAMPLE, &sf)
            .unwrap();
        assert_eq!(hypers.get("count"), Some(&Value::Int(100)));

        let override_policy = Policy::new("count_override", |ctx| Selection {
            impl_name: ctx.candidates[0].impl_name.clone(),
            overrides: vec![("count".to_string(), Value::Int(7))],
        });
        let (_, hypers) = reg
            .select_impl(&override_policy, ops::SAMPLE, &sf)
            .unwrap();
        assert_eq!(hypers.get("count"), Some(&Value::Int(7)));
    }
}
