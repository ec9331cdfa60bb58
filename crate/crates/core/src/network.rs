//! Directed acyclic networks of SFuncs with evidence bindings and π/λ
//! capability layering.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::kernel::{Policy, Registry};
use crate::ops;
use crate::sfunc::{SFunc, Score};
use crate::value::Value;

/// Index of a variable within its network. Ordering follows insertion order,
/// which also breaks ties deterministically in topological sorts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// Per-variable message-passing capability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerTag {
    PiOnly,
    Bidirectional,
    LambdaOnly,
    /// Neither direction is available (e.g. a score whose own λ path is
    /// blocked below).
    Unsupported,
}

/// A directed acyclic graph assigning parent SFuncs to each SFunc's inputs.
#[derive(Clone, Debug, Default)]
pub struct Network {
    names: Vec<String>,
    nodes: Vec<SFunc>,
    parents: Vec<Vec<VarId>>,
    placeholders: BTreeSet<VarId>,
    outputs: BTreeSet<VarId>,
}

impl Network {
    pub fn builder() -> NetworkBuilder {
        NetworkBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn var_ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.nodes.len()).map(VarId)
    }

    pub fn sfunc(&self, v: VarId) -> &SFunc {
        &self.nodes[v.0]
    }

    pub fn parents(&self, v: VarId) -> &[VarId] {
        &self.parents[v.0]
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(VarId)
    }

    pub fn placeholders(&self) -> &BTreeSet<VarId> {
        &self.placeholders
    }

    pub fn outputs(&self) -> &BTreeSet<VarId> {
        &self.outputs
    }

    pub fn children(&self, v: VarId) -> Vec<VarId> {
        self.var_ids()
            .filter(|c| self.parents(*c).contains(&v))
            .collect()
    }

    /// Replaces the SFunc at `v` (used by parameter learning). Arity must be
    /// preserved.
    pub fn with_sfunc(&self, v: VarId, sfunc: SFunc) -> Result<Network> {
        if sfunc.arity() != self.nodes[v.0].arity() {
            return Err(Error::ArityMismatch {
                kind: sfunc.kind(),
                expected: self.nodes[v.0].arity(),
                got: sfunc.arity(),
            });
        }
        let mut out = self.clone();
        out.nodes[v.0] = sfunc;
        Ok(out)
    }

    /// Structural diagnostics: cycles, arity mismatches, dangling parents,
    /// placeholders with parents. Reports rather than failing.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        for v in self.var_ids() {
            for p in self.parents(v) {
                if p.0 >= self.nodes.len() {
                    diags.push(format!(
                        "variable `{}` references dangling parent id {}",
                        self.name(v),
                        p.0
                    ));
                }
            }
            let expected = self.sfunc(v).arity();
            let got = self.parents(v).len();
            if expected != got && !self.placeholders.contains(&v) {
                diags.push(format!(
                    "variable `{}` declares {expected} inputs but has {got} parents",
                    self.name(v)
                ));
            }
            if self.placeholders.contains(&v) && !self.parents(v).is_empty() {
                diags.push(format!(
                    "placeholder `{}` must not have parents",
                    self.name(v)
                ));
            }
        }
        if let Err(cycle_vars) = self.try_topological_order() {
            let names: Vec<&str> = cycle_vars.iter().map(|v| self.name(*v)).collect();
            diags.push(format!("cycle involving {}", names.join(", ")));
        }
        diags
    }

    fn try_topological_order(&self) -> std::result::Result<Vec<VarId>, Vec<VarId>> {
        let mut in_deg: Vec<usize> = self
            .var_ids()
            .map(|v| self.parents(v).iter().filter(|p| p.0 < self.len()).count())
            .collect();
        let mut ready: BinaryHeap<Reverse<VarId>> = in_deg
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == 0)
            .map(|(i, _)| Reverse(VarId(i)))
            .collect();
        let children: HashMap<VarId, Vec<VarId>> = {
            let mut m: HashMap<VarId, Vec<VarId>> = HashMap::new();
            for v in self.var_ids() {
                for p in self.parents(v) {
                    if p.0 < self.len() {
                        m.entry(*p).or_default().push(v);
                    }
                }
            }
            m
        };
        let mut order = Vec::with_capacity(self.len());
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            if let Some(cs) = children.get(&v) {
                for c in cs {
                    in_deg[c.0] -= 1;
                    if in_deg[c.0] == 0 {
                        ready.push(Reverse(*c));
                    }
                }
            }
        }
        if order.len() == self.len() {
            Ok(order)
        } else {
            let stuck: Vec<VarId> = self
                .var_ids()
                .filter(|v| !order.contains(v))
                .collect();
            Err(stuck)
        }
    }

    /// Every node after all its parents; ties broken by variable id.
    pub fn topological_order(&self) -> Result<Vec<VarId>> {
        self.try_topological_order().map_err(|stuck| {
            Error::InvalidNetwork(vec![format!(
                "cycle involving {}",
                stuck
                    .iter()
                    .map(|v| self.name(*v).to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )])
        })
    }

    /// Ancestral sampling in topological order. Values must be supplied for
    /// every placeholder; Score nodes produce no value and are skipped.
    pub fn sample(
        &self,
        placeholder_values: &BTreeMap<VarId, Value>,
        registry: &Registry,
        policy: &Policy,
        rng: &mut dyn RngCore,
    ) -> Result<BTreeMap<VarId, Value>> {
        registry.ensure_frozen()?;
        let mut out = BTreeMap::new();
        for v in self.topological_order()? {
            if self.placeholders.contains(&v) {
                let val = placeholder_values
                    .get(&v)
                    .ok_or_else(|| Error::MissingPlaceholder(self.name(v).to_string()))?;
                out.insert(v, val.clone());
                continue;
            }
            if self.sfunc(v).is_score() {
                continue;
            }
            let parent_vals: Vec<Value> = self
                .parents(v)
                .iter()
                .map(|p| out.get(p).cloned().ok_or(Error::Evidence(format!(
                    "parent `{}` of `{}` has no sampled value (is it a score?)",
                    self.name(*p),
                    self.name(v)
                ))))
                .collect::<Result<_>>()?;
            let val = ops::sample(registry, policy, self.sfunc(v), &parent_vals, rng)?;
            out.insert(v, val);
        }
        Ok(out)
    }

    /// Per-variable π/λ capability against a frozen registry.
    ///
    /// A variable is π-capable iff its SFunc supports `compute_pi` and all its
    /// ancestors are π-capable. It is λ-capable iff it can send λ to its
    /// parents (vacuous for parentless nodes) and every descendant along
    /// child edges is λ-capable.
    pub fn classify_layers(&self, registry: &Registry) -> Result<BTreeMap<VarId, LayerTag>> {
        registry.ensure_frozen()?;
        let order = self.topological_order()?;

        let mut pi_ok: BTreeMap<VarId, bool> = BTreeMap::new();
        for v in &order {
            let own = registry.supports(ops::COMPUTE_PI, self.sfunc(*v).kind());
            let inherited = self.parents(*v).iter().all(|p| pi_ok[p]);
            pi_ok.insert(*v, own && inherited);
        }

        let mut lambda_ok: BTreeMap<VarId, bool> = BTreeMap::new();
        for v in order.iter().rev() {
            let own = self.parents(*v).is_empty()
                || registry.supports(ops::SEND_LAMBDA, self.sfunc(*v).kind());
            let below = self.children(*v).iter().all(|c| lambda_ok[c]);
            lambda_ok.insert(*v, own && below);
        }

        Ok(self
            .var_ids()
            .map(|v| {
                let tag = match (pi_ok[&v], lambda_ok[&v]) {
                    (true, true) => LayerTag::Bidirectional,
                    (true, false) => LayerTag::PiOnly,
                    (false, true) => LayerTag::LambdaOnly,
                    (false, false) => LayerTag::Unsupported,
                };
                (v, tag)
            })
            .collect())
    }

    /// Whether the undirected skeleton is acyclic (belief propagation is
    /// exact on polytrees).
    pub fn is_polytree(&self) -> bool {
        let mut dsu: Vec<usize> = (0..self.len()).collect();
        fn find(dsu: &mut Vec<usize>, i: usize) -> usize {
            if dsu[i] != i {
                let r = find(dsu, dsu[i]);
                dsu[i] = r;
            }
            dsu[i]
        }
        for v in self.var_ids() {
            for p in self.parents(v) {
                let a = find(&mut dsu, v.0);
                let b = find(&mut dsu, p.0);
                if a == b {
                    return false;
                }
                dsu[a] = b;
            }
        }
        true
    }

    /// Working range per variable: hard evidence pins a singleton range,
    /// everything else comes from the support operation in topological order.
    pub fn working_ranges(
        &self,
        evidence: &Evidence,
        registry: &Registry,
        policy: &Policy,
        target_size: usize,
        prior: Option<&BTreeMap<VarId, Vec<Value>>>,
    ) -> Result<BTreeMap<VarId, Vec<Value>>> {
        let mut ranges: BTreeMap<VarId, Vec<Value>> = BTreeMap::new();
        for v in self.topological_order()? {
            if self.sfunc(v).is_score() {
                continue;
            }
            if let Some(EvidenceValue::Exact(val)) = evidence.get(v) {
                ranges.insert(v, vec![val.clone()]);
                continue;
            }
            let parent_ranges: Vec<Vec<Value>> = self
                .parents(v)
                .iter()
                .map(|p| ranges.get(p).cloned().ok_or(Error::InfiniteRange))
                .collect::<Result<_>>()?;
            let prior_support: Vec<Value> = prior
                .and_then(|m| m.get(&v))
                .cloned()
                .unwrap_or_default();
            let support = ops::support(
                registry,
                policy,
                self.sfunc(v),
                &parent_ranges,
                target_size,
                &prior_support,
            )?;
            if support.is_empty() {
                return Err(Error::InvalidNetwork(vec![format!(
                    "variable `{}` has an empty support",
                    self.name(v)
                )]));
            }
            ranges.insert(v, support);
        }
        Ok(ranges)
    }
}

/// Incremental network construction; `build` validates the result.
#[derive(Default)]
pub struct NetworkBuilder {
    net: Network,
}

impl NetworkBuilder {
    pub fn add(&mut self, name: &str, sfunc: SFunc, parents: &[VarId]) -> Result<VarId> {
        if self.net.names.iter().any(|n| n == name) {
            return Err(Error::InvalidNetwork(vec![format!(
                "duplicate variable name `{name}`"
            )]));
        }
        let id = VarId(self.net.nodes.len());
        self.net.names.push(name.to_string());
        self.net.nodes.push(sfunc);
        self.net.parents.push(parents.to_vec());
        Ok(id)
    }

    pub fn placeholder(&mut self, name: &str, sfunc: SFunc) -> Result<VarId> {
        let id = self.add(name, sfunc, &[])?;
        self.net.placeholders.insert(id);
        Ok(id)
    }

    pub fn mark_output(&mut self, v: VarId) {
        self.net.outputs.insert(v);
    }

    pub fn build(self) -> Result<Network> {
        let diags = self.net.validate();
        if diags.is_empty() {
            Ok(self.net)
        } else {
            Err(Error::InvalidNetwork(diags))
        }
    }
}

/// An evidence binding: an exact observed value, or a Score SFunc weighting
/// the variable's values (soft evidence / constraints).
#[derive(Clone, Debug)]
pub enum EvidenceValue {
    Exact(Value),
    Score(Score),
}

/// Evidence bindings for a network.
#[derive(Clone, Debug, Default)]
pub struct Evidence {
    bindings: BTreeMap<VarId, EvidenceValue>,
}

impl Evidence {
    pub fn none() -> Evidence {
        Evidence::default()
    }

    pub fn exact(mut self, v: VarId, value: impl Into<Value>) -> Evidence {
        self.bindings.insert(v, EvidenceValue::Exact(value.into()));
        self
    }

    pub fn score(mut self, v: VarId, score: Score) -> Evidence {
        self.bindings.insert(v, EvidenceValue::Score(score));
        self
    }

    pub fn get(&self, v: VarId) -> Option<&EvidenceValue> {
        self.bindings.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarId, &EvidenceValue)> {
        self.bindings.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_all_hard(&self) -> bool {
        self.bindings
            .values()
            .all(|b| matches!(b, EvidenceValue::Exact(_)))
    }

    /// Checks bindings against the network: bound variables must exist (by
    /// construction of `VarId` they do) and must not be score nodes.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for (v, _) in self.iter() {
            if v.0 >= net.len() {
                return Err(Error::Evidence(format!(
                    "evidence references unknown variable id {}",
                    v.0
                )));
            }
            if net.sfunc(*v).is_score() {
                return Err(Error::Evidence(format!(
                    "evidence bound to score node `{}`",
                    net.name(*v)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::standard_registry;
    use rand::SeedableRng;

    fn flip_chain() -> (Network, VarId, VarId) {
        let mut b = Network::builder();
        let a = b.add("a", SFunc::flip(1.0).unwrap(), &[]).unwrap();
        let c = b
            .add(
                "c",
                SFunc::discrete_cpt(
                    vec![vec![Value::Bool(true)]],
                    vec![Value::Int(0), Value::Int(1)],
                    vec![(vec![Value::Bool(true)], vec![0.0, 1.0])],
                )
                .unwrap(),
                &[a],
            )
            .unwrap();
        (b.build().unwrap(), a, c)
    }

    #[test]
    fn empty_network_is_valid() {
        let net = Network::default();
        assert!(net.validate().is_empty());
    }

    #[test]
    fn self_loop_is_diagnosed_with_name() {
        let mut net = Network::default();
        net.names.push("a".into());
        net.nodes.push(SFunc::det(1, |xs| Ok(xs[0].clone())));
        net.parents.push(vec![VarId(0)]);
        let diags = net.validate();
        assert!(diags.iter().any(|d| d.contains("cycle") && d.contains('a')), "{diags:?}");
    }

    #[test]
    fn arity_mismatch_is_diagnosed() {
        let mut net = Network::default();
        net.names.push("a".into());
        net.nodes.push(SFunc::flip(0.5).unwrap());
        net.parents.push(vec![]);
        net.names.push("two_in".into());
        net.nodes.push(SFunc::det(2, |xs| Ok(xs[0].clone())));
        net.parents.push(vec![VarId(0)]);
        let diags = net.validate();
        assert!(
            diags.iter().any(|d| d.contains("two_in") && d.contains("2 inputs")),
            "{diags:?}"
        );
    }

    #[test]
    fn topological_order_chain_and_diamond() {
        let mut b = Network::builder();
        let a = b.add("a", SFunc::flip(0.5).unwrap(), &[]).unwrap();
        let bb = b
            .add(
                "b",
                SFunc::discrete_cpt(
                    vec![vec![Value::Bool(false), Value::Bool(true)]],
                    vec![Value::Int(0), Value::Int(1)],
                    vec![
                        (vec![Value::Bool(false)], vec![0.5, 0.5]),
                        (vec![Value::Bool(true)], vec![0.1, 0.9]),
                    ],
                )
                .unwrap(),
                &[a],
            )
            .unwrap();
        let net = b.build().unwrap();
        assert_eq!(net.topological_order().unwrap(), vec![a, bb]);
    }

    #[test]
    fn disconnected_nodes_sort_by_id() {
        let mut b = Network::builder();
        let x = b.add("x", SFunc::flip(0.5).unwrap(), &[]).unwrap();
        let y = b.add("y", SFunc::flip(0.5).unwrap(), &[]).unwrap();
        let net = b.build().unwrap();
        assert_eq!(net.topological_order().unwrap(), vec![x, y]);
    }

    #[test]
    fn sampling_constants_and_forced_chains() {
        let reg = standard_registry();
        let pol = Policy::first_registered();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);

        let mut b = Network::builder();
        let k = b.add("k", SFunc::constant(Value::Int(7)), &[]).unwrap();
        let net = b.build().unwrap();
        let s = net.sample(&BTreeMap::new(), &reg, &pol, &mut rng).unwrap();
        assert_eq!(s[&k], Value::Int(7));

        let (chain, _, c) = flip_chain();
        let s = chain.sample(&BTreeMap::new(), &reg, &pol, &mut rng).unwrap();
        assert_eq!(s[&c], Value::Int(1));
    }

    #[test]
    fn missing_placeholder_value_errors() {
        let mut b = Network::builder();
        b.placeholder("in", SFunc::constant(Value::Int(0))).unwrap();
        let net = b.build().unwrap();
        let reg = standard_registry();
        let pol = Policy::first_registered();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let err = net.sample(&BTreeMap::new(), &reg, &pol, &mut rng).unwrap_err();
        assert!(matches!(err, Error::MissingPlaceholder(_)));
    }

    #[test]
    fn polytree_detection() {
        let (chain, _, _) = flip_chain();
        assert!(chain.is_polytree());

        // Diamond a -> {b, c} -> d has a skeleton cycle.
        let mut b = Network::builder();
        let a = b.add("a", SFunc::flip(0.5).unwrap(), &[]).unwrap();
        let range = vec![Value::Bool(false), Value::Bool(true)];
        let cpt1 = SFunc::discrete_cpt(
            vec![range.clone()],
            range.clone(),
            vec![
                (vec![Value::Bool(false)], vec![0.5, 0.5]),
                (vec![Value::Bool(true)], vec![0.2, 0.8]),
            ],
        )
        .unwrap();
        let bb = b.add("b", cpt1.clone(), &[a]).unwrap();
        let cc = b.add("c", cpt1, &[a]).unwrap();
        let cpt2 = SFunc::discrete_cpt(
            vec![range.clone(), range.clone()],
            range.clone(),
            vec![
                (vec![Value::Bool(false), Value::Bool(false)], vec![0.9, 0.1]),
                (vec![Value::Bool(false), Value::Bool(true)], vec![0.5, 0.5]),
                (vec![Value::Bool(true), Value::Bool(false)], vec![0.4, 0.6]),
                (vec![Value::Bool(true), Value::Bool(true)], vec![0.2, 0.8]),
            ],
        )
        .unwrap();
        b.add("d", cpt2, &[bb, cc]).unwrap();
        let net = b.build().unwrap();
        assert!(!net.is_polytree());
    }
}
