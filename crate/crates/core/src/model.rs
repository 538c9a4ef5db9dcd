//! Problem instances: agents, task types, edges, arrival schedules.
//!
//! Time slots are 0-based in code (`0..horizon`). Occupation lengths are
//! 1-based durations: an agent that accepts at slot `t` with occupation `l`
//! is back in the market at slot `t + l`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::ModelError;
use crate::rng::stream_rng;

/// Tolerance for probability sums (pmf totals, arrival column sums).
pub const PROB_TOL: f64 = 1e-9;

/// A rejection budget: a finite count or the unlimited sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Budget {
    Finite(u32),
    Unlimited,
}

impl Budget {
    pub fn is_unlimited(self) -> bool {
        matches!(self, Budget::Unlimited)
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Budget::Finite(d) => Some(d),
            Budget::Unlimited => None,
        }
    }

    /// Budget after one rejection. Unlimited stays unlimited.
    pub fn decremented(self) -> Budget {
        match self {
            Budget::Finite(d) => Budget::Finite(d.saturating_sub(1)),
            Budget::Unlimited => Budget::Unlimited,
        }
    }

    pub fn is_exhausted(self) -> bool {
        self == Budget::Finite(0)
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(d) => write!(f, "{d}"),
            Budget::Unlimited => f.write_str("inf"),
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Budget::Finite(d) => s.serialize_u32(*d),
            Budget::Unlimited => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BudgetVisitor;
        impl Visitor<'_> for BudgetVisitor {
            type Value = Budget;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Budget, E> {
                u32::try_from(v)
                    .map(Budget::Finite)
                    .map_err(|_| E::custom("budget out of range"))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Budget, E> {
                if v < 0 {
                    return Err(E::custom("budget must be non-negative"));
                }
                self.visit_u64(v as u64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Budget, E> {
                match v {
                    "inf" | "infinity" | "unlimited" => Ok(Budget::Unlimited),
                    _ => v
                        .parse::<u32>()
                        .map(Budget::Finite)
                        .map_err(|_| E::custom(format!("invalid budget {v:?}"))),
                }
            }
        }
        d.deserialize_any(BudgetVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTypeSpec {
    pub id: String,
    pub capacity: u32,
}

/// Distribution of the occupation time, as a sparse map from duration to mass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OccupationPmf {
    #[serde(with = "string_keys")]
    pub masses: BTreeMap<usize, f64>,
}

impl OccupationPmf {
    pub fn point(len: usize) -> Self {
        OccupationPmf {
            masses: BTreeMap::from([(len, 1.0)]),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut masses = BTreeMap::new();
        for (l, m) in pairs {
            *masses.entry(l).or_insert(0.0) += m;
        }
        OccupationPmf { masses }
    }

    pub fn mass(&self, len: usize) -> f64 {
        self.masses.get(&len).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    /// Dense pmf over `0..=horizon`; index 0 is always zero.
    pub fn dense(&self, horizon: usize) -> Vec<f64> {
        let mut out = vec![0.0; horizon + 1];
        for (&l, &m) in &self.masses {
            if (1..=horizon).contains(&l) {
                out[l] += m;
            }
        }
        out
    }

    /// `tail[k] = Pr[C >= k]` for `k` in `0..=horizon + 1`.
    pub fn tail(&self, horizon: usize) -> Vec<f64> {
        let dense = self.dense(horizon);
        let mut tail = vec![0.0; horizon + 2];
        for k in (1..=horizon).rev() {
            tail[k] = tail[k + 1] + dense[k];
        }
        tail[0] = tail[1];
        tail
    }
}

mod string_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), *v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("occupation key {k:?} is not an integer")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub agent: String,
    pub task_type: String,
    pub weight: f64,
    pub accept_prob: f64,
    pub occupation: OccupationPmf,
}

/// Arrival probabilities `probs[v][t]`, one row per task type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArrivalSchedule {
    pub probs: Vec<Vec<f64>>,
}

impl ArrivalSchedule {
    pub fn n_types(&self) -> usize {
        self.probs.len()
    }

    pub fn horizon(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn prob(&self, v: usize, t: usize) -> f64 {
        self.probs[v][t]
    }

    pub fn column_sum(&self, t: usize) -> f64 {
        self.probs.iter().map(|row| row[t]).sum()
    }

    /// True when every slot shares the same distribution.
    pub fn is_stationary(&self, tol: f64) -> bool {
        self.probs
            .iter()
            .all(|row| row.iter().all(|&p| (p - row[0]).abs() <= tol))
    }
}

/// One realized arrival sequence: `slots[t]` is the arrived type, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    pub slots: Vec<Option<usize>>,
}

impl ArrivalSequence {
    pub fn empty(horizon: usize) -> Self {
        ArrivalSequence {
            slots: vec![None; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub agents: Vec<AgentSpec>,
    pub task_types: Vec<TaskTypeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub horizon: usize,
    pub arrival: ArrivalSchedule,
}

/// A broken invariant, reported as data.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Index view of an instance: edge endpoints and incidence lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub edge_agent: Vec<usize>,
    pub edge_type: Vec<usize>,
    /// Edges incident to each agent, ascending edge index.
    pub agent_edges: Vec<Vec<usize>>,
    /// Edges incident to each task type, ascending edge index.
    pub type_edges: Vec<Vec<usize>>,
}

impl Graph {
    pub fn n_edges(&self) -> usize {
        self.edge_agent.len()
    }

    pub fn edge_between(&self, agent: usize, task_type: usize) -> Option<usize> {
        self.agent_edges[agent]
            .iter()
            .copied()
            .find(|&e| self.edge_type[e] == task_type)
    }
}

impl Instance {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_types(&self) -> usize {
        self.task_types.len()
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolve edge endpoints to indices. Fails on dangling references.
    pub fn graph(&self) -> Result<Graph, ModelError> {
        let agent_ix: HashMap<&str, usize> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect();
        let type_ix: HashMap<&str, usize> = self
            .task_types
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect();
        let mut g = Graph {
            edge_agent: Vec::with_capacity(self.edges.len()),
            edge_type: Vec::with_capacity(self.edges.len()),
            agent_edges: vec![Vec::new(); self.agents.len()],
            type_edges: vec![Vec::new(); self.task_types.len()],
        };
        for (e, edge) in self.edges.iter().enumerate() {
            let u = *agent_ix
                .get(edge.agent.as_str())
                .ok_or_else(|| ModelError::UnknownAgent(edge.agent.clone()))?;
            let v = *type_ix
                .get(edge.task_type.as_str())
                .ok_or_else(|| ModelError::UnknownTaskType(edge.task_type.clone()))?;
            g.edge_agent.push(u);
            g.edge_type.push(v);
            g.agent_edges[u].push(e);
            g.type_edges[v].push(e);
        }
        Ok(g)
    }

    /// Known-i.i.d. arrivals: every slot has the same type distribution.
    pub fn is_stationary(&self) -> bool {
        self.arrival.is_stationary(1e-12)
    }

    /// No agent ever returns within the horizon: every occupation is `T`.
    pub fn is_non_reusable(&self) -> bool {
        self.edges
            .iter()
            .all(|e| (e.occupation.mass(self.horizon) - 1.0).abs() <= 1e-12)
    }

    pub fn max_budget(&self) -> Budget {
        self.agents
            .iter()
            .map(|a| a.budget)
            .max()
            .unwrap_or(Budget::Finite(0))
    }
}

/// Check every structural and numeric invariant of an instance.
pub fn validate_instance(inst: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, message: String| out.push(Violation { field, message });
    let horizon = inst.horizon;

    if horizon < 1 {
        push("horizon".into(), format!("must be >= 1, got {horizon}"));
    }

    let mut seen = HashSet::new();
    for (i, a) in inst.agents.iter().enumerate() {
        if !seen.insert(a.id.as_str()) {
            push(format!("agents[{i}].id"), format!("duplicate agent id {:?}", a.id));
        }
        if a.budget.is_exhausted() {
            push(format!("agents[{i}].budget"), "must be >= 1 (normalize first)".into());
        }
    }
    let mut seen = HashSet::new();
    for (i, v) in inst.task_types.iter().enumerate() {
        if !seen.insert(v.id.as_str()) {
            push(format!("task_types[{i}].id"), format!("duplicate task type id {:?}", v.id));
        }
        if v.capacity < 1 {
            push(format!("task_types[{i}].capacity"), "must be >= 1".into());
        }
    }

    let agent_ids: HashSet<&str> = inst.agents.iter().map(|a| a.id.as_str()).collect();
    let type_ids: HashSet<&str> = inst.task_types.iter().map(|v| v.id.as_str()).collect();
    let mut pairs = HashSet::new();
    for (i, e) in inst.edges.iter().enumerate() {
        if !agent_ids.contains(e.agent.as_str()) {
            push(format!("edges[{i}].agent"), format!("unknown agent {:?}", e.agent));
        }
        if !type_ids.contains(e.task_type.as_str()) {
            push(format!("edges[{i}].task_type"), format!("unknown task type {:?}", e.task_type));
        }
        if !pairs.insert((e.agent.as_str(), e.task_type.as_str())) {
            push(
                format!("edges[{i}]"),
                format!("duplicate edge ({:?}, {:?})", e.agent, e.task_type),
            );
        }
        if !(e.weight.is_finite() && e.weight >= 0.0) {
            push(format!("edges[{i}].weight"), format!("must be finite and >= 0, got {}", e.weight));
        }
        if !(0.0..=1.0).contains(&e.accept_prob) {
            push(
                format!("edges[{i}].accept_prob"),
                format!("must lie in [0, 1], got {}", e.accept_prob),
            );
        }
        let pmf = &e.occupation;
        if let Some((&l, _)) = pmf.masses.iter().find(|(&l, _)| l < 1 || l > horizon) {
            push(
                format!("edges[{i}].occupation"),
                format!("support must lie in [1, {horizon}], found {l}"),
            );
        }
        if pmf.masses.values().any(|m| !(m.is_finite() && *m >= 0.0)) {
            push(format!("edges[{i}].occupation"), "masses must be finite and >= 0".into());
        }
        let total = pmf.total();
        if (total - 1.0).abs() > PROB_TOL {
            push(format!("edges[{i}].occupation"), format!("masses sum to {total}, expected 1"));
        }
    }

    let sched = &inst.arrival;
    if sched.probs.len() != inst.task_types.len() {
        push(
            "arrival".into(),
            format!("expected {} rows, got {}", inst.task_types.len(), sched.probs.len()),
        );
    }
    let mut shape_ok = true;
    for (v, row) in sched.probs.iter().enumerate() {
        if row.len() != horizon {
            shape_ok = false;
            push(format!("arrival[{v}]"), format!("expected {horizon} columns, got {}", row.len()));
        }
        for (t, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                push(format!("arrival[{v}][{}]", t + 1), format!("must lie in [0, 1], got {p}"));
            }
        }
    }
    if shape_ok {
        for t in 0..horizon {
            let s = sched.column_sum(t);
            if s > 1.0 + PROB_TOL {
                push(format!("arrival column {}", t + 1), format!("sums to {s}, must be <= 1"));
            }
        }
    }
    out
}

/// Replace zero budgets: such an agent can only ever take certain-accept
/// edges, so drop its other edges and give it a budget of one.
pub fn normalize_instance(inst: &Instance) -> Instance {
    let zero: HashSet<&str> = inst
        .agents
        .iter()
        .filter(|a| a.budget.is_exhausted())
        .map(|a| a.id.as_str())
        .collect();
    if zero.is_empty() {
        return inst.clone();
    }
    let mut out = inst.clone();
    out.edges
        .retain(|e| !zero.contains(e.agent.as_str()) || e.accept_prob >= 1.0);
    for a in &mut out.agents {
        if a.budget.is_exhausted() {
            a.budget = Budget::Finite(1);
        }
    }
    out
}

/// Draw one arrival sequence, independently per slot.
pub fn sample_arrival_sequence(sched: &ArrivalSchedule, seed: u64) -> ArrivalSequence {
    let mut rng = stream_rng(seed, 0, 0);
    sample_arrival_sequence_with(sched, sched.horizon(), &mut rng)
}

/// Like [`sample_arrival_sequence`] with an explicit horizon (a schedule with
/// no task types carries none) and a caller-owned generator.
pub fn sample_arrival_sequence_with<R: Rng + ?Sized>(
    sched: &ArrivalSchedule,
    horizon: usize,
    rng: &mut R,
) -> ArrivalSequence {
    let slots = (0..horizon)
        .map(|t| {
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            for (v, row) in sched.probs.iter().enumerate() {
                acc += row[t];
                if r < acc {
                    return Some(v);
                }
            }
            None
        })
        .collect();
    ArrivalSequence { slots }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Instance {
        Instance {
            agents: vec![AgentSpec { id: "u".into(), budget: Budget::Finite(1) }],
            task_types: vec![TaskTypeSpec { id: "v".into(), capacity: 1 }],
            edges: vec![EdgeSpec {
                agent: "u".into(),
                task_type: "v".into(),
                weight: 1.0,
                accept_prob: 0.5,
                occupation: OccupationPmf::point(1),
            }],
            horizon: 1,
            arrival: ArrivalSchedule { probs: vec![vec![1.0]] },
        }
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate_instance(&tiny()).is_empty());
    }

    #[test]
    fn accept_prob_out_of_range_is_reported() {
        let mut inst = tiny();
        inst.edges[0].accept_prob = 1.5;
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert!(v[0].field.contains("accept_prob"), "{v:?}");
    }

    #[test]
    fn overfull_arrival_column_is_reported() {
        let mut inst = tiny();
        inst.horizon = 3;
        inst.edges[0].occupation = OccupationPmf::point(3);
        inst.task_types.push(TaskTypeSpec { id: "w".into(), capacity: 1 });
        inst.arrival.probs = vec![vec![0.5, 0.5, 0.6], vec![0.5, 0.5, 0.6]];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("column 3"), "{v:?}");
    }

    #[test]
    fn dangling_and_duplicate_edges_are_reported() {
        let mut inst = tiny();
        inst.edges.push(inst.edges[0].clone());
        inst.edges.push(EdgeSpec { agent: "ghost".into(), ..inst.edges[0].clone() });
        let v = validate_instance(&inst);
        assert!(v.iter().any(|x| x.message.contains("duplicate edge")));
        assert!(v.iter().any(|x| x.field == "edges[2].agent"));
        assert!(inst.graph().is_err());
    }

    #[test]
    fn pmf_support_and_mass_checked() {
        let mut inst = tiny();
        inst.edges[0].occupation = OccupationPmf::from_pairs([(1, 0.5), (2, 0.4)]);
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn normalize_drops_uncertain_edges_of_zero_budget_agents() {
        let mut inst = tiny();
        inst.horizon = 2;
        inst.arrival.probs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        inst.agents[0].budget = Budget::Finite(0);
        inst.task_types.push(TaskTypeSpec { id: "w".into(), capacity: 1 });
        inst.edges.push(EdgeSpec {
            task_type: "w".into(),
            accept_prob: 1.0,
            ..inst.edges[0].clone()
        });
        let n = normalize_instance(&inst);
        assert_eq!(n.agents[0].budget, Budget::Finite(1));
        assert_eq!(n.edges.len(), 1);
        assert_eq!(n.edges[0].accept_prob, 1.0);
        assert_eq!(normalize_instance(&n), n);
        assert!(validate_instance(&n).is_empty());
    }

    #[test]
    fn normalize_keeps_agent_with_no_certain_edges() {
        let mut inst = tiny();
        inst.agents[0].budget = Budget::Finite(0);
        let n = normalize_instance(&inst);
        assert_eq!(n.agents.len(), 1);
        assert_eq!(n.agents[0].budget, Budget::Finite(1));
        assert!(n.edges.is_empty());
    }

    #[test]
    fn normalize_is_identity_on_positive_budgets() {
        let inst = tiny();
        assert_eq!(normalize_instance(&inst), inst);
    }

    #[test]
    fn deterministic_column_always_sampled() {
        let sched = ArrivalSchedule { probs: vec![vec![1.0]] };
        for seed in 0..50 {
            assert_eq!(sample_arrival_sequence(&sched, seed).slots, vec![Some(0)]);
        }
        let zero = ArrivalSchedule { probs: vec![vec![0.0; 3]] };
        assert_eq!(sample_arrival_sequence(&zero, 7).slots, vec![None, None, None]);
    }

    #[test]
    fn json_uses_string_occupation_keys_and_inf_budget() {
        let mut inst = tiny();
        inst.agents[0].budget = Budget::Unlimited;
        inst.horizon = 12;
        inst.arrival.probs = vec![vec![0.1; 12]];
        inst.edges[0].occupation = OccupationPmf::from_pairs([(2, 0.5), (10, 0.5)]);
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"inf\""));
        assert!(text.find("\"2\"").unwrap() < text.find("\"10\"").unwrap());
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn tail_probabilities() {
        let pmf = OccupationPmf::from_pairs([(1, 0.5), (2, 0.5)]);
        let tail = pmf.tail(3);
        assert_eq!(tail, vec![1.0, 1.0, 0.5, 0.0, 0.0]);
    }
}
