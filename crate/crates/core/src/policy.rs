//! Online policies: the value-guided rounding, its non-adaptive variant,
//! greedy by expected weight, and uniform random.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::decomposition::{build_sampling_tables, SamplingTable};
use crate::dp::{compute_value_tables, decide_assignment, Decision, ValueTables};
use crate::error::{PolicyError, PrepareError};
use crate::lp::{solve_instance, LpModel, LpSolution};
use crate::model::{normalize_instance, validate_instance, Budget, Graph, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Proposed,
    NAdap,
    Greedy,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Proposed, PolicyKind::NAdap, PolicyKind::Greedy, PolicyKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::NAdap => "nadap",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Random => "random",
        }
    }

    /// Stable index used to key random streams.
    pub fn stream_id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

/// Everything the policies and the simulator need, derived once per
/// instance.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: Instance,
    pub graph: Graph,
    pub model: LpModel,
    pub lp: LpSolution,
    pub sampling: SamplingTable,
    pub tables: ValueTables,
    /// Per type, incident edges by `w q` descending then agent index.
    pub greedy_order: Vec<Vec<usize>>,
    /// Per edge, `Pr[C <= l]` for `l = 0..=T`.
    pub occupation_cdf: Vec<Vec<f64>>,
}

impl Prepared {
    /// Validate, normalize, solve the LP and build all tables.
    pub fn new(inst: &Instance) -> Result<Self, PrepareError> {
        let violations = validate_instance(inst);
        if !violations.is_empty() {
            return Err(PrepareError::Invalid(violations));
        }
        let instance = normalize_instance(inst);
        let (model, lp) = solve_instance(&instance)?;
        Self::with_solution(instance, model, lp)
    }

    /// Build tables against a given LP point of a normalized instance.
    pub fn with_solution(
        instance: Instance,
        model: LpModel,
        lp: LpSolution,
    ) -> Result<Self, PrepareError> {
        let graph = instance.graph()?;
        let sampling = build_sampling_tables(&lp, &instance)?;
        let tables = compute_value_tables(&instance, &lp);
        let greedy_order = graph
            .type_edges
            .iter()
            .map(|edges| {
                let mut order = edges.clone();
                let score = |e: usize| instance.edges[e].weight * instance.edges[e].accept_prob;
                order.sort_by(|&a, &b| {
                    score(b)
                        .total_cmp(&score(a))
                        .then(graph.edge_agent[a].cmp(&graph.edge_agent[b]))
                });
                order
            })
            .collect();
        let occupation_cdf = instance
            .edges
            .iter()
            .map(|e| {
                let mut acc = 0.0;
                e.occupation
                    .dense(instance.horizon)
                    .into_iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Prepared { instance, graph, model, lp, sampling, tables, greedy_order, occupation_cdf })
    }

    pub fn lp_objective(&self) -> f64 {
        self.lp.objective
    }
}

/// Mutable per-agent state during one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentRuntime {
    pub remaining: Budget,
    /// Unavailable while `t < busy_until`.
    pub busy_until: usize,
    pub departed: bool,
}

impl AgentRuntime {
    pub fn new(budget: Budget) -> Self {
        AgentRuntime { remaining: budget, busy_until: 0, departed: false }
    }

    pub fn available(&self, t: usize) -> bool {
        !self.departed && self.busy_until <= t
    }
}

/// What a policy sees at one arrival.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub prepared: &'a Prepared,
    pub agents: &'a [AgentRuntime],
    pub t: usize,
    pub arrived: Option<usize>,
}

impl PolicyContext<'_> {
    fn available_edge(&self, e: usize) -> bool {
        self.agents[self.prepared.graph.edge_agent[e]].available(self.t)
    }

    fn capacity(&self, v: usize) -> usize {
        self.prepared.instance.task_types[v].capacity as usize
    }
}

/// Chosen edges for the current arrival; each names its agent.
pub type AssignmentSet = Vec<usize>;

pub fn proposed_step<R: Rng + ?Sized>(ctx: &PolicyContext<'_>, rng: &mut R) -> AssignmentSet {
    let Some(v) = ctx.arrived else { return Vec::new() };
    let prep = ctx.prepared;
    prep.sampling
        .get(v, ctx.t)
        .sample(rng)
        .iter()
        .copied()
        .filter(|&e| ctx.available_edge(e))
        .filter(|&e| {
            let d = ctx.agents[prep.graph.edge_agent[e]].remaining;
            decide_assignment(&prep.tables, e, ctx.t, d) == Ok(Decision::Assign)
        })
        .collect()
}

pub fn nadap_step<R: Rng + ?Sized>(ctx: &PolicyContext<'_>, rng: &mut R) -> AssignmentSet {
    let Some(v) = ctx.arrived else { return Vec::new() };
    ctx.prepared
        .sampling
        .get(v, ctx.t)
        .sample(rng)
        .iter()
        .copied()
        .filter(|&e| ctx.available_edge(e))
        .collect()
}

pub fn greedy_step(ctx: &PolicyContext<'_>) -> AssignmentSet {
    let Some(v) = ctx.arrived else { return Vec::new() };
    ctx.prepared.greedy_order[v]
        .iter()
        .copied()
        .filter(|&e| ctx.available_edge(e))
        .take(ctx.capacity(v))
        .collect()
}

pub fn random_step<R: Rng + ?Sized>(ctx: &PolicyContext<'_>, rng: &mut R) -> AssignmentSet {
    let Some(v) = ctx.arrived else { return Vec::new() };
    let open: Vec<usize> = ctx.prepared.graph.type_edges[v]
        .iter()
        .copied()
        .filter(|&e| ctx.available_edge(e))
        .collect();
    let k = ctx.capacity(v).min(open.len());
    open.choose_multiple(rng, k).copied().collect()
}

pub fn policy_step<R: Rng + ?Sized>(
    kind: PolicyKind,
    ctx: &PolicyContext<'_>,
    rng: &mut R,
) -> AssignmentSet {
    match kind {
        PolicyKind::Proposed => proposed_step(ctx, rng),
        PolicyKind::NAdap => nadap_step(ctx, rng),
        PolicyKind::Greedy => greedy_step(ctx),
        PolicyKind::Random => random_step(ctx, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{AgentSpec, ArrivalSchedule, EdgeSpec, OccupationPmf, TaskTypeSpec};
    use crate::rng::stream_rng;

    fn star(weights_q: &[(f64, f64)], capacity: u32) -> Instance {
        let n = weights_q.len();
        Instance {
            agents: (0..n)
                .map(|i| AgentSpec { id: format!("u{i}"), budget: Budget::Finite(1) })
                .collect(),
            task_types: vec![TaskTypeSpec { id: "v".into(), capacity }],
            edges: weights_q
                .iter()
                .enumerate()
                .map(|(i, &(w, q))| EdgeSpec {
                    agent: format!("u{i}"),
                    task_type: "v".into(),
                    weight: w,
                    accept_prob: q,
                    occupation: OccupationPmf::point(1),
                })
                .collect(),
            horizon: 1,
            arrival: ArrivalSchedule { probs: vec![vec![1.0]] },
        }
    }

    fn fresh(prep: &Prepared) -> Vec<AgentRuntime> {
        prep.instance.agents.iter().map(|a| AgentRuntime::new(a.budget)).collect()
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>(), Ok(k));
        }
        assert_eq!("NAdap".parse::<PolicyKind>(), Ok(PolicyKind::NAdap));
        assert!("best".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn proposed_skips_first_slot_of_trap() {
        let prep = Prepared::new(&fixtures::lp_rounding_trap(100.0)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        for seed in 0..50 {
            let mut rng = stream_rng(seed, 0, 0);
            assert!(proposed_step(&ctx, &mut rng).is_empty());
            assert_eq!(nadap_step(&ctx, &mut rng), vec![0]);
        }
        let none = PolicyContext { arrived: None, ..ctx };
        let mut rng = stream_rng(0, 0, 0);
        for k in PolicyKind::ALL {
            assert!(policy_step(k, &none, &mut rng).is_empty());
        }
    }

    #[test]
    fn proposed_takes_prophet_tie() {
        let prep = Prepared::new(&fixtures::prophet_pair(0.1)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        let mut rng = stream_rng(3, 0, 0);
        assert_eq!(proposed_step(&ctx, &mut rng), vec![0]);
    }

    #[test]
    fn greedy_orders_by_expected_weight() {
        let prep = Prepared::new(&star(&[(0.2, 1.0), (0.9, 1.0)], 1)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        assert_eq!(greedy_step(&ctx), vec![1]);

        let prep = Prepared::new(&star(&[(0.5, 1.0), (1.0, 0.5), (0.1, 1.0)], 2)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        assert_eq!(greedy_step(&ctx), vec![0, 1]);

        let mut busy = agents.clone();
        busy.iter_mut().for_each(|a| a.busy_until = 1);
        let ctx = PolicyContext { agents: &busy, ..ctx };
        assert!(greedy_step(&ctx).is_empty());
    }

    #[test]
    fn nadap_filters_unavailable() {
        let prep = Prepared::new(&star(&[(1.0, 1.0), (1.0, 1.0)], 2)).unwrap();
        let mut agents = fresh(&prep);
        agents[0].departed = true;
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        let mut rng = stream_rng(1, 0, 0);
        assert_eq!(nadap_step(&ctx, &mut rng), vec![1]);
    }

    #[test]
    fn random_singleton_and_uniformity() {
        let prep = Prepared::new(&star(&[(1.0, 1.0)], 2)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        let mut rng = stream_rng(2, 0, 0);
        assert_eq!(random_step(&ctx, &mut rng), vec![0]);

        let prep = Prepared::new(&star(&[(1.0, 1.0); 3], 1)).unwrap();
        let agents = fresh(&prep);
        let ctx = PolicyContext { prepared: &prep, agents: &agents, t: 0, arrived: Some(0) };
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let pick = random_step(&ctx, &mut rng);
            assert_eq!(pick.len(), 1);
            counts[pick[0]] += 1;
        }
        let sd = (1.0 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn proposed_is_subset_of_nadap_under_same_draw() {
        let prep = Prepared::new(&fixtures::delayed_reward(0.1)).unwrap();
        let agents = fresh(&prep);
        for t in 0..3 {
            let ctx = PolicyContext { prepared: &prep, agents: &agents, t, arrived: Some(t) };
            for seed in 0..20 {
                let p = proposed_step(&ctx, &mut stream_rng(seed, 0, 0));
                let n = nadap_step(&ctx, &mut stream_rng(seed, 0, 0));
                assert!(p.iter().all(|e| n.contains(e)));
            }
        }
    }
}
