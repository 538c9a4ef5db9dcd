//! Backward induction for the per-agent value tables `R` and `Q`.
//!
//! `R[d][t]` is the expected profit an agent with `d` rejections left earns
//! from slot `t` on when it is available at `t` and offered tasks according to
//! the LP point. `Q[d][e][t]` is the value of offering edge `e` at `t`.
//! Slots are 0-based here and `R[d][T] = 0`.

use rayon::prelude::*;

use crate::error::PolicyError;
use crate::lp::LpSolution;
use crate::model::{Budget, Instance};

/// Offer profile of one edge as seen by its agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProfile {
    /// Offer probability per slot.
    pub x: Vec<f64>,
    pub accept_prob: f64,
    pub weight: f64,
    /// `pmf[l] = Pr[C = l]`, index 0 unused.
    pub pmf: Vec<f64>,
}

/// Value tables of a single agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTable {
    pub budget: Budget,
    pub horizon: usize,
    n_edges: usize,
    /// `r[layer][t]`, length `T + 1`.
    r: Vec<Vec<f64>>,
    /// `q[layer][e * T + t]`.
    q: Vec<Vec<f64>>,
}

impl AgentTable {
    fn layer(&self, d: Budget) -> usize {
        match (self.budget, d) {
            (Budget::Unlimited, _) => 0,
            (Budget::Finite(max), Budget::Finite(d)) => {
                assert!(d <= max, "budget {d} above the agent's {max}");
                d as usize
            }
            (Budget::Finite(_), Budget::Unlimited) => {
                panic!("unlimited budget queried on a finite-budget agent")
            }
        }
    }

    /// `R^d_t`; zero for `t >= T`.
    pub fn r(&self, d: Budget, t: usize) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        self.r[self.layer(d)][t]
    }

    /// `Q^d_{e,t}` for the agent's `e`-th edge.
    pub fn q(&self, edge: usize, d: Budget, t: usize) -> f64 {
        self.q[self.layer(d)][edge * self.horizon + t]
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// The agent's expected profit from the first slot with its full budget.
    pub fn start_value(&self) -> f64 {
        self.r(self.budget, 0)
    }
}

/// Run the recursion for one agent over all budget layers.
pub fn single_agent_table(horizon: usize, budget: Budget, edges: &[EdgeProfile]) -> AgentTable {
    let n_layers = match budget {
        Budget::Finite(d) => d as usize + 1,
        Budget::Unlimited => 1,
    };
    let t_len = horizon;
    let mut r = vec![vec![0.0; t_len + 1]; n_layers];
    let mut q = vec![vec![0.0; edges.len() * t_len]; n_layers];
    let first = usize::from(!budget.is_unlimited());
    for layer in first..n_layers {
        for t in (0..t_len).rev() {
            let r_next = r[layer][t + 1];
            let r_reject = if budget.is_unlimited() { r_next } else { r[layer - 1][t + 1] };
            let mut offered = 0.0;
            let mut value = 0.0;
            for (e, edge) in edges.iter().enumerate() {
                let back: f64 = edge
                    .pmf
                    .iter()
                    .enumerate()
                    .skip(1)
                    .take_while(|&(l, _)| t + l < t_len)
                    .map(|(l, p)| p * r[layer][t + l])
                    .sum();
                let qv = edge.accept_prob * (edge.weight + back) + (1.0 - edge.accept_prob) * r_reject;
                q[layer][e * t_len + t] = qv;
                let x = edge.x[t];
                offered += x;
                value += x * qv.max(r_next);
            }
            r[layer][t] = value + (1.0 - offered) * r_next;
        }
    }
    AgentTable { budget, horizon, n_edges: edges.len(), r, q }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub agents: Vec<AgentTable>,
    /// Position of each edge within its agent's table.
    pub edge_local: Vec<usize>,
    pub edge_agent: Vec<usize>,
}

impl ValueTables {
    pub fn r(&self, agent: usize, d: Budget, t: usize) -> f64 {
        self.agents[agent].r(d, t)
    }

    pub fn q(&self, edge: usize, d: Budget, t: usize) -> f64 {
        self.agents[self.edge_agent[edge]].q(self.edge_local[edge], d, t)
    }

    /// `sum_u R^{budget_u}_{u,1}`: the proposed policy's expected profit.
    pub fn expected_profit(&self) -> f64 {
        self.agents.iter().map(AgentTable::start_value).sum()
    }
}

/// Edge profiles of one agent under an LP point.
pub fn agent_profiles(inst: &Instance, sol: &LpSolution, edges: &[usize]) -> Vec<EdgeProfile> {
    edges
        .iter()
        .map(|&e| {
            let spec = &inst.edges[e];
            EdgeProfile {
                x: sol.edge_values(e).to_vec(),
                accept_prob: spec.accept_prob,
                weight: spec.weight,
                pmf: spec.occupation.dense(inst.horizon),
            }
        })
        .collect()
}

pub fn compute_value_tables(inst: &Instance, sol: &LpSolution) -> ValueTables {
    let graph = inst
        .graph()
        .expect("value tables need an instance with resolved edges");
    let agents = inst
        .agents
        .par_iter()
        .enumerate()
        .map(|(u, agent)| {
            let profiles = agent_profiles(inst, sol, &graph.agent_edges[u]);
            single_agent_table(inst.horizon, agent.budget, &profiles)
        })
        .collect();
    let mut edge_local = vec![0; inst.edges.len()];
    for edges in &graph.agent_edges {
        for (i, &e) in edges.iter().enumerate() {
            edge_local[e] = i;
        }
    }
    ValueTables { agents, edge_local, edge_agent: graph.edge_agent }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Assign,
    Skip,
}

/// Assign when `Q^d_{e,t} >= R^d_{u,t+1}`. Equality is judged with a relative
/// tolerance so that exact ties survive LP round-off.
pub fn decide_assignment(
    tables: &ValueTables,
    edge: usize,
    t: usize,
    d: Budget,
) -> Result<Decision, PolicyError> {
    if d.is_exhausted() {
        return Err(PolicyError::ExhaustedBudget);
    }
    let agent = tables.edge_agent[edge];
    let q = tables.q(edge, d, t);
    let r_next = tables.r(agent, d, t + 1);
    let tol = 1e-9 * r_next.abs().max(1.0);
    Ok(if q >= r_next - tol { Decision::Assign } else { Decision::Skip })
}
