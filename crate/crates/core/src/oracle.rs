//! Exact offline optimum on tiny instances.
//!
//! The offline player knows the whole arrival sequence but not acceptance or
//! occupation outcomes, so its value is a stochastic dynamic program over the
//! joint agent state. Everything here is exponential and guarded.

use std::collections::HashMap;

use crate::error::OracleError;
use crate::model::{Budget, Graph, Instance};

pub const STATE_LIMIT: u128 = 10_000_000;
pub const SEQUENCE_LIMIT: u128 = 100_000;

const UNLIMITED: u32 = u32::MAX;

/// `(remaining budget, slots until free)`. An agent that can never be
/// offered again is canonicalized to `(0, 0)`.
type AgentState = (u32, u32);

fn subset_count(degree: usize, cap: usize) -> u128 {
    let mut total = 0u128;
    let mut binom = 1u128;
    for k in 0..=cap.min(degree) {
        total = total.saturating_add(binom);
        binom = binom * (degree - k) as u128 / (k + 1) as u128;
    }
    total
}

fn check_state_guard(inst: &Instance, graph: &Graph) -> Result<(), OracleError> {
    let t1 = inst.horizon as u128 + 1;
    let mut size = 1u128;
    for a in &inst.agents {
        let layers = match a.budget {
            Budget::Finite(d) => u128::from(d) + 1,
            Budget::Unlimited => 1,
        };
        size = size.saturating_mul(layers.saturating_mul(t1));
    }
    let subsets = inst
        .task_types
        .iter()
        .enumerate()
        .map(|(v, s)| subset_count(graph.type_edges[v].len(), s.capacity as usize))
        .max()
        .unwrap_or(1);
    let size = size.saturating_mul(subsets);
    if size > STATE_LIMIT {
        return Err(OracleError::TooLarge { what: "offline state space", size, limit: STATE_LIMIT });
    }
    Ok(())
}

struct Solver<'a> {
    inst: &'a Instance,
    graph: &'a Graph,
    seq: &'a [Option<usize>],
    pmfs: Vec<Vec<(usize, f64)>>,
    memo: HashMap<(usize, Vec<AgentState>), f64>,
}

impl Solver<'_> {
    fn new<'a>(inst: &'a Instance, graph: &'a Graph, seq: &'a [Option<usize>]) -> Solver<'a> {
        let pmfs = inst
            .edges
            .iter()
            .map(|e| e.occupation.masses.iter().map(|(&l, &p)| (l, p)).filter(|&(_, p)| p > 0.0).collect())
            .collect();
        Solver { inst, graph, seq, pmfs, memo: HashMap::new() }
    }

    fn initial(&self) -> Vec<AgentState> {
        self.inst
            .agents
            .iter()
            .map(|a| match a.budget {
                Budget::Finite(d) => (d, 0),
                Budget::Unlimited => (UNLIMITED, 0),
            })
            .collect()
    }

    fn value(&mut self, t: usize, state: Vec<AgentState>) -> f64 {
        if t >= self.seq.len() {
            return 0.0;
        }
        let key = (t, state);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let state = key.1.clone();
        let best = match self.seq[t] {
            None => {
                let next = advance(&state);
                self.value(t + 1, next)
            }
            Some(v) => {
                let open: Vec<usize> = self.graph.type_edges[v]
                    .iter()
                    .copied()
                    .filter(|&e| {
                        let (d, wait) = state[self.graph.edge_agent[e]];
                        d > 0 && wait == 0
                    })
                    .collect();
                let cap = self.inst.task_types[v].capacity as usize;
                let mut best = f64::NEG_INFINITY;
                let mut chosen = Vec::with_capacity(cap);
                self.each_subset(&open, 0, cap, &mut chosen, t, &state, &mut best);
                best
            }
        };
        self.memo.insert(key, best);
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn each_subset(
        &mut self,
        open: &[usize],
        from: usize,
        cap: usize,
        chosen: &mut Vec<usize>,
        t: usize,
        state: &[AgentState],
        best: &mut f64,
    ) {
        let mut next = advance(state);
        for &e in chosen.iter() {
            next[self.graph.edge_agent[e]] = (0, 0);
        }
        let v = self.outcomes(chosen, 0, t, state, &mut next);
        *best = best.max(v);
        if chosen.len() == cap {
            return;
        }
        for i in from..open.len() {
            chosen.push(open[i]);
            self.each_subset(open, i + 1, cap, chosen, t, state, best);
            chosen.pop();
        }
    }

    /// Expected immediate plus future value over the outcomes of
    /// `chosen[k..]`, with earlier outcomes already written into `next`.
    fn outcomes(
        &mut self,
        chosen: &[usize],
        k: usize,
        t: usize,
        state: &[AgentState],
        next: &mut Vec<AgentState>,
    ) -> f64 {
        let Some(&e) = chosen.get(k) else {
            return self.value(t + 1, next.clone());
        };
        let u = self.graph.edge_agent[e];
        let edge = &self.inst.edges[e];
        let (q, w) = (edge.accept_prob, edge.weight);
        let horizon = self.seq.len();
        let mut total = 0.0;
        if q > 0.0 {
            let mut accept = 0.0;
            for i in 0..self.pmfs[e].len() {
                let (l, p) = self.pmfs[e][i];
                // Back at slot t + l; unreachable if that is past the horizon.
                next[u] = if t + l < horizon { (state[u].0, (l - 1) as u32) } else { (0, 0) };
                accept += p * self.outcomes(chosen, k + 1, t, state, next);
            }
            total += q * (w + accept);
        }
        if q < 1.0 {
            let d = state[u].0;
            let left = if d == UNLIMITED { d } else { d - 1 };
            next[u] = (left, 0);
            total += (1.0 - q) * self.outcomes(chosen, k + 1, t, state, next);
        }
        next[u] = (0, 0);
        total
    }
}

fn advance(state: &[AgentState]) -> Vec<AgentState> {
    state.iter().map(|&(d, w)| if d == 0 { (0, 0) } else { (d, w.saturating_sub(1)) }).collect()
}

/// `OPT(I)` for one arrival sequence (type index per slot).
pub fn offline_optimal_for_sequence(
    inst: &Instance,
    seq: &[Option<usize>],
) -> Result<f64, OracleError> {
    if seq.len() != inst.horizon {
        return Err(OracleError::BadSequence { got: seq.len(), horizon: inst.horizon });
    }
    let graph = inst.graph().expect("oracle needs an instance with resolved edges");
    check_state_guard(inst, &graph)?;
    let mut solver = Solver::new(inst, &graph, seq);
    let start = solver.initial();
    Ok(solver.value(0, start))
}

/// `E[OPT(I)]` by enumerating every sequence with positive probability.
pub fn expected_offline_optimal(inst: &Instance) -> Result<f64, OracleError> {
    let sequences = (inst.n_types() as u128 + 1).saturating_pow(inst.horizon as u32);
    if sequences > SEQUENCE_LIMIT {
        return Err(OracleError::TooLarge {
            what: "arrival sequence space",
            size: sequences,
            limit: SEQUENCE_LIMIT,
        });
    }
    let graph = inst.graph().expect("oracle needs an instance with resolved edges");
    check_state_guard(inst, &graph)?;

    let horizon = inst.horizon;
    let mut choices: Vec<Vec<(Option<usize>, f64)>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut c: Vec<(Option<usize>, f64)> = (0..inst.n_types())
            .map(|v| (Some(v), inst.arrival.prob(v, t)))
            .filter(|&(_, p)| p > 0.0)
            .collect();
        let none = 1.0 - inst.arrival.column_sum(t);
        if none > 0.0 {
            c.push((None, none));
        }
        choices.push(c);
    }

    let mut total = 0.0;
    let mut seq = vec![None; horizon];
    let mut idx = vec![0usize; horizon];
    if choices.iter().any(Vec::is_empty) {
        return Ok(0.0);
    }
    loop {
        let mut prob = 1.0;
        for t in 0..horizon {
            let (v, p) = choices[t][idx[t]];
            seq[t] = v;
            prob *= p;
        }
        let mut solver = Solver::new(inst, &graph, &seq);
        let start = solver.initial();
        total += prob * solver.value(0, start);
        // Odometer increment over per-slot choices.
        let mut t = horizon;
        loop {
            if t == 0 {
                return Ok(total);
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < choices[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn prophet_pair_sequences() {
        let inst = fixtures::prophet_pair(0.1);
        let ab = offline_optimal_for_sequence(&inst, &[Some(0), Some(1)]).unwrap();
        assert!((ab - 10.0).abs() < 1e-9);
        let ac = offline_optimal_for_sequence(&inst, &[Some(0), Some(2)]).unwrap();
        assert!((ac - 1.0).abs() < 1e-9);
        assert!((expected_offline_optimal(&inst).unwrap() - 1.9).abs() < 1e-9);
    }

    #[test]
    fn delayed_reward_without_rare_arrival() {
        let inst = fixtures::delayed_reward(0.01);
        let v = offline_optimal_for_sequence(&inst, &[Some(0), Some(1), None]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        for eps in [0.1, 0.01] {
            let e = expected_offline_optimal(&fixtures::delayed_reward(eps)).unwrap();
            assert!((e - (7.0 - 3.0 * eps) / 9.0).abs() < 1e-9, "{e}");
        }
    }

    #[test]
    fn trap_expected_optimum() {
        let e = expected_offline_optimal(&fixtures::lp_rounding_trap(100.0)).unwrap();
        assert!((e - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn returning_agent_serves_again() {
        let mut inst = fixtures::single_edge(2.0);
        inst.horizon = 3;
        inst.arrival.probs = vec![vec![1.0; 3]];
        let v = offline_optimal_for_sequence(&inst, &[Some(0); 3]).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let inst = fixtures::prophet_pair(0.1);
        assert_eq!(
            offline_optimal_for_sequence(&inst, &[Some(0)]),
            Err(OracleError::BadSequence { got: 1, horizon: 2 })
        );
        let mut long = fixtures::single_edge(1.0);
        long.horizon = 20;
        long.arrival.probs = vec![vec![0.5; 20]];
        assert!(matches!(expected_offline_optimal(&long), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn subset_counting() {
        assert_eq!(subset_count(3, 2), 1 + 3 + 3);
        assert_eq!(subset_count(2, 5), 4);
        assert_eq!(subset_count(0, 1), 1);
    }
}
