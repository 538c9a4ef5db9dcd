//! The offline LP relaxation and its solution.
//!
//! Variables are `x[e, t]`, the probability that the task type of edge `e`
//! arrives at slot `t` and the edge's agent is offered to it. Three row
//! families bound them:
//!
//! * occupancy, per `(agent, t)`: expected number of tasks holding the agent
//!   at `t` is at most one;
//! * budget, per agent: expected rejections plus never-returning
//!   acceptances are at most the rejection budget;
//! * capacity, per `(type, t)`: expected offers at most `p[v, t] * b[v]`.
//!
//! The solve is delegated to `microlp` (sparse revised simplex). Its answer is
//! projected back onto the feasible region before it is handed out, so every
//! downstream consumer sees a point that satisfies all rows up to rounding.

use serde::{Deserialize, Serialize};

use crate::error::LpError;
use crate::model::{Budget, Graph, Instance};

/// Feasibility tolerance for LP rows.
pub const FEAS_TOL: f64 = 1e-7;

const SOLVER_DROP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Occupancy { agent: usize, slot: usize },
    Budget { agent: usize },
    Capacity { task_type: usize, slot: usize },
}

/// One `coeffs . x <= rhs` row. All coefficients are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub kind: RowKind,
    pub coeffs: Vec<(usize, f64)>,
    /// `f64::INFINITY` for the budget row of an unlimited agent.
    pub rhs: f64,
}

impl LpRow {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    pub fn coeff(&self, var: usize) -> f64 {
        self.coeffs
            .iter()
            .filter(|&&(j, _)| j == var)
            .map(|&(_, c)| c)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct LpModel {
    pub horizon: usize,
    pub n_edges: usize,
    pub objective: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LpModel {
    pub fn var(&self, edge: usize, slot: usize) -> usize {
        edge * self.horizon + slot
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation over rows and box bounds (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .rows
            .iter()
            .filter(|r| r.rhs.is_finite())
            .map(|r| r.activity(x) - r.rhs);
        let boxes = x
            .iter()
            .zip(&self.upper)
            .flat_map(|(&v, &ub)| [v - ub, -v]);
        rows.chain(boxes).fold(0.0, f64::max)
    }

    pub fn row(&self, kind: RowKind) -> Option<&LpRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

/// Build the offline LP of an instance. The instance must be normalized.
pub fn build_offline_lp(inst: &Instance) -> Result<LpModel, LpError> {
    if let Some(a) = inst.agents.iter().find(|a| a.budget.is_exhausted()) {
        return Err(LpError::ZeroBudget(a.id.clone()));
    }
    let graph = inst.graph()?;
    let horizon = inst.horizon;
    let n_edges = inst.edges.len();
    let var = |e: usize, t: usize| e * horizon + t;

    let mut objective = vec![0.0; n_edges * horizon];
    let mut upper = vec![0.0; n_edges * horizon];
    let tails: Vec<Vec<f64>> = inst.edges.iter().map(|e| e.occupation.tail(horizon)).collect();
    for (e, edge) in inst.edges.iter().enumerate() {
        let v = graph.edge_type[e];
        for t in 0..horizon {
            objective[var(e, t)] = edge.weight * edge.accept_prob;
            upper[var(e, t)] = inst.arrival.prob(v, t);
        }
    }

    let mut rows = Vec::with_capacity(inst.n_agents() * (horizon + 1) + inst.n_types() * horizon);
    for (u, agent) in inst.agents.iter().enumerate() {
        let incident = &graph.agent_edges[u];
        for t in 0..horizon {
            // Offers at t' <= t still hold the agent at t when C >= t - t' + 1.
            let mut coeffs = Vec::new();
            for &e in incident {
                let q = inst.edges[e].accept_prob;
                for tp in 0..=t {
                    let c = q * tails[e][t - tp + 1];
                    if c != 0.0 {
                        coeffs.push((var(e, tp), c));
                    }
                }
            }
            rows.push(LpRow {
                kind: RowKind::Occupancy { agent: u, slot: t },
                coeffs,
                rhs: 1.0,
            });
        }
        // Rejections, plus acceptances whose occupation runs past the horizon.
        let mut coeffs = Vec::new();
        for &e in incident {
            let q = inst.edges[e].accept_prob;
            for t in 0..horizon {
                let returns_in_time = 1.0 - tails[e][horizon - t];
                let c = 1.0 - q * returns_in_time;
                if c != 0.0 {
                    coeffs.push((var(e, t), c));
                }
            }
        }
        let rhs = match agent.budget {
            Budget::Finite(d) => f64::from(d),
            Budget::Unlimited => f64::INFINITY,
        };
        rows.push(LpRow { kind: RowKind::Budget { agent: u }, coeffs, rhs });
    }
    for (v, spec) in inst.task_types.iter().enumerate() {
        for t in 0..horizon {
            let coeffs = graph.type_edges[v].iter().map(|&e| (var(e, t), 1.0)).collect();
            rows.push(LpRow {
                kind: RowKind::Capacity { task_type: v, slot: t },
                coeffs,
                rhs: inst.arrival.prob(v, t) * f64::from(spec.capacity),
            });
        }
    }

    Ok(LpModel { horizon, n_edges, objective, upper, rows })
}

/// An optimal (or, after [`symmetrize_kiid_solution`], re-averaged) point.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub horizon: usize,
    pub n_edges: usize,
    /// `x[e * horizon + t]`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_residual: f64,
}

impl LpSolution {
    pub fn value(&self, edge: usize, slot: usize) -> f64 {
        self.x[edge * self.horizon + slot]
    }

    pub fn edge_values(&self, edge: usize) -> &[f64] {
        &self.x[edge * self.horizon..(edge + 1) * self.horizon]
    }

    /// Per-agent share of the objective.
    pub fn agent_objective(&self, inst: &Instance, graph: &Graph, agent: usize) -> f64 {
        graph.agent_edges[agent]
            .iter()
            .map(|&e| {
                let edge = &inst.edges[e];
                edge.weight * edge.accept_prob * self.edge_values(e).iter().sum::<f64>()
            })
            .sum()
    }

    fn from_point(model: &LpModel, x: Vec<f64>) -> Self {
        LpSolution {
            horizon: model.horizon,
            n_edges: model.n_edges,
            objective: model.objective_value(&x),
            max_residual: model.max_violation(&x),
            x,
        }
    }
}

/// Clamp to the boxes, then scale down the support of every violated row.
/// Coefficients are non-negative, so shrinking variables never breaks a
/// row that already holds; one pass in row order suffices.
fn project_feasible(model: &LpModel, x: &mut [f64]) {
    for (v, ub) in x.iter_mut().zip(&model.upper) {
        *v = v.clamp(0.0, *ub);
    }
    for row in model.rows.iter().filter(|r| r.rhs.is_finite()) {
        let act = row.activity(x);
        if act > row.rhs {
            let scale = if act > 0.0 { (row.rhs / act).max(0.0) } else { 0.0 };
            for &(j, c) in &row.coeffs {
                if c > 0.0 {
                    x[j] *= scale;
                }
            }
        }
    }
}

pub fn solve_offline_lp(model: &LpModel) -> Result<LpSolution, LpError> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};

    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = model
        .objective
        .iter()
        .zip(&model.upper)
        .map(|(&c, &ub)| problem.add_var(c, (0.0, ub)))
        .collect();
    for row in &model.rows {
        if !row.rhs.is_finite() || row.coeffs.is_empty() {
            continue;
        }
        // Negligible coefficients (far binomial tails) only hurt the
        // factorization; the projection below restores the exact rows.
        let expr: Vec<_> = row
            .coeffs
            .iter()
            .filter(|&&(_, c)| c > SOLVER_DROP_TOL)
            .map(|&(j, c)| (vars[j], c))
            .collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Le, row.rhs);
    }
    let outcome = problem.solve().map_err(|e| match e {
        microlp::Error::Infeasible => LpError::Infeasible,
        microlp::Error::Unbounded => LpError::Unbounded,
        other => LpError::Solver(other.to_string()),
    })?;
    let solution = outcome
        .into_solution()
        .map_err(|_| LpError::Solver("solve interrupted".into()))?;
    let mut x: Vec<f64> = vars.iter().map(|&v| solution.var_value(v)).collect();
    project_feasible(model, &mut x);

    let sol = LpSolution::from_point(model, x);
    let bound: f64 = model
        .objective
        .iter()
        .zip(&model.upper)
        .map(|(c, ub)| c * ub)
        .sum();
    if sol.objective > bound + 1e-6 * bound.max(1.0) {
        return Err(LpError::BoundExceeded { objective: sol.objective, bound });
    }
    Ok(sol)
}

/// Build and solve in one step.
pub fn solve_instance(inst: &Instance) -> Result<(LpModel, LpSolution), LpError> {
    let model = build_offline_lp(inst)?;
    let sol = solve_offline_lp(&model)?;
    Ok((model, sol))
}

/// Average each edge's values over time. For stationary arrivals without
/// reuse the LP is invariant under slot permutations, so the average of an
/// optimal point is optimal and time-invariant.
pub fn symmetrize_kiid_solution(sol: &LpSolution, inst: &Instance) -> Result<LpSolution, LpError> {
    if !inst.is_stationary() {
        return Err(LpError::NotApplicable(
            "arrival distribution differs across slots".into(),
        ));
    }
    if !inst.is_non_reusable() {
        return Err(LpError::NotApplicable(
            "some occupation time can end within the horizon".into(),
        ));
    }
    if sol.horizon != inst.horizon || sol.n_edges != inst.edges.len() {
        return Err(LpError::Mismatch(format!(
            "solution has {} edges x {} slots, instance {} x {}",
            sol.n_edges,
            sol.horizon,
            inst.edges.len(),
            inst.horizon
        )));
    }
    let model = build_offline_lp(inst)?;
    let mut x = sol.x.clone();
    for e in 0..sol.n_edges {
        let vals = sol.edge_values(e);
        let mean = vals.iter().sum::<f64>() / sol.horizon as f64;
        x[e * sol.horizon..(e + 1) * sol.horizon].fill(mean);
    }
    Ok(LpSolution::from_point(&model, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpEntry {
    pub agent: String,
    pub task_type: String,
    /// 1-based slot.
    pub t: usize,
    pub value: f64,
}

/// On-disk form: sparse non-zero entries plus summary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolutionDoc {
    pub objective: f64,
    pub max_residual: f64,
    pub entries: Vec<LpEntry>,
}

impl LpSolution {
    pub fn to_document(&self, inst: &Instance) -> LpSolutionDoc {
        let mut entries = Vec::new();
        for (e, edge) in inst.edges.iter().enumerate() {
            for t in 0..self.horizon {
                let value = self.value(e, t);
                if value != 0.0 {
                    entries.push(LpEntry {
                        agent: edge.agent.clone(),
                        task_type: edge.task_type.clone(),
                        t: t + 1,
                        value,
                    });
                }
            }
        }
        LpSolutionDoc { objective: self.objective, max_residual: self.max_residual, entries }
    }

    pub fn from_document(doc: &LpSolutionDoc, inst: &Instance) -> Result<Self, LpError> {
        let graph = inst.graph()?;
        let model = build_offline_lp(inst)?;
        let agent_ix = |id: &str| inst.agents.iter().position(|a| a.id == id);
        let type_ix = |id: &str| inst.task_types.iter().position(|v| v.id == id);
        let mut x = vec![0.0; model.n_vars()];
        for entry in &doc.entries {
            let edge = agent_ix(&entry.agent)
                .zip(type_ix(&entry.task_type))
                .and_then(|(u, v)| graph.edge_between(u, v))
                .ok_or_else(|| {
                    LpError::Mismatch(format!(
                        "no edge ({:?}, {:?})",
                        entry.agent, entry.task_type
                    ))
                })?;
            if entry.t == 0 || entry.t > inst.horizon {
                return Err(LpError::Mismatch(format!("slot {} outside horizon", entry.t)));
            }
            x[model.var(edge, entry.t - 1)] = entry.value;
        }
        Ok(LpSolution::from_point(&model, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn trap_rows_match_hand_expansion() {
        let inst = fixtures::lp_rounding_trap(100.0);
        let m = build_offline_lp(&inst).unwrap();
        assert_eq!(m.n_vars(), 2 * 2);
        // |U| T + |U| + |V| T rows.
        assert_eq!(m.rows.len(), 2 + 1 + 2 * 2);
        let x1 = m.var(0, 0);
        let x2 = m.var(1, 1);
        let occ = m.row(RowKind::Occupancy { agent: 0, slot: 1 }).unwrap();
        assert!(close(occ.coeff(x1), 2.0 / 3.0, 1e-15));
        assert!(close(occ.coeff(x2), 1.0 / 3.0, 1e-15));
        assert_eq!(occ.rhs, 1.0);
        let bud = m.row(RowKind::Budget { agent: 0 }).unwrap();
        assert!(close(bud.coeff(x1), 1.0, 1e-15));
        assert!(close(bud.coeff(x2), 1.0, 1e-15));
        assert_eq!(bud.rhs, 2.0);
    }

    #[test]
    fn single_edge_single_slot_model() {
        let mut inst = fixtures::single_edge(3.0);
        inst.edges[0].accept_prob = 0.4;
        inst.arrival.probs = vec![vec![0.7]];
        inst.task_types[0].capacity = 2;
        let m = build_offline_lp(&inst).unwrap();
        assert_eq!(m.objective, vec![3.0 * 0.4]);
        assert_eq!(m.upper, vec![0.7]);
        let occ = m.row(RowKind::Occupancy { agent: 0, slot: 0 }).unwrap();
        assert_eq!(occ.coeffs, vec![(0, 0.4)]);
        // Pr[C <= 0] = 0, so the budget coefficient is 1.
        assert_eq!(m.row(RowKind::Budget { agent: 0 }).unwrap().coeffs, vec![(0, 1.0)]);
        let cap = m.row(RowKind::Capacity { task_type: 0, slot: 0 }).unwrap();
        assert!(close(cap.rhs, 1.4, 1e-15));
    }

    #[test]
    fn delayed_reward_budget_row() {
        let inst = fixtures::delayed_reward(0.01);
        let m = build_offline_lp(&inst).unwrap();
        let bud = m.row(RowKind::Budget { agent: 0 }).unwrap();
        let got: Vec<f64> = (0..3).map(|t| bud.coeff(m.var(t, t))).collect();
        assert_eq!(got, vec![0.5, 0.75, 1.0]);
        // Off-slot variables are boxed to zero but still present.
        assert_eq!(m.upper[m.var(0, 1)], 0.0);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let mut inst = fixtures::single_edge(1.0);
        inst.agents[0].budget = Budget::Finite(0);
        assert!(matches!(build_offline_lp(&inst), Err(LpError::ZeroBudget(_))));
    }

    #[test]
    fn trap_optimum_is_unit_vector() {
        let (m, sol) = solve_instance(&fixtures::lp_rounding_trap(100.0)).unwrap();
        assert!(close(sol.value(0, 0), 1.0, 1e-9));
        assert!(close(sol.value(1, 1), 1.0, 1e-9));
        assert!(close(sol.objective, 34.0, 1e-6));
        assert!(sol.max_residual <= FEAS_TOL);
        assert!(close(m.objective_value(&sol.x), sol.objective, 1e-12));
    }

    #[test]
    fn delayed_reward_optimum() {
        for eps in [0.1, 0.01] {
            let (_, sol) = solve_instance(&fixtures::delayed_reward(eps)).unwrap();
            assert!(close(sol.objective, (8.0 - 4.0 * eps) / 9.0, 1e-6), "{}", sol.objective);
        }
    }

    #[test]
    fn prophet_pair_optimum() {
        let (_, sol) = solve_instance(&fixtures::prophet_pair(0.1)).unwrap();
        assert!(close(sol.objective, 1.9, 1e-6));
        assert!(close(sol.value(0, 0), 0.9, 1e-9));
        assert!(close(sol.value(1, 1), 0.1, 1e-9));
        assert!(close(sol.value(2, 1), 0.0, 1e-9));
    }

    #[test]
    fn projection_restores_feasibility() {
        let inst = fixtures::lp_rounding_trap(100.0);
        let m = build_offline_lp(&inst).unwrap();
        let mut x = vec![1.3, 0.2, -0.1, 1.0];
        project_feasible(&m, &mut x);
        assert!(m.max_violation(&x) <= 1e-15, "{x:?}");
    }

    #[test]
    fn symmetrize_averages_over_time() {
        let mut inst = fixtures::single_edge(1.0);
        inst.horizon = 2;
        inst.arrival.probs = vec![vec![0.5, 0.5]];
        inst.edges[0].occupation = crate::model::OccupationPmf::point(2);
        let m = build_offline_lp(&inst).unwrap();
        let sol = LpSolution::from_point(&m, vec![0.2, 0.4]);
        let sym = symmetrize_kiid_solution(&sol, &inst).unwrap();
        assert!(close(sym.x[0], 0.3, 1e-15) && close(sym.x[1], 0.3, 1e-15));
        assert!(close(sym.objective, sol.objective, 1e-12));
        let again = symmetrize_kiid_solution(&sym, &inst).unwrap();
        assert_eq!(again, sym);
    }

    #[test]
    fn symmetrize_rejects_reusable_or_nonstationary() {
        let inst = fixtures::delayed_reward(0.1);
        let (_, sol) = solve_instance(&inst).unwrap();
        assert!(matches!(
            symmetrize_kiid_solution(&sol, &inst),
            Err(LpError::NotApplicable(_))
        ));
        let mut reusable = fixtures::single_edge(1.0);
        reusable.horizon = 2;
        reusable.arrival.probs = vec![vec![0.5, 0.5]];
        let (_, sol) = solve_instance(&reusable).unwrap();
        assert!(symmetrize_kiid_solution(&sol, &reusable).is_err());
    }

    #[test]
    fn document_round_trip() {
        let inst = fixtures::prophet_pair(0.1);
        let (_, sol) = solve_instance(&inst).unwrap();
        let doc = sol.to_document(&inst);
        let text = serde_json::to_string(&doc).unwrap();
        let back = LpSolution::from_document(&serde_json::from_str(&text).unwrap(), &inst).unwrap();
        assert_eq!(back.x, sol.x);
    }
}
