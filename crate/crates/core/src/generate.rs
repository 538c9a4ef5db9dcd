//! Random instance generators: the experiment-scale synthetic family and a
//! tiny family sized for the brute-force oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::error::IngestError;
use crate::model::{
    AgentSpec, ArrivalSchedule, Budget, EdgeSpec, Instance, OccupationPmf, TaskTypeSpec,
};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// Each agent draws uniformly from `{1, 2, 3}`.
    #[default]
    Uniform,
    Unlimited,
}

impl BudgetMode {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> Budget {
        match self {
            BudgetMode::Uniform => Budget::Finite(rng.gen_range(1..=3)),
            BudgetMode::Unlimited => Budget::Unlimited,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_agents: usize,
    pub n_types: usize,
    pub horizon: usize,
    pub edge_prob: f64,
    pub capacity: u32,
    pub budget: BudgetMode,
    pub reusable: bool,
    pub kiid: bool,
    /// Every offer is accepted.
    pub always_accept: bool,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_agents: 30,
            n_types: 100,
            horizon: 200,
            edge_prob: 0.1,
            capacity: 4,
            budget: BudgetMode::Uniform,
            reusable: true,
            kiid: false,
            always_accept: false,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn check(&self) -> Result<(), IngestError> {
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(IngestError::Params(format!("edge_prob {} outside [0, 1]", self.edge_prob)));
        }
        if self.horizon == 0 {
            return Err(IngestError::Params("horizon must be at least 1".into()));
        }
        if self.capacity == 0 {
            return Err(IngestError::Params("capacity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pmf of `Binomial(n, eta)` on `1..=horizon`: the mass at zero moves to
/// one and mass beyond the horizon moves to the horizon.
pub fn binomial_occupation(n: u64, eta: f64, horizon: usize) -> OccupationPmf {
    let dist = Binomial::new(eta, n).expect("eta lies in [0, 1]");
    let mut masses = std::collections::BTreeMap::new();
    for k in 0..=n {
        let p = dist.pmf(k);
        if p > 0.0 {
            let l = (k as usize).clamp(1, horizon);
            *masses.entry(l).or_insert(0.0) += p;
        }
    }
    // Renormalize away floating drift in the binomial pmf.
    let total: f64 = masses.values().sum();
    masses.values_mut().for_each(|p| *p /= total);
    OccupationPmf { masses }
}

/// Turn non-negative weights (rows = types, columns = slots) into arrival
/// probabilities. Each slot is divided by its column sum; in stationary mode
/// the row sums form one column that is replicated over the horizon.
pub fn build_arrivals(weights: &[Vec<f64>], kiid: bool, horizon: usize) -> ArrivalSchedule {
    let normalize = |col: Vec<f64>| -> Vec<f64> {
        let s: f64 = col.iter().sum();
        if s > 0.0 {
            col.into_iter().map(|w| w / s).collect()
        } else {
            vec![0.0; col.len()]
        }
    };
    let probs = if kiid {
        let col = normalize(weights.iter().map(|row| row.iter().sum()).collect());
        col.into_iter().map(|p| vec![p; horizon]).collect()
    } else {
        let mut probs = vec![vec![0.0; horizon]; weights.len()];
        for t in 0..horizon {
            let col = normalize(weights.iter().map(|row| row.get(t).copied().unwrap_or(0.0)).collect());
            for (v, p) in col.into_iter().enumerate() {
                probs[v][t] = p;
            }
        }
        probs
    };
    ArrivalSchedule { probs }
}

/// The experiment family: Bernoulli edges, `q ~ U(0.5, 1)`, `w ~ U(0, 1)`,
/// binomial occupations per agent and uniform arrival weights.
pub fn gen_synthetic(params: &SyntheticParams) -> Result<Instance, IngestError> {
    params.check()?;
    let mut rng = stream_rng(params.seed, domain::GENERATOR, 0);
    let horizon = params.horizon;
    let agents: Vec<AgentSpec> = (0..params.n_agents)
        .map(|i| AgentSpec { id: format!("u{i}"), budget: params.budget.draw(&mut rng) })
        .collect();
    let etas: Vec<f64> = (0..params.n_agents).map(|_| rng.gen::<f64>()).collect();
    let task_types: Vec<TaskTypeSpec> = (0..params.n_types)
        .map(|j| TaskTypeSpec { id: format!("v{j}"), capacity: params.capacity })
        .collect();

    let mut edges = Vec::new();
    for (i, agent) in agents.iter().enumerate() {
        let occupation = if params.reusable {
            binomial_occupation(20, etas[i], horizon)
        } else {
            OccupationPmf::point(horizon)
        };
        for ty in &task_types {
            if rng.gen::<f64>() >= params.edge_prob {
                continue;
            }
            let q = rng.gen_range(0.5..1.0);
            let w = rng.gen::<f64>();
            edges.push(EdgeSpec {
                agent: agent.id.clone(),
                task_type: ty.id.clone(),
                weight: w,
                accept_prob: if params.always_accept { 1.0 } else { q },
                occupation: occupation.clone(),
            });
        }
    }

    let cols = if params.kiid { 1 } else { horizon };
    let weights: Vec<Vec<f64>> = (0..params.n_types)
        .map(|_| (0..cols).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let arrival = build_arrivals(&weights, params.kiid, horizon);
    Ok(Instance { agents, task_types, edges, horizon, arrival })
}

/// Size limits for [`gen_tiny`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TinyParams {
    pub max_agents: usize,
    pub max_types: usize,
    pub max_horizon: usize,
    pub max_budget: u32,
    pub max_capacity: u32,
}

impl Default for TinyParams {
    fn default() -> Self {
        TinyParams { max_agents: 5, max_types: 5, max_horizon: 10, max_budget: 3, max_capacity: 2 }
    }
}

impl TinyParams {
    /// Sizes the offline oracle enumerates comfortably.
    pub fn oracle() -> Self {
        TinyParams { max_agents: 3, max_types: 3, max_horizon: 6, max_budget: 3, max_capacity: 2 }
    }
}

/// A small random instance mixing budgets, reuse, stationarity and
/// capacities. Some slots leave room for no arrival at all.
pub fn gen_tiny(seed: u64, limits: &TinyParams) -> Instance {
    let mut rng = stream_rng(seed, domain::GENERATOR, 1);
    let n_agents = rng.gen_range(1..=limits.max_agents);
    let n_types = rng.gen_range(1..=limits.max_types);
    let horizon = rng.gen_range(1..=limits.max_horizon);
    // 0: all unlimited, 1: all finite, 2: mixed.
    let budget_style = rng.gen_range(0..3);
    let reusable = rng.gen_bool(0.6);
    let stationary = rng.gen_bool(0.4);

    let agents: Vec<AgentSpec> = (0..n_agents)
        .map(|i| {
            let finite = match budget_style {
                0 => false,
                1 => true,
                _ => rng.gen_bool(0.5),
            };
            let budget = if finite {
                Budget::Finite(rng.gen_range(1..=limits.max_budget))
            } else {
                Budget::Unlimited
            };
            AgentSpec { id: format!("u{i}"), budget }
        })
        .collect();
    let task_types: Vec<TaskTypeSpec> = (0..n_types)
        .map(|j| TaskTypeSpec { id: format!("v{j}"), capacity: rng.gen_range(1..=limits.max_capacity) })
        .collect();

    let mut edges = Vec::new();
    for a in &agents {
        for ty in &task_types {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let occupation = if reusable {
                let support = rng.gen_range(1..=horizon.min(3));
                let pairs: Vec<(usize, f64)> =
                    (0..support).map(|_| (rng.gen_range(1..=horizon), rng.gen_range(0.1..1.0))).collect();
                let total: f64 = pairs.iter().map(|p| p.1).sum();
                OccupationPmf::from_pairs(pairs.into_iter().map(|(l, p)| (l, p / total)))
            } else {
                OccupationPmf::point(horizon)
            };
            edges.push(EdgeSpec {
                agent: a.id.clone(),
                task_type: ty.id.clone(),
                weight: rng.gen_range(0.0..10.0),
                accept_prob: if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.2..1.0) },
                occupation,
            });
        }
    }
    if edges.is_empty() {
        edges.push(EdgeSpec {
            agent: agents[0].id.clone(),
            task_type: task_types[0].id.clone(),
            weight: 1.0,
            accept_prob: 1.0,
            occupation: OccupationPmf::point(horizon),
        });
    }

    let column = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n_types).map(|_| rng.gen::<f64>()).collect();
        let mass = rng.gen_range(0.5..=1.0);
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s * mass).collect()
    };
    let probs: Vec<Vec<f64>> = if stationary {
        let col = column(&mut rng);
        col.into_iter().map(|p| vec![p; horizon]).collect()
    } else {
        let cols: Vec<Vec<f64>> = (0..horizon).map(|_| column(&mut rng)).collect();
        (0..n_types).map(|v| cols.iter().map(|c| c[v]).collect()).collect()
    };
    Instance { agents, task_types, edges, horizon, arrival: ArrivalSchedule { probs } }
}
