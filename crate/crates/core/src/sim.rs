//! Trial execution and Monte-Carlo aggregation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::model::{sample_arrival_sequence_with, ArrivalSequence};
use crate::policy::{policy_step, AgentRuntime, PolicyContext, PolicyKind, Prepared};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentRecord {
    pub t: usize,
    pub agent: usize,
    pub edge: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub profit: f64,
    pub accepted: Vec<u32>,
    pub rejected: Vec<u32>,
    pub log: Vec<AssignmentRecord>,
}

fn check_assignment(
    prep: &Prepared,
    policy: PolicyKind,
    agents: &[AgentRuntime],
    t: usize,
    v: usize,
    set: &[usize],
) -> Result<(), PolicyError> {
    let invalid = |agent: usize, reason| PolicyError::InvalidAssignment {
        policy: policy.name().to_string(),
        agent,
        slot: t,
        reason,
    };
    let cap = prep.instance.task_types[v].capacity as usize;
    for (i, &e) in set.iter().enumerate() {
        let u = prep.graph.edge_agent[e];
        if prep.graph.edge_type[e] != v {
            return Err(invalid(u, "agent is not adjacent to the arrived type"));
        }
        if !agents[u].available(t) {
            return Err(invalid(u, "agent is unavailable"));
        }
        if set[..i].iter().any(|&o| prep.graph.edge_agent[o] == u) {
            return Err(invalid(u, "agent chosen twice"));
        }
        if i >= cap {
            return Err(invalid(u, "more agents than the task capacity"));
        }
    }
    Ok(())
}

fn draw_occupation<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    cdf.iter()
        .skip(1)
        .position(|&c| u < c)
        .map_or(cdf.len() - 1, |i| i + 1)
}

/// Run one trial with explicit policy and acceptance streams.
pub fn run_trial_with(
    prep: &Prepared,
    policy: PolicyKind,
    seq: &ArrivalSequence,
    policy_rng: &mut ChaCha8Rng,
    accept_rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome, PolicyError> {
    let inst = &prep.instance;
    let n = inst.n_agents();
    let mut agents: Vec<AgentRuntime> =
        inst.agents.iter().map(|a| AgentRuntime::new(a.budget)).collect();
    let mut out = TrialOutcome {
        profit: 0.0,
        accepted: vec![0; n],
        rejected: vec![0; n],
        log: Vec::new(),
    };
    for (t, &arrived) in seq.slots.iter().enumerate() {
        let Some(v) = arrived else { continue };
        let ctx = PolicyContext { prepared: prep, agents: &agents, t, arrived };
        let set = policy_step(policy, &ctx, policy_rng);
        check_assignment(prep, policy, &agents, t, v, &set)?;
        for e in set {
            let u = prep.graph.edge_agent[e];
            let edge = &inst.edges[e];
            let accepted = accept_rng.gen::<f64>() < edge.accept_prob;
            if accepted {
                out.profit += edge.weight;
                out.accepted[u] += 1;
                agents[u].busy_until = t + draw_occupation(&prep.occupation_cdf[e], accept_rng);
            } else {
                out.rejected[u] += 1;
                let rt = &mut agents[u];
                rt.remaining = rt.remaining.decremented();
                rt.departed = rt.remaining.is_exhausted();
            }
            out.log.push(AssignmentRecord { t, agent: u, edge: e, accepted });
        }
    }
    Ok(out)
}

/// Run one trial; all internal randomness derives from `seed`.
pub fn run_trial(
    prep: &Prepared,
    policy: PolicyKind,
    seq: &ArrivalSequence,
    seed: u64,
) -> Result<TrialOutcome, PolicyError> {
    let (mut p, mut a) = policy_streams(seed, policy, 0);
    run_trial_with(prep, policy, seq, &mut p, &mut a)
}

fn policy_streams(master: u64, policy: PolicyKind, trial: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let base = domain::POLICY_BASE + 2 * policy.stream_id();
    (stream_rng(master, base, trial), stream_rng(master, base + 1, trial))
}

/// Arrival sequence of trial `trial`, shared by every policy.
pub fn trial_sequence(prep: &Prepared, master: u64, trial: u64) -> ArrivalSequence {
    let mut rng = stream_rng(master, domain::ARRIVALS, trial);
    sample_arrival_sequence_with(&prep.instance.arrival, prep.instance.horizon, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub lp_objective: f64,
    pub ratio: f64,
}

impl RunReport {
    pub fn from_profits(policy: PolicyKind, profits: &[f64], lp_objective: f64) -> Self {
        let n = profits.len();
        let mean = profits.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (profits.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let ratio = if lp_objective > 0.0 { mean / lp_objective } else { 1.0 };
        RunReport {
            policy: policy.name().to_string(),
            n: n as u64,
            mean,
            std,
            stderr: std / (n as f64).sqrt(),
            lp_objective,
            ratio,
        }
    }
}

/// Profits of `n` trials, in trial order.
pub fn trial_profits(
    prep: &Prepared,
    policy: PolicyKind,
    n: u64,
    master: u64,
) -> Result<Vec<f64>, PolicyError> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let seq = trial_sequence(prep, master, i);
            let (mut p, mut a) = policy_streams(master, policy, i);
            run_trial_with(prep, policy, &seq, &mut p, &mut a).map(|o| o.profit)
        })
        .collect()
}

pub fn run_monte_carlo(
    prep: &Prepared,
    policy: PolicyKind,
    n: u64,
    master: u64,
) -> Result<RunReport, PolicyError> {
    assert!(n >= 1, "at least one trial is required");
    let profits = trial_profits(prep, policy, n, master)?;
    Ok(RunReport::from_profits(policy, &profits, prep.lp_objective()))
}

/// One report per policy over common arrival sequences.
pub fn run_policies(
    prep: &Prepared,
    policies: &[PolicyKind],
    n: u64,
    master: u64,
) -> Result<Vec<RunReport>, PolicyError> {
    policies.iter().map(|&k| run_monte_carlo(prep, k, n, master)).collect()
}

pub fn write_reports<W: std::io::Write>(reports: &[RunReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Upper bound on any trial's profit for a given sequence.
pub fn profit_ceiling(prep: &Prepared, seq: &ArrivalSequence) -> f64 {
    seq.slots
        .iter()
        .flatten()
        .map(|&v| {
            let best = prep.graph.type_edges[v]
                .iter()
                .map(|&e| prep.instance.edges[e].weight)
                .fold(0.0, f64::max);
            f64::from(prep.instance.task_types[v].capacity) * best
        })
        .sum()
}
