//! Per-arrival candidate-set distributions.
//!
//! For each `(v, t)` the LP point `y_e = x[e, t] / p[v, t]` over the edges of
//! `v` lies in the polytope `{0 <= y <= 1, sum y <= b_v}`. It is written as a
//! convex combination of sets of at most `b_v` edges by repeatedly peeling
//! off the largest coordinates.

use rand::Rng;

use crate::error::DecompositionError;
use crate::lp::LpSolution;
use crate::model::Instance;
use crate::rng::stream_rng;

/// Coordinates at or below this are treated as zero.
pub const ZERO_TOL: f64 = 1e-9;

/// Weighted sets of edge positions. The mass not covered by `entries` is the
/// empty set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SetDistribution {
    /// `(lambda, sorted set)`, sets nonempty and pairwise distinct.
    pub entries: Vec<(f64, Vec<usize>)>,
}

impl SetDistribution {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(l, _)| l).sum()
    }

    pub fn empty_mass(&self) -> f64 {
        (1.0 - self.total_mass()).max(0.0)
    }

    /// `sum of lambda over sets containing i`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.entries
            .iter()
            .filter(|(_, s)| s.contains(&i))
            .map(|(l, _)| l)
            .sum()
    }

    /// Draw a set; the empty slice stands for the residual mass.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[usize] {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (lambda, set) in &self.entries {
            acc += lambda;
            if u < acc {
                return set;
            }
        }
        &[]
    }
}

/// Decompose `y` into sets of size at most `b`.
///
/// Each round takes the `b` largest positive coordinates (ties by index) and
/// removes as much of that set as keeps the remainder inside the polytope
/// scaled by the unassigned mass, so the weights never exceed 1 in total.
pub fn caratheodory_decompose(y: &[f64], b: u32) -> Result<SetDistribution, DecompositionError> {
    if b == 0 {
        return Err(DecompositionError::ZeroCapacity);
    }
    for (index, &value) in y.iter().enumerate() {
        if !(-ZERO_TOL..=1.0 + ZERO_TOL).contains(&value) {
            return Err(DecompositionError::OutOfRange { index, value });
        }
    }
    let sum: f64 = y.iter().sum();
    if sum > f64::from(b) + ZERO_TOL {
        return Err(DecompositionError::OverCapacity { sum, capacity: b });
    }

    let b = b as usize;
    let mut rest: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut mass = 1.0_f64;
    let mut dist = SetDistribution::default();
    // Each round zeroes a coordinate or pins the largest outside one to the
    // remaining mass; both can happen at most once per coordinate.
    for _ in 0..=2 * y.len() {
        let mut order: Vec<usize> = (0..rest.len()).filter(|&i| rest[i] > ZERO_TOL).collect();
        if order.is_empty() || mass <= ZERO_TOL {
            break;
        }
        order.sort_by(|&i, &j| rest[j].total_cmp(&rest[i]).then(i.cmp(&j)));
        let (chosen, outside) = order.split_at(order.len().min(b));
        let mut lambda = chosen.iter().map(|&i| rest[i]).fold(f64::INFINITY, f64::min);
        if let Some(&top_out) = outside.first() {
            lambda = lambda.min(mass - rest[top_out]);
        }
        let lambda = lambda.min(mass).max(0.0);
        if lambda <= 0.0 {
            break;
        }
        for &i in chosen {
            rest[i] = if rest[i] - lambda <= ZERO_TOL { 0.0 } else { rest[i] - lambda };
        }
        mass -= lambda;
        let mut set = chosen.to_vec();
        set.sort_unstable();
        match dist.entries.iter_mut().find(|(_, s)| *s == set) {
            Some(entry) => entry.0 += lambda,
            None => dist.entries.push((lambda, set)),
        }
    }
    Ok(dist)
}

/// One distribution per `(task type, slot)`, over edge indices of the
/// instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTable {
    pub horizon: usize,
    /// Indexed `v * horizon + t`; sets hold global edge indices.
    pub cells: Vec<SetDistribution>,
}

impl SamplingTable {
    pub fn get(&self, task_type: usize, slot: usize) -> &SetDistribution {
        &self.cells[task_type * self.horizon + slot]
    }
}

pub fn build_sampling_tables(
    sol: &LpSolution,
    inst: &Instance,
) -> Result<SamplingTable, DecompositionError> {
    let graph = inst
        .graph()
        .expect("sampling tables need an instance with resolved edges");
    let horizon = inst.horizon;
    let mut cells = Vec::with_capacity(inst.n_types() * horizon);
    for (v, spec) in inst.task_types.iter().enumerate() {
        let edges = &graph.type_edges[v];
        for t in 0..horizon {
            let p = inst.arrival.prob(v, t);
            if p <= 0.0 || edges.is_empty() {
                cells.push(SetDistribution::default());
                continue;
            }
            let y: Vec<f64> = edges.iter().map(|&e| (sol.value(e, t) / p).clamp(0.0, 1.0)).collect();
            let local = caratheodory_decompose(&y, spec.capacity).map_err(|source| {
                DecompositionError::Slot { task_type: v, slot: t, source: Box::new(source) }
            })?;
            let entries = local
                .entries
                .into_iter()
                .map(|(l, s)| (l, s.into_iter().map(|i| edges[i]).collect()))
                .collect();
            cells.push(SetDistribution { entries });
        }
    }
    Ok(SamplingTable { horizon, cells })
}

/// Seeded single draw.
pub fn sample_candidate_set(dist: &SetDistribution, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, 0, 0);
    dist.sample(&mut rng).to_vec()
}
