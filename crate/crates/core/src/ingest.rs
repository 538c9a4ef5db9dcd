//! Instances from taxi trip records.
//!
//! Pickup and dropoff points are binned on a lon/lat grid. The most frequent
//! (pickup cell, dropoff cell) pairs become task types, and a sample of
//! drivers, each parked in a cell drawn from their own pickup history, become
//! agents adjacent to the types that start in their cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::generate::{build_arrivals, BudgetMode};
use crate::model::{AgentSpec, Budget, EdgeSpec, Instance, OccupationPmf, TaskTypeSpec};
use crate::rng::{domain, stream_rng};

pub const LON_RANGE: (f64, f64) = (-75.0, -73.0);
pub const LAT_RANGE: (f64, f64) = (40.4, 40.95);
pub const GRID_STEP: f64 = 0.05;
pub const MAX_PICKUP_COST: f64 = 2.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub driver_id: String,
    pub pickup_lon: f64,
    pub pickup_lat: f64,
    pub dropoff_lon: f64,
    pub dropoff_lat: f64,
    pub pickup_datetime: String,
    pub trip_time_min: f64,
    pub trip_distance_mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxiParams {
    pub n_drivers: usize,
    pub n_types: usize,
    pub horizon: usize,
    /// Start of the modelled period, minutes after midnight.
    pub period_start_min: u32,
    /// Length of the modelled period in minutes; slots split it evenly.
    pub period_len_min: u32,
    pub kiid: bool,
    pub reusable: bool,
    pub budget: BudgetMode,
    pub always_accept: bool,
    pub capacity: u32,
}

impl Default for TaxiParams {
    fn default() -> Self {
        TaxiParams {
            n_drivers: 30,
            n_types: 100,
            horizon: 288,
            period_start_min: 0,
            period_len_min: 24 * 60,
            kiid: false,
            reusable: true,
            budget: BudgetMode::Uniform,
            always_accept: false,
            capacity: 1,
        }
    }
}

impl TaxiParams {
    pub fn slot_minutes(&self) -> f64 {
        f64::from(self.period_len_min) / self.horizon as f64
    }

    fn check(&self) -> Result<(), IngestError> {
        if self.horizon == 0 || self.period_len_min == 0 {
            return Err(IngestError::Params("horizon and period length must be positive".into()));
        }
        if self.period_start_min + self.period_len_min > 24 * 60 {
            return Err(IngestError::Params("period must end by midnight".into()));
        }
        if self.capacity == 0 {
            return Err(IngestError::Params("capacity must be at least 1".into()));
        }
        Ok(())
    }
}

type Cell = (i32, i32);

/// Grid cell of a point inside the study area.
pub fn grid_cell(lon: f64, lat: f64) -> Option<Cell> {
    let inside = (LON_RANGE.0..=LON_RANGE.1).contains(&lon) && (LAT_RANGE.0..=LAT_RANGE.1).contains(&lat);
    inside.then(|| {
        (
            ((lon - LON_RANGE.0) / GRID_STEP).floor() as i32,
            ((lat - LAT_RANGE.0) / GRID_STEP).floor() as i32,
        )
    })
}

/// Occupation in slots for one trip: a round trip plus five minutes,
/// rounded up and kept within `[1, horizon]`.
pub fn occupation_slots(trip_time_min: f64, slot_minutes: f64, horizon: usize) -> usize {
    let minutes = 2.0 * trip_time_min + 5.0;
    let slots = (minutes / slot_minutes - 1e-9).ceil();
    (slots.max(1.0) as usize).min(horizon)
}

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

pub fn read_trip_records<R: Read>(input: R) -> Result<Vec<TripRecord>, IngestError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<TripRecord>().enumerate() {
        let line = i + 2;
        let rec = row?;
        let coords = [rec.pickup_lon, rec.pickup_lat, rec.dropoff_lon, rec.dropoff_lat];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(IngestError::BadRecord { line, reason: "non-finite coordinate".into() });
        }
        if !(rec.trip_time_min >= 0.0 && rec.trip_distance_mi >= 0.0) {
            return Err(IngestError::BadRecord { line, reason: "negative time or distance".into() });
        }
        if parse_datetime(&rec.pickup_datetime).is_none() {
            return Err(IngestError::BadRecord {
                line,
                reason: format!("unreadable datetime {:?}", rec.pickup_datetime),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

struct Trip<'a> {
    driver: &'a str,
    pickup: Cell,
    pair: (Cell, Cell),
    slot: usize,
    time: f64,
    distance: f64,
}

pub fn ingest_trip_records(
    records: &[TripRecord],
    params: &TaxiParams,
    seed: u64,
) -> Result<Instance, IngestError> {
    params.check()?;
    let horizon = params.horizon;
    let start = params.period_start_min;
    let end = start + params.period_len_min;
    let trips: Vec<Trip<'_>> = records
        .iter()
        .filter_map(|r| {
            let pickup = grid_cell(r.pickup_lon, r.pickup_lat)?;
            let dropoff = grid_cell(r.dropoff_lon, r.dropoff_lat)?;
            let dt = parse_datetime(&r.pickup_datetime)?;
            let minute = dt.hour() * 60 + dt.minute();
            if minute < start || minute >= end {
                return None;
            }
            let slot = ((minute - start) as usize * horizon) / params.period_len_min as usize;
            Some(Trip {
                driver: &r.driver_id,
                pickup,
                pair: (pickup, dropoff),
                slot: slot.min(horizon - 1),
                time: r.trip_time_min,
                distance: r.trip_distance_mi,
            })
        })
        .collect();

    let mut pair_count: HashMap<(Cell, Cell), usize> = HashMap::new();
    for t in &trips {
        *pair_count.entry(t.pair).or_default() += 1;
    }
    if pair_count.len() < params.n_types {
        return Err(IngestError::InsufficientData {
            dimension: "pickup/dropoff pairs",
            found: pair_count.len(),
            needed: params.n_types,
        });
    }
    let mut ranked: Vec<((Cell, Cell), usize)> = pair_count.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let types: Vec<(Cell, Cell)> = ranked.into_iter().take(params.n_types).map(|(p, _)| p).collect();
    let type_ix: HashMap<(Cell, Cell), usize> = types.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    let drivers: BTreeSet<&str> = trips.iter().map(|t| t.driver).collect();
    if drivers.len() < params.n_drivers {
        return Err(IngestError::InsufficientData {
            dimension: "drivers",
            found: drivers.len(),
            needed: params.n_drivers,
        });
    }

    let mut rng = stream_rng(seed, domain::GENERATOR, 2);
    let pool: Vec<&str> = drivers.into_iter().collect();
    let chosen: Vec<&str> = pool.choose_multiple(&mut rng, params.n_drivers).copied().collect();
    let mut history: BTreeMap<&str, Vec<Cell>> = BTreeMap::new();
    for t in &trips {
        history.entry(t.driver).or_default().push(t.pickup);
    }

    // Per type: mean distance, occupation histogram, arrival counts.
    let n_types = types.len();
    let mut dist_sum = vec![0.0; n_types];
    let mut occ: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_types];
    let mut counts = vec![vec![0.0; horizon]; n_types];
    let slot_minutes = params.slot_minutes();
    for t in &trips {
        if let Some(&v) = type_ix.get(&t.pair) {
            dist_sum[v] += t.distance;
            counts[v][t.slot] += 1.0;
            *occ[v].entry(occupation_slots(t.time, slot_minutes, horizon)).or_default() += 1.0;
        }
    }
    let type_total: Vec<f64> = counts.iter().map(|c| c.iter().sum()).collect();

    let task_types: Vec<TaskTypeSpec> = (0..n_types)
        .map(|v| TaskTypeSpec { id: format!("v{v}"), capacity: params.capacity })
        .collect();
    let mut agents = Vec::with_capacity(chosen.len());
    let mut edges = Vec::new();
    for (i, &driver) in chosen.iter().enumerate() {
        let id = format!("u{i}");
        let home = *history[driver].choose(&mut rng).expect("sampled drivers have trips");
        let cost = rng.gen_range(0.0..MAX_PICKUP_COST);
        let budget = match params.budget {
            BudgetMode::Uniform => Budget::Finite(rng.gen_range(1..=3)),
            BudgetMode::Unlimited => Budget::Unlimited,
        };
        for (v, &(pickup, _)) in types.iter().enumerate() {
            if pickup != home {
                continue;
            }
            let q = rng.gen_range(0.5..1.0);
            let occupation = if params.reusable {
                let n = type_total[v];
                OccupationPmf { masses: occ[v].iter().map(|(&l, &c)| (l, c / n)).collect() }
            } else {
                OccupationPmf::point(horizon)
            };
            edges.push(EdgeSpec {
                agent: id.clone(),
                task_type: task_types[v].id.clone(),
                weight: (dist_sum[v] / type_total[v] - cost).max(0.0),
                accept_prob: if params.always_accept { 1.0 } else { q },
                occupation,
            });
        }
        agents.push(AgentSpec { id, budget });
    }

    let arrival = build_arrivals(&counts, params.kiid, horizon);
    Ok(Instance { agents, task_types, edges, horizon, arrival })
}
