//! Small hand-analysable instances used by tests, the acceptance suite and
//! the CLI `verify` command.

use crate::model::{
    AgentSpec, ArrivalSchedule, Budget, EdgeSpec, Instance, OccupationPmf, TaskTypeSpec,
};

fn single_agent(
    budget: Budget,
    horizon: usize,
    types: &[(&str, f64, f64, OccupationPmf)],
    arrival: Vec<Vec<f64>>,
) -> Instance {
    Instance {
        agents: vec![AgentSpec { id: "u".into(), budget }],
        task_types: types
            .iter()
            .map(|(id, ..)| TaskTypeSpec { id: (*id).into(), capacity: 1 })
            .collect(),
        edges: types
            .iter()
            .map(|(id, q, w, pmf)| EdgeSpec {
                agent: "u".into(),
                task_type: (*id).into(),
                weight: *w,
                accept_prob: *q,
                occupation: pmf.clone(),
            })
            .collect(),
        horizon,
        arrival: ArrivalSchedule { probs: arrival },
    }
}

/// One agent with a single rejection, three slots, one candidate type per
/// slot. The last type is rare but very valuable, so the best offline play
/// often discards the early arrivals.
///
/// Offline optimum `(7 - 3 eps) / 9`; always-assign earns `4 / 9`.
pub fn delayed_reward(eps: f64) -> Instance {
    let pmf = OccupationPmf::from_pairs([(1, 0.5), (2, 0.5)]);
    single_agent(
        Budget::Finite(1),
        3,
        &[
            ("v1", 0.5, 4.0 / 9.0, pmf.clone()),
            ("v2", 0.5, 6.0 / 9.0, pmf.clone()),
            ("v3", 1.0, 4.0 / (9.0 * eps), pmf),
        ],
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, eps]],
    )
}

/// Two slots, two types, the second worth `m`. Following the LP solution
/// blindly takes the first arrival and earns `(m + 6) / 9`, while the
/// value-guided policy waits and earns `m / 3`.
pub fn lp_rounding_trap(m: f64) -> Instance {
    single_agent(
        Budget::Finite(2),
        2,
        &[
            ("v1", 2.0 / 3.0, 1.0, OccupationPmf::point(2)),
            ("v2", 1.0 / 3.0, m, OccupationPmf::point(2)),
        ],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    )
}

/// The classic two-slot prophet instance: a sure unit reward now, or with
/// probability `eps` a reward of `1 / eps` later. No online policy beats 1
/// while the offline optimum is `2 - eps`.
pub fn prophet_pair(eps: f64) -> Instance {
    single_agent(
        Budget::Unlimited,
        2,
        &[
            ("a", 1.0, 1.0, OccupationPmf::point(2)),
            ("b", 1.0, 1.0 / eps, OccupationPmf::point(2)),
            ("c", 1.0, 0.0, OccupationPmf::point(2)),
        ],
        vec![vec![1.0, 0.0], vec![0.0, eps], vec![0.0, 1.0 - eps]],
    )
}

/// One agent, one type, one slot that always arrives and always accepts.
pub fn single_edge(weight: f64) -> Instance {
    single_agent(
        Budget::Finite(1),
        1,
        &[("v", 1.0, weight, OccupationPmf::point(1))],
        vec![vec![1.0]],
    )
}
