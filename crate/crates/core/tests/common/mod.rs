#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use glad_core::behavior::{enumerate_all, Behavior, BehaviorKind, BehaviorPlan, SymbolicState};
use glad_core::lane_map::{ConnectionKind, Lane, LaneId, Poi, PoiCategory, Point, Pose, ScenarioMap};
use glad_core::motion::{realize, MotionConfig, Trajectory};
use glad_core::optimizer::{MuOverrides, UtilityCoefficients};
use glad_core::service::{OrderRelation, Preference, RequirementGroup, ServiceRequest};
use rand::seq::SliceRandom;
use rand::Rng;

const CATEGORIES: [PoiCategory; 5] = [
    PoiCategory::Home,
    PoiCategory::GasStation,
    PoiCategory::Grocery,
    PoiCategory::School,
    PoiCategory::Other,
];

/// Lanes of up to `max_lanes` straight lanes over a few roads, with random
/// (possibly cyclic) connections.
pub fn random_lanes<R: Rng>(rng: &mut R, max_lanes: usize) -> Vec<Lane> {
    let total = rng.gen_range(2..=max_lanes);
    let mut ids = Vec::new();
    let mut road = 0;
    while ids.len() < total {
        let width = rng.gen_range(1..=3).min(total - ids.len());
        for index in 0..width {
            ids.push(LaneId::new(format!("r{road}"), index as u32));
        }
        road += 1;
    }
    let mut lanes: Vec<Lane> = ids
        .iter()
        .map(|id| {
            let r: f64 = id.road[1..].parse().unwrap();
            let y = 40.0 * r + 3.5 * f64::from(id.index);
            let x0 = 10.0 * r;
            let len = rng.gen_range(40.0..120.0);
            Lane::new(id.clone(), vec![Point::new(x0, y), Point::new(x0 + len, y)]).unwrap()
        })
        .collect();
    let kinds = [
        ConnectionKind::Straight,
        ConnectionKind::TurnLeft,
        ConnectionKind::TurnRight,
    ];
    let edges = rng.gen_range(1..=2 * total);
    for _ in 0..edges {
        let from = rng.gen_range(0..total);
        let to = rng.gen_range(0..total);
        if lanes[from].id.road == ids[to].road {
            continue;
        }
        let kind = *kinds.choose(rng).unwrap();
        let to_id = ids[to].clone();
        if !lanes[from].successor(&to_id, kind) {
            lanes[from].successors.push((to_id, kind));
        }
    }
    lanes
}

/// A validated map with `n_pois` POIs on lanes reachable from the start.
pub fn random_map<R: Rng>(rng: &mut R, max_lanes: usize, n_pois: usize) -> ScenarioMap {
    let lanes = random_lanes(rng, max_lanes);
    let start_lane = lanes[0].id.clone();
    let start_station = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..10.0)
    };
    let bare = ScenarioMap::new(
        lanes.clone(),
        vec![],
        Pose::new(start_lane.clone(), start_station),
        None,
    )
    .unwrap();
    let reachable: Vec<LaneId> = bare.reachable_from(&start_lane).into_iter().collect();
    let pois = (0..n_pois)
        .map(|i| {
            let lane = reachable.choose(rng).unwrap().clone();
            let length = bare.lane(&lane).unwrap().length;
            Poi {
                name: format!("p{i}"),
                category: *CATEGORIES.choose(rng).unwrap(),
                lane,
                station: rng.gen_range(0.0..length),
            }
        })
        .collect();
    ScenarioMap::new(lanes, pois, Pose::new(start_lane, start_station), None).unwrap()
}

/// Every behavior whose relation holds from `lane`, read straight from the
/// map data.
fn moves(map: &ScenarioMap, lane: &LaneId) -> Vec<Behavior> {
    let mut out = Vec::new();
    for other in map.lanes() {
        if other.id.road == lane.road && other.id.index == lane.index + 1 {
            out.push(Behavior::new(BehaviorKind::MergeLeft, lane.clone(), other.id.clone()));
        }
        if other.id.road == lane.road && other.id.index + 1 == lane.index {
            out.push(Behavior::new(BehaviorKind::MergeRight, lane.clone(), other.id.clone()));
        }
    }
    for (to, kind) in &map.lane(lane).unwrap().successors {
        let k = match kind {
            ConnectionKind::Straight => BehaviorKind::GoStraight,
            ConnectionKind::TurnLeft => BehaviorKind::TurnLeft,
            ConnectionKind::TurnRight => BehaviorKind::TurnRight,
        };
        out.push(Behavior::new(k, lane.clone(), to.clone()));
    }
    out
}

/// Breadth-first enumeration of lane-acyclic plans of at most `horizon`
/// steps that end by parking at `goal`.
pub fn bfs_plans(map: &ScenarioMap, start: &LaneId, goal: &Poi, horizon: usize) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    let mut queue = VecDeque::new();
    queue.push_back((start.clone(), Vec::<Behavior>::new(), vec![start.clone()]));
    while let Some((lane, path, seen)) = queue.pop_front() {
        if path.len() + 1 > horizon {
            continue;
        }
        if lane == goal.lane {
            let mut plan = path.clone();
            plan.push(Behavior::park(lane.clone(), goal.name.clone()));
            found.insert(plan_key(&plan));
        }
        if path.len() + 2 > horizon {
            continue;
        }
        for b in moves(map, &lane) {
            if seen.contains(&b.to_lane) {
                continue;
            }
            let mut p = path.clone();
            let mut s = seen.clone();
            s.push(b.to_lane.clone());
            let next = b.to_lane.clone();
            p.push(b);
            queue.push_back((next, p, s));
        }
    }
    found
}

pub fn plan_key(steps: &[Behavior]) -> String {
    steps.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Independent preference evaluation over a visit order.
pub fn oracle_pref(map: &ScenarioMap, visits: &[String], prefs: &[Preference]) -> f64 {
    let cats: Vec<PoiCategory> = visits.iter().map(|v| map.poi(v).unwrap().category).collect();
    let mut total = 0.0;
    for p in prefs {
        let (early, late) = match p.relation {
            OrderRelation::Before => (p.first, p.second),
            OrderRelation::After => (p.second, p.first),
        };
        let mut violated = false;
        for i in 0..cats.len() {
            for j in i + 1..cats.len() {
                if cats[i] == late && cats[j] == early {
                    violated = true;
                }
            }
        }
        if violated {
            total += p.violation_cost;
        }
    }
    total
}

/// Every visit order satisfying the request: one alternative per group in
/// any order, then the terminal.
pub fn oracle_sequences(rqst: &ServiceRequest) -> BTreeSet<Vec<String>> {
    fn permute(
        groups: &[RequirementGroup],
        used: &mut Vec<bool>,
        cur: &mut Vec<String>,
        out: &mut BTreeSet<Vec<String>>,
    ) {
        if cur.len() == groups.len() {
            out.insert(cur.clone());
            return;
        }
        for i in 0..groups.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            for alt in &groups[i].alternatives {
                cur.push(alt.clone());
                permute(groups, used, cur, out);
                cur.pop();
            }
            used[i] = false;
        }
    }
    let mut out = BTreeSet::new();
    permute(
        &rqst.required,
        &mut vec![false; rqst.required.len()],
        &mut Vec::new(),
        &mut out,
    );
    if let Some(t) = &rqst.terminal {
        out = out
            .into_iter()
            .map(|mut s| {
                s.push(t.clone());
                s
            })
            .collect();
    }
    out
}

pub struct OracleLeg {
    pub plan: BehaviorPlan,
    pub trajectory: Trajectory,
}

/// Realizable plans from `start` to the POI `poi`.
pub fn oracle_legs(map: &ScenarioMap, start: &Pose, poi: &str, horizon: usize) -> Vec<OracleLeg> {
    let goal = map.poi(poi).unwrap();
    let config = MotionConfig::for_map(map);
    enumerate_all(map, &SymbolicState::new(start.lane.clone()), goal, horizon)
        .into_iter()
        .filter_map(|plan| {
            realize(map, start, &plan, &config)
                .ok()
                .map(|trajectory| OracleLeg { plan, trajectory })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleChoice {
    pub sequence: Vec<String>,
    pub steps: Vec<Vec<Behavior>>,
    pub cost: f64,
    pub utility: f64,
}

fn symbolic_cmp(a: &OracleChoice, b: &OracleChoice) -> Ordering {
    a.sequence.cmp(&b.sequence).then_with(|| {
        for (x, y) in a.steps.iter().zip(&b.steps) {
            let px = BehaviorPlan::new(x.clone());
            let py = BehaviorPlan::new(y.clone());
            match px.tie_order(&py) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        a.steps.len().cmp(&b.steps.len())
    })
}

/// Exhaustive argmax over every sequence and every combination of legs.
pub fn exhaustive_best(
    map: &ScenarioMap,
    rqst: &ServiceRequest,
    prefs: &[Preference],
    start: &Pose,
    overrides: &MuOverrides,
    coeffs: &UtilityCoefficients,
    horizon: usize,
) -> Option<OracleChoice> {
    let mut best: Option<OracleChoice> = None;
    for seq in oracle_sequences(rqst) {
        let mut starts = vec![start.clone()];
        for name in &seq[..seq.len() - 1] {
            starts.push(map.poi(name).unwrap().pose());
        }
        let legs: Vec<Vec<OracleLeg>> = starts
            .iter()
            .zip(&seq)
            .map(|(s, poi)| oracle_legs(map, s, poi, horizon))
            .collect();
        if legs.iter().any(Vec::is_empty) {
            continue;
        }
        let pref = oracle_pref(map, &seq, prefs);
        let mut idx = vec![0usize; legs.len()];
        loop {
            let mut cost = 0.0;
            let mut safe = 0.0;
            for (l, &j) in legs.iter().zip(&idx) {
                let leg = &l[j];
                cost += leg.trajectory.total_length;
                for (b, seg) in leg.plan.steps.iter().zip(&leg.trajectory.segments) {
                    safe += overrides.get(&seg.start_pose, b).unwrap_or(0.0);
                }
            }
            let utility = coeffs.alpha0 * cost + coeffs.alpha1 * pref + coeffs.alpha2 * safe;
            let cand = OracleChoice {
                sequence: seq.clone(),
                steps: legs.iter().zip(&idx).map(|(l, &j)| l[j].plan.steps.clone()).collect(),
                cost,
                utility,
            };
            let better = match &best {
                None => true,
                Some(b) => b
                    .utility
                    .total_cmp(&cand.utility)
                    .then_with(|| cand.cost.total_cmp(&b.cost))
                    .then_with(|| symbolic_cmp(&cand, b))
                    .is_lt(),
            };
            if better {
                best = Some(cand);
            }
            // odometer increment
            let mut k = 0;
            loop {
                if k == idx.len() {
                    break;
                }
                idx[k] += 1;
                if idx[k] < legs[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }
    best
}

/// Random request over the map's POIs plus random preferences.
pub fn random_request<R: Rng>(rng: &mut R, map: &ScenarioMap) -> (ServiceRequest, Vec<Preference>) {
    let mut names: Vec<String> = map.pois().iter().map(|p| p.name.clone()).collect();
    names.shuffle(rng);
    let terminal = if rng.gen_bool(0.5) { names.pop() } else { None };
    let n_groups = rng.gen_range(1..=names.len().clamp(1, 3));
    let mut groups: Vec<RequirementGroup> = Vec::new();
    let mut rest = names.into_iter();
    for _ in 0..n_groups {
        let size = rng.gen_range(1..=2);
        let alts: Vec<String> = rest.by_ref().take(size).collect();
        if !alts.is_empty() {
            groups.push(RequirementGroup::new(alts));
        }
    }
    let prefs = (0..rng.gen_range(0..=2))
        .map(|i| {
            let a = *CATEGORIES.choose(rng).unwrap();
            let b = *CATEGORIES.choose(rng).unwrap();
            let p = if rng.gen_bool(0.5) {
                Preference::before(format!("pref{i}"), a, b)
            } else {
                Preference::after(format!("pref{i}"), a, b)
            };
            p.with_cost(rng.gen_range(50.0..400.0))
        })
        .collect();
    (
        ServiceRequest {
            required: groups,
            terminal,
        },
        prefs,
    )
}

/// Continuity between consecutive segments and the straight-line lower
/// bound on length.
pub fn check_trajectory(map: &ScenarioMap, traj: &Trajectory) -> Result<(), String> {
    let gap = traj.max_gap();
    if gap > 1e-6 {
        return Err(format!("segment gap {gap}"));
    }
    if let (Some(first), Some(last)) = (traj.segments.first(), traj.segments.last()) {
        let a = map.position_at(&first.start_pose).map_err(|e| e.to_string())?;
        let b = map.position_at(&last.end_pose).map_err(|e| e.to_string())?;
        if traj.total_length + 1e-9 < a.distance(&b) {
            return Err(format!(
                "length {} below straight line {}",
                traj.total_length,
                a.distance(&b)
            ));
        }
        if first.start_point().distance(&a) > 1e-6 || last.end_point().distance(&b) > 1e-6 {
            return Err("trajectory endpoints off the start or goal pose".into());
        }
    }
    Ok(())
}
