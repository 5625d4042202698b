//! Cross-layer plan optimization.
//!
//! Candidates are every POI sequence for the request, combined with every
//! realizable behavior plan for each leg. The selected plan maximizes
//!
//! ```text
//! utility = alpha0 * cost + alpha1 * pref + alpha2 * safe
//! ```
//!
//! where `safe` sums the safety level of every behavior. Safety levels start
//! at 0.0 and only differ where a caller supplies an estimate for a specific
//! (pose, behavior) pair. Ties go to the lower cost and then to the
//! lexicographically smaller plan (sequence names first, then leg behaviors).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{
    enumerate_all, select_cheapest, Behavior, BehaviorPlan, SymbolicState, DEFAULT_HORIZON, DEFAULT_K_MAX,
};
use crate::lane_map::{LaneId, Pose, PoseKey, ScenarioMap};
use crate::motion::{self, MotionConfig, Trajectory};
use crate::service::{enumerate_sequences, pref_cost, PoiSequence, Preference, ServiceError, ServiceRequest};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("no POI sequence has a realizable chain of legs from {0}")]
    InfeasibleRequest(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityCoefficients {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for UtilityCoefficients {
    fn default() -> Self {
        UtilityCoefficients {
            alpha0: -1.0,
            alpha1: -1.0,
            alpha2: 500.0,
        }
    }
}

impl UtilityCoefficients {
    /// Cost and preference weights must be negative, the safety weight
    /// positive.
    pub fn new(alpha0: f64, alpha1: f64, alpha2: f64) -> Option<Self> {
        (alpha0 < 0.0 && alpha1 < 0.0 && alpha2 > 0.0).then_some(UtilityCoefficients { alpha0, alpha1, alpha2 })
    }

    pub fn eval(&self, cost: f64, pref: f64, safe: f64) -> f64 {
        self.alpha0 * cost + self.alpha1 * pref + self.alpha2 * safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Motion cost from the trajectory.
    Distance,
    /// Fixed cost per behavior, regardless of geometry.
    ConstantPerBehavior(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub k_max: usize,
    pub motion: MotionConfig,
    pub cost_mode: CostMode,
}

impl PlannerConfig {
    pub fn for_map(map: &ScenarioMap) -> Self {
        PlannerConfig {
            horizon: DEFAULT_HORIZON,
            k_max: DEFAULT_K_MAX,
            motion: MotionConfig::for_map(map),
            cost_mode: CostMode::Distance,
        }
    }
}

/// Safety-level estimates for specific behaviors at specific poses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MuOverrides(HashMap<(PoseKey, Behavior), f64>);

impl MuOverrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pose: &Pose, behavior: &Behavior, mu: f64) {
        self.0.insert((pose.key(), behavior.clone()), mu);
    }

    pub fn get(&self, pose: &Pose, behavior: &Behavior) -> Option<f64> {
        self.get_key(&pose.key(), behavior)
    }

    fn get_key(&self, key: &PoseKey, behavior: &Behavior) -> Option<f64> {
        if self.0.is_empty() {
            return None;
        }
        // avoid cloning the behavior for the lookup key
        self.0
            .iter()
            .find(|((k, b), _)| k == key && b == behavior)
            .map(|(_, mu)| *mu)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }
}

/// One realizable way of driving to a POI.
#[derive(Debug, Clone)]
pub struct LegCandidate {
    pub plan: BehaviorPlan,
    pub trajectory: Trajectory,
    /// Planning cost under the planner's cost mode.
    pub cost: f64,
    step_keys: Vec<PoseKey>,
}

impl LegCandidate {
    pub fn distance(&self) -> f64 {
        self.trajectory.total_length
    }

    fn mu(&self, step: usize, overrides: &MuOverrides) -> f64 {
        overrides
            .get_key(&self.step_keys[step], &self.plan.steps[step])
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMotionPlan {
    pub sequence: PoiSequence,
    /// One per leg; `mu` holds the safety level used for each step.
    pub behavior_plans: Vec<BehaviorPlan>,
    pub trajectories: Vec<Trajectory>,
    /// Planning cost term.
    pub cost: f64,
    /// Geometric length, whatever the cost mode.
    pub distance: f64,
    pub pref: f64,
    pub safe: f64,
    pub utility: f64,
}

impl TaskMotionPlan {
    /// Equality of the symbolic content: sequence and behavior steps.
    pub fn same_symbolic(&self, other: &TaskMotionPlan) -> bool {
        self.sequence == other.sequence
            && self.behavior_plans.len() == other.behavior_plans.len()
            && self
                .behavior_plans
                .iter()
                .zip(&other.behavior_plans)
                .all(|(a, b)| a.steps == b.steps)
    }

    pub fn first_behavior(&self) -> Option<(&Behavior, &motion::TrajectorySegment)> {
        let leg = self.behavior_plans.iter().position(|p| !p.is_empty())?;
        Some((&self.behavior_plans[leg].steps[0], &self.trajectories[leg].segments[0]))
    }

    pub fn behavior_count(&self) -> usize {
        self.behavior_plans.iter().map(BehaviorPlan::len).sum()
    }

    /// Human-readable report: sequence, per-leg behaviors and costs, and the
    /// utility breakdown.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sequence: {}", self.sequence);
        for (i, (plan, traj)) in self.behavior_plans.iter().zip(&self.trajectories).enumerate() {
            let poi = self.sequence.visits.get(i).map_or("?", String::as_str);
            let _ = writeln!(out, "leg {} -> {poi}: {:.1} m", i + 1, traj.total_length);
            for (b, mu) in plan.steps.iter().zip(&plan.mu) {
                if *mu != 0.0 {
                    let _ = writeln!(out, "  {b}  mu={mu:.3}");
                } else {
                    let _ = writeln!(out, "  {b}");
                }
            }
        }
        let _ = writeln!(out, "distance: {:.3}", self.distance);
        let _ = writeln!(out, "cost: {:.3}", self.cost);
        let _ = writeln!(out, "pref: {:.3}", self.pref);
        let _ = writeln!(out, "safe: {:.3}", self.safe);
        let _ = writeln!(out, "utility: {:.3}", self.utility);
        out
    }
}

/// Selection order over plans: `Less` means `a` is preferred.
pub fn plan_order(a: &TaskMotionPlan, b: &TaskMotionPlan) -> Ordering {
    b.utility
        .total_cmp(&a.utility)
        .then_with(|| a.cost.total_cmp(&b.cost))
        .then_with(|| symbolic_order(&a.sequence, &a.behavior_plans, &b.sequence, &b.behavior_plans))
}

fn symbolic_order<'a, I, J>(sa: &PoiSequence, pa: I, sb: &PoiSequence, pb: J) -> Ordering
where
    I: IntoIterator<Item = &'a BehaviorPlan>,
    J: IntoIterator<Item = &'a BehaviorPlan>,
{
    sa.cmp(sb).then_with(|| {
        let mut pa = pa.into_iter();
        let mut pb = pb.into_iter();
        loop {
            match (pa.next(), pb.next()) {
                (Some(x), Some(y)) => match x.tie_order(y) {
                    Ordering::Equal => continue,
                    ord => return ord,
                },
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
            }
        }
    })
}

pub fn utility(plan: &TaskMotionPlan, coeffs: &UtilityCoefficients) -> f64 {
    coeffs.eval(plan.cost, plan.pref, plan.safe)
}

/// Everything the optimizer needs besides the map.
#[derive(Debug, Clone, Copy)]
pub struct PlanningProblem<'a> {
    pub request: &'a ServiceRequest,
    pub prefs: &'a [Preference],
    /// POIs already visited, in order; preferences are scored over
    /// `visited` followed by the planned sequence.
    pub visited: &'a [String],
    pub start: &'a Pose,
    pub overrides: &'a MuOverrides,
    pub coeffs: &'a UtilityCoefficients,
}

type LegKey = (LaneId, u64, String);

/// Plan optimizer over one map. Leg candidates depend only on the start
/// pose and target POI, so they are computed once and shared.
#[derive(Debug)]
pub struct Planner {
    map: ScenarioMap,
    config: PlannerConfig,
    legs: RwLock<HashMap<LegKey, Arc<[LegCandidate]>>>,
}

impl Planner {
    pub fn new(map: ScenarioMap, config: PlannerConfig) -> Self {
        Planner {
            map,
            config,
            legs: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_defaults(map: ScenarioMap) -> Self {
        let config = PlannerConfig::for_map(&map);
        Self::new(map, config)
    }

    pub fn map(&self) -> &ScenarioMap {
        &self.map
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Up to `k_max` realizable behavior plans from `start` to `poi`,
    /// cheapest first.
    pub fn legs(&self, start: &Pose, poi: &str) -> Arc<[LegCandidate]> {
        let key = (start.lane.clone(), start.station.to_bits(), poi.to_string());
        if let Some(hit) = self.legs.read().expect("leg cache poisoned").get(&key) {
            return hit.clone();
        }
        let computed = self.compute_legs(start, poi);
        self.legs
            .write()
            .expect("leg cache poisoned")
            .entry(key)
            .or_insert(computed)
            .clone()
    }

    fn compute_legs(&self, start: &Pose, poi_name: &str) -> Arc<[LegCandidate]> {
        let Some(poi) = self.map.poi(poi_name) else {
            return Arc::from(Vec::new());
        };
        let plans = enumerate_all(
            &self.map,
            &SymbolicState::new(start.lane.clone()),
            poi,
            self.config.horizon,
        );
        let candidates: Vec<LegCandidate> = plans
            .into_iter()
            .filter_map(|plan| {
                let trajectory = motion::realize(&self.map, start, &plan, &self.config.motion).ok()?;
                let cost = match self.config.cost_mode {
                    CostMode::Distance => motion::cost(&trajectory, self.config.motion.metric),
                    CostMode::ConstantPerBehavior(c) => c * plan.len() as f64,
                };
                let step_keys = trajectory.segments.iter().map(|s| s.start_pose.key()).collect();
                Some(LegCandidate {
                    plan,
                    trajectory,
                    cost,
                    step_keys,
                })
            })
            .collect();
        let ranked = select_cheapest(candidates, self.config.k_max, |c| &c.plan, |c| Some(c.cost));
        Arc::from(ranked)
    }

    /// Every leg list computed so far, keyed by start pose and POI.
    pub fn cached_legs(&self) -> Vec<(Pose, String, Arc<[LegCandidate]>)> {
        let cache = self.legs.read().expect("leg cache poisoned");
        let mut out: Vec<_> = cache
            .iter()
            .map(|((lane, bits, poi), legs)| {
                (
                    Pose::new(lane.clone(), f64::from_bits(*bits)),
                    poi.clone(),
                    legs.clone(),
                )
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.0.lane, a.0.station, &a.1)
                .partial_cmp(&(&b.0.lane, b.0.station, &b.1))
                .unwrap_or(Ordering::Equal)
        });
        out
    }

    /// Builds the plan for a sequence and one chosen candidate per leg.
    pub fn assemble(
        &self,
        problem: &PlanningProblem<'_>,
        sequence: &PoiSequence,
        legs: &[&LegCandidate],
    ) -> TaskMotionPlan {
        let (cost, distance, safe) = totals(legs, problem.overrides);
        let pref = self.sequence_pref(problem, sequence);
        let behavior_plans = legs
            .iter()
            .map(|leg| {
                let mut plan = leg.plan.clone();
                plan.mu = (0..plan.len()).map(|i| leg.mu(i, problem.overrides)).collect();
                plan
            })
            .collect();
        TaskMotionPlan {
            sequence: sequence.clone(),
            behavior_plans,
            trajectories: legs.iter().map(|l| l.trajectory.clone()).collect(),
            cost,
            distance,
            pref,
            safe,
            utility: problem.coeffs.eval(cost, pref, safe),
        }
    }

    fn sequence_pref(&self, problem: &PlanningProblem<'_>, sequence: &PoiSequence) -> f64 {
        if problem.prefs.is_empty() {
            return 0.0;
        }
        let full: Vec<String> = problem.visited.iter().chain(&sequence.visits).cloned().collect();
        pref_cost(&self.map, &full, problem.prefs)
    }

    /// Start pose of each leg of `sequence`: the problem start, then each
    /// visited POI in turn.
    pub fn leg_starts(&self, start: &Pose, sequence: &PoiSequence) -> Vec<Pose> {
        let mut starts = vec![start.clone()];
        for name in &sequence.visits {
            if let Some(poi) = self.map.poi(name) {
                starts.push(poi.pose());
            }
        }
        starts.truncate(sequence.visits.len());
        starts
    }

    /// The utility-maximizing task-motion plan.
    pub fn optimal_plan(&self, problem: &PlanningProblem<'_>) -> Result<TaskMotionPlan, PlanError> {
        let sequences = enumerate_sequences(&self.map, problem.request)?;
        let coeffs = problem.coeffs;
        let mut best: Option<Best> = None;

        for (seq_index, sequence) in sequences.iter().enumerate() {
            let starts = self.leg_starts(problem.start, sequence);
            let legs: Vec<Arc<[LegCandidate]>> = starts
                .iter()
                .zip(&sequence.visits)
                .map(|(s, poi)| self.legs(s, poi))
                .collect();
            if legs.iter().any(|l| l.is_empty()) {
                continue;
            }
            // approximate per-leg utilities, best first
            let scored: Vec<Vec<(f64, usize)>> = legs
                .iter()
                .map(|cands| {
                    let mut v: Vec<(f64, usize)> = cands
                        .iter()
                        .enumerate()
                        .map(|(j, c)| {
                            let safe: f64 = (0..c.plan.len()).map(|i| c.mu(i, problem.overrides)).sum();
                            (coeffs.alpha0 * c.cost + coeffs.alpha2 * safe, j)
                        })
                        .collect();
                    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    v
                })
                .collect();
            let pref_term = coeffs.alpha1 * self.sequence_pref(problem, sequence);
            let mut rest_max = vec![0.0; scored.len() + 1];
            for i in (0..scored.len()).rev() {
                rest_max[i] = rest_max[i + 1] + scored[i][0].0;
            }
            if let Some(b) = &best {
                if pref_term + rest_max[0] < b.utility - slack(b.utility) {
                    continue;
                }
            }
            let mut search = LegSearch {
                planner: self,
                problem,
                sequence,
                seq_index,
                legs: &legs,
                scored: &scored,
                rest_max: &rest_max,
                pref_term,
                choice: Vec::with_capacity(legs.len()),
                best: &mut best,
            };
            search.descend(0, 0.0);
        }

        let best = best.ok_or_else(|| PlanError::InfeasibleRequest(problem.start.clone()))?;
        let sequence = &sequences[best.seq_index];
        let starts = self.leg_starts(problem.start, sequence);
        let legs: Vec<Arc<[LegCandidate]>> = starts
            .iter()
            .zip(&sequence.visits)
            .map(|(s, poi)| self.legs(s, poi))
            .collect();
        let chosen: Vec<&LegCandidate> = legs.iter().zip(&best.choice).map(|(l, &j)| &l[j]).collect();
        Ok(self.assemble(problem, sequence, &chosen))
    }
}

fn slack(u: f64) -> f64 {
    1e-6 * (1.0 + u.abs())
}

fn totals(legs: &[&LegCandidate], overrides: &MuOverrides) -> (f64, f64, f64) {
    let mut cost = 0.0;
    let mut distance = 0.0;
    let mut safe = 0.0;
    for leg in legs {
        cost += leg.cost;
        distance += leg.distance();
        for i in 0..leg.plan.len() {
            safe += leg.mu(i, overrides);
        }
    }
    (cost, distance, safe)
}

struct Best {
    utility: f64,
    cost: f64,
    seq_index: usize,
    choice: Vec<usize>,
    sequence: PoiSequence,
    plans: Vec<BehaviorPlan>,
}

struct LegSearch<'s, 'p> {
    planner: &'s Planner,
    problem: &'s PlanningProblem<'p>,
    sequence: &'s PoiSequence,
    seq_index: usize,
    legs: &'s [Arc<[LegCandidate]>],
    scored: &'s [Vec<(f64, usize)>],
    rest_max: &'s [f64],
    pref_term: f64,
    choice: Vec<usize>,
    best: &'s mut Option<Best>,
}

impl LegSearch<'_, '_> {
    fn descend(&mut self, depth: usize, partial: f64) {
        if depth == self.legs.len() {
            self.evaluate_leaf();
            return;
        }
        for &(u, j) in &self.scored[depth] {
            let bound = self.pref_term + partial + u + self.rest_max[depth + 1];
            if let Some(b) = self.best.as_ref() {
                if bound < b.utility - slack(b.utility) {
                    // candidates are sorted, the rest are worse
                    break;
                }
            }
            self.choice.push(j);
            self.descend(depth + 1, partial + u);
            self.choice.pop();
        }
    }

    fn evaluate_leaf(&mut self) {
        let chosen: Vec<&LegCandidate> = self.legs.iter().zip(&self.choice).map(|(l, &j)| &l[j]).collect();
        let (cost, _, safe) = totals(&chosen, self.problem.overrides);
        let pref = self.planner.sequence_pref(self.problem, self.sequence);
        let utility = self.problem.coeffs.eval(cost, pref, safe);
        let better = match self.best.as_ref() {
            None => true,
            Some(b) => b
                .utility
                .total_cmp(&utility)
                .then_with(|| cost.total_cmp(&b.cost))
                .then_with(|| {
                    symbolic_order(
                        self.sequence,
                        chosen.iter().map(|c| &c.plan),
                        &b.sequence,
                        b.plans.iter(),
                    )
                })
                .is_lt(),
        };
        if better {
            *self.best = Some(Best {
                utility,
                cost,
                seq_index: self.seq_index,
                choice: self.choice.clone(),
                sequence: self.sequence.clone(),
                plans: chosen.iter().map(|c| c.plan.clone()).collect(),
            });
        }
    }
}

/// One-shot optimization with default planner settings.
pub fn optimal_plan(
    map: &ScenarioMap,
    rqst: &ServiceRequest,
    prefs: &[Preference],
    mu_overrides: &MuOverrides,
    start: &Pose,
    coeffs: &UtilityCoefficients,
) -> Result<TaskMotionPlan, PlanError> {
    let planner = Planner::with_defaults(map.clone());
    planner.optimal_plan(&PlanningProblem {
        request: rqst,
        prefs,
        visited: &[],
        start,
        overrides: mu_overrides,
        coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehaviorKind;
    use crate::scenario::Scenario;
    use crate::service::RequirementGroup;

    fn plan_with(cost: f64, pref: f64, safe: f64) -> TaskMotionPlan {
        TaskMotionPlan {
            sequence: PoiSequence::new(["x"]),
            behavior_plans: vec![],
            trajectories: vec![],
            cost,
            distance: cost,
            pref,
            safe,
            utility: 0.0,
        }
    }

    #[test]
    fn utility_arithmetic_with_default_coefficients() {
        let c = UtilityCoefficients::default();
        assert_eq!(utility(&plan_with(100.0, 0.0, 0.0), &c), -100.0);
        assert_eq!(utility(&plan_with(100.0, 300.0, -0.2), &c), -500.0);
        assert_eq!(utility(&plan_with(0.0, 0.0, -1.0), &c), -500.0);
    }

    #[test]
    fn coefficient_signs_are_enforced() {
        assert!(UtilityCoefficients::new(-1.0, -1.0, 500.0).is_some());
        assert!(UtilityCoefficients::new(1.0, -1.0, 500.0).is_none());
        assert!(UtilityCoefficients::new(-1.0, -1.0, -5.0).is_none());
    }

    #[test]
    fn urban_grid_selects_the_preference_respecting_errand() {
        let s = Scenario::builtin("urban_grid").unwrap();
        let plan = optimal_plan(
            &s.map,
            s.request.as_ref().unwrap(),
            &s.preferences,
            &MuOverrides::new(),
            s.map.start(),
            &UtilityCoefficients::default(),
        )
        .unwrap();
        assert_eq!(
            plan.sequence,
            PoiSequence::new(["gas_station_1", "school", "grocery_2", "home"])
        );
        assert_eq!(plan.pref, 0.0);
        assert_eq!(plan.safe, 0.0);
        assert_eq!(plan.utility, -plan.distance);
        for (traj, next) in plan.trajectories.iter().zip(plan.trajectories.iter().skip(1)) {
            assert_eq!(traj.end_pose(), next.segments.first().map(|s| &s.start_pose));
        }
    }

    #[test]
    fn single_poi_on_start_lane_is_one_park() {
        let s = Scenario::builtin("urban_grid").unwrap();
        let start = s.map.start().clone();
        let target = s
            .map
            .pois()
            .iter()
            .find(|p| p.lane == start.lane && p.station > start.station)
            .expect("urban_grid has a POI ahead on the start lane")
            .clone();
        let rqst = ServiceRequest {
            required: vec![RequirementGroup::new([target.name.clone()])],
            terminal: None,
        };
        let plan = optimal_plan(
            &s.map,
            &rqst,
            &[],
            &MuOverrides::new(),
            &start,
            &UtilityCoefficients::default(),
        )
        .unwrap();
        assert_eq!(plan.behavior_count(), 1);
        assert_eq!(plan.behavior_plans[0].steps[0].kind, BehaviorKind::Park);
        assert_eq!(plan.utility, -(target.station - start.station));
    }

    #[test]
    fn infeasible_when_poi_is_behind_on_a_dead_end() {
        let map = ScenarioMap::from_json(
            r#"{
            "roads": [{"id": "r", "lanes": [{"index": 0, "centerline": [[0, 0], [100, 0]]}]}],
            "pois": [{"name": "p", "category": "other", "lane": ["r", 0], "station": 10}],
            "start": {"lane": ["r", 0], "station": 50}
        }"#,
        )
        .unwrap();
        let rqst = ServiceRequest {
            required: vec![RequirementGroup::new(["p"])],
            terminal: None,
        };
        let err = optimal_plan(
            &map,
            &rqst,
            &[],
            &MuOverrides::new(),
            map.start(),
            &UtilityCoefficients::default(),
        );
        assert!(matches!(err, Err(PlanError::InfeasibleRequest(_))));
    }

    #[test]
    fn report_lists_legs() {
        let s = Scenario::builtin("urban_grid").unwrap();
        let plan = optimal_plan(
            &s.map,
            s.request.as_ref().unwrap(),
            &s.preferences,
            &MuOverrides::new(),
            s.map.start(),
            &UtilityCoefficients::default(),
        )
        .unwrap();
        let report = plan.report();
        assert!(report.starts_with("sequence: gas_station_1 -> school -> grocery_2 -> home\n"));
        assert_eq!(report.matches("leg ").count(), 4);
    }
}
