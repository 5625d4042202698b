//! Execution loop with safety-driven replanning, and the baseline policies.
//!
//! Each iteration takes the first behavior of the incumbent plan, estimates
//! its safety level at the current pose (when the policy uses safety),
//! replans with that estimate, and either executes the behavior (the plan
//! did not change) or adopts the new plan. An estimate is kept for the rest
//! of the stay at that pose, so a pose is never re-estimated into a
//! flip-flop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_map::Pose;
use crate::optimizer::{
    CostMode, MuOverrides, PlanError, Planner, PlanningProblem, TaskMotionPlan, UtilityCoefficients,
};
use crate::safety::{EstimateQuery, SafetyEstimator};
use crate::service::{pref_cost, Preference, ServiceRequest};
use crate::sim::{ExecutionEvent, SimError, WorldState};

pub const UNSAFE_PENALTY: f64 = 15000.0;
pub const DEFAULT_CONSTANT_BEHAVIOR_COST: f64 = 40.0;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no progress after {0} iterations")]
    NonTermination(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyName {
    #[serde(rename = "GLAD")]
    Glad,
    NoSafe,
    NoPref,
    NoCost,
}

impl PolicyName {
    pub const ALL: [PolicyName; 4] = [
        PolicyName::Glad,
        PolicyName::NoSafe,
        PolicyName::NoPref,
        PolicyName::NoCost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Glad => "GLAD",
            PolicyName::NoSafe => "NoSafe",
            PolicyName::NoPref => "NoPref",
            PolicyName::NoCost => "NoCost",
        }
    }
}

impl std::fmt::Display for PolicyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match norm.as_str() {
            "glad" => Ok(PolicyName::Glad),
            "nosafe" => Ok(PolicyName::NoSafe),
            "nopref" => Ok(PolicyName::NoPref),
            "nocost" => Ok(PolicyName::NoCost),
            _ => Err(format!("unknown policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyCostMode {
    Distance,
    ConstantPerBehavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub name: PolicyName,
    pub use_safety: bool,
    pub use_pref: bool,
    pub cost_mode: PolicyCostMode,
    pub constant_behavior_cost: f64,
}

impl PolicyConfig {
    pub fn new(name: PolicyName) -> Self {
        let glad = PolicyConfig {
            name,
            use_safety: true,
            use_pref: true,
            cost_mode: PolicyCostMode::Distance,
            constant_behavior_cost: DEFAULT_CONSTANT_BEHAVIOR_COST,
        };
        match name {
            PolicyName::Glad => glad,
            PolicyName::NoSafe => PolicyConfig {
                use_safety: false,
                ..glad
            },
            PolicyName::NoPref => PolicyConfig {
                use_pref: false,
                ..glad
            },
            PolicyName::NoCost => PolicyConfig {
                cost_mode: PolicyCostMode::ConstantPerBehavior,
                ..glad
            },
        }
    }

    pub fn planner_cost_mode(&self) -> CostMode {
        match self.cost_mode {
            PolicyCostMode::Distance => CostMode::Distance,
            PolicyCostMode::ConstantPerBehavior => CostMode::ConstantPerBehavior(self.constant_behavior_cost),
        }
    }
}

/// Which coefficient weights the preference term at scoring time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefWeight {
    /// The planning preference weight (alpha1).
    #[default]
    Alpha1,
    /// The safety weight (alpha2), as literally written in one form of the
    /// execution utility.
    Alpha2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecScoring {
    pub coeffs: UtilityCoefficients,
    pub pref_weight: PrefWeight,
    pub unsafe_penalty: f64,
}

impl Default for ExecScoring {
    fn default() -> Self {
        ExecScoring {
            coeffs: UtilityCoefficients::default(),
            pref_weight: PrefWeight::Alpha1,
            unsafe_penalty: UNSAFE_PENALTY,
        }
    }
}

impl ExecScoring {
    pub fn pref_coefficient(&self) -> f64 {
        match self.pref_weight {
            PrefWeight::Alpha1 => self.coeffs.alpha1,
            PrefWeight::Alpha2 => self.coeffs.alpha2,
        }
    }

    pub fn utility(&self, total_cost: f64, pref_cost: f64, unsafe_count: usize) -> f64 {
        self.coeffs.alpha0 * total_cost + self.pref_coefficient() * pref_cost
            - self.unsafe_penalty * unsafe_count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `execute <behavior>` or `switch <behavior>`.
    pub action: String,
    pub mu: Option<f64>,
    pub replanned: bool,
    pub utility_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub policy: PolicyName,
    pub events: Vec<ExecutionEvent>,
    pub visits: Vec<String>,
    pub total_cost: f64,
    pub pref_cost: f64,
    pub unsafe_count: usize,
    pub replans: usize,
    pub estimator_calls: usize,
    pub exec_utility: f64,
    /// Plans adopted over the trial: the initial one, then each switch.
    pub plans: Vec<TaskMotionPlan>,
    pub log: Vec<IterationRecord>,
}

impl ExecutionTrace {
    /// Penalty term for unsafe events (non-positive).
    pub fn unsafe_penalty(&self, scoring: &ExecScoring) -> f64 {
        -scoring.unsafe_penalty * self.unsafe_count as f64
    }

    /// `iter,action,mu,replanned,utility_so_far` lines followed by a summary
    /// record.
    pub fn log_text(&self) -> String {
        let mut out = String::from("iter,action,mu,replanned,utility_so_far\n");
        for r in &self.log {
            let mu = r.mu.map(|m| format!("{m:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{mu},{},{:.3}",
                r.iter, r.action, r.replanned, r.utility_so_far
            );
        }
        let _ = writeln!(
            out,
            "summary,policy={},visits={},cost={:.3},pref={:.1},unsafe={},replans={},utility={:.3}",
            self.policy,
            self.visits.join(">"),
            self.total_cost,
            self.pref_cost,
            self.unsafe_count,
            self.replans,
            self.exec_utility
        );
        out
    }
}

/// Symbolic plan equality: same POI sequence, same behavior steps.
pub fn plan_equal(a: &TaskMotionPlan, b: &TaskMotionPlan) -> bool {
    a.same_symbolic(b)
}

/// Everything fixed for a trial besides the world and the estimator.
#[derive(Debug, Clone, Copy)]
pub struct TrialSetup<'a> {
    /// Must be configured with the policy's cost mode.
    pub planner: &'a Planner,
    pub request: &'a ServiceRequest,
    pub prefs: &'a [Preference],
    pub policy: &'a PolicyConfig,
    pub scoring: &'a ExecScoring,
    /// Coefficients used for planning; usually `scoring.coeffs`.
    pub planning_coeffs: &'a UtilityCoefficients,
}

/// Runs one trial from the world's current pose until the request is done.
pub fn run_trial(
    setup: &TrialSetup<'_>,
    estimator: &mut dyn SafetyEstimator,
    world: &mut WorldState,
) -> Result<ExecutionTrace, ExecError> {
    let planner = setup.planner;
    let map = planner.map();
    let no_prefs: [Preference; 0] = [];
    let planning_prefs: &[Preference] = if setup.policy.use_pref { setup.prefs } else { &no_prefs };
    let max_iterations = 10 * planner.config().horizon.max(1) * (setup.request.required.len() + 1);

    let mut request = setup.request.clone();
    let mut visits: Vec<String> = Vec::new();
    let mut overrides = MuOverrides::new();
    let mut events: Vec<ExecutionEvent> = Vec::new();
    let mut log = Vec::new();
    let mut replans = 0;
    let mut estimator_calls = 0;
    let mut unsafe_count = 0;
    let mut total_cost = 0.0;

    let plan_from = |request: &ServiceRequest, visits: &[String], pose: &Pose, overrides: &MuOverrides| {
        planner.optimal_plan(&PlanningProblem {
            request,
            prefs: planning_prefs,
            visited: visits,
            start: pose,
            overrides,
            coeffs: setup.planning_coeffs,
        })
    };

    let mut incumbent = plan_from(&request, &visits, &world.pose, &overrides)?;
    let mut plans = vec![incumbent.clone()];
    let mut iter = 0;
    while !request.is_empty() {
        if iter >= max_iterations {
            return Err(ExecError::NonTermination(iter));
        }
        iter += 1;
        let (behavior, _) = incumbent
            .first_behavior()
            .map(|(b, s)| (b.clone(), s.clone()))
            .ok_or_else(|| PlanError::InfeasibleRequest(world.pose.clone()))?;

        let mut mu = overrides.get(&world.pose, &behavior);
        if setup.policy.use_safety && mu.is_none() && world.is_risky(behavior.kind) {
            let pose = world.pose.clone();
            let truth = world.ground_truth(&pose, &behavior);
            let level = estimator.estimate(&EstimateQuery {
                pose: &pose,
                behavior: &behavior,
                truth,
            });
            estimator_calls += 1;
            overrides.insert(&pose, &behavior, level.mu());
            mu = Some(level.mu());
        }

        let candidate = plan_from(&request, &visits, &world.pose, &overrides)?;
        if plan_equal(&incumbent, &candidate) {
            let (b, segment) = candidate
                .first_behavior()
                .map(|(b, s)| (b.clone(), s.clone()))
                .expect("equal plans share the first behavior");
            let observed = mu.and_then(|m| crate::safety::SafetyLevel::new(m).ok());
            let event = world.execute_behavior(&b, &segment, observed)?;
            total_cost += event.distance;
            if event.truth_unsafe {
                unsafe_count += 1;
            }
            if let Some(poi) = &b.target_poi {
                if let Some(rest) = request.after_visit(poi) {
                    request = rest;
                    visits.push(poi.clone());
                }
            }
            if event.pose.key() != world.pose.key() {
                overrides.clear();
            }
            events.push(event);
            let pref_so_far = pref_cost(map, &visits, setup.prefs);
            log.push(IterationRecord {
                iter,
                action: format!("execute {b}"),
                mu,
                replanned: false,
                utility_so_far: setup.scoring.utility(total_cost, pref_so_far, unsafe_count),
            });
            if request.is_empty() {
                break;
            }
            incumbent = plan_from(&request, &visits, &world.pose, &overrides)?;
        } else {
            replans += 1;
            let pref_so_far = pref_cost(map, &visits, setup.prefs);
            log.push(IterationRecord {
                iter,
                action: format!(
                    "switch {}",
                    candidate
                        .first_behavior()
                        .map(|(b, _)| b.to_string())
                        .unwrap_or_default()
                ),
                mu,
                replanned: true,
                utility_so_far: setup.scoring.utility(total_cost, pref_so_far, unsafe_count),
            });
            plans.push(candidate.clone());
            incumbent = candidate;
        }
    }

    let pref = pref_cost(map, &visits, setup.prefs);
    Ok(ExecutionTrace {
        policy: setup.policy.name,
        events,
        visits,
        total_cost,
        pref_cost: pref,
        unsafe_count,
        replans,
        estimator_calls,
        exec_utility: setup.scoring.utility(total_cost, pref, unsafe_count),
        plans,
        log,
    })
}
