//! Monte-Carlo comparison of policies under a traffic condition.
//!
//! Trial `i` uses seed `base_seed + i` for every policy, so all policies
//! face the same hazards and the same sensor stream.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executive::{run_trial, ExecError, ExecScoring, ExecutionTrace, PolicyConfig, PolicyName, TrialSetup};
use crate::optimizer::{Planner, PlannerConfig, UtilityCoefficients};
use crate::safety::{ConfusionMatrixEstimator, SafetyError, SensorModel, SensorParams};
use crate::scenario::Scenario;
use crate::sim::{TrafficCondition, WorldState};

pub const DEFAULT_TRIALS: usize = 6400;
const SENSOR_STREAM: u64 = 0x5EED_5E45_0000_0001;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scenario has no service request")]
    NoRequest,
    #[error(transparent)]
    Sensor(#[from] SafetyError),
    #[error("trial {trial} ({policy}): {source}")]
    Trial {
        trial: usize,
        policy: PolicyName,
        source: ExecError,
    },
    #[error("no results to report")]
    EmptyResults,
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub base_seed: u64,
    pub policies: Vec<PolicyName>,
    pub traffic: Vec<TrafficCondition>,
    pub sensor: SensorParams,
    pub coefficients: UtilityCoefficients,
    pub scoring: ExecScoring,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            policies: PolicyName::ALL.to_vec(),
            traffic: vec![TrafficCondition::normal(), TrafficCondition::heavy()],
            sensor: SensorParams::default(),
            coefficients: UtilityCoefficients::default(),
            scoring: ExecScoring::default(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub utility: f64,
    pub cost: f64,
    pub pref: f64,
    pub unsafe_count: usize,
    pub replans: usize,
    pub visits: Vec<String>,
}

impl TrialRecord {
    fn from_trace(trial: usize, seed: u64, t: &ExecutionTrace) -> Self {
        TrialRecord {
            trial,
            seed,
            utility: t.exec_utility,
            cost: t.total_cost,
            pref: t.pref_cost,
            unsafe_count: t.unsafe_count,
            replans: t.replans,
            visits: t.visits.clone(),
        }
    }
}

/// One planner per policy over a shared scenario.
#[derive(Debug)]
pub struct Bench {
    pub scenario: Scenario,
    pub sensor: SensorModel,
    pub scoring: ExecScoring,
    pub coefficients: UtilityCoefficients,
    planners: Vec<(PolicyConfig, Planner)>,
}

impl Bench {
    pub fn new(scenario: Scenario, config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        if scenario.request.is_none() {
            return Err(ExperimentError::NoRequest);
        }
        let sensor = SensorModel::from_params(&config.sensor)?;
        let planners = config
            .policies
            .iter()
            .map(|&name| {
                let policy = PolicyConfig::new(name);
                let mut pc = PlannerConfig::for_map(&scenario.map);
                pc.cost_mode = policy.planner_cost_mode();
                (policy, Planner::new(scenario.map.clone(), pc))
            })
            .collect();
        Ok(Bench {
            scenario,
            sensor,
            scoring: config.scoring,
            coefficients: config.coefficients,
            planners,
        })
    }

    pub fn policies(&self) -> impl Iterator<Item = PolicyName> + '_ {
        self.planners.iter().map(|(p, _)| p.name)
    }

    pub fn planner(&self, policy: PolicyName) -> Option<&Planner> {
        self.planners.iter().find(|(p, _)| p.name == policy).map(|(_, pl)| pl)
    }

    /// Full trace of one trial.
    pub fn run_one(
        &self,
        policy: PolicyName,
        traffic: &TrafficCondition,
        seed: u64,
    ) -> Result<ExecutionTrace, ExecError> {
        let (cfg, planner) = self
            .planners
            .iter()
            .find(|(p, _)| p.name == policy)
            .expect("policy configured for this bench");
        let request = self.scenario.request.as_ref().expect("checked in Bench::new");
        let setup = TrialSetup {
            planner,
            request,
            prefs: &self.scenario.preferences,
            policy: cfg,
            scoring: &self.scoring,
            planning_coeffs: &self.coefficients,
        };
        let mut world = WorldState::new(self.scenario.map.start().clone(), traffic.clone(), seed);
        let mut estimator = ConfusionMatrixEstimator::new(self.sensor.clone(), seed ^ SENSOR_STREAM);
        run_trial(&setup, &mut estimator, &mut world)
    }

    pub fn run_cell(
        &self,
        policy: PolicyName,
        traffic: &TrafficCondition,
        trials: usize,
        base_seed: u64,
    ) -> Result<Vec<TrialRecord>, ExperimentError> {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let seed = base_seed.wrapping_add(i as u64);
                self.run_one(policy, traffic, seed)
                    .map(|t| TrialRecord::from_trace(i, seed, &t))
                    .map_err(|source| ExperimentError::Trial {
                        trial: i,
                        policy,
                        source,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: PolicyName,
    pub traffic: String,
    pub n: usize,
    pub mean_utility: f64,
    pub std_utility: f64,
    pub mean_cost: f64,
    pub mean_pref: f64,
    /// Mean unsafe penalty, non-positive.
    pub mean_unsafe: f64,
}

impl CellSummary {
    pub fn from_records(policy: PolicyName, traffic: &str, records: &[TrialRecord], scoring: &ExecScoring) -> Self {
        let n = records.len();
        let nf = n.max(1) as f64;
        let utilities: Vec<f64> = records.iter().map(|r| r.utility).collect();
        let mean_utility = utilities.iter().sum::<f64>() / nf;
        let var = if n > 1 {
            utilities.iter().map(|u| (u - mean_utility).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        CellSummary {
            policy,
            traffic: traffic.to_string(),
            n,
            mean_utility,
            std_utility: var.sqrt(),
            mean_cost: records.iter().map(|r| r.cost).sum::<f64>() / nf,
            mean_pref: records.iter().map(|r| r.pref).sum::<f64>() / nf,
            mean_unsafe: -scoring.unsafe_penalty * records.iter().map(|r| r.unsafe_count as f64).sum::<f64>() / nf
                + 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub summary: CellSummary,
    pub records: Vec<TrialRecord>,
}

pub fn run_experiment(scenario: &Scenario, config: &ExperimentConfig) -> Result<Vec<CellResult>, ExperimentError> {
    let bench = Bench::new(scenario.clone(), config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| {
        let mut out = Vec::new();
        for traffic in &config.traffic {
            for &policy in &config.policies {
                let records = bench.run_cell(policy, traffic, config.trials, config.base_seed)?;
                let summary = CellSummary::from_records(policy, &traffic.name, &records, &bench.scoring);
                out.push(CellResult { summary, records });
            }
        }
        Ok(out)
    })
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| {
        let idx = ((means.len() - 1) as f64 * q).round() as usize;
        means[idx]
    };
    (at(tail), at(1.0 - tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown format `{s}` (expected table or csv)")),
        }
    }
}

const COLUMNS: [&str; 8] = [
    "policy",
    "traffic",
    "n",
    "mean_utility",
    "std_utility",
    "mean_cost",
    "mean_pref",
    "mean_unsafe",
];

pub fn emit_report(summaries: &[CellSummary], format: ReportFormat) -> Result<String, ExperimentError> {
    if summaries.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    let rows: Vec<[String; 8]> = summaries
        .iter()
        .map(|s| {
            [
                s.policy.to_string(),
                s.traffic.clone(),
                s.n.to_string(),
                format!("{:.3}", s.mean_utility),
                format!("{:.3}", s.std_utility),
                format!("{:.3}", s.mean_cost),
                format!("{:.3}", s.mean_pref),
                format!("{:.3}", s.mean_unsafe),
            ]
        })
        .collect();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for r in &rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let mut widths = COLUMNS.map(str::len);
            for r in &rows {
                for (w, cell) in widths.iter_mut().zip(r) {
                    *w = (*w).max(cell.len());
                }
            }
            let line = |cells: &[String]| {
                let mut l = String::new();
                for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                    if i < 2 {
                        let _ = write!(l, "{c:<w$}  ");
                    } else {
                        let _ = write!(l, "{c:>w$}  ");
                    }
                }
                l.trim_end().to_string()
            };
            out.push_str(&line(&COLUMNS.map(String::from)));
            out.push('\n');
            for r in &rows {
                out.push_str(&line(r));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(utility: f64, cost: f64, pref: f64, unsafe_count: usize) -> TrialRecord {
        TrialRecord {
            trial: 0,
            seed: 0,
            utility,
            cost,
            pref,
            unsafe_count,
            replans: 0,
            visits: vec![],
        }
    }

    #[test]
    fn summary_statistics() {
        let recs = [record(-100.0, 100.0, 0.0, 0), record(-15300.0, 300.0, 0.0, 1)];
        let s = CellSummary::from_records(PolicyName::Glad, "heavy", &recs, &ExecScoring::default());
        assert_eq!(s.n, 2);
        assert_eq!(s.mean_utility, -7700.0);
        assert_eq!(s.mean_cost, 200.0);
        assert_eq!(s.mean_unsafe, -7500.0);
        assert!((s.std_utility - 15200.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(
            emit_report(&[], ReportFormat::Csv),
            Err(ExperimentError::EmptyResults)
        ));
    }

    #[test]
    fn csv_report_columns() {
        let s = CellSummary::from_records(
            PolicyName::NoCost,
            "normal",
            &[record(-1.0, 1.0, 0.0, 0)],
            &ExecScoring::default(),
        );
        let csv = emit_report(&[s], ReportFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "policy,traffic,n,mean_utility,std_utility,mean_cost,mean_pref,mean_unsafe"
        );
        assert_eq!(lines.next().unwrap(), "NoCost,normal,1,-1.000,0.000,1.000,0.000,0.000");
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let values: Vec<f64> = (0..1000).map(f64::from).collect();
        let (lo, hi) = bootstrap_mean_ci(&values, 500, 0.95, 1);
        assert!(lo < 499.5 && 499.5 < hi);
        assert!(hi - lo < 60.0);
    }

    #[test]
    fn paired_seeds_are_reproducible() {
        let scenario = Scenario::builtin("urban_grid").unwrap();
        let config = ExperimentConfig {
            trials: 8,
            base_seed: 42,
            traffic: vec![TrafficCondition::heavy()],
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&scenario, &config).unwrap();
        let b = run_experiment(&scenario, &config).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.summary, y.summary);
            assert_eq!(x.records, y.records);
        }
    }
}
