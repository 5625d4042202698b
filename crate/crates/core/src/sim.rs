//! Abstract traffic world.
//!
//! Each execution of a risky behavior is truly unsafe with probability
//! `lambda`. The outcome for a given (pose, behavior) is drawn once per trial
//! and reused, so the estimator and the execution see the same sample. The
//! draw depends only on the trial seed and the key, which gives every policy
//! run with the same seed the same hazards.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{Behavior, BehaviorKind};
use crate::lane_map::{Pose, PoseKey};
use crate::motion::TrajectorySegment;
use crate::safety::{GroundTruth, SafetyLevel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("segment starts at {segment} but the vehicle is at {vehicle}")]
    PoseMismatch { segment: Box<Pose>, vehicle: Box<Pose> },
    #[error("segment for {segment_from} does not match behavior {behavior}")]
    BehaviorMismatch {
        behavior: Box<Behavior>,
        segment_from: Box<Pose>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficCondition {
    pub name: String,
    pub lambda: f64,
}

impl TrafficCondition {
    pub fn normal() -> Self {
        TrafficCondition {
            name: "normal".into(),
            lambda: 0.05,
        }
    }

    pub fn heavy() -> Self {
        TrafficCondition {
            name: "heavy".into(),
            lambda: 0.08,
        }
    }

    pub fn custom(name: impl Into<String>, lambda: f64) -> Self {
        TrafficCondition {
            name: name.into(),
            lambda,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "normal" => Some(Self::normal()),
            "heavy" => Some(Self::heavy()),
            _ => None,
        }
    }
}

pub fn default_risky_kinds() -> BTreeSet<BehaviorKind> {
    [BehaviorKind::MergeLeft, BehaviorKind::MergeRight].into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionEvent {
    pub behavior: Behavior,
    /// Pose where the behavior started.
    pub pose: Pose,
    pub truth_unsafe: bool,
    pub mu_observed: Option<SafetyLevel>,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub pose: Pose,
    pub traffic: TrafficCondition,
    pub risky_kinds: BTreeSet<BehaviorKind>,
    seed: u64,
    truth_cache: HashMap<(PoseKey, Behavior), GroundTruth>,
}

impl WorldState {
    pub fn new(start: Pose, traffic: TrafficCondition, seed: u64) -> Self {
        WorldState {
            pose: start,
            traffic,
            risky_kinds: default_risky_kinds(),
            seed,
            truth_cache: HashMap::new(),
        }
    }

    pub fn with_risky_kinds(mut self, kinds: BTreeSet<BehaviorKind>) -> Self {
        self.risky_kinds = kinds;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_risky(&self, kind: BehaviorKind) -> bool {
        self.risky_kinds.contains(&kind)
    }

    /// Memoized truth for `b` started at `pose`. Non-risky kinds are always
    /// safe.
    pub fn ground_truth(&mut self, pose: &Pose, b: &Behavior) -> GroundTruth {
        if !self.is_risky(b.kind) {
            return GroundTruth::SAFE;
        }
        let key = (pose.key(), b.clone());
        if let Some(t) = self.truth_cache.get(&key) {
            return *t;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key_seed(self.seed, &key));
        let truth = GroundTruth {
            is_unsafe: rng.gen_bool(self.traffic.lambda.clamp(0.0, 1.0)),
        };
        self.truth_cache.insert(key, truth);
        truth
    }

    pub fn cached_truth(&self, pose: &Pose, b: &Behavior) -> Option<GroundTruth> {
        self.truth_cache.get(&(pose.key(), b.clone())).copied()
    }

    pub fn truth_cache_len(&self) -> usize {
        self.truth_cache.len()
    }

    /// Carries out `b` along `segment`. Behaviors always complete; an unsafe
    /// outcome is only recorded.
    pub fn execute_behavior(
        &mut self,
        b: &Behavior,
        segment: &TrajectorySegment,
        mu_observed: Option<SafetyLevel>,
    ) -> Result<ExecutionEvent, SimError> {
        if segment.start_pose.key() != self.pose.key() {
            return Err(SimError::PoseMismatch {
                segment: Box::new(segment.start_pose.clone()),
                vehicle: Box::new(self.pose.clone()),
            });
        }
        if b.from_lane != segment.start_pose.lane || b.to_lane != segment.end_pose.lane {
            return Err(SimError::BehaviorMismatch {
                behavior: Box::new(b.clone()),
                segment_from: Box::new(segment.start_pose.clone()),
            });
        }
        let start = self.pose.clone();
        let truth = self.ground_truth(&start, b);
        self.pose = segment.end_pose.clone();
        Ok(ExecutionEvent {
            behavior: b.clone(),
            pose: start,
            truth_unsafe: truth.is_unsafe,
            mu_observed,
            distance: segment.length,
        })
    }
}

fn key_seed(seed: u64, key: &(PoseKey, Behavior)) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut h);
    key.hash(&mut h);
    h.finish()
}

/// CSV trace: `step,behavior,lane,station,truth_unsafe,mu,distance`.
pub fn events_to_csv(events: &[ExecutionEvent]) -> String {
    let mut out = String::from("step,behavior,lane,station,truth_unsafe,mu,distance\n");
    for (i, e) in events.iter().enumerate() {
        let mu = e.mu_observed.map(|m| m.mu().to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{mu},{}",
            e.behavior.kind, e.pose.lane, e.pose.station, e.truth_unsafe, e.distance
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_map::{LaneId, Point};

    fn merge_at(station: f64) -> (Pose, Behavior) {
        (
            Pose::new(LaneId::new("r", 0), station),
            Behavior::new(BehaviorKind::MergeLeft, LaneId::new("r", 0), LaneId::new("r", 1)),
        )
    }

    #[test]
    fn lambda_extremes() {
        let (pose, b) = merge_at(0.0);
        let mut never = WorldState::new(pose.clone(), TrafficCondition::custom("x", 0.0), 1);
        let mut always = WorldState::new(pose.clone(), TrafficCondition::custom("x", 1.0), 1);
        for s in 0..200 {
            let p = Pose::new(pose.lane.clone(), f64::from(s));
            assert!(!never.ground_truth(&p, &b).is_unsafe);
            assert!(always.ground_truth(&p, &b).is_unsafe);
        }
        let straight = Behavior::new(BehaviorKind::GoStraight, pose.lane.clone(), LaneId::new("q", 0));
        assert!(!always.ground_truth(&pose, &straight).is_unsafe);
    }

    #[test]
    fn heavy_traffic_rate() {
        let (_, b) = merge_at(0.0);
        let mut world = WorldState::new(merge_at(0.0).0, TrafficCondition::heavy(), 99);
        let n = 100_000;
        let unsafe_count = (0..n)
            .filter(|i| {
                let p = Pose::new(LaneId::new("r", 0), f64::from(*i) * 0.1);
                world.ground_truth(&p, &b).is_unsafe
            })
            .count();
        assert!((unsafe_count as f64 / n as f64 - 0.08).abs() < 0.005);
    }

    #[test]
    fn truth_is_memoized_and_seed_determined() {
        let (pose, b) = merge_at(12.0);
        let mut a = WorldState::new(pose.clone(), TrafficCondition::custom("x", 0.5), 5);
        let first = a.ground_truth(&pose, &b);
        for _ in 0..10 {
            assert_eq!(a.ground_truth(&pose, &b), first);
        }
        // a second world with the same seed agrees regardless of query order
        let mut other = WorldState::new(pose.clone(), TrafficCondition::custom("x", 0.5), 5);
        other.ground_truth(&merge_at(40.0).0, &b);
        assert_eq!(other.ground_truth(&pose, &b), first);
        // stations within the same 0.1 m bucket share a key
        assert_eq!(a.ground_truth(&Pose::new(pose.lane.clone(), 12.04), &b), first);
    }

    #[test]
    fn execute_advances_pose() {
        let lane = LaneId::new("r", 0);
        let seg = TrajectorySegment {
            behavior_index: 0,
            polyline: vec![Point::new(40.0, 0.0), Point::new(100.0, 0.0)],
            length: 60.0,
            start_pose: Pose::new(lane.clone(), 40.0),
            end_pose: Pose::new(LaneId::new("s", 0), 0.0),
        };
        let b = Behavior::new(BehaviorKind::GoStraight, lane.clone(), LaneId::new("s", 0));
        let mut world = WorldState::new(Pose::new(lane.clone(), 40.0), TrafficCondition::custom("x", 1.0), 0);
        let e = world.execute_behavior(&b, &seg, None).unwrap();
        assert!(!e.truth_unsafe);
        assert_eq!(e.distance, 60.0);
        assert_eq!(world.pose, seg.end_pose);
        assert!(matches!(
            world.execute_behavior(&b, &seg, None),
            Err(SimError::PoseMismatch { .. })
        ));
    }

    #[test]
    fn risky_merge_at_lambda_one_is_unsafe() {
        let (pose, b) = merge_at(0.0);
        let seg = TrajectorySegment {
            behavior_index: 0,
            polyline: vec![Point::new(0.0, 0.0), Point::new(15.0, 3.5)],
            length: 15.0f64.hypot(3.5),
            start_pose: pose.clone(),
            end_pose: Pose::new(LaneId::new("r", 1), 15.0),
        };
        let mut world = WorldState::new(pose.clone(), TrafficCondition::custom("x", 1.0), 3);
        let estimated = world.ground_truth(&pose, &b);
        let e = world.execute_behavior(&b, &seg, None).unwrap();
        assert!(e.truth_unsafe && estimated.is_unsafe);
        assert_eq!(
            events_to_csv(&[e]).lines().nth(1).unwrap(),
            format!("0,mergeleft,r.0,0,true,,{}", 15.0f64.hypot(3.5))
        );
    }
}
