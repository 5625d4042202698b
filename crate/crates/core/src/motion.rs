//! Motion-level realization of behavior plans as piecewise-linear trajectories.

use std::fmt::Write as _;

use thiserror::Error;

use crate::behavior::{BehaviorKind, BehaviorPlan};
use crate::lane_map::{polyline_length, MapError, Point, Pose, ScenarioMap};

pub const DEFAULT_D_MERGE: f64 = 15.0;
pub const MIN_D_MERGE: f64 = 5.0;
/// 30 km/h in m/s.
pub const NOMINAL_SPEED: f64 = 30.0 / 3.6;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("plan step {index} starts in lane {expected}, vehicle is in {actual}")]
    InconsistentPlan {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("merge from {pose} has only {available:.2} m of lane left")]
    MergeBeyondLaneEnd { pose: Pose, available: f64 },
    #[error("POI {poi} at station {poi_station} is behind the vehicle at {pose}")]
    PoiBehindVehicle { poi: String, poi_station: f64, pose: Pose },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostMetric {
    /// Meters traveled.
    Distance,
    /// Seconds at a constant speed (m/s).
    Time { speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    pub d_merge: f64,
    pub min_d_merge: f64,
    pub metric: CostMetric,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            d_merge: DEFAULT_D_MERGE,
            min_d_merge: MIN_D_MERGE,
            metric: CostMetric::Distance,
        }
    }
}

impl MotionConfig {
    /// Defaults, with the scenario's merge distance if it sets one.
    pub fn for_map(map: &ScenarioMap) -> Self {
        MotionConfig {
            d_merge: map.d_merge().unwrap_or(DEFAULT_D_MERGE),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub behavior_index: usize,
    pub polyline: Vec<Point>,
    pub length: f64,
    pub start_pose: Pose,
    pub end_pose: Pose,
}

impl TrajectorySegment {
    fn new(behavior_index: usize, polyline: Vec<Point>, start_pose: Pose, end_pose: Pose) -> Self {
        debug_assert!(polyline.len() >= 2);
        TrajectorySegment {
            behavior_index,
            length: polyline_length(&polyline),
            polyline,
            start_pose,
            end_pose,
        }
    }

    pub fn start_point(&self) -> Point {
        self.polyline[0]
    }

    pub fn end_point(&self) -> Point {
        *self.polyline.last().expect("segment has >= 2 points")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub segments: Vec<TrajectorySegment>,
    pub total_length: f64,
}

impl Trajectory {
    /// Largest gap between one segment's end and the next segment's start.
    pub fn max_gap(&self) -> f64 {
        self.segments
            .windows(2)
            .map(|w| w[0].end_point().distance(&w[1].start_point()))
            .fold(0.0, f64::max)
    }

    pub fn end_pose(&self) -> Option<&Pose> {
        self.segments.last().map(|s| &s.end_pose)
    }

    /// CSV with header `segment,behavior,x,y`, one row per polyline vertex.
    pub fn to_csv(&self, plan: &BehaviorPlan) -> String {
        let mut out = String::from("segment,behavior,x,y\n");
        for (i, seg) in self.segments.iter().enumerate() {
            let kind = plan.steps.get(seg.behavior_index).map_or("?", |b| b.kind.name());
            for p in &seg.polyline {
                let _ = writeln!(out, "{i},{kind},{},{}", p.x, p.y);
            }
        }
        out
    }
}

/// Converts a behavior plan into one trajectory segment per behavior,
/// starting at `start`.
pub fn realize(
    map: &ScenarioMap,
    start: &Pose,
    plan: &BehaviorPlan,
    config: &MotionConfig,
) -> Result<Trajectory, MotionError> {
    map.check_pose(start)?;
    let mut pose = start.clone();
    let mut segments = Vec::with_capacity(plan.len());
    for (index, b) in plan.steps.iter().enumerate() {
        if b.from_lane != pose.lane {
            return Err(MotionError::InconsistentPlan {
                index,
                expected: b.from_lane.to_string(),
                actual: pose.lane.to_string(),
            });
        }
        let lane = map.lane(&pose.lane)?;
        let segment = match b.kind {
            BehaviorKind::GoStraight | BehaviorKind::TurnLeft | BehaviorKind::TurnRight => {
                let next = map.lane(&b.to_lane)?;
                let mut polyline = lane.sub_polyline(pose.station, lane.length);
                let entry = next.start_point();
                if entry != *polyline.last().expect("non-empty") {
                    // drop the degenerate duplicate when already at the lane end
                    if polyline.len() == 2 && polyline[0] == polyline[1] {
                        polyline.pop();
                    }
                    polyline.push(entry);
                }
                TrajectorySegment::new(index, polyline, pose.clone(), Pose::new(b.to_lane.clone(), 0.0))
            }
            BehaviorKind::MergeLeft | BehaviorKind::MergeRight => {
                let target = map.lane(&b.to_lane)?;
                let available = (target.length - pose.station).min(lane.length - pose.station);
                let d = config.d_merge.min(available);
                if d < config.min_d_merge {
                    return Err(MotionError::MergeBeyondLaneEnd {
                        pose: pose.clone(),
                        available,
                    });
                }
                let end_station = pose.station + d;
                let polyline = vec![lane.point_at(pose.station), target.point_at(end_station)];
                TrajectorySegment::new(index, polyline, pose.clone(), Pose::new(b.to_lane.clone(), end_station))
            }
            BehaviorKind::Park => {
                let name = b.target_poi.as_deref().unwrap_or_default();
                let poi =
                    map.poi(name)
                        .filter(|p| p.lane == pose.lane)
                        .ok_or_else(|| MotionError::InconsistentPlan {
                            index,
                            expected: format!("lane of POI `{name}`"),
                            actual: pose.lane.to_string(),
                        })?;
                if poi.station < pose.station {
                    return Err(MotionError::PoiBehindVehicle {
                        poi: poi.name.clone(),
                        poi_station: poi.station,
                        pose: pose.clone(),
                    });
                }
                let polyline = lane.sub_polyline(pose.station, poi.station);
                TrajectorySegment::new(index, polyline, pose.clone(), poi.pose())
            }
            BehaviorKind::Stop => {
                let here = lane.point_at(pose.station);
                TrajectorySegment::new(index, vec![here, here], pose.clone(), pose.clone())
            }
        };
        pose = segment.end_pose.clone();
        segments.push(segment);
    }
    let total_length = segments.iter().map(|s| s.length).sum();
    Ok(Trajectory { segments, total_length })
}

/// Trajectory cost under `metric`; distance by default.
pub fn cost(traj: &Trajectory, metric: CostMetric) -> f64 {
    match metric {
        CostMetric::Distance => traj.total_length,
        CostMetric::Time { speed } => traj.total_length / speed,
    }
}
