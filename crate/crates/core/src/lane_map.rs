//! Lane-graph world model.
//!
//! A map is a set of directed lanes grouped into roads. Lane `index` 0 is the
//! rightmost lane of its road, so lateral adjacency (`left_of` / `right_of`) is
//! derived from `(road, index)` and never stored. Longitudinal topology is the
//! explicit `successors` list of each lane, tagged with a [`ConnectionKind`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Built-in golden scenario, also shipped as `scenarios/urban_grid.json`.
pub const URBAN_GRID: &str = include_str!("../scenarios/urban_grid.json");

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read scenario")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("station {station} outside lane {lane} of length {length}")]
    StationOutOfRange { lane: LaneId, station: f64, length: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, u32)", into = "(String, u32)")]
pub struct LaneId {
    pub road: String,
    pub index: u32,
}

impl LaneId {
    pub fn new(road: impl Into<String>, index: u32) -> Self {
        LaneId {
            road: road.into(),
            index,
        }
    }
}

impl From<(String, u32)> for LaneId {
    fn from((road, index): (String, u32)) -> Self {
        LaneId { road, index }
    }
}

impl From<LaneId> for (String, u32) {
    fn from(id: LaneId) -> Self {
        (id.road, id.index)
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.road, self.index)
    }
}

impl std::str::FromStr for LaneId {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (road, index) = s
            .rsplit_once('.')
            .ok_or_else(|| MapError::Parse(format!("bad lane id `{s}`")))?;
        let index = index
            .parse()
            .map_err(|_| MapError::Parse(format!("bad lane index in `{s}`")))?;
        Ok(LaneId::new(road, index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Sum of consecutive point distances.
pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionKind {
    Straight,
    TurnLeft,
    TurnRight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Point>,
    pub length: f64,
    pub successors: Vec<(LaneId, ConnectionKind)>,
    // arc length at each centerline vertex
    stations: Vec<f64>,
}

impl Lane {
    pub fn new(id: LaneId, centerline: Vec<Point>) -> Result<Self, MapError> {
        if centerline.len() < 2 {
            return Err(MapError::Validation(format!(
                "lane {id} needs at least two centerline points"
            )));
        }
        let mut stations = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        stations.push(0.0);
        for w in centerline.windows(2) {
            let d = w[0].distance(&w[1]);
            if d == 0.0 {
                return Err(MapError::Validation(format!(
                    "lane {id} has repeated consecutive centerline points"
                )));
            }
            acc += d;
            stations.push(acc);
        }
        Ok(Lane {
            id,
            centerline,
            length: acc,
            successors: Vec::new(),
            stations,
        })
    }

    pub fn start_point(&self) -> Point {
        self.centerline[0]
    }

    pub fn end_point(&self) -> Point {
        *self.centerline.last().expect("lane has >= 2 points")
    }

    pub fn successor(&self, to: &LaneId, kind: ConnectionKind) -> bool {
        self.successors.iter().any(|(l, k)| l == to && *k == kind)
    }

    /// Arc-length parameterized point. Caller guarantees `0 <= station <= length`.
    pub fn point_at(&self, station: f64) -> Point {
        if station <= 0.0 {
            return self.centerline[0];
        }
        if station >= self.length {
            return self.end_point();
        }
        // first vertex whose station exceeds the query
        let i = self.stations.partition_point(|&s| s <= station);
        let (s0, s1) = (self.stations[i - 1], self.stations[i]);
        let t = (station - s0) / (s1 - s0);
        self.centerline[i - 1].lerp(&self.centerline[i], t)
    }

    /// Centerline between two stations (`from <= to`), endpoints included.
    /// Always returns at least two points; a zero-length span yields a
    /// degenerate pair of identical points.
    pub fn sub_polyline(&self, from: f64, to: f64) -> Vec<Point> {
        let mut pts = vec![self.point_at(from)];
        for (p, &s) in self.centerline.iter().zip(&self.stations) {
            if s > from && s < to {
                pts.push(*p);
            }
        }
        pts.push(self.point_at(to));
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Home,
    GasStation,
    Grocery,
    School,
    Other,
}

impl PoiCategory {
    pub fn name(self) -> &'static str {
        match self {
            PoiCategory::Home => "home",
            PoiCategory::GasStation => "gas_station",
            PoiCategory::Grocery => "grocery",
            PoiCategory::School => "school",
            PoiCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub name: String,
    pub category: PoiCategory,
    pub lane: LaneId,
    pub station: f64,
}

impl Poi {
    pub fn pose(&self) -> Pose {
        Pose::new(self.lane.clone(), self.station)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub lane: LaneId,
    pub station: f64,
}

impl Pose {
    pub fn new(lane: LaneId, station: f64) -> Self {
        Pose { lane, station }
    }

    /// Hashable key with the station quantized to 0.1 m.
    pub fn key(&self) -> PoseKey {
        PoseKey {
            lane: self.lane.clone(),
            decimeters: (self.station * 10.0).round() as i64,
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:.1}", self.lane, self.station)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoseKey {
    pub lane: LaneId,
    pub decimeters: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMap {
    lanes: BTreeMap<LaneId, Lane>,
    pois: Vec<Poi>,
    start: Pose,
    d_merge: Option<f64>,
}

impl ScenarioMap {
    pub fn new(lanes: Vec<Lane>, pois: Vec<Poi>, start: Pose, d_merge: Option<f64>) -> Result<Self, MapError> {
        let mut by_id = BTreeMap::new();
        for lane in lanes {
            let id = lane.id.clone();
            if by_id.insert(id.clone(), lane).is_some() {
                return Err(MapError::Validation(format!("duplicate lane {id}")));
            }
        }
        let map = ScenarioMap {
            lanes: by_id,
            pois,
            start,
            d_merge,
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<(), MapError> {
        for lane in self.lanes.values() {
            for (succ, _) in &lane.successors {
                if !self.lanes.contains_key(succ) {
                    return Err(MapError::Validation(format!(
                        "connection {} -> {succ} references an unknown lane",
                        lane.id
                    )));
                }
            }
        }
        let mut names = BTreeSet::new();
        for poi in &self.pois {
            if !names.insert(poi.name.as_str()) {
                return Err(MapError::Validation(format!("duplicate POI {}", poi.name)));
            }
            let lane = self
                .lanes
                .get(&poi.lane)
                .ok_or_else(|| MapError::Validation(format!("POI {} on unknown lane {}", poi.name, poi.lane)))?;
            if !(0.0..=lane.length).contains(&poi.station) {
                return Err(MapError::Validation(format!(
                    "POI {} station {} is off lane {} (length {})",
                    poi.name, poi.station, poi.lane, lane.length
                )));
            }
        }
        self.check_pose(&self.start)
            .map_err(|e| MapError::Validation(format!("start pose: {e}")))?;
        if let Some(d) = self.d_merge {
            if !(d.is_finite() && d > 0.0) {
                return Err(MapError::Validation(format!("d_merge must be positive, got {d}")));
            }
        }
        let reachable = self.reachable_from(&self.start.lane);
        for poi in &self.pois {
            if !reachable.contains(&poi.lane) {
                return Err(MapError::Validation(format!(
                    "POI {} on lane {} is unreachable from the start",
                    poi.name, poi.lane
                )));
            }
        }
        Ok(())
    }

    /// Lanes reachable through successor connections and lateral merges.
    pub fn reachable_from(&self, from: &LaneId) -> BTreeSet<LaneId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(from.clone());
        queue.push_back(from.clone());
        while let Some(id) = queue.pop_front() {
            let Some(lane) = self.lanes.get(&id) else {
                continue;
            };
            let lateral = [
                Some(LaneId::new(id.road.clone(), id.index + 1)),
                id.index.checked_sub(1).map(|i| LaneId::new(id.road.clone(), i)),
            ];
            let next = lane
                .successors
                .iter()
                .map(|(l, _)| l.clone())
                .chain(lateral.into_iter().flatten().filter(|l| self.lanes.contains_key(l)));
            for l in next {
                if seen.insert(l.clone()) {
                    queue.push_back(l);
                }
            }
        }
        seen
    }

    pub fn lane(&self, id: &LaneId) -> Result<&Lane, MapError> {
        self.lanes.get(id).ok_or_else(|| MapError::UnknownLane(id.clone()))
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn poi(&self, name: &str) -> Option<&Poi> {
        self.pois.iter().find(|p| p.name == name)
    }

    pub fn start(&self) -> &Pose {
        &self.start
    }

    /// Scenario-level merge distance override, if any.
    pub fn d_merge(&self) -> Option<f64> {
        self.d_merge
    }

    /// `a` is directly left of `b`: same road, one index higher.
    pub fn left_of(&self, a: &LaneId, b: &LaneId) -> Result<bool, MapError> {
        self.lane(a)?;
        self.lane(b)?;
        Ok(a.road == b.road && a.index == b.index + 1)
    }

    pub fn right_of(&self, a: &LaneId, b: &LaneId) -> Result<bool, MapError> {
        self.lane(a)?;
        self.lane(b)?;
        Ok(a.road == b.road && a.index + 1 == b.index)
    }

    pub fn left_neighbor(&self, id: &LaneId) -> Option<&Lane> {
        self.lanes.get(&LaneId::new(id.road.clone(), id.index + 1))
    }

    pub fn right_neighbor(&self, id: &LaneId) -> Option<&Lane> {
        let index = id.index.checked_sub(1)?;
        self.lanes.get(&LaneId::new(id.road.clone(), index))
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<&Lane, MapError> {
        let lane = self.lane(&pose.lane)?;
        if !(0.0..=lane.length).contains(&pose.station) {
            return Err(MapError::StationOutOfRange {
                lane: pose.lane.clone(),
                station: pose.station,
                length: lane.length,
            });
        }
        Ok(lane)
    }

    pub fn position_at(&self, pose: &Pose) -> Result<Point, MapError> {
        Ok(self.check_pose(pose)?.point_at(pose.station))
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        ScenarioFile::from_json(text)?.to_map()
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "urban_grid" => Some(Self::from_json(URBAN_GRID).expect("golden scenario is valid")),
            _ => None,
        }
    }

    /// Serializes the lane graph back to the scenario schema. Request and
    /// preference sections are not part of the map and are left empty.
    pub fn to_scenario_file(&self) -> ScenarioFile {
        let mut roads: BTreeMap<&str, Vec<LaneSpec>> = BTreeMap::new();
        let mut connections = Vec::new();
        for lane in self.lanes.values() {
            roads.entry(&lane.id.road).or_default().push(LaneSpec {
                index: lane.id.index,
                centerline: lane.centerline.clone(),
            });
            for (to, kind) in &lane.successors {
                connections.push(ConnectionSpec {
                    from: lane.id.clone(),
                    to: to.clone(),
                    kind: *kind,
                });
            }
        }
        ScenarioFile {
            roads: roads
                .into_iter()
                .map(|(id, lanes)| RoadSpec {
                    id: id.to_string(),
                    lanes,
                })
                .collect(),
            connections,
            pois: self.pois.clone(),
            start: self.start.clone(),
            d_merge: self.d_merge,
            request: None,
            preferences: Vec::new(),
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioMap, MapError> {
    let text = std::fs::read_to_string(path)?;
    ScenarioMap::from_json(&text)
}

// On-disk schema.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub roads: Vec<RoadSpec>,
    #[serde(default)]
    pub connections: Vec<ConnectionSpec>,
    #[serde(default)]
    pub pois: Vec<Poi>,
    pub start: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_merge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preferences: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub id: String,
    pub lanes: Vec<LaneSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub index: u32,
    pub centerline: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub from: LaneId,
    pub to: LaneId,
    pub kind: ConnectionKind,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, MapError> {
        serde_json::from_str(text).map_err(|e| MapError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn to_map(&self) -> Result<ScenarioMap, MapError> {
        let mut lanes = BTreeMap::new();
        for road in &self.roads {
            for spec in &road.lanes {
                let id = LaneId::new(road.id.clone(), spec.index);
                let lane = Lane::new(id.clone(), spec.centerline.clone())?;
                if lanes.insert(id.clone(), lane).is_some() {
                    return Err(MapError::Validation(format!("duplicate lane {id}")));
                }
            }
        }
        for c in &self.connections {
            let lane = lanes
                .get_mut(&c.from)
                .ok_or_else(|| MapError::Validation(format!("connection from unknown lane {}", c.from)))?;
            if !lane.successor(&c.to, c.kind) {
                lane.successors.push((c.to.clone(), c.kind));
            }
        }
        ScenarioMap::new(
            lanes.into_values().collect(),
            self.pois.clone(),
            self.start.clone(),
            self.d_merge,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lane_road() -> ScenarioMap {
        let json = r#"{
            "roads": [
                {"id": "r0", "lanes": [
                    {"index": 0, "centerline": [[0, 0], [100, 0]]},
                    {"index": 1, "centerline": [[0, 3.5], [100, 3.5]]}
                ]},
                {"id": "r1", "lanes": [
                    {"index": 0, "centerline": [[100, 0], [100, -50], [150, -50]]}
                ]}
            ],
            "connections": [{"from": ["r0", 0], "to": ["r1", 0], "kind": "turn_right"}],
            "pois": [{"name": "shop", "category": "grocery", "lane": ["r0", 1], "station": 60}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        ScenarioMap::from_json(json).unwrap()
    }

    #[test]
    fn left_and_right_of_follow_lane_index() {
        let map = two_lane_road();
        let (a, b, c) = (LaneId::new("r0", 1), LaneId::new("r0", 0), LaneId::new("r1", 0));
        assert!(map.left_of(&a, &b).unwrap());
        assert!(!map.left_of(&b, &a).unwrap());
        assert!(!map.left_of(&a, &c).unwrap());
        assert!(map.right_of(&b, &a).unwrap());
        assert!(matches!(
            map.left_of(&a, &LaneId::new("zz", 0)),
            Err(MapError::UnknownLane(_))
        ));
    }

    #[test]
    fn position_at_interpolates_by_arc_length() {
        let map = two_lane_road();
        let r0 = LaneId::new("r0", 0);
        assert_eq!(
            map.position_at(&Pose::new(r0.clone(), 0.0)).unwrap(),
            Point::new(0.0, 0.0)
        );
        assert_eq!(
            map.position_at(&Pose::new(r0.clone(), 25.0)).unwrap(),
            Point::new(25.0, 0.0)
        );
        assert_eq!(
            map.position_at(&Pose::new(r0.clone(), 100.0)).unwrap(),
            Point::new(100.0, 0.0)
        );
        // corner of the bent lane
        let r1 = LaneId::new("r1", 0);
        assert_eq!(map.lane(&r1).unwrap().length, 100.0);
        assert_eq!(
            map.position_at(&Pose::new(r1.clone(), 75.0)).unwrap(),
            Point::new(125.0, -50.0)
        );
        assert!(matches!(
            map.position_at(&Pose::new(r0, 100.5)),
            Err(MapError::StationOutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_poi_on_unknown_lane() {
        let json = r#"{
            "roads": [{"id": "r0", "lanes": [{"index": 0, "centerline": [[0, 0], [10, 0]]}]}],
            "pois": [{"name": "x", "category": "other", "lane": ["r9", 0], "station": 1}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        assert!(matches!(ScenarioMap::from_json(json), Err(MapError::Validation(_))));
    }

    #[test]
    fn rejects_poi_off_lane_and_unreachable_poi() {
        let off = r#"{
            "roads": [{"id": "r0", "lanes": [{"index": 0, "centerline": [[0, 0], [10, 0]]}]}],
            "pois": [{"name": "x", "category": "other", "lane": ["r0", 0], "station": 11}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        assert!(matches!(ScenarioMap::from_json(off), Err(MapError::Validation(_))));
        let unreachable = r#"{
            "roads": [
                {"id": "r0", "lanes": [{"index": 0, "centerline": [[0, 0], [10, 0]]}]},
                {"id": "r1", "lanes": [{"index": 0, "centerline": [[0, 9], [10, 9]]}]}
            ],
            "pois": [{"name": "x", "category": "other", "lane": ["r1", 0], "station": 1}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        assert!(matches!(
            ScenarioMap::from_json(unreachable),
            Err(MapError::Validation(_))
        ));
    }

    #[test]
    fn rejects_malformed_and_degenerate_lanes() {
        assert!(matches!(ScenarioMap::from_json("{"), Err(MapError::Parse(_))));
        let repeated = r#"{
            "roads": [{"id": "r0", "lanes": [{"index": 0, "centerline": [[0, 0], [0, 0], [1, 0]]}]}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        assert!(matches!(ScenarioMap::from_json(repeated), Err(MapError::Validation(_))));
        let dangling = r#"{
            "roads": [{"id": "r0", "lanes": [{"index": 0, "centerline": [[0, 0], [1, 0]]}]}],
            "connections": [{"from": ["r0", 0], "to": ["r7", 0], "kind": "straight"}],
            "start": {"lane": ["r0", 0], "station": 0}
        }"#;
        assert!(matches!(ScenarioMap::from_json(dangling), Err(MapError::Validation(_))));
    }

    #[test]
    fn urban_grid_has_seven_pois() {
        let map = ScenarioMap::builtin("urban_grid").unwrap();
        let mut names: Vec<_> = map.pois().iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        assert_eq!(
            names,
            [
                "gas_station_1",
                "gas_station_2",
                "grocery_1",
                "grocery_2",
                "home",
                "school",
                "work"
            ]
        );
    }

    #[test]
    fn scenario_round_trips() {
        let map = ScenarioMap::builtin("urban_grid").unwrap();
        let text = map.to_scenario_file().to_json();
        assert_eq!(ScenarioMap::from_json(&text).unwrap(), map);
    }

    #[test]
    fn lane_id_display_parses_back() {
        let id = LaneId::new("north.ave", 2);
        assert_eq!(id.to_string().parse::<LaneId>().unwrap(), id);
    }
}
