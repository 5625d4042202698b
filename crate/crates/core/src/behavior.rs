//! Behavior-level symbolic planner.
//!
//! The action theory is a hand-compiled version of a small answer-set program
//! over `inlane(L, I)` facts. Each rule's body is the precondition and its
//! head the effect, e.g.
//!
//! ```text
//! inlane(L2, I+1) :- mergeleft(I),  inlane(L1, I), leftof(L2, L1), step(I).
//! inlane(L2, I+1) :- mergeright(I), inlane(L1, I), rightof(L2, L1), step(I).
//! inlane(L2, I+1) :- gostraight(I), inlane(L1, I), straight(L1, L2), step(I).
//! inlane(L2, I+1) :- turnleft(I),   inlane(L1, I), leftturn(L1, L2), step(I).
//! inlane(L2, I+1) :- turnright(I),  inlane(L1, I), rightturn(L1, L2), step(I).
//! parked(P, I+1)  :- park(P, I),    inlane(L, I), poi_lane(P, L), step(I).
//! inlane(L, I+1)  :- stop(I),       inlane(L, I), step(I).
//! ```
//!
//! Nothing is applicable once the vehicle has parked. Plans are found by
//! depth-first forward search with no lane revisited within a plan.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lane_map::{ConnectionKind, LaneId, MapError, Poi, ScenarioMap};

pub const DEFAULT_HORIZON: usize = 30;
pub const DEFAULT_K_MAX: usize = 50;

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("behavior {behavior} is not applicable in lane {lane}")]
    Inapplicable { behavior: Box<Behavior>, lane: LaneId },
    #[error("cannot parse behavior `{0}`")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BehaviorKind {
    MergeLeft,
    MergeRight,
    TurnLeft,
    TurnRight,
    GoStraight,
    Park,
    Stop,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 7] = [
        BehaviorKind::MergeLeft,
        BehaviorKind::MergeRight,
        BehaviorKind::TurnLeft,
        BehaviorKind::TurnRight,
        BehaviorKind::GoStraight,
        BehaviorKind::Park,
        BehaviorKind::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::MergeLeft => "mergeleft",
            BehaviorKind::MergeRight => "mergeright",
            BehaviorKind::TurnLeft => "turnleft",
            BehaviorKind::TurnRight => "turnright",
            BehaviorKind::GoStraight => "gostraight",
            BehaviorKind::Park => "park",
            BehaviorKind::Stop => "stop",
        }
    }

    pub fn is_merge(self) -> bool {
        matches!(self, BehaviorKind::MergeLeft | BehaviorKind::MergeRight)
    }

    fn connection(self) -> Option<ConnectionKind> {
        match self {
            BehaviorKind::GoStraight => Some(ConnectionKind::Straight),
            BehaviorKind::TurnLeft => Some(ConnectionKind::TurnLeft),
            BehaviorKind::TurnRight => Some(ConnectionKind::TurnRight),
            _ => None,
        }
    }

    fn from_connection(kind: ConnectionKind) -> Self {
        match kind {
            ConnectionKind::Straight => BehaviorKind::GoStraight,
            ConnectionKind::TurnLeft => BehaviorKind::TurnLeft,
            ConnectionKind::TurnRight => BehaviorKind::TurnRight,
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorKind {
    type Err = BehaviorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BehaviorError::Parse(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Behavior {
    pub kind: BehaviorKind,
    pub from_lane: LaneId,
    pub to_lane: LaneId,
    /// Set for `park` only.
    pub target_poi: Option<String>,
}

impl Behavior {
    pub fn new(kind: BehaviorKind, from_lane: LaneId, to_lane: LaneId) -> Self {
        Behavior {
            kind,
            from_lane,
            to_lane,
            target_poi: None,
        }
    }

    pub fn park(lane: LaneId, poi: impl Into<String>) -> Self {
        Behavior {
            kind: BehaviorKind::Park,
            from_lane: lane.clone(),
            to_lane: lane,
            target_poi: Some(poi.into()),
        }
    }

    pub fn stop(lane: LaneId) -> Self {
        Behavior::new(BehaviorKind::Stop, lane.clone(), lane)
    }

    /// Tie-break order: kind name, then lane ids, then POI name.
    pub fn tie_order(&self, other: &Behavior) -> Ordering {
        self.kind
            .name()
            .cmp(other.kind.name())
            .then_with(|| self.from_lane.cmp(&other.from_lane))
            .then_with(|| self.to_lane.cmp(&other.to_lane))
            .then_with(|| self.target_poi.cmp(&other.target_poi))
    }
}

/// Line form `kind(from→to)`, with `@poi` appended for park.
impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}→{}", self.kind, self.from_lane, self.to_lane)?;
        if let Some(poi) = &self.target_poi {
            write!(f, "@{poi}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Behavior {
    type Err = BehaviorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BehaviorError::Parse(s.to_string());
        let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
        let body = rest.strip_suffix(')').ok_or_else(bad)?;
        let (from, to) = body.split_once('→').ok_or_else(bad)?;
        let (to, poi) = match to.split_once('@') {
            Some((to, poi)) => (to, Some(poi.to_string())),
            None => (to, None),
        };
        let lane = |t: &str| t.parse::<LaneId>().map_err(|_| bad());
        Ok(Behavior {
            kind: kind.parse()?,
            from_lane: lane(from)?,
            to_lane: lane(to)?,
            target_poi: poi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolicState {
    pub lane: LaneId,
    pub step: usize,
    pub parked_at: Option<String>,
}

impl SymbolicState {
    pub fn new(lane: LaneId) -> Self {
        SymbolicState {
            lane,
            step: 0,
            parked_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPlan {
    pub steps: Vec<Behavior>,
    /// Safety level per step, in `[-1, 0]`.
    pub mu: Vec<f64>,
}

impl BehaviorPlan {
    pub fn new(steps: Vec<Behavior>) -> Self {
        let mu = vec![0.0; steps.len()];
        BehaviorPlan { steps, mu }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_chain_consistent(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].to_lane == w[1].from_lane)
    }

    pub fn tie_order(&self, other: &BehaviorPlan) -> Ordering {
        for (a, b) in self.steps.iter().zip(&other.steps) {
            match a.tie_order(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.steps.len().cmp(&other.steps.len())
    }

    /// One behavior per line.
    pub fn to_lines(&self) -> String {
        self.steps.iter().map(|b| format!("{b}\n")).collect()
    }

    pub fn from_lines(text: &str) -> Result<Self, BehaviorError> {
        let steps = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        Ok(BehaviorPlan::new(steps))
    }
}

impl fmt::Display for BehaviorPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Precondition check: the rule body holds in `map` for `state`.
pub fn applicable(map: &ScenarioMap, state: &SymbolicState, b: &Behavior) -> Result<bool, BehaviorError> {
    map.lane(&state.lane)?;
    let from = map.lane(&b.from_lane)?;
    map.lane(&b.to_lane)?;
    if state.parked_at.is_some() || b.from_lane != state.lane {
        return Ok(false);
    }
    let holds = match b.kind {
        BehaviorKind::MergeLeft => map.left_of(&b.to_lane, &b.from_lane)?,
        BehaviorKind::MergeRight => map.right_of(&b.to_lane, &b.from_lane)?,
        BehaviorKind::GoStraight | BehaviorKind::TurnLeft | BehaviorKind::TurnRight => {
            let conn = b.kind.connection().expect("connection behavior");
            from.successor(&b.to_lane, conn)
        }
        BehaviorKind::Park => {
            b.to_lane == b.from_lane
                && b.target_poi
                    .as_deref()
                    .and_then(|name| map.poi(name))
                    .is_some_and(|poi| poi.lane == b.from_lane)
        }
        BehaviorKind::Stop => b.to_lane == b.from_lane,
    };
    Ok(holds)
}

/// Effect: move to `to_lane`, advance the step, record parking.
pub fn apply(map: &ScenarioMap, state: &SymbolicState, b: &Behavior) -> Result<SymbolicState, BehaviorError> {
    if !applicable(map, state, b)? {
        return Err(BehaviorError::Inapplicable {
            behavior: Box::new(b.clone()),
            lane: state.lane.clone(),
        });
    }
    Ok(SymbolicState {
        lane: b.to_lane.clone(),
        step: state.step + 1,
        parked_at: match b.kind {
            BehaviorKind::Park => b.target_poi.clone(),
            _ => None,
        },
    })
}

/// Transitions that move the vehicle between lanes, in a fixed order.
pub fn lane_transitions(map: &ScenarioMap, lane: &LaneId) -> Vec<Behavior> {
    let mut out = Vec::new();
    if let Some(left) = map.left_neighbor(lane) {
        out.push(Behavior::new(BehaviorKind::MergeLeft, lane.clone(), left.id.clone()));
    }
    if let Some(right) = map.right_neighbor(lane) {
        out.push(Behavior::new(BehaviorKind::MergeRight, lane.clone(), right.id.clone()));
    }
    if let Ok(l) = map.lane(lane) {
        for (to, kind) in &l.successors {
            out.push(Behavior::new(
                BehaviorKind::from_connection(*kind),
                lane.clone(),
                to.clone(),
            ));
        }
    }
    out
}

/// Every acyclic plan of at most `horizon` steps that ends by parking at
/// `goal`, in depth-first discovery order. `stop` never helps reach a POI
/// and is not generated.
pub fn enumerate_all(map: &ScenarioMap, start: &SymbolicState, goal: &Poi, horizon: usize) -> Vec<BehaviorPlan> {
    let mut out = Vec::new();
    if start.parked_at.is_some() || horizon == 0 || map.lane(&start.lane).is_err() {
        return out;
    }
    let mut visited = BTreeSet::new();
    visited.insert(start.lane.clone());
    let mut path = Vec::new();
    search(map, &start.lane, goal, horizon, &mut visited, &mut path, &mut out);
    out
}

fn search(
    map: &ScenarioMap,
    lane: &LaneId,
    goal: &Poi,
    horizon: usize,
    visited: &mut BTreeSet<LaneId>,
    path: &mut Vec<Behavior>,
    out: &mut Vec<BehaviorPlan>,
) {
    if *lane == goal.lane {
        // leaving the goal lane can never lead back to it
        let mut steps = path.clone();
        steps.push(Behavior::park(lane.clone(), goal.name.clone()));
        out.push(BehaviorPlan::new(steps));
        return;
    }
    // one slot must remain for the final park
    if path.len() + 1 >= horizon {
        return;
    }
    for b in lane_transitions(map, lane) {
        if !visited.insert(b.to_lane.clone()) {
            continue;
        }
        let next = b.to_lane.clone();
        path.push(b);
        search(map, &next, goal, horizon, visited, path, out);
        path.pop();
        visited.remove(&next);
    }
}

/// Keeps the `k_max` cheapest items by `cost`; ties go to the item whose
/// plan is lexicographically smaller. Items whose cost is `None` are dropped.
pub fn select_cheapest<T, P, C>(items: Vec<T>, k_max: usize, plan_of: P, mut cost: C) -> Vec<T>
where
    P: Fn(&T) -> &BehaviorPlan,
    C: FnMut(&T) -> Option<f64>,
{
    let mut scored: Vec<(f64, T)> = items.into_iter().filter_map(|t| cost(&t).map(|c| (c, t))).collect();
    scored.sort_by(|(ca, a), (cb, b)| ca.total_cmp(cb).then_with(|| plan_of(a).tie_order(plan_of(b))));
    scored.truncate(k_max);
    scored.into_iter().map(|(_, t)| t).collect()
}

/// Feasible plans from `start` to `goal`, ranked by motion cost measured
/// from the beginning of the start lane. Plans that cannot be realized
/// geometrically rank after all realizable ones.
pub fn enumerate_plans(
    map: &ScenarioMap,
    start: &SymbolicState,
    goal: &Poi,
    horizon: usize,
    k_max: usize,
) -> Vec<BehaviorPlan> {
    let config = crate::motion::MotionConfig::for_map(map);
    let origin = crate::lane_map::Pose::new(start.lane.clone(), 0.0);
    select_cheapest(
        enumerate_all(map, start, goal, horizon),
        k_max,
        |p| p,
        |plan| {
            Some(
                crate::motion::realize(map, &origin, plan, &config)
                    .map(|t| t.total_length)
                    .unwrap_or(f64::INFINITY),
            )
        },
    )
}
