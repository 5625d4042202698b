//! Service-level planning: POI visit sequences for a request, and the
//! violation cost of soft ordering preferences over them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_map::{PoiCategory, ScenarioMap};

pub const DEFAULT_VIOLATION_COST: f64 = 300.0;

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("empty or contradictory request: {0}")]
    EmptyRequest(String),
    #[error("unknown POI {0}")]
    UnknownPoi(String),
    #[error("malformed request or preference: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequirementGroup {
    /// Exactly one of these is visited.
    pub alternatives: BTreeSet<String>,
}

impl RequirementGroup {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RequirementGroup {
            alternatives: names.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ServiceRequest {
    #[serde(rename = "groups")]
    pub required: Vec<RequirementGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
}

impl ServiceRequest {
    pub fn is_empty(&self) -> bool {
        self.required.is_empty() && self.terminal.is_none()
    }

    pub fn validate(&self, map: &ScenarioMap) -> Result<(), ServiceError> {
        if self.is_empty() {
            return Err(ServiceError::EmptyRequest("nothing to visit".into()));
        }
        for group in &self.required {
            if group.alternatives.is_empty() {
                return Err(ServiceError::EmptyRequest(
                    "requirement group with no alternatives".into(),
                ));
            }
            for name in &group.alternatives {
                if map.poi(name).is_none() {
                    return Err(ServiceError::UnknownPoi(name.clone()));
                }
            }
        }
        if let Some(t) = &self.terminal {
            if map.poi(t).is_none() {
                return Err(ServiceError::UnknownPoi(t.clone()));
            }
            if self.required.iter().any(|g| g.alternatives.contains(t)) {
                return Err(ServiceError::EmptyRequest(format!(
                    "terminal {t} also appears in a requirement group"
                )));
            }
        }
        Ok(())
    }

    /// Request left after visiting `poi`: the group it satisfied (or the
    /// terminal) is dropped. Returns `None` if `poi` fulfils nothing.
    pub fn after_visit(&self, poi: &str) -> Option<ServiceRequest> {
        if let Some(i) = self.required.iter().position(|g| g.alternatives.contains(poi)) {
            let mut rest = self.clone();
            rest.required.remove(i);
            return Some(rest);
        }
        if self.required.is_empty() && self.terminal.as_deref() == Some(poi) {
            return Some(ServiceRequest::default());
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRelation {
    /// Every visit of `first` precedes every visit of `second`.
    Before,
    /// Every visit of `first` follows every visit of `second`.
    After,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub name: String,
    pub relation: OrderRelation,
    pub first: PoiCategory,
    pub second: PoiCategory,
    #[serde(default = "default_violation_cost")]
    pub violation_cost: f64,
}

fn default_violation_cost() -> f64 {
    DEFAULT_VIOLATION_COST
}

impl Preference {
    pub fn before(name: impl Into<String>, first: PoiCategory, second: PoiCategory) -> Self {
        Preference {
            name: name.into(),
            relation: OrderRelation::Before,
            first,
            second,
            violation_cost: DEFAULT_VIOLATION_COST,
        }
    }

    pub fn after(name: impl Into<String>, first: PoiCategory, second: PoiCategory) -> Self {
        Preference {
            relation: OrderRelation::After,
            ..Preference::before(name, first, second)
        }
    }

    pub fn with_cost(mut self, violation_cost: f64) -> Self {
        self.violation_cost = violation_cost;
        self
    }

    /// True when some pair of visits is out of the required order. Absent
    /// categories never violate.
    pub fn violated_by(&self, categories: &[PoiCategory]) -> bool {
        let (early, late) = match self.relation {
            OrderRelation::Before => (self.first, self.second),
            OrderRelation::After => (self.second, self.first),
        };
        let last_early = categories.iter().rposition(|&c| c == early);
        let first_late = categories.iter().position(|&c| c == late);
        matches!((last_early, first_late), (Some(e), Some(l)) if e > l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoiSequence {
    pub visits: Vec<String>,
}

impl PoiSequence {
    pub fn new<I, S>(visits: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        PoiSequence {
            visits: visits.into_iter().map(Into::into).collect(),
        }
    }
}

impl std::fmt::Display for PoiSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.visits.join(" -> "))
    }
}

/// All visit orders satisfying the hard request, sorted lexicographically.
pub fn enumerate_sequences(map: &ScenarioMap, rqst: &ServiceRequest) -> Result<Vec<PoiSequence>, ServiceError> {
    rqst.validate(map)?;
    let mut out = Vec::new();
    let mut used = vec![false; rqst.required.len()];
    let mut prefix = Vec::new();
    extend(rqst, &mut used, &mut prefix, &mut out);
    out.sort();
    out.dedup();
    Ok(out)
}

fn extend(rqst: &ServiceRequest, used: &mut [bool], prefix: &mut Vec<String>, out: &mut Vec<PoiSequence>) {
    if used.iter().all(|&u| u) {
        let mut visits = prefix.clone();
        visits.extend(rqst.terminal.iter().cloned());
        out.push(PoiSequence { visits });
        return;
    }
    for g in 0..used.len() {
        if used[g] {
            continue;
        }
        used[g] = true;
        for name in &rqst.required[g].alternatives {
            if prefix.contains(name) {
                continue;
            }
            prefix.push(name.clone());
            extend(rqst, used, prefix, out);
            prefix.pop();
        }
        used[g] = false;
    }
}

/// Sum of violation costs over the preferences broken by `visits`.
/// Unknown POI names are ignored.
pub fn pref_cost(map: &ScenarioMap, visits: &[String], prefs: &[Preference]) -> f64 {
    if prefs.is_empty() {
        return 0.0;
    }
    let categories: Vec<PoiCategory> = visits.iter().filter_map(|n| map.poi(n).map(|p| p.category)).collect();
    prefs
        .iter()
        .filter(|p| p.violated_by(&categories))
        .fold(0.0, |acc, p| acc + p.violation_cost)
}
