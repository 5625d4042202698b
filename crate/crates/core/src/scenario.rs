use std::path::Path;

use crate::lane_map::{MapError, ScenarioFile, ScenarioMap, URBAN_GRID};
use crate::service::{Preference, ServiceError, ServiceRequest};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// A map together with the service request and preferences stored
/// alongside it in the scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: ScenarioMap,
    pub request: Option<ServiceRequest>,
    pub preferences: Vec<Preference>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file = ScenarioFile::from_json(text)?;
        let map = file.to_map()?;
        let request = file
            .request
            .map(serde_json::from_value::<ServiceRequest>)
            .transpose()
            .map_err(|e| ServiceError::Parse(e.to_string()))?;
        if let Some(r) = &request {
            r.validate(&map)?;
        }
        let preferences = file
            .preferences
            .into_iter()
            .map(serde_json::from_value::<Preference>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ServiceError::Parse(e.to_string()))?;
        if let Some(p) = preferences
            .iter()
            .find(|p| p.violation_cost.is_nan() || p.violation_cost < 0.0)
        {
            return Err(ServiceError::Parse(format!("negative violation cost in {}", p.name)).into());
        }
        Ok(Scenario {
            map,
            request,
            preferences,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(MapError::from)?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "urban_grid" => Some(Self::from_json(URBAN_GRID).expect("golden scenario is valid")),
            _ => None,
        }
    }

    /// A built-in name or a path on disk.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(name_or_path),
        }
    }

    pub fn to_json(&self) -> String {
        let mut file = self.map.to_scenario_file();
        file.request = self
            .request
            .as_ref()
            .map(|r| serde_json::to_value(r).expect("request serializes"));
        file.preferences = self
            .preferences
            .iter()
            .map(|p| serde_json::to_value(p).expect("preference serializes"))
            .collect();
        file.to_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urban_grid_carries_the_errand_request() {
        let s = Scenario::builtin("urban_grid").unwrap();
        let rqst = s.request.as_ref().unwrap();
        assert_eq!(rqst.required.len(), 3);
        assert_eq!(rqst.terminal.as_deref(), Some("home"));
        assert_eq!(s.preferences.len(), 2);
        assert!(s.preferences.iter().all(|p| p.violation_cost == 300.0));
    }

    #[test]
    fn round_trip_through_json() {
        let s = Scenario::builtin("urban_grid").unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
