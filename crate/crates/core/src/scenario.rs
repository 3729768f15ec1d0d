//! Planning scenarios: zones, endpoints, weights and planner settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{CostWeights, FlightRequest, PlannerConfig};
use crate::state::{ControlBounds, EvtolState, NoiseAbatementZone, StateError, ZoneFile, ZoneRecord};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Zones given inline or as a path to a zone file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZoneSource {
    Path(PathBuf),
    Inline(ZoneFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub zones: ZoneSource,
    pub start: EvtolState,
    pub goal: EvtolState,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub config: PlannerConfig,
    /// Requests for sequential multi-vehicle planning.
    #[serde(default)]
    pub requests: Vec<FlightRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    Relaxed,
    Moderate,
    Strict,
}

impl Strictness {
    /// `(L_inst, L_eq)` thresholds in dBA.
    pub fn thresholds(self) -> (f64, f64) {
        match self {
            Strictness::Relaxed => (45.0, 43.0),
            Strictness::Moderate => (35.0, 30.0),
            Strictness::Strict => (22.0, 20.0),
        }
    }
}

/// Ground observers shared by the presets.
pub const PRESET_OBSERVERS: [(&str, f64, f64); 3] = [("center", 1100.0, 1100.0), ("west", 400.0, 1700.0), ("east", 1800.0, 500.0)];

/// Averaging window of the preset zones, in steps.
pub const PRESET_WINDOW: usize = 6;

const CRUISE_ALTITUDE: f64 = 100.0;

fn endpoint(x: f64, y: f64, toward: (f64, f64)) -> EvtolState {
    let b = ControlBounds::default();
    let v = b.v_range[0];
    EvtolState::new(v, b.rotor_speed(v), x, y, CRUISE_ALTITUDE, (toward.1 - y).atan2(toward.0 - x))
}

/// Vehicle at `from`, hovering-slow and facing `to`, plus the matching goal.
pub fn route(from: (f64, f64), to: (f64, f64)) -> (EvtolState, EvtolState) {
    (endpoint(from.0, from.1, to), endpoint(to.0, to.1, (2.0 * to.0 - from.0, 2.0 * to.1 - from.1)))
}

pub fn preset_zones(level: Strictness) -> ZoneFile {
    let (l_inst, l_eq) = level.thresholds();
    ZoneFile {
        observers: PRESET_OBSERVERS
            .iter()
            .map(|&(id, x, y)| ZoneRecord {
                id: id.to_string(),
                x,
                y,
                z: 0.0,
                l_inst,
                l_eq,
                dt: PRESET_WINDOW,
            })
            .collect(),
        airspace: Default::default(),
    }
}

impl Scenario {
    /// Single vehicle flying corner to corner across the three zones.
    pub fn preset(level: Strictness) -> Self {
        let (start, goal) = route((150.0, 150.0), (2050.0, 2050.0));
        Self {
            name: format!("{level:?}").to_lowercase(),
            zones: ZoneSource::Inline(preset_zones(level)),
            start,
            goal,
            weights: CostWeights::default(),
            config: PlannerConfig::default(),
            requests: Vec::new(),
        }
    }

    /// Three crossing requests under moderate thresholds.
    pub fn multi_preset() -> Self {
        let mut s = Self::preset(Strictness::Moderate);
        s.name = "multi".into();
        let legs = [
            ((150.0, 150.0), (2050.0, 2050.0), 0),
            ((2050.0, 150.0), (150.0, 2050.0), 0),
            ((150.0, 1100.0), (2050.0, 1100.0), 2),
        ];
        s.requests = legs
            .iter()
            .map(|&(a, b, t_o)| {
                let (origin, destination) = route(a, b);
                FlightRequest { origin, destination, t_o }
            })
            .collect();
        s
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let ZoneSource::Path(p) = &s.zones {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    s.zones = ZoneSource::Path(dir.join(p));
                }
            }
        }
        Ok(s)
    }

    /// Loads the zone file if needed and validates every zone. The zone
    /// file's airspace replaces the one in the planner config.
    pub fn resolve(&mut self) -> Result<Vec<NoiseAbatementZone>, ScenarioError> {
        let file = match &self.zones {
            ZoneSource::Path(p) => serde_json::from_str::<ZoneFile>(&std::fs::read_to_string(p)?)?,
            ZoneSource::Inline(f) => f.clone(),
        };
        self.config.airspace = file.airspace;
        Ok(file.zones()?)
    }
}
