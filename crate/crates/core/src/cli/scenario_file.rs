//! TOML scenario documents. All values are SI: metres, m/s, m/s², seconds.
//!
//! ```toml
//! lanes = 3
//!
//! [road]
//! s_min = 0.0
//! s_max = 1000.0
//!
//! [horizon]
//! T = 30
//! dt = 0.3
//!
//! [[vehicles]]
//! s0 = 20.0
//! v0 = 25.0
//! lane0 = 1
//! v_min = 0.0
//! v_max = 50.0
//! a_min = -6.0
//! a_max = 3.0
//! d_safe = 10.0
//! v_des = 30.0
//! lane_des = 2
//! w_v = 0.5
//! w_l = 10.0
//! w_a = 0.2
//! w_b = 7.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::highway::{HighwayError, InitialState, Lane, Scenario, VehicleParams, Weights};

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: HighwayError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    pub s_min: f64,
    pub s_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    #[serde(rename = "T")]
    pub t: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleEntry {
    pub s0: f64,
    pub v0: f64,
    pub lane0: Lane,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub d_safe: f64,
    pub v_des: f64,
    pub lane_des: Lane,
    pub w_v: f64,
    pub w_l: f64,
    pub w_a: f64,
    pub w_b: f64,
}

/// On-disk form of a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub lanes: u32,
    pub road: RoadSection,
    pub horizon: HorizonSection,
    #[serde(default)]
    pub vehicles: Vec<VehicleEntry>,
}

impl ScenarioFile {
    pub fn from_scenario(sc: &Scenario) -> Self {
        let (s_min, s_max) = sc.road();
        let vehicles = sc
            .vehicles()
            .iter()
            .zip(sc.initial_states())
            .map(|(p, x)| VehicleEntry {
                s0: x.s,
                v0: x.v,
                lane0: x.lane,
                v_min: p.v_min,
                v_max: p.v_max,
                a_min: p.a_min,
                a_max: p.a_max,
                d_safe: p.d_safe,
                v_des: p.v_des,
                lane_des: p.lane_des,
                w_v: p.weights.speed,
                w_l: p.weights.lane,
                w_a: p.weights.accel,
                w_b: p.weights.blinker,
            })
            .collect();
        Self {
            lanes: sc.lane_count(),
            road: RoadSection { s_min, s_max },
            horizon: HorizonSection { t: sc.horizon(), dt: sc.dt() },
            vehicles,
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, HighwayError> {
        let params = self
            .vehicles
            .iter()
            .map(|v| VehicleParams {
                v_min: v.v_min,
                v_max: v.v_max,
                a_min: v.a_min,
                a_max: v.a_max,
                d_safe: v.d_safe,
                v_des: v.v_des,
                lane_des: v.lane_des,
                weights: Weights { speed: v.w_v, lane: v.w_l, accel: v.w_a, blinker: v.w_b },
            })
            .collect();
        let init = self.vehicles.iter().map(|v| InitialState { s: v.s0, v: v.v0, lane: v.lane0 }).collect();
        Scenario::new((self.road.s_min, self.road.s_max), self.lanes, self.horizon.t, self.horizon.dt, params, init)
    }
}

/// Parses scenario text; `origin` is only used in error messages.
pub fn parse_scenario_str(text: &str, origin: &Path) -> Result<Scenario, ScenarioFileError> {
    let file: ScenarioFile = toml::from_str(text)
        .map_err(|e| ScenarioFileError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
    file.to_scenario().map_err(|source| ScenarioFileError::Invalid { path: origin.to_path_buf(), source })
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io { path: path.to_path_buf(), source })?;
    parse_scenario_str(&text, path)
}

pub fn scenario_to_string(sc: &Scenario) -> String {
    toml::to_string(&ScenarioFile::from_scenario(sc)).expect("scenario documents always serialize")
}

pub fn write_scenario(sc: &Scenario, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, scenario_to_string(sc))
}

/// The bundled six-vehicle merge: two vehicles on a terminating on-ramp
/// (lane 1) that must end on the three-lane highway (lanes 2 to 4).
pub const MERGE6: &str = include_str!("../../scenarios/merge6.scn");

pub fn merge6() -> Scenario {
    parse_scenario_str(MERGE6, Path::new("merge6.scn")).expect("bundled scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge6_is_valid() {
        let sc = merge6();
        assert_eq!(sc.num_vehicles(), 6);
        assert_eq!(sc.lane_count(), 4);
        assert_eq!(sc.horizon(), 30);
        assert_eq!(sc.dt(), 0.3);
        assert_eq!(sc.initial_states().iter().filter(|x| x.lane == 1).count(), 2);
    }

    #[test]
    fn round_trip() {
        let sc = merge6();
        let back = parse_scenario_str(&scenario_to_string(&sc), Path::new("x")).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = MERGE6.replacen("w_b", "w_blink", 1);
        let err = parse_scenario_str(&text, Path::new("bad.scn")).unwrap_err();
        assert!(matches!(err, ScenarioFileError::Parse { .. }));
        assert!(err.to_string().contains("w_blink"), "{err}");
    }

    #[test]
    fn speed_bound_violation_is_named() {
        let mut file: ScenarioFile = toml::from_str(MERGE6).unwrap();
        file.vehicles[2].v0 = file.vehicles[2].v_max + 1.0;
        let err = parse_scenario_str(&toml::to_string(&file).unwrap(), Path::new("bad.scn")).unwrap_err();
        assert!(err.to_string().contains("vehicle 2: v0"), "{err}");
    }
}
