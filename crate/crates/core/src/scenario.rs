//! Scenario documents (JSON) and the default factory layout.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dissemination::{StrategyKind, Thresholds};
use crate::engine::SimConfig;
use crate::losmap;
use crate::radio::RadioParams;
use crate::scene::{
    Device, DeviceId, Motion, Obstacle, ObstacleKind, Point2, Point3, Rect, Scene, Trajectory,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub tick_s: f64,
    pub sim_duration_s: f64,
    pub deadline_s: f64,
    pub bitrate_bps: f64,
    /// Used when a run does not sweep interarrival times.
    pub interarrival_s: f64,
    pub cache_capacity_bits: u64,
    #[serde(default)]
    pub traffic_sources: Option<usize>,
    pub randomize_start: bool,
    pub n_runs: usize,
    pub base_seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            tick_s: 1e-3,
            sim_duration_s: 60.0,
            deadline_s: 0.1,
            bitrate_bps: 300e6,
            interarrival_s: 0.01,
            cache_capacity_bits: 256 * 1024 * 1024 * 8,
            traffic_sources: None,
            randomize_start: true,
            n_runs: 50,
            base_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosMapSettings {
    pub grid_res_m: f64,
    pub plane_height_m: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub trace_dt_s: f64,
    /// Length of the emitted per-device traces.
    pub trace_duration_s: f64,
}

impl Default for LosMapSettings {
    fn default() -> Self {
        Self {
            grid_res_m: losmap::DEFAULT_GRID_RES_M,
            plane_height_m: losmap::DEFAULT_PLANE_HEIGHT_M,
            n_samples: 2000,
            seed: 7,
            trace_dt_s: 0.01,
            trace_duration_s: 20.0,
        }
    }
}

/// Everything a run needs except the strategy, which is chosen per sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scene: Scene,
    pub radio_infra: RadioParams,
    pub radio_d2d: RadioParams,
    pub thresholds: Thresholds,
    pub sim: SimSettings,
    pub losmap: LosMapSettings,
    /// Devices whose traces are singled out in LoS reports.
    #[serde(default)]
    pub probe_devices: Vec<DeviceId>,
}

impl ScenarioFile {
    /// Parses and validates. Syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
            // serde_json appends the position to its message; it is reported separately.
            let mut message = e.to_string();
            if let Some(i) = message.rfind(" at line ") {
                message.truncate(i);
            }
            Error::Parse {
                line: e.line(),
                column: e.column(),
                message,
            }
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.radio_infra.validate("radio_infra")?;
        self.radio_d2d.validate("radio_d2d")?;
        self.thresholds.validate("thresholds")?;
        self.sim_config(StrategyKind::Direct, self.sim.interarrival_s)
            .validate()?;
        let lm = &self.losmap;
        for (name, v) in [
            ("losmap.grid_res_m", lm.grid_res_m),
            ("losmap.trace_dt_s", lm.trace_dt_s),
            ("losmap.trace_duration_s", lm.trace_duration_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(lm.plane_height_m >= 0.0 && lm.plane_height_m.is_finite()) {
            return Err(Error::invalid("losmap.plane_height_m", "must be non-negative"));
        }
        if lm.n_samples == 0 {
            return Err(Error::invalid("losmap.n_samples", "must be at least 1"));
        }
        for (i, id) in self.probe_devices.iter().enumerate() {
            if self.scene.device(*id).is_none() {
                return Err(Error::invalid(
                    format!("probe_devices[{i}]"),
                    format!("unknown device id {id}"),
                ));
            }
        }
        Ok(())
    }

    pub fn sim_config(&self, strategy: StrategyKind, interarrival_s: f64) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            scene: self.scene.clone(),
            radio_infra: self.radio_infra.clone(),
            radio_d2d: self.radio_d2d.clone(),
            strategy,
            thresholds: self.thresholds,
            interarrival_s,
            bitrate_bps: s.bitrate_bps,
            sim_duration_s: s.sim_duration_s,
            tick_s: s.tick_s,
            deadline_s: s.deadline_s,
            cache_capacity_bits: s.cache_capacity_bits,
            traffic_sources: s.traffic_sources,
            randomize_start: s.randomize_start,
            n_runs: s.n_runs,
            base_seed: s.base_seed,
        }
    }
}

/// Knobs of the generated factory: an 18 x 10 m hall, base station in the
/// middle of the south wall, two conveyor belts along the long wall and four
/// rows of four robots on identical back-and-forth lanes parallel to them.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoryLayout {
    pub floor_w_m: f64,
    pub floor_d_m: f64,
    pub bs_height_m: f64,
    pub belt_rows_y_m: [f64; 2],
    pub belt_x_m: (f64, f64),
    pub belt_depth_m: f64,
    pub belt_height_m: f64,
    pub robot_rows_y_m: Vec<f64>,
    pub robots_per_row: usize,
    pub lane_length_m: f64,
    pub speed_mps: f64,
    pub antenna_height_m: f64,
    pub robot_width_m: f64,
    pub robot_depth_m: f64,
    pub robot_height_m: f64,
    pub probe_devices: Vec<DeviceId>,
}

impl Default for FactoryLayout {
    fn default() -> Self {
        Self {
            floor_w_m: 18.0,
            floor_d_m: 10.0,
            bs_height_m: 3.0,
            belt_rows_y_m: [4.0, 7.0],
            belt_x_m: (3.0, 15.0),
            belt_depth_m: 1.0,
            belt_height_m: 1.2,
            robot_rows_y_m: vec![1.5, 2.75, 5.5, 8.75],
            robots_per_row: 4,
            lane_length_m: 3.5,
            speed_mps: 3.0 / 3.6,
            antenna_height_m: 1.0,
            robot_width_m: 0.5,
            robot_depth_m: 0.5,
            robot_height_m: 2.2,
            probe_devices: vec![4, 8, 13],
        }
    }
}

impl FactoryLayout {
    pub fn scene(&self) -> Scene {
        let obstacles = self
            .belt_rows_y_m
            .iter()
            .enumerate()
            .map(|(i, &y)| Obstacle {
                name: Some(format!("conveyor_{}", i + 1)),
                footprint: Rect::new(
                    self.belt_x_m.0,
                    y - self.belt_depth_m / 2.0,
                    self.belt_x_m.1,
                    y + self.belt_depth_m / 2.0,
                ),
                height_m: self.belt_height_m,
                kind: ObstacleKind::Static,
            })
            .collect();

        let mut trajectories = BTreeMap::new();
        let mut devices = Vec::new();
        let pitch = self.floor_w_m / self.robots_per_row as f64;
        for (row, &y) in self.robot_rows_y_m.iter().enumerate() {
            for col in 0..self.robots_per_row {
                let id = (row * self.robots_per_row + col) as DeviceId;
                let x0 = pitch * (col as f64 + 0.5) - self.lane_length_m / 2.0;
                let key = format!("lane_{id:02}");
                trajectories.insert(
                    key.clone(),
                    Trajectory {
                        waypoints: vec![
                            Point2::new(x0, y),
                            Point2::new(x0 + self.lane_length_m, y),
                        ],
                        speed_mps: self.speed_mps,
                        motion: Motion::BackAndForth,
                        phase_offset_s: 0.0,
                    },
                );
                devices.push(Device {
                    id,
                    trajectory: key,
                    antenna_height_m: self.antenna_height_m,
                    blocker_width_m: self.robot_width_m,
                    blocker_depth_m: self.robot_depth_m,
                    blocker_height_m: self.robot_height_m,
                });
            }
        }
        Scene {
            floor_w_m: self.floor_w_m,
            floor_d_m: self.floor_d_m,
            base_station: Point3::new(self.floor_w_m / 2.0, 0.0, self.bs_height_m),
            obstacles,
            trajectories,
            devices,
        }
    }

    pub fn scenario(&self) -> ScenarioFile {
        ScenarioFile {
            scene: self.scene(),
            radio_infra: RadioParams::infra_default(),
            radio_d2d: RadioParams::d2d_default(),
            thresholds: Thresholds::default(),
            sim: SimSettings::default(),
            losmap: LosMapSettings::default(),
            probe_devices: self.probe_devices.clone(),
        }
    }
}

pub fn default_scenario() -> ScenarioFile {
    FactoryLayout::default().scenario()
}
