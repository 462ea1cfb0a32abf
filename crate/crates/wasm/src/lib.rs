//! Browser bindings: LoS heat map, probe LoS traces, floor snapshots and
//! single simulation runs. Results cross the boundary as JSON strings.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use factory_d2d::dissemination::StrategyKind;
use factory_d2d::engine;
use factory_d2d::losmap::{build_infra_los_map, build_los_trace, fraction_any_los, LinkId};
use factory_d2d::scenario::{default_scenario, ScenarioFile};
use factory_d2d::scene::{segment_blocked_excluding, BoxOwner};

#[wasm_bindgen]
pub struct Demo {
    scenario: ScenarioFile,
}

#[wasm_bindgen]
impl Demo {
    /// The default factory floor.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo { scenario: default_scenario() }
    }

    #[wasm_bindgen(js_name = fromJson)]
    pub fn from_json(text: &str) -> Result<Demo, JsError> {
        Demo::parse(text).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = scenarioJson)]
    pub fn scenario_json(&self) -> String {
        self.scenario.to_json()
    }

    pub fn snapshot(&self, t: f64) -> String {
        self.snapshot_value(t).to_string()
    }

    #[wasm_bindgen(js_name = losMap)]
    pub fn los_map(&self, grid_res_m: f64, samples: usize) -> Result<String, JsError> {
        self.los_map_value(grid_res_m, samples)
            .map(|v| v.to_string())
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = probeTraces)]
    pub fn probe_traces(&self, duration_s: f64, dt_s: f64) -> Result<String, JsError> {
        self.traces_value(duration_s, dt_s)
            .map(|v| v.to_string())
            .map_err(|e| JsError::new(&e))
    }

    pub fn simulate(
        &self,
        strategy: &str,
        interarrival_ms: f64,
        duration_s: f64,
        seed: u32,
    ) -> Result<String, JsError> {
        self.simulate_value(strategy, interarrival_ms, duration_s, seed)
            .map(|v| v.to_string())
            .map_err(|e| JsError::new(&e))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

// Plain Rust halves of the bindings, usable off the browser.
impl Demo {
    pub fn parse(text: &str) -> Result<Demo, String> {
        let scenario = ScenarioFile::parse(text).map_err(|e| e.to_string())?;
        Ok(Demo { scenario })
    }

    pub fn scenario(&self) -> &ScenarioFile {
        &self.scenario
    }

    /// Object footprints and device LoS to the base station at time `t`.
    pub fn snapshot_value(&self, t: f64) -> Value {
        let scene = &self.scenario.scene;
        let boxes = factory_d2d::scene::scene_state_at(scene, t.max(0.0));
        let rect = |b: &factory_d2d::scene::PlacedBox| {
            json!([b.footprint.min_x, b.footprint.min_y, b.footprint.max_x, b.footprint.max_y])
        };
        let obstacles: Vec<Value> = boxes
            .iter()
            .filter(|b| !matches!(b.owner, BoxOwner::Device(_)))
            .map(|b| json!({ "rect": rect(b), "mobile": matches!(b.owner, BoxOwner::Mobile(_)) }))
            .collect();
        let devices: Vec<Value> = scene
            .devices
            .iter()
            .map(|d| {
                let p = scene.device_position(d.id, t.max(0.0));
                let los = !segment_blocked_excluding(&boxes, p, scene.base_station, &[d.id]);
                json!({ "id": d.id, "x": p.x, "y": p.y, "los": los })
            })
            .collect();
        let device_boxes: Vec<Value> = boxes
            .iter()
            .filter(|b| matches!(b.owner, BoxOwner::Device(_)))
            .map(rect)
            .collect();
        json!({
            "t": t,
            "floor": [scene.floor_w_m, scene.floor_d_m],
            "base_station": [scene.base_station.x, scene.base_station.y],
            "obstacles": obstacles,
            "device_boxes": device_boxes,
            "devices": devices,
            "probes": self.scenario.probe_devices,
        })
    }

    pub fn los_map_value(&self, grid_res_m: f64, samples: usize) -> Result<Value, String> {
        let lm = &self.scenario.losmap;
        let map = build_infra_los_map(&self.scenario.scene, grid_res_m, lm.plane_height_m, samples, lm.seed)
            .map_err(|e| e.to_string())?;
        Ok(json!({
            "nx": map.nx,
            "ny": map.ny,
            "grid_res_m": map.grid_res,
            "origin": [map.origin.x, map.origin.y],
            "cells": map.cells,
        }))
    }

    pub fn traces_value(&self, duration_s: f64, dt_s: f64) -> Result<Value, String> {
        let scene = &self.scenario.scene;
        let mut traces = Vec::new();
        for &id in &self.scenario.probe_devices {
            let tr = build_los_trace(scene, LinkId::infra(id), dt_s, duration_s, false, self.scenario.losmap.seed)
                .map_err(|e| e.to_string())?;
            traces.push((id, tr));
        }
        let all: Vec<_> = traces.iter().map(|(_, t)| t.clone()).collect();
        Ok(json!({
            "dt_s": dt_s,
            "any_los": if all.is_empty() { 0.0 } else { fraction_any_los(&all) },
            "traces": traces
                .iter()
                .map(|(id, t)| json!({ "device": id, "samples": t.samples }))
                .collect::<Vec<_>>(),
        }))
    }

    pub fn simulate_value(
        &self,
        strategy: &str,
        interarrival_ms: f64,
        duration_s: f64,
        seed: u32,
    ) -> Result<Value, String> {
        let strategy: StrategyKind = strategy.parse()?;
        let mut cfg = self.scenario.sim_config(strategy, interarrival_ms * 1e-3);
        cfg.sim_duration_s = duration_s;
        cfg.n_runs = 1;
        let m = engine::run(&cfg, u64::from(seed)).map_err(|e| e.to_string())?;
        Ok(json!({
            "strategy": strategy.to_string(),
            "generated": m.n_generated,
            "delivered": m.n_delivered,
            "dropped_blockage": m.n_dropped_blockage,
            "dropped_rate": m.n_dropped_rate,
            "censored": m.n_censored,
            "drop_blockage": m.drop_blockage(),
            "drop_rate": m.drop_rate(),
            "mean_delay_ms": m.mean_delay().map(|d| d * 1e3),
            "modes": {
                "direct_push": m.modes.direct_push,
                "store_and_push": m.modes.store_and_push,
                "forward_and_push": m.modes.forward_and_push,
                "aborted_handoffs": m.modes.aborted_handoffs,
            },
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_lists_every_device() {
        let d = Demo::new();
        let v = d.snapshot_value(3.0);
        assert_eq!(v["devices"].as_array().unwrap().len(), 16);
        assert_eq!(v["obstacles"].as_array().unwrap().len(), 2);
        assert_eq!(v["floor"], json!([18.0, 10.0]));
    }

    #[test]
    fn heat_map_shape() {
        let v = Demo::new().los_map_value(1.0, 20).unwrap();
        assert_eq!((v["nx"].as_u64(), v["ny"].as_u64()), (Some(18), Some(10)));
        let cells = v["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 180);
        assert!(cells.iter().all(|c| (0.0..=1.0).contains(&c.as_f64().unwrap())));
        assert!(Demo::new().los_map_value(-1.0, 20).is_err());
    }

    #[test]
    fn probe_traces_cover_each_other() {
        let v = Demo::new().traces_value(20.0, 0.05).unwrap();
        assert_eq!(v["traces"].as_array().unwrap().len(), 3);
        assert!(v["any_los"].as_f64().unwrap() >= 0.95);
    }

    #[test]
    fn simulate_conserves_contents() {
        let v = Demo::new().simulate_value("predictive", 10.0, 2.0, 4).unwrap();
        let n = |k: &str| v[k].as_u64().unwrap();
        assert_eq!(
            n("generated"),
            n("delivered") + n("dropped_blockage") + n("dropped_rate") + n("censored")
        );
        assert!(Demo::new().simulate_value("teleport", 10.0, 2.0, 4).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = Demo::new();
        let again = Demo::parse(&d.scenario_json()).unwrap();
        assert_eq!(again.scenario(), d.scenario());
        assert!(Demo::parse("{}").is_err());
    }
}
