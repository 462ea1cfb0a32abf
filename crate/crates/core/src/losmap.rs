//! Probabilistic line-of-sight knowledge derived from scene geometry.
//!
//! A LoS map gives, for every floor cell at a fixed plane height, the
//! fraction of blocker configurations in which the cell sees the base station
//! unobstructed. Configurations are drawn by stratified sampling over one
//! mobility period (or, when objects repeat with different periods, by
//! Latin-hypercube sampling of their phases), so the estimate converges at
//! roughly `1/n` for the piecewise-constant visibility functions that box
//! scenes produce.
//!
//! D2D pairs use a product of per-object marginals, traces give time-indexed
//! LoS probability per link, and [`predict_los`] turns a trace into the
//! short-horizon outlook used by mode selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{
    segment_blocked, segment_hits_box, BoxOwner, DeviceId, MobileObject, Periodicity, PlacedBox,
    Point2, Point3, Scene,
};
use crate::{Error, Result};

pub const DEFAULT_GRID_RES_M: f64 = 0.25;
pub const DEFAULT_PLANE_HEIGHT_M: f64 = 1.0;
pub const DEFAULT_TRACE_DT_S: f64 = 1e-3;
pub const DEFAULT_HORIZON_S: f64 = 50e-3;
pub const DEFAULT_EMA_ALPHA: f64 = 0.2;
/// Probability above which a sample counts as LoS.
pub const LOS_THRESHOLD: f64 = 0.5;
/// Phase draws used by marginalized traces.
pub const MARGINAL_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosMap {
    pub grid_res: f64,
    pub plane_height: f64,
    pub origin: Point2,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, row 0 is the southernmost.
    pub cells: Vec<f64>,
}

impl LosMap {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.nx + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.grid_res,
            self.origin.y + (iy as f64 + 0.5) * self.grid_res,
        )
    }

    /// Index of the cell containing `p`, if it lies on the grid.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.grid_res).floor();
        let fy = ((p.y - self.origin.y) / self.grid_res).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.cells.chunks(self.nx)
    }
}

/// Blocker configurations that represent the scene's motion.
struct Configurations {
    statics: Vec<PlacedBox>,
    /// One entry per sampled configuration, mobile boxes only.
    mobile: Vec<Vec<PlacedBox>>,
}

fn stratified(n: usize, span: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 + rng.gen::<f64>()) / n as f64 * span)
        .collect()
}

fn sample_configurations(scene: &Scene, n_samples: usize, seed: u64) -> Configurations {
    let statics: Vec<PlacedBox> = scene.static_boxes().collect();
    let objects = scene.mobile_objects();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mobile = match scene.periodicity() {
        Periodicity::Static => vec![Vec::new()],
        Periodicity::Common(period) => stratified(n_samples, period, &mut rng)
            .into_iter()
            .map(|t| objects.iter().map(|o| o.place(t, 0.0)).collect())
            .collect(),
        Periodicity::Mixed => {
            let shifts: Vec<Vec<f64>> = objects
                .iter()
                .map(|o| {
                    let mut s = stratified(n_samples, o.trajectory.period(), &mut rng);
                    s.shuffle(&mut rng);
                    s
                })
                .collect();
            (0..n_samples)
                .map(|i| {
                    objects
                        .iter()
                        .zip(&shifts)
                        .map(|(o, s)| o.place(0.0, s[i]))
                        .collect()
                })
                .collect()
        }
    };
    Configurations { statics, mobile }
}

/// Probabilistic LoS map toward the base station at `plane_height`.
///
/// Each cell value is the fraction of sampled blocker configurations in which
/// the segment from the cell center to the base station is clear. Scenes
/// without motion get a single exact evaluation.
pub fn build_infra_los_map(
    scene: &Scene,
    grid_res: f64,
    plane_height: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LosMap> {
    if !(grid_res > 0.0 && grid_res.is_finite()) {
        return Err(Error::invalid("grid_res_m", "must be positive"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "at least one sample is required"));
    }
    let nx = (scene.floor_w_m / grid_res).ceil() as usize;
    let ny = (scene.floor_d_m / grid_res).ceil() as usize;
    let configs = sample_configurations(scene, n_samples, seed);
    let bs = scene.base_station;
    let origin = Point2::new(0.0, 0.0);
    let grid = LosMap {
        grid_res,
        plane_height,
        origin,
        nx,
        ny,
        cells: Vec::new(),
    };
    let cells: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let c = grid.cell_center(k % nx, k / nx).at_height(plane_height);
            if segment_blocked(&configs.statics, c, bs) {
                return 0.0;
            }
            let clear = configs
                .mobile
                .iter()
                .filter(|boxes| !segment_blocked(boxes.iter(), c, bs))
                .count();
            clear as f64 / configs.mobile.len() as f64
        })
        .collect();
    Ok(LosMap { cells, ..grid })
}

fn object_clear_fraction(
    object: &MobileObject<'_>,
    a: Point3,
    b: Point3,
    n_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let times = stratified(n_samples, object.trajectory.period(), rng);
    let clear = times
        .iter()
        .filter(|&&t| !segment_hits_box(&object.place(t, 0.0), a, b))
        .count();
    clear as f64 / n_samples as f64
}

/// LoS probability between two points under independent blocker motion.
///
/// The static obstacles contribute a 0/1 factor; every mobile object other
/// than the excluded device bodies contributes the fraction of its own period
/// during which it alone leaves the segment clear.
pub fn los_probability_d2d(
    scene: &Scene,
    a: Point3,
    b: Point3,
    exclude: &[DeviceId],
    n_samples: usize,
    seed: u64,
) -> f64 {
    let statics: Vec<PlacedBox> = scene.static_boxes().collect();
    if segment_blocked(&statics, a, b) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_samples.max(1);
    scene
        .mobile_objects()
        .iter()
        .filter(|o| !matches!(o.owner, BoxOwner::Device(id) if exclude.contains(&id)))
        .map(|o| object_clear_fraction(o, a, b, n, &mut rng))
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkEnd {
    BaseStation,
    Device(DeviceId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkId {
    pub a: LinkEnd,
    pub b: LinkEnd,
}

impl LinkId {
    pub fn infra(device: DeviceId) -> Self {
        Self {
            a: LinkEnd::Device(device),
            b: LinkEnd::BaseStation,
        }
    }

    pub fn d2d(a: DeviceId, b: DeviceId) -> Self {
        Self {
            a: LinkEnd::Device(a),
            b: LinkEnd::Device(b),
        }
    }

    fn devices(&self) -> Vec<DeviceId> {
        [self.a, self.b]
            .into_iter()
            .filter_map(|e| match e {
                LinkEnd::Device(id) => Some(id),
                LinkEnd::BaseStation => None,
            })
            .collect()
    }
}

/// Time series of LoS probability for one link, uniformly sampled and
/// periodic-extended beyond its last sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosTrace {
    pub link: LinkId,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl LosTrace {
    pub fn period(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Sample index holding time `t`, wrapped into the trace.
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t / self.dt + 1e-9).floor() as i64;
        i.rem_euclid(self.samples.len() as i64) as usize
    }

    pub fn at(&self, t: f64) -> f64 {
        self.samples[self.index_of(t)]
    }
}

fn endpoint_at(scene: &Scene, end: LinkEnd, t: f64) -> Result<Point3> {
    match end {
        LinkEnd::BaseStation => Ok(scene.base_station),
        LinkEnd::Device(id) => {
            if scene.device(id).is_none() {
                return Err(Error::invalid("link", format!("unknown device {id}")));
            }
            Ok(scene.device_position(id, t))
        }
    }
}

/// LoS trace for `link` over `[0, t_end)` at step `dt`.
///
/// Without marginalization every blocker follows its configured trajectory
/// and each sample is exactly 0 or 1. With marginalization the blockers'
/// phases are treated as unknown and averaged over [`MARGINAL_DRAWS`] random
/// draws; the link endpoints keep their known motion.
pub fn build_los_trace(
    scene: &Scene,
    link: LinkId,
    dt: f64,
    t_end: f64,
    marginalize: bool,
    seed: u64,
) -> Result<LosTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if !(t_end >= dt) {
        return Err(Error::invalid("t_end", "must be at least one step"));
    }
    let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let ends = link.devices();
    let statics: Vec<PlacedBox> = scene.static_boxes().collect();
    let blockers: Vec<MobileObject<'_>> = scene
        .mobile_objects()
        .into_iter()
        .filter(|o| !matches!(o.owner, BoxOwner::Device(id) if ends.contains(&id)))
        .collect();

    let draws: Vec<Vec<f64>> = if marginalize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MARGINAL_DRAWS)
            .map(|_| {
                blockers
                    .iter()
                    .map(|o| rng.gen::<f64>() * o.trajectory.period())
                    .collect()
            })
            .collect()
    } else {
        vec![vec![0.0; blockers.len()]]
    };

    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let a = endpoint_at(scene, link.a, t)?;
            let b = endpoint_at(scene, link.b, t)?;
            if segment_blocked(&statics, a, b) {
                return Ok(0.0);
            }
            let clear = draws
                .iter()
                .filter(|shifts| {
                    !blockers
                        .iter()
                        .zip(shifts.iter())
                        .any(|(o, &s)| segment_hits_box(&o.place(t, s), a, b))
                })
                .count();
            Ok(clear as f64 / draws.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LosTrace {
        link,
        dt,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosPrediction {
    pub p_now: f64,
    /// Mean LoS probability over `[t, t + horizon)`.
    pub p_horizon: f64,
    /// Expected time until the LoS/NLoS state flips, capped at one trace
    /// period.
    pub residual_los: f64,
    pub horizon: f64,
}

impl LosPrediction {
    pub fn in_los(&self) -> bool {
        self.p_now >= LOS_THRESHOLD
    }
}

fn horizon_len(trace_dt: f64, horizon: f64) -> usize {
    ((horizon / trace_dt).round() as usize).max(1)
}

/// Short-horizon outlook at time `t` from a (periodic-extended) trace.
pub fn predict_los(trace: &LosTrace, t: f64, horizon: f64) -> LosPrediction {
    let n = trace.samples.len();
    let i0 = trace.index_of(t);
    let p_now = trace.samples[i0];
    let count = horizon_len(trace.dt, horizon);
    let p_horizon =
        (0..count).map(|j| trace.samples[(i0 + j) % n]).sum::<f64>() / count as f64;

    let in_los = p_now >= LOS_THRESHOLD;
    let offset = (t / trace.dt + 1e-9).fract().max(0.0) * trace.dt;
    let residual_los = (1..n)
        .find(|&j| (trace.samples[(i0 + j) % n] >= LOS_THRESHOLD) != in_los)
        .map(|j| (j as f64 * trace.dt - offset).max(0.0))
        .unwrap_or_else(|| trace.period());
    LosPrediction {
        p_now,
        p_horizon,
        residual_los,
        horizon,
    }
}

/// Constant-time [`predict_los`] for repeated queries on one trace.
#[derive(Debug, Clone)]
pub struct TraceIndex {
    trace: LosTrace,
    /// `prefix[i]` is the sum of the first `i` samples.
    prefix: Vec<f64>,
    /// Steps from sample `i` to the next sample in the opposite state, or
    /// `None` if the state never changes.
    to_flip: Vec<Option<usize>>,
}

impl TraceIndex {
    pub fn new(trace: LosTrace) -> Self {
        let n = trace.samples.len();
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for &s in &trace.samples {
            prefix.push(prefix.last().unwrap() + s);
        }
        let state: Vec<bool> = trace.samples.iter().map(|&s| s >= LOS_THRESHOLD).collect();
        let mut to_flip = vec![None; n];
        if state.iter().any(|&s| s != state[0]) {
            // Walk backwards twice around the ring so wrap-around flips are seen.
            let mut next: Option<usize> = None;
            for k in (0..2 * n).rev() {
                let i = k % n;
                let j = (k + 1) % n;
                if state[j] != state[i] {
                    next = Some(k + 1);
                }
                if k < n {
                    to_flip[i] = next.map(|m| m - k);
                }
            }
        }
        Self {
            trace,
            prefix,
            to_flip,
        }
    }

    pub fn trace(&self) -> &LosTrace {
        &self.trace
    }

    pub fn los_at(&self, t: f64) -> bool {
        self.trace.at(t) >= LOS_THRESHOLD
    }

    fn window_sum(&self, i0: usize, count: usize) -> f64 {
        let n = self.trace.samples.len();
        let full = (count / n) as f64 * self.prefix[n];
        let rest = count % n;
        let end = i0 + rest;
        let partial = if end <= n {
            self.prefix[end] - self.prefix[i0]
        } else {
            (self.prefix[n] - self.prefix[i0]) + self.prefix[end - n]
        };
        full + partial
    }

    pub fn predict(&self, t: f64, horizon: f64) -> LosPrediction {
        let tr = &self.trace;
        let i0 = tr.index_of(t);
        let count = horizon_len(tr.dt, horizon);
        let offset = (t / tr.dt + 1e-9).fract().max(0.0) * tr.dt;
        LosPrediction {
            p_now: tr.samples[i0],
            p_horizon: self.window_sum(i0, count) / count as f64,
            residual_los: self.to_flip[i0]
                .map(|j| (j as f64 * tr.dt - offset).max(0.0))
                .unwrap_or_else(|| tr.period()),
            horizon,
        }
    }
}

/// Folds binary LoS observations into a trace with an exponential moving
/// average, one update per observation in order.
pub fn update_trace_from_observations(trace: &LosTrace, observations: &[(f64, bool)]) -> LosTrace {
    update_trace_with_alpha(trace, observations, DEFAULT_EMA_ALPHA)
}

pub fn update_trace_with_alpha(
    trace: &LosTrace,
    observations: &[(f64, bool)],
    alpha: f64,
) -> LosTrace {
    let mut out = trace.clone();
    for &(t, los) in observations {
        let k = out.index_of(t);
        let obs = if los { 1.0 } else { 0.0 };
        out.samples[k] = ((1.0 - alpha) * out.samples[k] + alpha * obs).clamp(0.0, 1.0);
    }
    out
}

/// Fraction of sample times at which at least one trace is in LoS. Traces
/// must share their step and length.
pub fn fraction_any_los(traces: &[LosTrace]) -> f64 {
    let Some(first) = traces.first() else {
        return 0.0;
    };
    let n = first.samples.len();
    let hits = (0..n)
        .filter(|&k| traces.iter().any(|tr| tr.samples[k] >= LOS_THRESHOLD))
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Device, Motion, Obstacle, ObstacleKind, Rect, Trajectory};
    use std::collections::BTreeMap;

    fn lane(a: Point2, b: Point2, speed: f64) -> Trajectory {
        Trajectory {
            waypoints: vec![a, b],
            speed_mps: speed,
            motion: Motion::BackAndForth,
            phase_offset_s: 0.0,
        }
    }

    fn empty_scene() -> Scene {
        Scene {
            floor_w_m: 10.0,
            floor_d_m: 5.0,
            base_station: Point3::new(5.25, 0.0, 3.0),
            obstacles: vec![],
            trajectories: BTreeMap::new(),
            devices: vec![],
        }
    }

    /// One 2 m wide, 3 m tall box sweeping x in [1.25, 9.25] along y = 2.
    fn sweeping_box_scene() -> Scene {
        let mut s = empty_scene();
        s.trajectories.insert(
            "sweep".into(),
            lane(Point2::new(1.25, 2.0), Point2::new(9.25, 2.0), 1.0),
        );
        s.obstacles.push(Obstacle {
            name: None,
            footprint: Rect::centered(Point2::new(0.0, 0.0), 2.0, 0.5),
            height_m: 3.0,
            kind: ObstacleKind::Mobile {
                trajectory: "sweep".into(),
            },
        });
        s
    }

    /// Time-sweep oracle: position recomputed from the triangle wave directly.
    fn sweep_fraction_clear(cell_x: f64, period_steps: usize) -> f64 {
        let mut clear = 0;
        for k in 0..period_steps {
            let t = (k as f64 + 0.5) / period_steps as f64 * 16.0;
            let x = if t <= 8.0 { 1.25 + t } else { 9.25 - (t - 8.0) };
            if (x - cell_x).abs() >= 1.0 {
                clear += 1;
            }
        }
        clear as f64 / period_steps as f64
    }

    #[test]
    fn empty_scene_map_is_all_ones() {
        let map = build_infra_los_map(&empty_scene(), 0.5, 1.0, 16, 1).unwrap();
        assert_eq!((map.nx, map.ny), (20, 10));
        assert!(map.cells.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn static_shadow_is_zero() {
        let mut s = empty_scene();
        s.obstacles.push(Obstacle {
            name: None,
            footprint: Rect::new(4.5, 1.0, 6.0, 1.5),
            height_m: 3.0,
            kind: ObstacleKind::Static,
        });
        let map = build_infra_los_map(&s, 0.5, 1.0, 4, 3).unwrap();
        let (ix, iy) = map.cell_of(Point2::new(5.25, 4.25)).unwrap();
        assert_eq!(map.get(ix, iy), 0.0);
        let (ix, iy) = map.cell_of(Point2::new(0.25, 4.25)).unwrap();
        assert_eq!(map.get(ix, iy), 1.0);
    }

    #[test]
    fn mobile_occluder_quarter_period() {
        let oracle = sweep_fraction_clear(5.25, 16_000);
        assert!((oracle - 0.75).abs() < 1e-3);
        let map = build_infra_los_map(&sweeping_box_scene(), 0.5, 1.0, 10_000, 7).unwrap();
        let (ix, iy) = map.cell_of(Point2::new(5.25, 4.25)).unwrap();
        let blocked = 1.0 - map.get(ix, iy);
        assert!((blocked - 0.25).abs() < 0.02, "blocked fraction {blocked}");
        assert!((map.get(ix, iy) - oracle).abs() < 0.02);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(build_infra_los_map(&empty_scene(), 0.5, 1.0, 0, 1).is_err());
        assert!(build_infra_los_map(&empty_scene(), 0.0, 1.0, 10, 1).is_err());
    }

    fn two_crossers() -> Scene {
        let mut s = empty_scene();
        s.floor_d_m = 10.0;
        s.trajectories.insert(
            "c1".into(),
            lane(Point2::new(4.0, 2.5), Point2::new(4.0, 7.5), 1.0),
        );
        s.trajectories.insert(
            "c2".into(),
            lane(Point2::new(6.0, 2.5), Point2::new(6.0, 7.5), 0.7),
        );
        for t in ["c1", "c2"] {
            s.obstacles.push(Obstacle {
                name: None,
                footprint: Rect::centered(Point2::new(0.0, 0.0), 0.5, 1.0),
                height_m: 2.0,
                kind: ObstacleKind::Mobile {
                    trajectory: t.into(),
                },
            });
        }
        s
    }

    fn triangle(lo: f64, hi: f64, speed: f64, t: f64) -> f64 {
        let len = hi - lo;
        let r = (speed * t).rem_euclid(2.0 * len);
        lo + if r > len { 2.0 * len - r } else { r }
    }

    #[test]
    fn d2d_independent_blockers_multiply() {
        // Joint phase sweep: both objects' y positions enumerated on a grid
        // over their own periods.
        let steps = 400;
        let mut clear = 0;
        for i in 0..steps {
            let y1 = triangle(2.5, 7.5, 1.0, (i as f64 + 0.5) / steps as f64 * 10.0);
            for j in 0..steps {
                let y2 = triangle(2.5, 7.5, 0.7, (j as f64 + 0.5) / steps as f64 * (10.0 / 0.7));
                if (y1 - 5.0).abs() >= 0.5 && (y2 - 5.0).abs() >= 0.5 {
                    clear += 1;
                }
            }
        }
        let oracle = clear as f64 / (steps * steps) as f64;
        assert!((oracle - 0.64).abs() < 0.01);

        let p = los_probability_d2d(
            &two_crossers(),
            Point3::new(2.0, 5.0, 1.0),
            Point3::new(8.0, 5.0, 1.0),
            &[],
            10_000,
            11,
        );
        assert!((p - oracle).abs() < 0.02, "p = {p}, oracle = {oracle}");
    }

    #[test]
    fn d2d_static_dominates() {
        let mut s = two_crossers();
        let a = Point3::new(2.0, 5.0, 1.0);
        let b = Point3::new(8.0, 5.0, 1.0);
        assert_eq!(los_probability_d2d(&empty_scene(), a, b, &[], 100, 1), 1.0);
        s.obstacles.push(Obstacle {
            name: None,
            footprint: Rect::new(4.8, 4.0, 5.2, 6.0),
            height_m: 1.5,
            kind: ObstacleKind::Static,
        });
        assert_eq!(los_probability_d2d(&s, a, b, &[], 100, 1), 0.0);
    }

    /// Device parked (barely moving) at (5.25, 4.25) looking at the base station
    /// while the sweeping box crosses its link.
    fn parked_device_scene() -> Scene {
        let mut s = sweeping_box_scene();
        s.trajectories.insert(
            "park".into(),
            lane(Point2::new(5.25, 4.25), Point2::new(5.25, 4.2501), 0.0001 / 16.0),
        );
        s.devices.push(Device {
            id: 3,
            trajectory: "park".into(),
            antenna_height_m: 1.0,
            blocker_width_m: 0.5,
            blocker_depth_m: 0.5,
            blocker_height_m: 2.0,
        });
        s
    }

    #[test]
    fn static_clear_trace_is_constant() {
        let mut s = empty_scene();
        s.trajectories.insert(
            "park".into(),
            lane(Point2::new(2.0, 2.0), Point2::new(3.0, 2.0), 0.5),
        );
        s.devices.push(Device {
            id: 1,
            trajectory: "park".into(),
            antenna_height_m: 1.0,
            blocker_width_m: 0.5,
            blocker_depth_m: 0.5,
            blocker_height_m: 2.0,
        });
        let tr = build_los_trace(&s, LinkId::infra(1), 0.1, 4.0, false, 0).unwrap();
        assert_eq!(tr.samples.len(), 40);
        assert!(tr.samples.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn exact_trace_is_square_wave() {
        let s = parked_device_scene();
        let dt = 0.01;
        let tr = build_los_trace(&s, LinkId::infra(3), dt, 16.0, false, 0).unwrap();
        // Closed form: the box covers x = 5.25 while its center is within 1 m,
        // i.e. t in (3, 5) on the way out and (11, 13) on the way back.
        let crossing = |t: f64| (t > 3.0 && t < 5.0) || (t > 11.0 && t < 13.0);
        let mut blocked = 0;
        for (k, &p) in tr.samples.iter().enumerate() {
            let t = k as f64 * dt;
            if [3.0, 5.0, 11.0, 13.0].iter().any(|e| (t - e).abs() < 1e-6) {
                continue;
            }
            assert_eq!(p, if crossing(t) { 0.0 } else { 1.0 }, "t = {t}");
            if p == 0.0 {
                blocked += 1;
            }
        }
        // The four edge samples were skipped above.
        let duty = blocked as f64 / tr.samples.len() as f64;
        assert!((duty - 0.25).abs() <= 4.0 / tr.samples.len() as f64);
    }

    #[test]
    fn marginalized_trace_is_probability() {
        let s = parked_device_scene();
        let tr = build_los_trace(&s, LinkId::infra(3), 0.5, 8.0, true, 5).unwrap();
        for &p in &tr.samples {
            assert!((0.0..=1.0).contains(&p));
            // Unknown phase: roughly a quarter of draws block.
            assert!((p - 0.75).abs() < 0.06, "p = {p}");
        }
    }

    #[test]
    fn trace_shift_invariance() {
        let s = parked_device_scene();
        let dt = 0.05;
        let base = build_los_trace(&s, LinkId::infra(3), dt, 16.0, false, 0).unwrap();
        let m = 37;
        let mut shifted = s.clone();
        for t in shifted.trajectories.values_mut() {
            t.phase_offset_s += m as f64 * dt;
        }
        let moved = build_los_trace(&shifted, LinkId::infra(3), dt, 16.0, false, 0).unwrap();
        let n = base.samples.len();
        let mismatches = (0..n)
            .filter(|&k| moved.samples[k] != base.samples[(k + m) % n])
            .count();
        // Only samples sitting exactly on an edge may differ by rounding.
        assert!(mismatches <= 4, "{mismatches} mismatches");
    }

    fn square(dt: f64, on: usize, off: usize) -> LosTrace {
        LosTrace {
            link: LinkId::infra(0),
            dt,
            samples: std::iter::repeat_n(1.0, on)
                .chain(std::iter::repeat_n(0.0, off))
                .collect(),
        }
    }

    #[test]
    fn prediction_on_constant_trace() {
        let tr = LosTrace {
            link: LinkId::infra(0),
            dt: 0.001,
            samples: vec![1.0; 500],
        };
        let p = predict_los(&tr, 0.123, 0.05);
        assert_eq!(p.p_now, 1.0);
        assert_eq!(p.p_horizon, 1.0);
        assert!((p.residual_los - tr.period()).abs() < 1e-12);
    }

    #[test]
    fn prediction_residual_before_edge() {
        // 10 s LoS, 10 s NLoS at 1 ms; query 3 s before the falling edge.
        let tr = square(0.001, 10_000, 10_000);
        let p = predict_los(&tr, 7.0, 0.05);
        assert!(p.in_los());
        assert!((p.residual_los - 3.0).abs() < 1e-9);
        let q = predict_los(&tr, 15.0, 0.05);
        assert!(!q.in_los());
        assert!((q.residual_los - 5.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_half_window() {
        let tr = square(0.001, 1000, 1000);
        let p = predict_los(&tr, 0.5, 1.0);
        assert!((p.p_horizon - 0.5).abs() < 1e-12);
    }

    #[test]
    fn index_matches_direct_prediction() {
        let mut samples = Vec::new();
        let mut state = 1.0;
        for k in 0..977 {
            if k % 53 == 0 || k % 71 == 0 {
                state = 1.0 - state;
            }
            samples.push(if k % 7 == 0 { 0.4 } else { state });
        }
        let tr = LosTrace {
            link: LinkId::infra(0),
            dt: 0.001,
            samples,
        };
        let idx = TraceIndex::new(tr.clone());
        for q in 0..3000 {
            let t = q as f64 * 0.000_7;
            for h in [0.001, 0.05, 0.3, 2.5] {
                let a = predict_los(&tr, t, h);
                let b = idx.predict(t, h);
                assert_eq!(a.p_now, b.p_now);
                assert!((a.p_horizon - b.p_horizon).abs() < 1e-9);
                assert!((a.residual_los - b.residual_los).abs() < 1e-9, "t={t}");
            }
        }
    }

    #[test]
    fn ema_updates() {
        let tr = LosTrace {
            link: LinkId::infra(0),
            dt: 0.01,
            samples: vec![0.5; 100],
        };
        assert_eq!(update_trace_from_observations(&tr, &[]), tr);
        let one = update_trace_from_observations(&tr, &[(0.25, true)]);
        assert!((one.samples[25] - 0.6).abs() < 1e-12);
        assert_eq!(one.samples[24], 0.5);
        let obs: Vec<(f64, bool)> = (0..20).map(|_| (0.25, true)).collect();
        let many = update_trace_from_observations(&tr, &obs);
        assert!(many.samples[25] >= 0.98);
        assert!((many.samples[25] - (1.0 - 0.5 * 0.8f64.powi(20))).abs() < 1e-12);
        // Observation times wrap modulo the trace period.
        let wrapped = update_trace_from_observations(&tr, &[(1.25, false)]);
        assert!((wrapped.samples[25] - 0.4).abs() < 1e-12);
    }
}
