//! Factory floor geometry, object motion and exact blockage queries.
//!
//! All obstacles are axis-aligned rectangles extruded from the floor (z = 0)
//! up to their height. Mobile obstacles and device bodies follow piecewise
//! linear trajectories at constant speed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type DeviceId = u32;

/// Point in world coordinates, meters. Floor plane is z = 0, origin at the
/// south-west floor corner, x along the south wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point3 {
    #[serde(rename = "x_m")]
    pub x: f64,
    #[serde(rename = "y_m")]
    pub y: f64,
    #[serde(rename = "z_m")]
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Point on the floor plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point2 {
    #[serde(rename = "x_m")]
    pub x: f64,
    #[serde(rename = "y_m")]
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn at_height(self, z: f64) -> Point3 {
        Point3::new(self.x, self.y, z)
    }
}

/// Axis-aligned rectangle on the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    #[serde(rename = "x_min_m")]
    pub min_x: f64,
    #[serde(rename = "y_min_m")]
    pub min_y: f64,
    #[serde(rename = "x_max_m")]
    pub max_x: f64,
    #[serde(rename = "y_max_m")]
    pub max_y: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn centered(center: Point2, width: f64, depth: f64) -> Self {
        Self::new(
            center.x - width / 2.0,
            center.y - depth / 2.0,
            center.x + width / 2.0,
            center.y + depth / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn depth(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            (self.min_x + self.max_x) / 2.0,
            (self.min_y + self.max_y) / 2.0,
        )
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    fn contains_rect(&self, other: &Rect) -> bool {
        other.min_x >= self.min_x
            && other.max_x <= self.max_x
            && other.min_y >= self.min_y
            && other.max_y <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    BackAndForth,
    Loop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub waypoints: Vec<Point2>,
    pub speed_mps: f64,
    pub motion: Motion,
    #[serde(default)]
    pub phase_offset_s: f64,
}

impl Trajectory {
    /// Length of the path travelled in one pass. For loops this includes the
    /// closing segment from the last waypoint back to the first.
    pub fn path_length(&self) -> f64 {
        let open: f64 = self
            .waypoints
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum();
        match self.motion {
            Motion::BackAndForth => open,
            Motion::Loop => open + self.closing_length(),
        }
    }

    fn closing_length(&self) -> f64 {
        match (self.waypoints.first(), self.waypoints.last()) {
            (Some(a), Some(b)) => b.distance(a),
            _ => 0.0,
        }
    }

    /// Time after which the motion repeats.
    pub fn period(&self) -> f64 {
        match self.motion {
            Motion::BackAndForth => 2.0 * self.path_length() / self.speed_mps,
            Motion::Loop => self.path_length() / self.speed_mps,
        }
    }

    /// Position after travelling `s` meters along the (closed, for loops)
    /// polyline, `0 <= s <= path_length`.
    fn point_at_arc(&self, mut s: f64) -> Point2 {
        let n = self.waypoints.len();
        let segments = match self.motion {
            Motion::BackAndForth => n - 1,
            Motion::Loop => n,
        };
        for i in 0..segments {
            let a = self.waypoints[i];
            let b = self.waypoints[(i + 1) % n];
            let len = a.distance(&b);
            if s <= len || i + 1 == segments {
                if len == 0.0 {
                    return a;
                }
                let f = (s / len).clamp(0.0, 1.0);
                return Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
            }
            s -= len;
        }
        self.waypoints[0]
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid(
                format!("{field}.waypoints"),
                "at least two waypoints are required",
            ));
        }
        for (i, w) in self.waypoints.windows(2).enumerate() {
            if !(w[0].x.is_finite() && w[0].y.is_finite() && w[1].x.is_finite() && w[1].y.is_finite())
            {
                return Err(Error::invalid(
                    format!("{field}.waypoints[{i}]"),
                    "coordinates must be finite",
                ));
            }
            if w[0] == w[1] {
                return Err(Error::invalid(
                    format!("{field}.waypoints[{}]", i + 1),
                    "consecutive waypoints must be distinct",
                ));
            }
        }
        if !(self.speed_mps > 0.0 && self.speed_mps.is_finite()) {
            return Err(Error::invalid(
                format!("{field}.speed_mps"),
                "speed must be positive",
            ));
        }
        if !self.phase_offset_s.is_finite() {
            return Err(Error::invalid(
                format!("{field}.phase_offset_s"),
                "phase offset must be finite",
            ));
        }
        Ok(())
    }
}

/// Floor position of `trajectory` at time `t`.
///
/// The polyline is parameterized by arc length at `speed * (t + phase_offset)`,
/// reflecting at the endpoints for back-and-forth motion and wrapping around
/// for loops.
pub fn pose_at(trajectory: &Trajectory, t: f64) -> Point2 {
    pose_shifted(trajectory, t, 0.0)
}

/// Like [`pose_at`] with an extra time shift added to the trajectory's own
/// phase offset.
pub fn pose_shifted(trajectory: &Trajectory, t: f64, shift: f64) -> Point2 {
    let length = trajectory.path_length();
    let travelled = trajectory.speed_mps * (t + trajectory.phase_offset_s + shift);
    let s = match trajectory.motion {
        Motion::BackAndForth => {
            let r = travelled.rem_euclid(2.0 * length);
            if r > length {
                2.0 * length - r
            } else {
                r
            }
        }
        Motion::Loop => travelled.rem_euclid(length),
    };
    trajectory.point_at_arc(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleKind {
    Static,
    /// The footprint's size is kept and its center follows the trajectory.
    Mobile {
        trajectory: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub footprint: Rect,
    pub height_m: f64,
    pub kind: ObstacleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub id: DeviceId,
    pub trajectory: String,
    pub antenna_height_m: f64,
    pub blocker_width_m: f64,
    pub blocker_depth_m: f64,
    pub blocker_height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub floor_w_m: f64,
    pub floor_d_m: f64,
    pub base_station: Point3,
    pub obstacles: Vec<Obstacle>,
    pub trajectories: BTreeMap<String, Trajectory>,
    pub devices: Vec<Device>,
}

/// Which scene object a placed box belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoxOwner {
    Static(usize),
    Mobile(usize),
    Device(DeviceId),
}

/// An extruded box `footprint x (0, height)` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBox {
    pub footprint: Rect,
    pub height: f64,
    pub owner: BoxOwner,
}

/// A moving scene object: a mobile obstacle or a device body.
#[derive(Debug, Clone, Copy)]
pub struct MobileObject<'a> {
    pub owner: BoxOwner,
    pub trajectory: &'a Trajectory,
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl MobileObject<'_> {
    pub fn place(&self, t: f64, shift: f64) -> PlacedBox {
        PlacedBox {
            footprint: Rect::centered(
                pose_shifted(self.trajectory, t, shift),
                self.width,
                self.depth,
            ),
            height: self.height,
            owner: self.owner,
        }
    }
}

/// How the scene's motion repeats in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Periodicity {
    /// Nothing moves.
    Static,
    /// Every mobile object repeats with this period.
    Common(f64),
    /// Mobile objects have different periods.
    Mixed,
}

impl Scene {
    pub fn floor(&self) -> Rect {
        Rect::new(0.0, 0.0, self.floor_w_m, self.floor_d_m)
    }

    pub fn device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn device_index(&self, id: DeviceId) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.get(id)
    }

    /// Antenna position of the device at time `t`.
    ///
    /// Panics if the device or its trajectory does not exist; validated
    /// scenes never trigger this.
    pub fn device_position(&self, id: DeviceId, t: f64) -> Point3 {
        let dev = self.device(id).expect("unknown device");
        pose_at(&self.trajectories[&dev.trajectory], t).at_height(dev.antenna_height_m)
    }

    pub fn static_boxes(&self) -> impl Iterator<Item = PlacedBox> + '_ {
        self.obstacles
            .iter()
            .enumerate()
            .filter(|(_, o)| o.kind == ObstacleKind::Static)
            .map(|(i, o)| PlacedBox {
                footprint: o.footprint,
                height: o.height_m,
                owner: BoxOwner::Static(i),
            })
    }

    /// Mobile obstacles followed by device bodies, in declaration order.
    pub fn mobile_objects(&self) -> Vec<MobileObject<'_>> {
        let mut out = Vec::new();
        for (i, o) in self.obstacles.iter().enumerate() {
            if let ObstacleKind::Mobile { trajectory } = &o.kind {
                out.push(MobileObject {
                    owner: BoxOwner::Mobile(i),
                    trajectory: &self.trajectories[trajectory],
                    width: o.footprint.width(),
                    depth: o.footprint.depth(),
                    height: o.height_m,
                });
            }
        }
        for d in &self.devices {
            out.push(MobileObject {
                owner: BoxOwner::Device(d.id),
                trajectory: &self.trajectories[&d.trajectory],
                width: d.blocker_width_m,
                depth: d.blocker_depth_m,
                height: d.blocker_height_m,
            });
        }
        out
    }

    pub fn periodicity(&self) -> Periodicity {
        let periods: Vec<f64> = self
            .mobile_objects()
            .iter()
            .map(|m| m.trajectory.period())
            .collect();
        match periods.first() {
            None => Periodicity::Static,
            Some(&p0) => {
                if periods.iter().all(|p| ((p - p0) / p0).abs() < 1e-9) {
                    Periodicity::Common(p0)
                } else {
                    Periodicity::Mixed
                }
            }
        }
    }

    /// Fills `out` with every box at time `t` (static first, then mobile
    /// obstacles, then device bodies).
    pub fn boxes_at_into(&self, t: f64, out: &mut Vec<PlacedBox>) {
        out.clear();
        out.extend(self.static_boxes());
        out.extend(self.mobile_objects().iter().map(|m| m.place(t, 0.0)));
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor_w_m > 0.0 && self.floor_w_m.is_finite()) {
            return Err(Error::invalid("scene.floor_w_m", "must be positive"));
        }
        if !(self.floor_d_m > 0.0 && self.floor_d_m.is_finite()) {
            return Err(Error::invalid("scene.floor_d_m", "must be positive"));
        }
        let floor = self.floor();
        let bs = self.base_station;
        if !bs.is_finite() || !floor.contains(Point2::new(bs.x, bs.y)) || bs.z < 0.0 {
            return Err(Error::invalid(
                "scene.base_station",
                "must lie within the floor rectangle at non-negative height",
            ));
        }
        for (id, t) in &self.trajectories {
            let field = format!("scene.trajectories.{id}");
            t.validate(&field)?;
            if let Some(i) = t.waypoints.iter().position(|w| !floor.contains(*w)) {
                return Err(Error::invalid(
                    format!("{field}.waypoints[{i}]"),
                    "waypoint lies outside the floor",
                ));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let field = format!("scene.obstacles[{i}]");
            let f = o.footprint;
            if !(f.width() > 0.0 && f.depth() > 0.0) {
                return Err(Error::invalid(
                    format!("{field}.footprint"),
                    "footprint must have positive width and depth",
                ));
            }
            if !(o.height_m > 0.0 && o.height_m.is_finite()) {
                return Err(Error::invalid(format!("{field}.height_m"), "must be positive"));
            }
            match &o.kind {
                ObstacleKind::Static => {
                    if !floor.contains_rect(&f) {
                        return Err(Error::invalid(
                            format!("{field}.footprint"),
                            "footprint lies outside the floor",
                        ));
                    }
                }
                ObstacleKind::Mobile { trajectory } => {
                    if !self.trajectories.contains_key(trajectory) {
                        return Err(Error::invalid(
                            format!("{field}.kind.trajectory"),
                            format!("unknown trajectory `{trajectory}`"),
                        ));
                    }
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let field = format!("scene.devices[{i}]");
            if !seen.insert(d.id) {
                return Err(Error::invalid(
                    format!("{field}.id"),
                    format!("duplicate device id {}", d.id),
                ));
            }
            if !self.trajectories.contains_key(&d.trajectory) {
                return Err(Error::invalid(
                    format!("{field}.trajectory"),
                    format!("unknown trajectory `{}`", d.trajectory),
                ));
            }
            for (name, v) in [
                ("antenna_height_m", d.antenna_height_m),
                ("blocker_width_m", d.blocker_width_m),
                ("blocker_depth_m", d.blocker_depth_m),
                ("blocker_height_m", d.blocker_height_m),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{field}.{name}"), "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// All boxes of the scene at time `t`: static boxes unchanged, mobile boxes
/// centered on their trajectory pose, device bodies included.
pub fn scene_state_at(scene: &Scene, t: f64) -> Vec<PlacedBox> {
    let mut out = Vec::new();
    scene.boxes_at_into(t, &mut out);
    out
}

/// True iff the open segment `(a, b)` passes through the interior of `bx`.
///
/// Slab test on open intervals, so touching a face (including running exactly
/// along the top at `z == height`) is not a hit.
pub fn segment_hits_box(bx: &PlacedBox, a: Point3, b: Point3) -> bool {
    let f = &bx.footprint;
    if a.x.max(b.x) <= f.min_x
        || a.x.min(b.x) >= f.max_x
        || a.y.max(b.y) <= f.min_y
        || a.y.min(b.y) >= f.max_y
        || a.z.min(b.z) >= bx.height
    {
        return false;
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let slabs = [
        (a.x, b.x - a.x, bx.footprint.min_x, bx.footprint.max_x),
        (a.y, b.y - a.y, bx.footprint.min_y, bx.footprint.max_y),
        (a.z, b.z - a.z, 0.0, bx.height),
    ];
    for (origin, dir, min, max) in slabs {
        if dir == 0.0 {
            if !(origin > min && origin < max) {
                return false;
            }
        } else {
            let t1 = (min - origin) / dir;
            let t2 = (max - origin) / dir;
            let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            lo = lo.max(near);
            hi = hi.min(far);
            if lo >= hi {
                return false;
            }
        }
    }
    lo < hi
}

/// True iff the open segment `(a, b)` intersects the interior of any box.
/// Callers exclude the endpoints' own bodies.
pub fn segment_blocked<'a>(
    boxes: impl IntoIterator<Item = &'a PlacedBox>,
    a: Point3,
    b: Point3,
) -> bool {
    boxes.into_iter().any(|bx| segment_hits_box(bx, a, b))
}

/// [`segment_blocked`] ignoring the bodies of the listed devices.
pub fn segment_blocked_excluding(
    boxes: &[PlacedBox],
    a: Point3,
    b: Point3,
    exclude: &[DeviceId],
) -> bool {
    segment_blocked(
        boxes.iter().filter(|bx| match bx.owner {
            BoxOwner::Device(id) => !exclude.contains(&id),
            _ => true,
        }),
        a,
        b,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lane(x0: f64, x1: f64, speed: f64) -> Trajectory {
        Trajectory {
            waypoints: vec![Point2::new(x0, 0.0), Point2::new(x1, 0.0)],
            speed_mps: speed,
            motion: Motion::BackAndForth,
            phase_offset_s: 0.0,
        }
    }

    fn fixed_box(rect: Rect, height: f64) -> PlacedBox {
        PlacedBox {
            footprint: rect,
            height,
            owner: BoxOwner::Static(0),
        }
    }

    /// Steps the walker forward in small increments, bouncing at the ends.
    fn stepped_pose(x0: f64, x1: f64, speed: f64, t: f64) -> f64 {
        let steps = 100_000;
        let h = t / steps as f64;
        let (mut x, mut dir) = (x0, 1.0);
        for _ in 0..steps {
            x += dir * speed * h;
            if x > x1 {
                x = 2.0 * x1 - x;
                dir = -1.0;
            } else if x < x0 {
                x = 2.0 * x0 - x;
                dir = 1.0;
            }
        }
        x
    }

    #[test]
    fn pose_linear_motion() {
        let p = pose_at(&lane(0.0, 6.0, 1.0), 2.0);
        assert!((p.x - 2.0).abs() < 1e-12 && p.y == 0.0);
    }

    #[test]
    fn pose_reflects_at_endpoint() {
        let expected = stepped_pose(0.0, 6.0, 1.0, 8.0);
        assert!((expected - 4.0).abs() < 1e-6);
        let p = pose_at(&lane(0.0, 6.0, 1.0), 8.0);
        assert!((p.x - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pose_at_three_kmh() {
        let p = pose_at(&lane(0.0, 6.0, 3.0 / 3.6), 1.0);
        assert!((p.x - 0.833_333_333_333).abs() < 1e-9);
    }

    #[test]
    fn loop_wraps_through_closing_segment() {
        let t = Trajectory {
            waypoints: vec![
                Point2::new(0.0, 0.0),
                Point2::new(4.0, 0.0),
                Point2::new(4.0, 3.0),
            ],
            speed_mps: 1.0,
            motion: Motion::Loop,
            phase_offset_s: 0.0,
        };
        assert_eq!(t.path_length(), 12.0);
        let p = pose_at(&t, 9.5);
        // 2.5 m back along the hypotenuse from (4,3) toward (0,0).
        assert!((p.x - 2.0).abs() < 1e-12 && (p.y - 1.5).abs() < 1e-12);
        let q = pose_at(&t, 12.0 + 1.0);
        assert!((q.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_boxes_never_blocked() {
        assert!(!segment_blocked(
            &[],
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(5.0, 5.0, 1.0)
        ));
    }

    fn sampled_blocked(bx: &PlacedBox, a: Point3, b: Point3) -> bool {
        let n = 10_000;
        (1..n).any(|i| {
            let s = i as f64 / n as f64;
            let p = Point3::new(
                a.x + s * (b.x - a.x),
                a.y + s * (b.y - a.y),
                a.z + s * (b.z - a.z),
            );
            p.x > bx.footprint.min_x
                && p.x < bx.footprint.max_x
                && p.y > bx.footprint.min_y
                && p.y < bx.footprint.max_y
                && p.z > 0.0
                && p.z < bx.height
        })
    }

    #[test]
    fn descending_segment_over_box() {
        let a = Point3::new(9.0, 0.0, 3.0);
        let b = Point3::new(9.0, 6.0, 1.0);
        let tall = fixed_box(Rect::new(8.5, 2.0, 9.5, 3.0), 2.5);
        assert!(sampled_blocked(&tall, a, b));
        assert!(segment_blocked([&tall], a, b));

        let grazing = fixed_box(Rect::new(8.5, 2.0, 9.5, 3.0), 2.0);
        assert!(!sampled_blocked(&grazing, a, b));
        assert!(!segment_blocked([&grazing], a, b));
    }

    #[test]
    fn horizontal_segment_along_top_face_is_clear() {
        let bx = fixed_box(Rect::new(1.0, -1.0, 2.0, 1.0), 1.0);
        assert!(!segment_blocked(
            [&bx],
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(3.0, 0.0, 1.0)
        ));
        assert!(segment_blocked(
            [&bx],
            Point3::new(0.0, 0.0, 0.99),
            Point3::new(3.0, 0.0, 0.99)
        ));
    }

    #[test]
    fn endpoint_inside_box_is_blocked() {
        let bx = fixed_box(Rect::new(0.0, 0.0, 2.0, 2.0), 1.5);
        assert!(segment_blocked(
            [&bx],
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(9.0, 9.0, 1.0)
        ));
    }

    #[test]
    fn exclusion_skips_own_body() {
        let body = PlacedBox {
            footprint: Rect::new(0.5, 0.5, 1.5, 1.5),
            height: 2.0,
            owner: BoxOwner::Device(7),
        };
        let a = Point3::new(1.0, 1.0, 1.0);
        let b = Point3::new(6.0, 1.0, 1.0);
        assert!(segment_blocked_excluding(&[body], a, b, &[]));
        assert!(!segment_blocked_excluding(&[body], a, b, &[7]));
    }

    #[test]
    fn mobile_box_centered_on_pose() {
        let mut trajectories = BTreeMap::new();
        trajectories.insert("t".to_string(), lane(0.0, 6.0, 1.0));
        let scene = Scene {
            floor_w_m: 10.0,
            floor_d_m: 10.0,
            base_station: Point3::new(5.0, 0.0, 3.0),
            obstacles: vec![
                Obstacle {
                    name: None,
                    footprint: Rect::new(7.0, 7.0, 8.0, 8.0),
                    height_m: 1.0,
                    kind: ObstacleKind::Static,
                },
                Obstacle {
                    name: None,
                    footprint: Rect::centered(Point2::new(0.0, 0.0), 1.0, 0.5),
                    height_m: 1.0,
                    kind: ObstacleKind::Mobile {
                        trajectory: "t".into(),
                    },
                },
            ],
            trajectories,
            devices: vec![],
        };
        scene.validate().unwrap();
        let boxes = scene_state_at(&scene, 2.0);
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].footprint, Rect::new(7.0, 7.0, 8.0, 8.0));
        let c = boxes[1].footprint.center();
        assert!((c.x - 2.0).abs() < 1e-12 && c.y.abs() < 1e-12);
        assert_eq!(scene.periodicity(), Periodicity::Common(12.0));
    }

    #[test]
    fn static_only_scene_is_time_invariant() {
        let scene = Scene {
            floor_w_m: 10.0,
            floor_d_m: 10.0,
            base_station: Point3::new(5.0, 0.0, 3.0),
            obstacles: vec![Obstacle {
                name: None,
                footprint: Rect::new(1.0, 1.0, 2.0, 2.0),
                height_m: 1.0,
                kind: ObstacleKind::Static,
            }],
            trajectories: BTreeMap::new(),
            devices: vec![],
        };
        assert_eq!(scene_state_at(&scene, 0.0), scene_state_at(&scene, 123.4));
        assert_eq!(scene.periodicity(), Periodicity::Static);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let bad = Trajectory {
            waypoints: vec![Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)],
            speed_mps: 1.0,
            motion: Motion::BackAndForth,
            phase_offset_s: 0.0,
        };
        assert!(bad.validate("t").is_err());
        assert!(lane(0.0, 1.0, 0.0).validate("t").is_err());
        let single = Trajectory {
            waypoints: vec![Point2::new(1.0, 1.0)],
            ..lane(0.0, 1.0, 1.0)
        };
        assert!(single.validate("t").is_err());
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (0.0..10.0f64, 0.0..10.0f64, 0.0..3.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_box() -> impl Strategy<Value = PlacedBox> {
        (0.0..9.0f64, 0.0..9.0f64, 0.1..3.0f64, 0.1..3.0f64, 0.1..2.5f64).prop_map(
            |(x, y, w, d, h)| fixed_box(Rect::new(x, y, x + w, y + d), h),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn agrees_with_dense_sampling(
            a in arb_point(),
            b in arb_point(),
            boxes in proptest::collection::vec(arb_box(), 1..4),
        ) {
            prop_assume!(a.distance(&b) > 1e-3);
            let exact = segment_blocked(&boxes, a, b);
            let sampled = boxes.iter().any(|bx| sampled_blocked(bx, a, b));
            // Sampling can miss a sliver thinner than the sample spacing; it can
            // never report a hit the exact test misses.
            if sampled {
                prop_assert!(exact);
            }
            if exact && !sampled {
                // The miss must be a sliver: a denser sweep finds it.
                let dense = boxes.iter().any(|bx| {
                    (1..1_000_000).any(|i| {
                        let s = i as f64 / 1e6;
                        let p = Point3::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), a.z + s * (b.z - a.z));
                        p.x > bx.footprint.min_x && p.x < bx.footprint.max_x
                            && p.y > bx.footprint.min_y && p.y < bx.footprint.max_y
                            && p.z > 0.0 && p.z < bx.height
                    })
                });
                prop_assert!(dense);
            }
        }

        #[test]
        fn blockage_is_symmetric(a in arb_point(), b in arb_point(), boxes in proptest::collection::vec(arb_box(), 0..5)) {
            prop_assume!(a.distance(&b) > 1e-6);
            prop_assert_eq!(segment_blocked(&boxes, a, b), segment_blocked(&boxes, b, a));
        }

        #[test]
        fn raising_a_box_never_unblocks(a in arb_point(), b in arb_point(), bx in arb_box(), extra in 0.0..2.0f64) {
            prop_assume!(a.distance(&b) > 1e-6);
            let taller = PlacedBox { height: bx.height + extra, ..bx };
            if segment_blocked([&bx], a, b) {
                prop_assert!(segment_blocked([&taller], a, b));
            }
        }

        #[test]
        fn pose_is_speed_lipschitz(t1 in 0.0..100.0f64, t2 in 0.0..100.0f64, speed in 0.1..3.0f64, phase in 0.0..10.0f64) {
            let traj = Trajectory {
                waypoints: vec![Point2::new(0.0, 0.0), Point2::new(4.0, 0.0), Point2::new(4.0, 3.0)],
                speed_mps: speed,
                motion: Motion::BackAndForth,
                phase_offset_s: phase,
            };
            let d = pose_at(&traj, t1).distance(&pose_at(&traj, t2));
            prop_assert!(d <= speed * (t1 - t2).abs() + 1e-9);
        }

        #[test]
        fn back_and_forth_is_periodic(t in 0.0..100.0f64, speed in 0.1..3.0f64) {
            let traj = Trajectory {
                waypoints: vec![Point2::new(0.0, 0.0), Point2::new(4.0, 0.0), Point2::new(4.0, 3.0)],
                speed_mps: speed,
                motion: Motion::BackAndForth,
                phase_offset_s: 0.0,
            };
            let period = traj.period();
            prop_assert!((period - 14.0 / speed).abs() < 1e-12);
            prop_assert!(pose_at(&traj, t).distance(&pose_at(&traj, t + period)) < 1e-9);
        }
    }
}
