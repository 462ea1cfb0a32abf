//! Deterministic simulation of one factory run and aggregation across runs.
//!
//! Link states are sampled on a fixed tick. Between ticks the uplink behaves
//! as a fluid processor-sharing queue, so arrivals, completions and deadlines
//! land at their exact instants rather than on tick boundaries. Decision
//! epochs re-run mode selection for contents still held by their origin.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissemination::{
    advance_content, cache_insert, classify_drop, select_mode, CacheState, Content, ContentId,
    ContentState, DecisionContext, DropCause, Mode, ModeDecision, Neighbor, StrategyKind,
    Thresholds,
};
use crate::losmap::{LinkId, LosTrace, TraceIndex};
use crate::radio::{link_state, LinkState, RadioParams};
use crate::scene::{
    pose_at, segment_blocked_excluding, BoxOwner, DeviceId, PlacedBox, Point3, Rect, Scene,
    Trajectory,
};
use crate::{Error, Result};

/// z-value of the two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scene: Scene,
    pub radio_infra: RadioParams,
    pub radio_d2d: RadioParams,
    pub strategy: StrategyKind,
    pub thresholds: Thresholds,
    pub interarrival_s: f64,
    pub bitrate_bps: f64,
    pub sim_duration_s: f64,
    pub tick_s: f64,
    pub deadline_s: f64,
    pub cache_capacity_bits: u64,
    /// Only the first `n` devices generate traffic; `None` means all.
    pub traffic_sources: Option<usize>,
    /// Draw each device's start position along its trajectory from the run
    /// seed instead of using the configured phase.
    pub randomize_start: bool,
    pub n_runs: usize,
    pub base_seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.radio_infra.validate("radio_infra")?;
        self.radio_d2d.validate("radio_d2d")?;
        self.thresholds.validate("thresholds")?;
        let positive = [
            ("sim.tick_s", self.tick_s),
            ("sim.interarrival_s", self.interarrival_s),
            ("sim.bitrate_bps", self.bitrate_bps),
            ("sim.sim_duration_s", self.sim_duration_s),
            ("sim.deadline_s", self.deadline_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.interarrival_s < self.tick_s {
            return Err(Error::invalid(
                "sim.interarrival_s",
                "must be at least one tick",
            ));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("sim.n_runs", "at least one run is required"));
        }
        if self.content_bits() == 0 {
            return Err(Error::invalid(
                "sim.bitrate_bps",
                "bitrate times interarrival rounds to an empty content",
            ));
        }
        if let Some(n) = self.traffic_sources {
            if n > self.scene.devices.len() {
                return Err(Error::invalid(
                    "sim.traffic_sources",
                    "more sources than devices",
                ));
            }
        }
        Ok(())
    }

    /// Size of every generated content: one interarrival's worth of CBR video.
    pub fn content_bits(&self) -> u64 {
        (self.bitrate_bps * self.interarrival_s).round() as u64
    }

    fn ticks_per_epoch(&self) -> usize {
        ((self.thresholds.redecision_s / self.tick_s).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Tick,
    DecisionEpoch,
    ContentArrival(DeviceId),
    SimEnd,
}

impl EventKind {
    fn rank(&self) -> (u8, DeviceId) {
        match *self {
            EventKind::Tick => (0, 0),
            EventKind::DecisionEpoch => (1, 0),
            EventKind::ContentArrival(d) => (2, d),
            EventKind::SimEnd => (3, 0),
        }
    }
}

/// Simulation event. Ordered by time, then kind (tick, epoch, arrival, end),
/// then device id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.kind.rank().cmp(&other.kind.rank()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Constant-bit-rate content source for every traffic device.
///
/// Device `d` emits at `phase_d + m * interarrival`, `m = 0, 1, ...`, until
/// the end of the run; contents come out in time order (ties by device id).
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    sources: Vec<(DeviceId, f64)>,
    emitted: Vec<u64>,
    interarrival_s: f64,
    size_bits: u64,
    deadline_s: f64,
    end_s: f64,
    next_id: ContentId,
}

impl TrafficGenerator {
    pub fn new(config: &SimConfig, phases: Vec<(DeviceId, f64)>) -> Self {
        Self {
            emitted: vec![0; phases.len()],
            sources: phases,
            interarrival_s: config.interarrival_s,
            size_bits: config.content_bits(),
            deadline_s: config.deadline_s,
            end_s: config.sim_duration_s,
            next_id: 0,
        }
    }

    fn time_of(&self, i: usize) -> f64 {
        self.sources[i].1 + self.emitted[i] as f64 * self.interarrival_s
    }

    /// Time and device of the next content, if any.
    pub fn peek(&self) -> Option<(f64, DeviceId)> {
        (0..self.sources.len())
            .map(|i| (self.time_of(i), self.sources[i].0))
            .filter(|(t, _)| *t < self.end_s)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }
}

impl Iterator for TrafficGenerator {
    type Item = Content;

    fn next(&mut self) -> Option<Content> {
        let (t, dev) = self.peek()?;
        let i = self.sources.iter().position(|s| s.0 == dev)?;
        self.emitted[i] += 1;
        let id = self.next_id;
        self.next_id += 1;
        Some(
            Content::new(id, dev, t, self.size_bits, t + self.deadline_s)
                .expect("validated config yields well-formed contents"),
        )
    }
}

/// Traffic with start phases staggered uniformly over one interarrival.
pub fn generate_traffic(config: &SimConfig, rng: &mut impl Rng) -> TrafficGenerator {
    let n = config
        .traffic_sources
        .unwrap_or(config.scene.devices.len());
    let phases = config
        .scene
        .devices
        .iter()
        .take(n)
        .map(|d| (d.id, rng.gen::<f64>() * config.interarrival_s))
        .collect();
    TrafficGenerator::new(config, phases)
}

/// Processor sharing on one cell: each of the `k` transfers gets its own
/// link rate divided by `k`.
pub fn share_uplink(link_rates_bps: &[f64]) -> Vec<f64> {
    let k = link_rates_bps.len() as f64;
    link_rates_bps.iter().map(|r| r / k).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_blockage: u64,
    pub dropped_rate: u64,
    pub censored: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub direct_push: u64,
    pub store_and_push: u64,
    pub forward_and_push: u64,
    /// Handoffs abandoned because the D2D link failed mid-transfer.
    pub aborted_handoffs: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitLedger {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_generated: u64,
    pub n_delivered: u64,
    pub n_dropped_blockage: u64,
    pub n_dropped_rate: u64,
    /// Contents still in flight when the run ended; excluded from drop and
    /// delay statistics.
    pub n_censored: u64,
    pub delay_samples: Vec<f64>,
    pub per_device: Vec<(DeviceId, DeviceMetrics)>,
    pub modes: ModeCounts,
    pub bits: BitLedger,
}

impl Metrics {
    pub fn n_dropped(&self) -> u64 {
        self.n_dropped_blockage + self.n_dropped_rate
    }

    /// Contents that reached a terminal state.
    pub fn n_completed(&self) -> u64 {
        self.n_generated - self.n_censored
    }

    fn proportion(&self, n: u64) -> f64 {
        match self.n_completed() {
            0 => 0.0,
            c => n as f64 / c as f64,
        }
    }

    pub fn drop_blockage(&self) -> f64 {
        self.proportion(self.n_dropped_blockage)
    }

    pub fn drop_rate(&self) -> f64 {
        self.proportion(self.n_dropped_rate)
    }

    pub fn drop_total(&self) -> f64 {
        self.proportion(self.n_dropped())
    }

    /// Mean delivery delay in seconds, `None` if nothing was delivered.
    pub fn mean_delay(&self) -> Option<f64> {
        if self.delay_samples.is_empty() {
            return None;
        }
        Some(self.delay_samples.iter().sum::<f64>() / self.delay_samples.len() as f64)
    }

    /// generated = delivered + dropped + censored, by count and by bits.
    pub fn is_conserved(&self) -> bool {
        self.n_generated == self.n_delivered + self.n_dropped() + self.n_censored
            && self.bits.generated == self.bits.delivered + self.bits.dropped + self.bits.in_flight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Upload(usize),
    Waiting(usize),
    Handoff { origin: usize, helper: usize },
    Done,
}

#[derive(Debug)]
struct Handoff {
    content: usize,
    helper: usize,
    setup_left_s: f64,
    rate_bps: f64,
}

struct DeviceRt {
    id: DeviceId,
    trace: TraceIndex,
    infra: LinkState,
    infra_tick: usize,
    upload: VecDeque<usize>,
    waiting: Vec<usize>,
    handoffs: VecDeque<usize>,
    active_handoff: Option<Handoff>,
    cache: CacheState,
    neighbors: Vec<Neighbor>,
    neighbors_tick: usize,
}

impl DeviceRt {
    fn holds_anything(&self) -> bool {
        !(self.upload.is_empty() && self.waiting.is_empty() && self.handoffs.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Deadline(u64, usize);

/// Scene motion with trajectories resolved up front, so per-tick queries
/// skip name lookups.
struct Kinematics {
    statics: Vec<PlacedBox>,
    movers: Vec<(BoxOwner, Trajectory, f64, f64, f64)>,
    antennas: Vec<f64>,
    /// Index into `movers` of each device body.
    device_mover: Vec<usize>,
}

impl Kinematics {
    fn new(scene: &Scene) -> Self {
        let movers: Vec<_> = scene
            .mobile_objects()
            .into_iter()
            .map(|m| (m.owner, m.trajectory.clone(), m.width, m.depth, m.height))
            .collect();
        let device_mover = scene
            .devices
            .iter()
            .map(|d| {
                movers
                    .iter()
                    .position(|m| m.0 == BoxOwner::Device(d.id))
                    .expect("every device has a body")
            })
            .collect();
        Self {
            statics: scene.static_boxes().collect(),
            movers,
            antennas: scene.devices.iter().map(|d| d.antenna_height_m).collect(),
            device_mover,
        }
    }

    /// Boxes and device antenna positions at time `t`.
    fn state_at(&self, t: f64, boxes: &mut Vec<PlacedBox>, positions: &mut Vec<Point3>) {
        boxes.clear();
        boxes.extend_from_slice(&self.statics);
        let first = boxes.len();
        for (owner, traj, w, d, h) in &self.movers {
            boxes.push(PlacedBox {
                footprint: Rect::centered(pose_at(traj, t), *w, *d),
                height: *h,
                owner: *owner,
            });
        }
        positions.clear();
        for (i, &m) in self.device_mover.iter().enumerate() {
            positions.push(boxes[first + m].footprint.center().at_height(self.antennas[i]));
        }
    }
}

/// Exact infra LoS traces for every device, one sample per tick, covering
/// `n` ticks. Boxes are placed once per tick and shared across devices.
pub fn infra_traces(scene: &Scene, tick_s: f64, n: usize) -> Vec<LosTrace> {
    let kin = Kinematics::new(scene);
    let mut samples = vec![Vec::with_capacity(n); scene.devices.len()];
    let (mut boxes, mut positions) = (Vec::new(), Vec::new());
    let bs = scene.base_station;
    for k in 0..n {
        let t = k as f64 * tick_s;
        kin.state_at(t, &mut boxes, &mut positions);
        for (i, dev) in scene.devices.iter().enumerate() {
            let blocked = segment_blocked_excluding(&boxes, positions[i], bs, &[dev.id]);
            samples[i].push(if blocked { 0.0 } else { 1.0 });
        }
    }
    scene
        .devices
        .iter()
        .zip(samples)
        .map(|(d, s)| LosTrace {
            link: LinkId::infra(d.id),
            dt: tick_s,
            samples: s,
        })
        .collect()
}

/// Scene for one replication: every device gets a private copy of its
/// trajectory with a start phase drawn uniformly over the period.
pub fn randomized_scene(scene: &Scene, rng: &mut impl Rng) -> Scene {
    let mut out = scene.clone();
    for dev in &mut out.devices {
        let mut traj = scene.trajectories[&dev.trajectory].clone();
        traj.phase_offset_s = rng.gen::<f64>() * traj.period();
        let key = format!("__device_{}", dev.id);
        out.trajectories.insert(key.clone(), traj);
        dev.trajectory = key;
    }
    out
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    scene: Scene,
    now: f64,
    tick: usize,
    boxes: Vec<PlacedBox>,
    positions: Vec<Point3>,
    boxes_tick: usize,
    kin: Kinematics,
    devs: Vec<DeviceRt>,
    contents: Vec<Content>,
    locs: Vec<Location>,
    deadlines: BinaryHeap<std::cmp::Reverse<Deadline>>,
    metrics: Metrics,
    live: u64,
    device_index: std::collections::HashMap<DeviceId, usize>,
}

const NEVER: usize = usize::MAX;

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, scene: Scene) -> Self {
        let n_ticks = (cfg.sim_duration_s / cfg.tick_s).ceil() as usize;
        let horizon_ticks = (cfg.thresholds.horizon_s / cfg.tick_s).ceil() as usize;
        let traces = infra_traces(&scene, cfg.tick_s, n_ticks + horizon_ticks + 1);
        let placeholder = LinkState::evaluate(&cfg.radio_infra, true, 1.0);
        let devs: Vec<DeviceRt> = scene
            .devices
            .iter()
            .zip(traces)
            .map(|(d, tr)| DeviceRt {
                id: d.id,
                trace: TraceIndex::new(tr),
                infra: placeholder,
                infra_tick: NEVER,
                upload: VecDeque::new(),
                waiting: Vec::new(),
                handoffs: VecDeque::new(),
                active_handoff: None,
                cache: CacheState::new(cfg.cache_capacity_bits),
                neighbors: Vec::new(),
                neighbors_tick: NEVER,
            })
            .collect();
        let metrics = Metrics {
            per_device: devs.iter().map(|d| (d.id, DeviceMetrics::default())).collect(),
            ..Metrics::default()
        };
        let device_index = devs.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
        let kin = Kinematics::new(&scene);
        Self {
            cfg,
            scene,
            now: 0.0,
            tick: 0,
            boxes: Vec::new(),
            positions: Vec::new(),
            boxes_tick: NEVER,
            kin,
            devs,
            contents: Vec::new(),
            locs: Vec::new(),
            deadlines: BinaryHeap::new(),
            metrics,
            live: 0,
            device_index,
        }
    }

    fn strategy(&self) -> StrategyKind {
        self.cfg.strategy
    }

    fn tick_time(&self, k: usize) -> f64 {
        k as f64 * self.cfg.tick_s
    }

    fn ensure_boxes(&mut self) {
        if self.boxes_tick != self.tick {
            let t = self.tick_time(self.tick);
            self.kin.state_at(t, &mut self.boxes, &mut self.positions);
            self.boxes_tick = self.tick;
        }
    }

    fn pos(&mut self, d: usize) -> Point3 {
        self.ensure_boxes();
        self.positions[d]
    }

    fn infra(&mut self, d: usize) -> LinkState {
        if self.devs[d].infra_tick != self.tick {
            let pos = self.pos(d);
            let los = self.devs[d].trace.trace().samples[self.tick] >= 0.5;
            let dist = pos.distance(&self.scene.base_station);
            self.devs[d].infra = LinkState::evaluate(&self.cfg.radio_infra, los, dist);
            self.devs[d].infra_tick = self.tick;
        }
        self.devs[d].infra
    }

    fn d2d(&mut self, a: usize, b: usize) -> LinkState {
        self.ensure_boxes();
        let pa = self.pos(a);
        let pb = self.pos(b);
        let (ia, ib) = (self.devs[a].id, self.devs[b].id);
        let boxes = self.boxes.iter().filter(|bx| match bx.owner {
            BoxOwner::Device(id) => id != ia && id != ib,
            _ => true,
        });
        link_state(boxes, pa, pb, &self.cfg.radio_d2d)
    }

    fn neighbors(&mut self, d: usize) -> Vec<Neighbor> {
        if self.devs[d].neighbors_tick != self.tick {
            let horizon = self.cfg.thresholds.horizon_s;
            let t = self.now;
            let mut table = Vec::with_capacity(self.devs.len() - 1);
            for h in 0..self.devs.len() {
                if h == d {
                    continue;
                }
                let link = self.d2d(d, h);
                table.push(Neighbor {
                    id: self.devs[h].id,
                    d2d: link,
                    helper_infra: self.devs[h].trace.predict(t, horizon),
                    headroom_bits: 0,
                });
            }
            self.devs[d].neighbors = table;
            self.devs[d].neighbors_tick = self.tick;
        }
        let mut table = self.devs[d].neighbors.clone();
        for n in &mut table {
            n.headroom_bits = self.devs[self.device_index[&n.id]].cache.headroom_bits();
        }
        table
    }

    fn decide(&mut self, d: usize, c: usize) -> ModeDecision {
        let infra = self.infra(d);
        let th = self.cfg.thresholds;
        let prediction = self.devs[d].trace.predict(self.now, th.horizon_s);
        let needs_helpers = self.strategy() == StrategyKind::Predictive
            && !(infra.usable && prediction.p_horizon >= th.theta_push);
        let neighbors = if needs_helpers {
            self.neighbors(d)
        } else {
            Vec::new()
        };
        let ctx = DecisionContext {
            now: self.now,
            origin: self.devs[d].id,
            content_bits: self.contents[c].size_bits,
            infra,
            infra_prediction: prediction,
            neighbors: &neighbors,
        };
        select_mode(self.strategy(), &th, &ctx)
    }

    fn apply(&mut self, d: usize, c: usize, decision: ModeDecision) {
        match decision.mode {
            Mode::DirectPush => {
                self.metrics.modes.direct_push += 1;
                self.contents[c].state = ContentState::Uploading;
                self.locs[c] = Location::Upload(d);
                self.devs[d].upload.push_back(c);
            }
            Mode::StoreAndPush => self.store(d, c),
            Mode::ForwardAndPush(helper_id) => {
                let h = self.device_index[&helper_id];
                let accepted = cache_insert(&mut self.devs[h].cache, &self.contents[c], self.now)
                    .expect("content ids are unique");
                if !accepted {
                    self.store(d, c);
                    return;
                }
                self.metrics.modes.forward_and_push += 1;
                self.contents[c].state = ContentState::ForwardedTo(helper_id);
                self.locs[c] = Location::Handoff { origin: d, helper: h };
                self.devs[d].handoffs.push_back(c);
                if self.devs[d].active_handoff.is_none() {
                    self.start_handoff(d);
                }
            }
        }
    }

    fn store(&mut self, d: usize, c: usize) {
        self.metrics.modes.store_and_push += 1;
        self.contents[c].state = ContentState::StoredLocal;
        self.locs[c] = Location::Waiting(d);
        self.devs[d].waiting.push(c);
        self.promote(d);
    }

    /// Moves held contents into the uplink queue when the uplink is usable.
    fn promote(&mut self, d: usize) {
        if !self.strategy().uses_storage() || self.devs[d].waiting.is_empty() {
            return;
        }
        if !self.infra(d).usable {
            return;
        }
        let mut waiting = std::mem::take(&mut self.devs[d].waiting);
        waiting.sort_by(|&a, &b| {
            let (ca, cb) = (&self.contents[a], &self.contents[b]);
            ca.created_at.total_cmp(&cb.created_at).then(ca.id.cmp(&cb.id))
        });
        for c in waiting {
            self.contents[c].state = ContentState::Uploading;
            self.locs[c] = Location::Upload(d);
            self.devs[d].upload.push_back(c);
        }
    }

    /// Pulls queued uploads back into storage while the uplink is down.
    fn demote(&mut self, d: usize) {
        if !self.strategy().uses_storage() || self.devs[d].upload.is_empty() {
            return;
        }
        if self.infra(d).usable {
            return;
        }
        let id = self.devs[d].id;
        while let Some(c) = self.devs[d].upload.pop_front() {
            self.contents[c].state = if self.contents[c].origin == id {
                ContentState::StoredLocal
            } else {
                ContentState::ForwardedTo(id)
            };
            self.locs[c] = Location::Waiting(d);
            self.devs[d].waiting.push(c);
        }
    }

    fn start_handoff(&mut self, d: usize) {
        while let Some(&c) = self.devs[d].handoffs.front() {
            let Location::Handoff { helper, .. } = self.locs[c] else {
                unreachable!("handoff queue holds only handoffs");
            };
            let link = self.d2d(d, helper);
            if link.usable {
                self.devs[d].active_handoff = Some(Handoff {
                    content: c,
                    helper,
                    setup_left_s: self.cfg.radio_d2d.setup_time_s,
                    rate_bps: link.rate_bps,
                });
                return;
            }
            self.abort_handoff(d, c);
        }
        self.devs[d].active_handoff = None;
    }

    fn abort_handoff(&mut self, d: usize, c: usize) {
        let Location::Handoff { helper, .. } = self.locs[c] else {
            unreachable!();
        };
        self.devs[d].handoffs.retain(|&x| x != c);
        self.devs[helper].cache.remove(self.contents[c].id);
        self.metrics.modes.aborted_handoffs += 1;
        self.contents[c].state = ContentState::StoredLocal;
        self.locs[c] = Location::Waiting(d);
        self.devs[d].waiting.push(c);
        self.promote(d);
    }

    fn complete_handoff(&mut self, d: usize) {
        let hand = self.devs[d].active_handoff.take().expect("active handoff");
        let c = hand.content;
        self.devs[d].handoffs.pop_front();
        self.contents[c].remaining_bits = self.contents[c].size_bits as f64;
        self.locs[c] = Location::Waiting(hand.helper);
        self.devs[hand.helper].waiting.push(c);
        self.promote(hand.helper);
        self.start_handoff(d);
    }

    /// Removes a content that reached a terminal state from wherever it sits
    /// and books it.
    fn finish(&mut self, c: usize) {
        match self.locs[c] {
            Location::Upload(d) => self.devs[d].upload.retain(|&x| x != c),
            Location::Waiting(d) => self.devs[d].waiting.retain(|&x| x != c),
            Location::Handoff { origin, .. } => {
                let was_active = self.devs[origin]
                    .active_handoff
                    .as_ref()
                    .is_some_and(|h| h.content == c);
                self.devs[origin].handoffs.retain(|&x| x != c);
                if was_active {
                    self.devs[origin].active_handoff = None;
                    self.start_handoff(origin);
                }
            }
            Location::Done => unreachable!("content finished twice"),
        }
        self.locs[c] = Location::Done;
        let content = &self.contents[c];
        if let ContentState::ForwardedTo(_) | ContentState::Uploading = content.state {
            unreachable!("finishing a live content");
        }
        // Release any helper cache slot the content occupied.
        for dev in &mut self.devs {
            if dev.cache.remove(content.id) {
                break;
            }
        }
        let origin = self.device_index[&content.origin];
        let stats = &mut self.metrics.per_device[origin].1;
        match content.state {
            ContentState::DeliveredAt(t) => {
                self.metrics.n_delivered += 1;
                self.metrics.bits.delivered += content.size_bits;
                self.metrics.delay_samples.push(t - content.created_at);
                stats.delivered += 1;
            }
            ContentState::Dropped(DropCause::Blockage) => {
                self.metrics.n_dropped_blockage += 1;
                self.metrics.bits.dropped += content.size_bits;
                stats.dropped_blockage += 1;
            }
            ContentState::Dropped(DropCause::InsufficientRate) => {
                self.metrics.n_dropped_rate += 1;
                self.metrics.bits.dropped += content.size_bits;
                stats.dropped_rate += 1;
            }
            _ => unreachable!(),
        }
        self.live -= 1;
    }

    fn next_deadline(&mut self) -> Option<f64> {
        while let Some(std::cmp::Reverse(Deadline(bits, c))) = self.deadlines.peek().copied() {
            if self.locs[c] == Location::Done {
                self.deadlines.pop();
                continue;
            }
            return Some(f64::from_bits(bits));
        }
        None
    }

    /// Fluid advance of every transfer up to `target` with link states frozen
    /// at the current tick.
    fn advance_to(&mut self, target: f64) {
        let theta_block = self.cfg.thresholds.theta_block;
        let mut active: Vec<(usize, f64)> = Vec::with_capacity(self.devs.len());
        while self.now < target {
            active.clear();
            for d in 0..self.devs.len() {
                if !self.devs[d].upload.is_empty() {
                    active.push((d, self.infra(d).rate_bps));
                }
            }
            let rates: Vec<f64> = if active.is_empty() {
                Vec::new()
            } else {
                share_uplink(&active.iter().map(|a| a.1).collect::<Vec<_>>())
            };

            let mut end = target;
            for (&(d, _), &r) in active.iter().zip(&rates) {
                if r > 0.0 {
                    let c = self.devs[d].upload[0];
                    end = end.min(self.now + self.contents[c].remaining_bits / r);
                }
            }
            for dev in &self.devs {
                if let Some(h) = &dev.active_handoff {
                    let bits = self.contents[h.content].remaining_bits;
                    end = end.min(self.now + h.setup_left_s + bits / h.rate_bps);
                }
            }
            if let Some(dl) = self.next_deadline() {
                end = end.min(dl);
            }
            let end = end.max(self.now);
            let dt = end - self.now;

            for d in 0..self.devs.len() {
                if self.devs[d].holds_anything() && !self.infra(d).usable {
                    let dev = &self.devs[d];
                    for &c in dev.upload.iter().chain(&dev.waiting).chain(&dev.handoffs) {
                        self.contents[c].outage_s += dt;
                    }
                }
            }

            let mut finished = Vec::new();
            for (&(d, _), &r) in active.iter().zip(&rates) {
                let c = self.devs[d].upload[0];
                self.contents[c] = advance_content(&self.contents[c], self.now, dt, r, theta_block);
                if self.contents[c].is_terminal() {
                    finished.push(c);
                }
            }
            let mut handed = Vec::new();
            for d in 0..self.devs.len() {
                let Some(h) = self.devs[d].active_handoff.as_mut() else {
                    continue;
                };
                let c = h.content;
                let content = &mut self.contents[c];
                // Completion is judged in time, not leftover bits: at large
                // `now` a few stray bits can be shorter than one ulp.
                let done_at = self.now + h.setup_left_s + content.remaining_bits / h.rate_bps;
                if done_at <= end {
                    h.setup_left_s = 0.0;
                    content.remaining_bits = 0.0;
                    handed.push(d);
                    continue;
                }
                let setup = h.setup_left_s.min(dt);
                h.setup_left_s -= setup;
                content.remaining_bits = (content.remaining_bits - h.rate_bps * (dt - setup)).max(0.0);
            }
            self.now = end;

            for c in finished {
                self.finish(c);
            }
            for d in handed {
                let c = self.devs[d].active_handoff.as_ref().map(|h| h.content);
                if let Some(c) = c {
                    if self.contents[c].deadline_at > self.now {
                        self.complete_handoff(d);
                    }
                }
            }
            while let Some(dl) = self.next_deadline() {
                if dl > self.now {
                    break;
                }
                let std::cmp::Reverse(Deadline(_, c)) = self.deadlines.pop().unwrap();
                let content = &mut self.contents[c];
                content.state = ContentState::Dropped(classify_drop(
                    content.outage_s,
                    content.lifetime(),
                    theta_block,
                ));
                self.finish(c);
            }
        }
    }

    fn held_count(&self) -> u64 {
        self.devs
            .iter()
            .map(|d| (d.upload.len() + d.waiting.len() + d.handoffs.len()) as u64)
            .sum()
    }

    fn on_tick(&mut self, k: usize) {
        self.advance_to(self.tick_time(k));
        self.tick = k;
        for d in 0..self.devs.len() {
            if self.devs[d].holds_anything() {
                self.demote(d);
                self.promote(d);
            }
            if let Some(c) = self.devs[d].active_handoff.as_ref().map(|h| h.content) {
                let Location::Handoff { helper, .. } = self.locs[c] else {
                    unreachable!();
                };
                let link = self.d2d(d, helper);
                if link.usable {
                    self.devs[d].active_handoff.as_mut().unwrap().rate_bps = link.rate_bps;
                } else {
                    self.devs[d].active_handoff = None;
                    self.abort_handoff(d, c);
                    self.start_handoff(d);
                }
            }
        }
        let m = &self.metrics;
        assert_eq!(
            m.n_generated,
            m.n_delivered + m.n_dropped() + self.live,
            "content conservation violated at t = {}",
            self.now
        );
        debug_assert_eq!(self.live, self.held_count());
    }

    fn on_epoch(&mut self) {
        for d in 0..self.devs.len() {
            let id = self.devs[d].id;
            let mut own: Vec<usize> = self.devs[d]
                .waiting
                .iter()
                .copied()
                .filter(|&c| self.contents[c].origin == id)
                .collect();
            own.sort_by(|&a, &b| self.contents[a].created_at.total_cmp(&self.contents[b].created_at));
            for c in own {
                if self.locs[c] != Location::Waiting(d) {
                    continue;
                }
                let decision = self.decide(d, c);
                if decision.mode == Mode::StoreAndPush {
                    continue;
                }
                self.devs[d].waiting.retain(|&x| x != c);
                self.apply(d, c, decision);
            }
        }
    }

    fn on_arrival(&mut self, content: Content) {
        self.advance_to(content.created_at);
        let d = self.device_index[&content.origin];
        let c = self.contents.len();
        self.deadlines.push(std::cmp::Reverse(Deadline(
            content.deadline_at.to_bits(),
            c,
        )));
        self.metrics.n_generated += 1;
        self.metrics.bits.generated += content.size_bits;
        self.metrics.per_device[d].1.generated += 1;
        self.contents.push(content);
        self.locs.push(Location::Waiting(d));
        self.live += 1;
        let decision = self.decide(d, c);
        self.apply(d, c, decision);
    }

    fn on_end(&mut self, t: f64) {
        self.advance_to(t);
        self.metrics.n_censored = self.live;
        for c in 0..self.contents.len() {
            if self.locs[c] != Location::Done {
                let origin = self.device_index[&self.contents[c].origin];
                self.metrics.per_device[origin].1.censored += 1;
                self.metrics.bits.in_flight += self.contents[c].size_bits;
            }
        }
    }
}

/// Full result of one run: metrics plus the final state of every content.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub contents: Vec<Content>,
}

pub fn run_detailed(config: &SimConfig, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = if config.randomize_start {
        randomized_scene(&config.scene, &mut rng)
    } else {
        config.scene.clone()
    };
    let mut traffic = generate_traffic(config, &mut rng);
    let mut sim = Sim::new(config, scene);

    let n_ticks = (config.sim_duration_s / config.tick_s).ceil() as usize;
    let per_epoch = config.ticks_per_epoch();
    let mut queue = BinaryHeap::new();
    let push = |q: &mut BinaryHeap<std::cmp::Reverse<Event>>, time, kind| {
        q.push(std::cmp::Reverse(Event { time, kind }))
    };
    push(&mut queue, 0.0, EventKind::Tick);
    push(&mut queue, 0.0, EventKind::DecisionEpoch);
    push(&mut queue, config.sim_duration_s, EventKind::SimEnd);
    if let Some((t, d)) = traffic.peek() {
        push(&mut queue, t, EventKind::ContentArrival(d));
    }
    let (mut tick, mut epoch) = (0usize, 0usize);

    while let Some(std::cmp::Reverse(ev)) = queue.pop() {
        match ev.kind {
            EventKind::Tick => {
                sim.on_tick(tick);
                tick += 1;
                if tick < n_ticks {
                    push(&mut queue, sim.tick_time(tick), EventKind::Tick);
                }
            }
            EventKind::DecisionEpoch => {
                sim.on_epoch();
                epoch += 1;
                let k = epoch * per_epoch;
                if k < n_ticks {
                    push(&mut queue, sim.tick_time(k), EventKind::DecisionEpoch);
                }
            }
            EventKind::ContentArrival(_) => {
                let content = traffic.next().expect("peeked arrival");
                sim.on_arrival(content);
                if let Some((t, d)) = traffic.peek() {
                    push(&mut queue, t, EventKind::ContentArrival(d));
                }
            }
            EventKind::SimEnd => {
                sim.on_end(ev.time);
                break;
            }
        }
    }
    debug_assert!(sim.metrics.is_conserved());
    Ok(RunOutcome {
        metrics: sim.metrics,
        contents: sim.contents,
    })
}

/// One replication. Identical `(config, seed)` gives identical metrics.
pub fn run(config: &SimConfig, seed: u64) -> Result<Metrics> {
    run_detailed(config, seed).map(|o| o.metrics)
}

/// Runs `config.n_runs` replications with seeds `base_seed + r`, in
/// parallel, returned in run order.
pub fn run_replications(config: &SimConfig) -> Result<Vec<Metrics>> {
    config.validate()?;
    (0..config.n_runs)
        .into_par_iter()
        .map(|r| run(config, config.base_seed + r as u64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% confidence interval; zero
    /// for a single sample.
    pub ci_half_width: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Estimate {
    /// Order-insensitive: values are sorted before reduction.
    pub fn from_samples(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                ci_half_width: 0.0,
                min: f64::NAN,
                max: f64::NAN,
                n,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let half = if n < 2 {
            0.0
        } else {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        };
        Self {
            mean: mean.clamp(v[0], v[n - 1]),
            ci_half_width: half,
            min: v[0],
            max: v[n - 1],
            n,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<Metrics>,
    pub drop_blockage: Estimate,
    pub drop_rate: Estimate,
    pub drop_total: Estimate,
    /// Per-run mean delay over delivered contents, seconds.
    pub mean_delay_s: Estimate,
}

pub fn aggregate(reports: &[Metrics]) -> RunReport {
    let collect = |f: &dyn Fn(&Metrics) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    RunReport {
        runs: reports.to_vec(),
        drop_blockage: Estimate::from_samples(&collect(&|m| m.drop_blockage())),
        drop_rate: Estimate::from_samples(&collect(&|m| m.drop_rate())),
        drop_total: Estimate::from_samples(&collect(&|m| m.drop_total())),
        mean_delay_s: Estimate::from_samples(&collect(&|m| m.mean_delay().unwrap_or(f64::NAN))),
    }
}
