//! Per-content dissemination state machine, in-device caches and the three
//! strategies that choose between Direct Push, Store and Push, and Forward
//! and Push.
//!
//! Everything here is pure: the engine owns the mutable world and calls in
//! with the current link and LoS outlook.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::losmap::LosPrediction;
use crate::radio::LinkState;
use crate::scene::DeviceId;
use crate::{Error, Result};

pub type ContentId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    Blockage,
    InsufficientRate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContentState {
    /// Created, no mode chosen yet.
    Queued,
    /// In its holder's uplink queue.
    Uploading,
    /// Handed (or being handed) to a helper, which pushes it later.
    ForwardedTo(DeviceId),
    /// Held by its origin until the uplink recovers.
    StoredLocal,
    DeliveredAt(f64),
    Dropped(DropCause),
}

impl ContentState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, ContentState::DeliveredAt(_) | ContentState::Dropped(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Content {
    pub id: ContentId,
    pub origin: DeviceId,
    pub created_at: f64,
    pub size_bits: u64,
    pub deadline_at: f64,
    pub state: ContentState,
    pub remaining_bits: f64,
    /// Time spent so far with the holder's uplink unusable.
    pub outage_s: f64,
}

impl Content {
    pub fn new(
        id: ContentId,
        origin: DeviceId,
        created_at: f64,
        size_bits: u64,
        deadline_at: f64,
    ) -> Result<Self> {
        if size_bits == 0 {
            return Err(Error::invalid("size_bits", "content must be non-empty"));
        }
        if !(deadline_at > created_at) {
            return Err(Error::invalid(
                "deadline_at",
                "deadline must be after creation",
            ));
        }
        Ok(Self {
            id,
            origin,
            created_at,
            size_bits,
            deadline_at,
            state: ContentState::Queued,
            remaining_bits: size_bits as f64,
            outage_s: 0.0,
        })
    }

    pub fn lifetime(&self) -> f64 {
        self.deadline_at - self.created_at
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn delivered_at(&self) -> Option<f64> {
        match self.state {
            ContentState::DeliveredAt(t) => Some(t),
            _ => None,
        }
    }
}

/// Slack (bits) under which a transfer counts as finished; absorbs rounding
/// in `rate * elapsed`.
const DONE_EPS_BITS: f64 = 1e-6;

/// Moves `content` forward by `elapsed` seconds starting at `now`.
///
/// An uploading content drains at `rate_bps` and is delivered at the exact
/// instant its last bit leaves. If the deadline falls inside the interval
/// without delivery, the content is dropped with the cause from
/// [`classify_drop`].
pub fn advance_content(
    content: &Content,
    now: f64,
    elapsed: f64,
    rate_bps: f64,
    theta_block: f64,
) -> Content {
    debug_assert!(!content.is_terminal(), "advancing a terminal content");
    let mut c = content.clone();
    let end = now + elapsed;
    if c.state == ContentState::Uploading && rate_bps > 0.0 {
        let done_at = now + c.remaining_bits / rate_bps;
        if c.remaining_bits <= DONE_EPS_BITS || done_at <= end.min(c.deadline_at) + 1e-12 {
            c.remaining_bits = 0.0;
            c.state = ContentState::DeliveredAt(done_at.min(c.deadline_at).max(now));
            return c;
        }
        c.remaining_bits = (c.remaining_bits - rate_bps * elapsed).max(0.0);
    }
    if end >= c.deadline_at {
        c.state = ContentState::Dropped(classify_drop(c.outage_s, c.lifetime(), theta_block));
    }
    c
}

/// Blockage if the content spent more than `theta_block` of its lifetime
/// with an unusable uplink, otherwise insufficient rate.
pub fn classify_drop(outage_s: f64, lifetime_s: f64, theta_block: f64) -> DropCause {
    if lifetime_s > 0.0 && outage_s / lifetime_s > theta_block {
        DropCause::Blockage
    } else {
        DropCause::InsufficientRate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub content_id: ContentId,
    pub size_bits: u64,
    pub accepted_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    pub capacity_bits: u64,
    pub entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DuplicateContent(pub ContentId);

impl fmt::Display for DuplicateContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "content {} is already cached", self.0)
    }
}

impl std::error::Error for DuplicateContent {}

impl CacheState {
    pub fn new(capacity_bits: u64) -> Self {
        Self {
            capacity_bits,
            entries: Vec::new(),
        }
    }

    pub fn used_bits(&self) -> u64 {
        self.entries.iter().map(|e| e.size_bits).sum()
    }

    pub fn headroom_bits(&self) -> u64 {
        self.capacity_bits - self.used_bits()
    }

    pub fn contains(&self, id: ContentId) -> bool {
        self.entries.iter().any(|e| e.content_id == id)
    }

    /// Admits `content` if it fits in the remaining headroom. Nothing is ever
    /// evicted to make room.
    pub fn insert(&mut self, content: &Content, now: f64) -> Result<bool, DuplicateContent> {
        cache_insert(self, content, now)
    }

    pub fn remove(&mut self, id: ContentId) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| e.content_id != id);
        self.entries.len() != before
    }
}

pub fn cache_insert(
    cache: &mut CacheState,
    content: &Content,
    now: f64,
) -> Result<bool, DuplicateContent> {
    if cache.contains(content.id) {
        return Err(DuplicateContent(content.id));
    }
    if content.size_bits > cache.headroom_bits() {
        return Ok(false);
    }
    cache.entries.push(CacheEntry {
        content_id: content.id,
        size_bits: content.size_bits,
        accepted_at: now,
    });
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "storage")]
    DirectWithStorage,
    #[serde(rename = "predictive")]
    Predictive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Direct,
        StrategyKind::DirectWithStorage,
        StrategyKind::Predictive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Direct => "direct",
            StrategyKind::DirectWithStorage => "storage",
            StrategyKind::Predictive => "predictive",
        }
    }

    pub fn uses_storage(&self) -> bool {
        !matches!(self, StrategyKind::Direct)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "direct" => Ok(StrategyKind::Direct),
            "storage" => Ok(StrategyKind::DirectWithStorage),
            "predictive" => Ok(StrategyKind::Predictive),
            other => Err(format!(
                "unknown strategy `{other}` (expected direct, storage or predictive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Minimum predicted LoS over the horizon for an immediate push.
    pub theta_push: f64,
    /// Margin a helper must beat the device's own outlook by.
    pub delta: f64,
    pub horizon_s: f64,
    /// Outage share above which a drop is blamed on blockage.
    pub theta_block: f64,
    pub redecision_s: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            theta_push: 0.9,
            delta: 0.2,
            horizon_s: 50e-3,
            theta_block: 0.5,
            redecision_s: 5e-3,
        }
    }
}

impl Thresholds {
    pub fn validate(&self, field: &str) -> Result<()> {
        for (name, v) in [
            ("theta_push", self.theta_push),
            ("delta", self.delta),
            ("theta_block", self.theta_block),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    format!("{field}.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        for (name, v) in [
            ("horizon_s", self.horizon_s),
            ("redecision_s", self.redecision_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{field}.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    DirectPush,
    StoreAndPush,
    ForwardAndPush(DeviceId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub own: f64,
    pub best_helper: Option<(DeviceId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDecision {
    pub mode: Mode,
    pub decided_at: f64,
    pub scores: Scores,
}

/// One candidate helper as seen from the deciding device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: DeviceId,
    pub d2d: LinkState,
    pub helper_infra: LosPrediction,
    pub headroom_bits: u64,
}

impl Neighbor {
    pub fn score(&self) -> f64 {
        if self.d2d.usable {
            self.helper_infra.p_horizon
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub now: f64,
    pub origin: DeviceId,
    pub content_bits: u64,
    pub infra: LinkState,
    pub infra_prediction: LosPrediction,
    pub neighbors: &'a [Neighbor],
}

/// Best helper by score; ties go to the shorter D2D link, then the smaller
/// device id. `None` when nobody scores above zero.
pub fn select_helper(neighbors: &[Neighbor]) -> Option<&Neighbor> {
    neighbors
        .iter()
        .filter(|n| n.score() > 0.0)
        .min_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then(a.d2d.distance_m.total_cmp(&b.d2d.distance_m))
                .then(a.id.cmp(&b.id))
        })
}

pub fn select_mode(
    strategy: StrategyKind,
    thresholds: &Thresholds,
    ctx: &DecisionContext<'_>,
) -> ModeDecision {
    let own = ctx.infra_prediction.p_horizon;
    let decide = |mode, best_helper| ModeDecision {
        mode,
        decided_at: ctx.now,
        scores: Scores { own, best_helper },
    };
    let push_now = ctx.infra.usable && own >= thresholds.theta_push;
    match strategy {
        StrategyKind::Direct => decide(Mode::DirectPush, None),
        StrategyKind::DirectWithStorage => {
            if push_now {
                decide(Mode::DirectPush, None)
            } else {
                decide(Mode::StoreAndPush, None)
            }
        }
        StrategyKind::Predictive => {
            if push_now {
                return decide(Mode::DirectPush, None);
            }
            let best = select_helper(ctx.neighbors).filter(|n| n.id != ctx.origin);
            let scored = best.map(|n| (n.id, n.score()));
            match best {
                Some(n)
                    if n.score() - own >= thresholds.delta
                        && n.d2d.usable
                        && n.headroom_bits >= ctx.content_bits =>
                {
                    decide(Mode::ForwardAndPush(n.id), scored)
                }
                _ => decide(Mode::StoreAndPush, scored),
            }
        }
    }
}
