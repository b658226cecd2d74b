//! Node identity, slot outcomes and Age-of-Information arithmetic.
//!
//! Slots are 1-based. A node's instantaneous age is sampled at the *start*
//! of a slot using the delivery timestamp from the end of the previous slot,
//! so a delivery in slot `n` yields an age of 1 at slot `n + 1`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global 1-based slot index.
pub type Slot = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The channel's resolution of one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotOutcome {
    Idle,
    Success(NodeId),
    /// Always holds at least two transmitters.
    Collision(BTreeSet<NodeId>),
}

impl SlotOutcome {
    pub fn kind(&self) -> &'static str {
        match self {
            SlotOutcome::Idle => "idle",
            SlotOutcome::Success(_) => "success",
            SlotOutcome::Collision(_) => "collision",
        }
    }

    pub fn involves(&self, node: NodeId) -> bool {
        match self {
            SlotOutcome::Idle => false,
            SlotOutcome::Success(w) => *w == node,
            SlotOutcome::Collision(set) => set.contains(&node),
        }
    }
}

/// Five-way classification of a slot from one node's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerNodeSlotState {
    MySuccess,
    MyCollision,
    OtherSuccess,
    OtherCollision,
    Idle,
}

impl PerNodeSlotState {
    pub const ALL: [PerNodeSlotState; 5] = [
        PerNodeSlotState::MySuccess,
        PerNodeSlotState::MyCollision,
        PerNodeSlotState::OtherSuccess,
        PerNodeSlotState::OtherCollision,
        PerNodeSlotState::Idle,
    ];
}

/// Age of a node at `slot` given its latest delivery timestamp `sigma`.
pub fn instantaneous_aoi(slot: Slot, sigma: Slot) -> Result<u64> {
    if sigma >= slot {
        return Err(Error::Contract(format!("delivery timestamp {sigma} is not before slot {slot}")));
    }
    Ok(slot - sigma)
}

/// Incremental per-node age accounting.
///
/// `sum_delta` is kept in exact integer slots; division happens only when
/// an average is requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AoiTracker {
    sigma: Slot,
    delta: u64,
    sum_delta: u64,
    slots_counted: u64,
    /// Global slot preceding the tracker's first sampled slot.
    origin: Slot,
}

impl Default for AoiTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl AoiTracker {
    /// Tracker for a node present from slot 1 (σ = 0).
    pub fn new() -> Self {
        Self::starting_at(0)
    }

    /// Tracker for a node that joins after global slot `arrival`; its first
    /// sampled slot is `arrival + 1` with age 1.
    pub fn starting_at(arrival: Slot) -> Self {
        AoiTracker { sigma: arrival, delta: 0, sum_delta: 0, slots_counted: 0, origin: arrival }
    }

    pub fn sigma(&self) -> Slot {
        self.sigma
    }

    /// Age sampled at the most recent slot (0 before the first sample).
    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn sum_delta(&self) -> u64 {
        self.sum_delta
    }

    pub fn slots_counted(&self) -> u64 {
        self.slots_counted
    }

    /// Next global slot this tracker expects.
    pub fn next_slot(&self) -> Slot {
        self.origin + self.slots_counted + 1
    }

    /// Samples the age at the start of `slot`, then records a delivery at its
    /// end when `delivered`. Returns the sampled age.
    pub fn advance(&mut self, slot: Slot, delivered: bool) -> Result<u64> {
        if slot != self.next_slot() {
            return Err(Error::Contract(format!("tracker expected slot {}, got {slot}", self.next_slot())));
        }
        let delta = instantaneous_aoi(slot, self.sigma)?;
        self.delta = delta;
        self.sum_delta += delta;
        self.slots_counted += 1;
        if delivered {
            self.sigma = slot;
        }
        Ok(delta)
    }

    /// Δ_i(n): the running average age.
    pub fn average(&self) -> Result<f64> {
        node_average_aoi(self)
    }
}

/// Pure-function form of [`AoiTracker::advance`].
pub fn advance_tracker(tracker: &AoiTracker, slot: Slot, delivered: bool) -> Result<AoiTracker> {
    let mut next = tracker.clone();
    next.advance(slot, delivered)?;
    Ok(next)
}

pub fn node_average_aoi(tracker: &AoiTracker) -> Result<f64> {
    if tracker.slots_counted == 0 {
        return Err(Error::NoSamples);
    }
    Ok(tracker.sum_delta as f64 / tracker.slots_counted as f64)
}

/// System-level age: `sum` is the literal sum of per-node averages, `mean`
/// divides it by the node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAoi {
    pub per_node: Vec<f64>,
    pub sum: f64,
    pub mean: f64,
}

impl SystemAoi {
    /// Aggregates already-computed node averages. Used where nodes have
    /// different sample counts (dynamic topologies).
    pub fn from_averages(per_node: Vec<f64>) -> Result<Self> {
        if per_node.is_empty() {
            return Err(Error::NoSamples);
        }
        let sum: f64 = per_node.iter().sum();
        let mean = sum / per_node.len() as f64;
        Ok(SystemAoi { per_node, sum, mean })
    }
}

pub fn system_aoi(trackers: &[AoiTracker]) -> Result<SystemAoi> {
    let first = trackers.first().ok_or(Error::NoSamples)?;
    if let Some(t) = trackers.iter().find(|t| t.slots_counted != first.slots_counted) {
        return Err(Error::Config(format!("mismatched slot counts: {} vs {}", first.slots_counted, t.slots_counted)));
    }
    let per_node = trackers.iter().map(node_average_aoi).collect::<Result<Vec<_>>>()?;
    SystemAoi::from_averages(per_node)
}

pub fn classify_slot(node: NodeId, transmitted: bool, outcome: &SlotOutcome) -> Result<PerNodeSlotState> {
    if transmitted != outcome.involves(node) {
        return Err(Error::Contract(format!(
            "node {node} transmitted={transmitted} inconsistent with {} outcome",
            outcome.kind()
        )));
    }
    Ok(match (transmitted, outcome) {
        (true, SlotOutcome::Success(_)) => PerNodeSlotState::MySuccess,
        (true, _) => PerNodeSlotState::MyCollision,
        (false, SlotOutcome::Success(_)) => PerNodeSlotState::OtherSuccess,
        (false, SlotOutcome::Collision(_)) => PerNodeSlotState::OtherCollision,
        (false, SlotOutcome::Idle) => PerNodeSlotState::Idle,
    })
}
