//! Shared collision channel: resolves each slot and broadcasts AP feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aoi::{classify_slot, AoiTracker, NodeId, PerNodeSlotState, Slot, SlotOutcome};
use crate::error::{Error, Result};
use crate::nodes::LegacyNode;

/// Zero transmitters is idle, one is a success, two or more collide.
pub fn resolve_slot<I>(decisions: I) -> Result<SlotOutcome>
where
    I: IntoIterator<Item = (NodeId, bool)>,
{
    let mut seen = false;
    let mut transmitters = BTreeSet::new();
    for (id, tx) in decisions {
        seen = true;
        if tx {
            transmitters.insert(id);
        }
    }
    if !seen {
        return Err(Error::NoActiveNodes);
    }
    Ok(match transmitters.len() {
        0 => SlotOutcome::Idle,
        1 => SlotOutcome::Success(*transmitters.iter().next().unwrap()),
        _ => SlotOutcome::Collision(transmitters),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFeedback {
    pub id: NodeId,
    pub transmitted: bool,
    /// Age sampled at the start of the slot.
    pub aoi: u64,
    pub state: PerNodeSlotState,
}

/// End-of-slot broadcast; one entry per active node in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackFrame {
    pub slot: Slot,
    pub outcome: SlotOutcome,
    pub nodes: Vec<NodeFeedback>,
}

impl FeedbackFrame {
    pub fn entry(&self, id: NodeId) -> Option<&NodeFeedback> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn per_node_aoi(&self) -> BTreeMap<NodeId, u64> {
        self.nodes.iter().map(|n| (n.id, n.aoi)).collect()
    }

    pub fn per_node_state(&self) -> BTreeMap<NodeId, PerNodeSlotState> {
        self.nodes.iter().map(|n| (n.id, n.state)).collect()
    }

    pub fn total_aoi(&self) -> u64 {
        self.nodes.iter().map(|n| n.aoi).sum()
    }

    pub fn mean_aoi(&self) -> f64 {
        self.total_aoi() as f64 / self.nodes.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLogRecord {
    pub slot: Slot,
    pub decisions: BTreeMap<NodeId, bool>,
    pub outcome: SlotOutcome,
}

impl SlotLogRecord {
    /// `slot,decisions_bitmap,outcome_kind,winner_or_set`. The bitmap is
    /// indexed by node id: `1` transmitted, `0` silent, `-` not active.
    pub fn to_line(&self) -> String {
        let width = self.decisions.keys().next_back().map_or(0, |id| id.0 as usize + 1);
        let mut bitmap = vec![b'-'; width];
        for (id, tx) in &self.decisions {
            bitmap[id.0 as usize] = if *tx { b'1' } else { b'0' };
        }
        let who = match &self.outcome {
            SlotOutcome::Idle => String::new(),
            SlotOutcome::Success(w) => w.to_string(),
            SlotOutcome::Collision(set) => {
                let mut s = String::new();
                for (i, id) in set.iter().enumerate() {
                    if i > 0 {
                        s.push(';');
                    }
                    let _ = write!(s, "{id}");
                }
                s
            }
        };
        format!("{},{},{},{}", self.slot, String::from_utf8(bitmap).expect("ascii"), self.outcome.kind(), who)
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = || Error::Contract(format!("malformed slot log line: {line:?}"));
        let mut parts = line.trim_end().splitn(4, ',');
        let slot: Slot = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let bitmap = parts.next().ok_or_else(bad)?;
        let kind = parts.next().ok_or_else(bad)?;
        let who = parts.next().ok_or_else(bad)?;
        let mut decisions = BTreeMap::new();
        for (i, c) in bitmap.bytes().enumerate() {
            match c {
                b'1' => decisions.insert(NodeId(i as u32), true),
                b'0' => decisions.insert(NodeId(i as u32), false),
                b'-' => None,
                _ => return Err(bad()),
            };
        }
        let ids = || -> Result<BTreeSet<NodeId>> {
            who.split(';').map(|s| s.parse().map(NodeId).map_err(|_| bad())).collect()
        };
        let outcome = match kind {
            "idle" => SlotOutcome::Idle,
            "success" => SlotOutcome::Success(*ids()?.iter().next().ok_or_else(bad)?),
            "collision" => SlotOutcome::Collision(ids()?),
            _ => return Err(bad()),
        };
        Ok(SlotLogRecord { slot, decisions, outcome })
    }
}

/// Anything that can occupy a node position on the channel.
pub trait Station {
    /// Transmission decision for `slot`; an `Err` aborts the run.
    fn decide(&mut self, id: NodeId, slot: Slot) -> std::result::Result<bool, String>;

    /// Called with the broadcast feedback after every slot.
    fn on_feedback(&mut self, _id: NodeId, _frame: &FeedbackFrame) {}
}

impl Station for LegacyNode {
    fn decide(&mut self, _id: NodeId, slot: Slot) -> std::result::Result<bool, String> {
        Ok(LegacyNode::decide(self, slot))
    }
}

#[derive(Debug, Clone)]
pub struct NodeEntry<S> {
    pub id: NodeId,
    pub station: S,
    pub tracker: AoiTracker,
}

/// Channel state: active nodes with their trackers, plus nodes that left.
#[derive(Debug, Clone)]
pub struct World<S> {
    slot: Slot,
    nodes: Vec<NodeEntry<S>>,
    retired: Vec<NodeEntry<S>>,
    used_ids: BTreeSet<NodeId>,
}

impl<S> Default for World<S> {
    fn default() -> Self {
        World { slot: 0, nodes: Vec::new(), retired: Vec::new(), used_ids: BTreeSet::new() }
    }
}

impl<S: Station> World<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last completed slot (0 before the first step).
    pub fn slot(&self) -> Slot {
        self.slot
    }

    pub fn nodes(&self) -> &[NodeEntry<S>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [NodeEntry<S>] {
        &mut self.nodes
    }

    pub fn retired(&self) -> &[NodeEntry<S>] {
        &self.retired
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeEntry<S>> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeEntry<S>> {
        self.index_of(id).map(move |i| &mut self.nodes[i])
    }

    fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn next_free_id(&self) -> NodeId {
        self.used_ids.iter().next_back().map_or(NodeId(0), |id| NodeId(id.0 + 1))
    }

    /// Adds a node before the next slot; its age starts at 1.
    pub fn add_node(&mut self, id: NodeId, station: S) -> Result<()> {
        if !self.used_ids.insert(id) {
            return Err(Error::Config(format!("node id {id} already used in this run")));
        }
        let entry = NodeEntry { id, station, tracker: AoiTracker::starting_at(self.slot) };
        let at = self.nodes.partition_point(|n| n.id < id);
        self.nodes.insert(at, entry);
        Ok(())
    }

    pub fn remove_node(&mut self, id: NodeId) -> Result<()> {
        let i = self.index_of(id).ok_or_else(|| Error::Config(format!("node {id} is not active")))?;
        let entry = self.nodes.remove(i);
        self.retired.push(entry);
        Ok(())
    }

    /// Runs one slot: collects decisions in ascending id order, resolves the
    /// channel, advances every tracker and broadcasts the feedback.
    pub fn step(&mut self) -> Result<(FeedbackFrame, SlotLogRecord)> {
        if self.nodes.is_empty() {
            return Err(Error::NoActiveNodes);
        }
        let slot = self.slot + 1;
        let mut decisions = Vec::with_capacity(self.nodes.len());
        for entry in &mut self.nodes {
            let tx = entry.station.decide(entry.id, slot).map_err(|reason| Error::Decision {
                node: entry.id,
                slot,
                reason,
            })?;
            decisions.push((entry.id, tx));
        }
        let outcome = resolve_slot(decisions.iter().copied())?;
        let mut feedback = Vec::with_capacity(self.nodes.len());
        for (entry, &(id, tx)) in self.nodes.iter_mut().zip(&decisions) {
            let state = classify_slot(id, tx, &outcome)?;
            let aoi = entry.tracker.advance(slot, state == PerNodeSlotState::MySuccess)?;
            feedback.push(NodeFeedback { id, transmitted: tx, aoi, state });
        }
        self.slot = slot;
        let frame = FeedbackFrame { slot, outcome: outcome.clone(), nodes: feedback };
        for entry in &mut self.nodes {
            entry.station.on_feedback(entry.id, &frame);
        }
        let record = SlotLogRecord { slot, decisions: decisions.into_iter().collect(), outcome };
        Ok((frame, record))
    }
}
