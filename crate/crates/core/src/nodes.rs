//! Legacy node behaviours: TDMA, slotted ALOHA and fixed-probability nodes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::aoi::{NodeId, Slot};
use crate::error::{Error, Result};
use crate::rng::NodeRng;

/// TDMA schedule; in-frame positions are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdmaConfig {
    pub frame_len: u32,
    pub assigned: BTreeSet<u32>,
}

impl TdmaConfig {
    pub fn new(frame_len: u32, assigned: impl IntoIterator<Item = u32>) -> Result<Self> {
        let cfg = TdmaConfig { frame_len, assigned: assigned.into_iter().collect() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 {
            return Err(Error::Config("TDMA frame length must be positive".into()));
        }
        if self.assigned.is_empty() {
            return Err(Error::Config("TDMA node needs at least one assigned slot".into()));
        }
        if let Some(bad) = self.assigned.iter().find(|&&s| s == 0 || s > self.frame_len) {
            return Err(Error::Config(format!("TDMA slot {bad} outside frame 1..={}", self.frame_len)));
        }
        Ok(())
    }

    /// 1-based position of `slot` inside its frame.
    pub fn position(&self, slot: Slot) -> u32 {
        ((slot - 1) % u64::from(self.frame_len)) as u32 + 1
    }
}

impl Default for TdmaConfig {
    /// Ten-slot frame with positions 3 and 5.
    fn default() -> Self {
        TdmaConfig { frame_len: 10, assigned: [3, 5].into_iter().collect() }
    }
}

pub fn tdma_decide(cfg: &TdmaConfig, slot: Slot) -> bool {
    slot >= 1 && cfg.assigned.contains(&cfg.position(slot))
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlohaConfig {
    pub q: f64,
    /// Overrides the scenario seed for this node's stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AlohaConfig {
    pub fn new(q: f64) -> Result<Self> {
        check_probability("q", q)?;
        Ok(AlohaConfig { q, seed: None })
    }
}

pub fn aloha_decide(cfg: &AlohaConfig, rng: &mut NodeRng) -> bool {
    rng.bernoulli(cfg.q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedProbConfig {
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FixedProbConfig {
    pub fn new(p: f64) -> Result<Self> {
        check_probability("p", p)?;
        Ok(FixedProbConfig { p, seed: None })
    }
}

/// A non-learning node with its private random stream.
#[derive(Debug, Clone)]
pub enum LegacyNode {
    Tdma(TdmaConfig),
    Aloha { cfg: AlohaConfig, rng: NodeRng },
    Fixed { cfg: FixedProbConfig, rng: NodeRng },
}

impl LegacyNode {
    pub fn tdma(cfg: TdmaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LegacyNode::Tdma(cfg))
    }

    pub fn aloha(cfg: AlohaConfig, scenario_seed: u64, id: NodeId) -> Result<Self> {
        check_probability("q", cfg.q)?;
        let rng = NodeRng::new(cfg.seed.unwrap_or(scenario_seed), id);
        Ok(LegacyNode::Aloha { cfg, rng })
    }

    pub fn fixed(cfg: FixedProbConfig, scenario_seed: u64, id: NodeId) -> Result<Self> {
        check_probability("p", cfg.p)?;
        let rng = NodeRng::new(cfg.seed.unwrap_or(scenario_seed), id);
        Ok(LegacyNode::Fixed { cfg, rng })
    }

    pub fn decide(&mut self, slot: Slot) -> bool {
        match self {
            LegacyNode::Tdma(cfg) => tdma_decide(cfg, slot),
            LegacyNode::Aloha { cfg, rng } => aloha_decide(cfg, rng),
            LegacyNode::Fixed { cfg, rng } => rng.bernoulli(cfg.p),
        }
    }

    /// Transmission probability at a given slot; TDMA is 0 or 1.
    pub fn transmit_probability(&self, slot: Slot) -> f64 {
        match self {
            LegacyNode::Tdma(cfg) => f64::from(u8::from(tdma_decide(cfg, slot))),
            LegacyNode::Aloha { cfg, .. } => cfg.q,
            LegacyNode::Fixed { cfg, .. } => cfg.p,
        }
    }
}
