//! Scenario descriptions: node mix, cadence, run length and topology events.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::policy::{validate_priority_pair, Priority, PrioritySpec};
use crate::agent::MetricScope;
use crate::aoi::Slot;
use crate::backend::{Mode, RemoteConfig, ScriptedConfig};
use crate::error::{Error, Result};
use crate::nodes::TdmaConfig;
use crate::oracle::OracleNode;

pub const BUILTIN_NAMES: [&str; 6] = ["s1", "s2", "s3", "s4", "s5", "dynamic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NodeSpec {
    Tdma {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u32>,
        frame_len: u32,
        slots: Vec<u32>,
    },
    Aloha {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u32>,
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u32>,
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Rma {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<PrioritySpec>,
    },
}

impl NodeSpec {
    pub fn aloha(q: f64) -> Self {
        NodeSpec::Aloha { id: None, q, seed: None }
    }

    pub fn tdma(cfg: &TdmaConfig) -> Self {
        NodeSpec::Tdma { id: None, frame_len: cfg.frame_len, slots: cfg.assigned.iter().copied().collect() }
    }

    pub fn rma() -> Self {
        NodeSpec::Rma { id: None, priority: None }
    }

    pub fn id(&self) -> Option<u32> {
        match self {
            NodeSpec::Tdma { id, .. }
            | NodeSpec::Aloha { id, .. }
            | NodeSpec::Fixed { id, .. }
            | NodeSpec::Rma { id, .. } => *id,
        }
    }

    pub fn with_id(mut self, new: u32) -> Self {
        match &mut self {
            NodeSpec::Tdma { id, .. }
            | NodeSpec::Aloha { id, .. }
            | NodeSpec::Fixed { id, .. }
            | NodeSpec::Rma { id, .. } => *id = Some(new),
        }
        self
    }

    pub fn is_rma(&self) -> bool {
        matches!(self, NodeSpec::Rma { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NodeSpec::Tdma { .. } => "tdma",
            NodeSpec::Aloha { .. } => "aloha",
            NodeSpec::Fixed { .. } => "fixed",
            NodeSpec::Rma { .. } => "rma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase", deny_unknown_fields)]
pub enum DynamicEvent {
    Add { slot: Slot, nodes: Vec<NodeSpec> },
    Remove { slot: Slot, ids: Vec<u32> },
}

impl DynamicEvent {
    pub fn slot(&self) -> Slot {
        match self {
            DynamicEvent::Add { slot, .. } | DynamicEvent::Remove { slot, .. } => *slot,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

/// Agent knobs shared by every RMA node in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub p_initial: f64,
    pub beta: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub delta_max: f64,
    pub strategy_capacity: usize,
    pub observe: bool,
    pub reflection: bool,
    /// Let reflections run beside the slot loop instead of blocking it.
    pub asynchronous: bool,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            p_initial: 0.30,
            beta: 1.0,
            p_min: 0.01,
            p_max: 0.99,
            delta_max: 0.05,
            strategy_capacity: 10,
            observe: true,
            reflection: true,
            asynchronous: false,
        }
    }
}

fn default_period() -> usize {
    200
}

fn default_cycle() -> usize {
    3
}

fn default_slots() -> u64 {
    60_000
}

fn default_seed() -> u64 {
    7
}

fn default_slot_ms() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "default_period")]
    pub n_slots_per_period: usize,
    #[serde(default = "default_cycle")]
    pub periods_per_cycle: usize,
    #[serde(default = "default_slots")]
    pub total_slots: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub metric_scope: MetricScope,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub agent: AgentSettings,
    #[serde(default)]
    pub scripted: ScriptedConfig,
    #[serde(default)]
    pub remote: RemoteConfig,
    #[serde(default)]
    pub dynamic_events: Vec<DynamicEvent>,
    /// Nominal wall-clock length of a slot, reported as metadata only.
    #[serde(default = "default_slot_ms")]
    pub slot_duration_ms: f64,
}

impl ScenarioConfig {
    pub fn new(name: &str, nodes: Vec<NodeSpec>, metric_scope: MetricScope) -> Self {
        ScenarioConfig {
            name: name.to_owned(),
            nodes,
            n_slots_per_period: default_period(),
            periods_per_cycle: default_cycle(),
            total_slots: default_slots(),
            seed: default_seed(),
            mode: Mode::Normal,
            metric_scope,
            backend: BackendKind::Scripted,
            agent: AgentSettings::default(),
            scripted: ScriptedConfig::default(),
            remote: RemoteConfig::default(),
            dynamic_events: Vec::new(),
            slot_duration_ms: default_slot_ms(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// A builtin name or a path to a TOML scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_NAMES.contains(&name_or_path) {
            builtin_scenario(name_or_path)
        } else if Path::new(name_or_path).exists() {
            Self::load(Path::new(name_or_path))
        } else {
            Err(Error::UnknownScenario(name_or_path.to_owned()))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slots_per_period == 0 || self.periods_per_cycle == 0 {
            return Err(Error::Config("N and O must be at least 1".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Config("scenario has no nodes".into()));
        }
        if self.dynamic_events.windows(2).any(|w| w[0].slot() >= w[1].slot()) {
            return Err(Error::Config("dynamic event slots must be strictly increasing".into()));
        }
        if self.dynamic_events.iter().any(|e| e.slot() == 0) {
            return Err(Error::Config("dynamic events start at slot 1".into()));
        }
        if self.mode == Mode::Priority {
            let (high, low) = self.priority_pair()?;
            validate_priority_pair(&high, &low)?;
        }
        Ok(())
    }

    pub fn rma_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_rma()).count()
    }

    fn priority_pair(&self) -> Result<(PrioritySpec, PrioritySpec)> {
        let specs: Vec<Option<PrioritySpec>> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                NodeSpec::Rma { priority, .. } => Some(*priority),
                _ => None,
            })
            .collect();
        match specs.as_slice() {
            [Some(a), Some(b)] => match (a.priority, b.priority) {
                (Priority::High, Priority::Low) => Ok((*a, *b)),
                (Priority::Low, Priority::High) => Ok((*b, *a)),
                _ => Err(Error::Config("priority mode needs one high and one low node".into())),
            },
            [_, _] => Err(Error::Config("priority mode needs a priority spec on both RMA nodes".into())),
            other => Err(Error::Config(format!("priority mode needs exactly 2 RMA nodes, found {}", other.len()))),
        }
    }

    /// Node positions for the oracle; RMA nodes become free positions.
    pub fn oracle_nodes(&self) -> Result<Vec<OracleNode>> {
        if !self.dynamic_events.is_empty() {
            return Err(Error::Config("the oracle only handles static scenarios".into()));
        }
        self.nodes
            .iter()
            .map(|n| {
                Ok(match n {
                    NodeSpec::Tdma { frame_len, slots, .. } => {
                        OracleNode::Tdma(TdmaConfig::new(*frame_len, slots.iter().copied())?)
                    }
                    NodeSpec::Aloha { q, .. } => OracleNode::Aloha(*q),
                    NodeSpec::Fixed { p, .. } => OracleNode::Fixed(*p),
                    NodeSpec::Rma { .. } => OracleNode::Free,
                })
            })
            .collect()
    }
}

fn mix(aloha: usize, tdma: usize, rma: usize) -> Vec<NodeSpec> {
    let mut nodes = Vec::new();
    nodes.extend((0..aloha).map(|_| NodeSpec::aloha(0.2)));
    nodes.extend((0..tdma).map(|_| NodeSpec::tdma(&TdmaConfig::default())));
    nodes.extend((0..rma).map(|_| NodeSpec::rma()));
    nodes
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "s1" => ScenarioConfig::new("s1", mix(1, 1, 1), MetricScope::System),
        "s2" => ScenarioConfig::new("s2", mix(3, 1, 1), MetricScope::System),
        "s3" => ScenarioConfig::new("s3", mix(0, 0, 2), MetricScope::Node),
        "s4" => ScenarioConfig::new("s4", mix(1, 1, 2), MetricScope::Node),
        "s5" => ScenarioConfig::new("s5", mix(3, 1, 2), MetricScope::Node),
        "dynamic" => {
            let mut cfg = ScenarioConfig::new("dynamic", mix(2, 0, 1), MetricScope::System);
            cfg.total_slots = 12_000;
            cfg.dynamic_events = vec![
                DynamicEvent::Remove { slot: 3000, ids: vec![1] },
                DynamicEvent::Add { slot: 6000, nodes: vec![NodeSpec::aloha(0.2), NodeSpec::aloha(0.2)] },
                DynamicEvent::Add { slot: 9000, nodes: vec![NodeSpec::tdma(&TdmaConfig::default())] },
            ];
            cfg
        }
        other => return Err(Error::UnknownScenario(other.to_owned())),
    };
    Ok(cfg)
}

/// (high, low) AoI thresholds used by the builtin priority scenarios.
pub fn priority_thresholds(name: &str) -> Option<(f64, f64)> {
    match name {
        "s3" => Some((4.0, 6.0)),
        "s4" => Some((6.0, 8.0)),
        "s5" => Some((10.0, 15.0)),
        _ => None,
    }
}

/// Switches to priority mode and assigns high/low specs to the two RMA nodes
/// (first high, second low). Specs already present are kept.
pub fn apply_priority_defaults(mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
    let rma = cfg.rma_count();
    if rma != 2 {
        return Err(Error::Config(format!("priority mode needs exactly 2 RMA nodes, {} has {rma}", cfg.name)));
    }
    cfg.mode = Mode::Priority;
    let missing = cfg.nodes.iter().any(|n| matches!(n, NodeSpec::Rma { priority: None, .. }));
    if missing {
        let (hi, lo) = priority_thresholds(&cfg.name)
            .ok_or_else(|| Error::Config(format!("no default priority thresholds for {}", cfg.name)))?;
        let mut specs = [PrioritySpec::high(hi), PrioritySpec::low(lo)].into_iter();
        for node in &mut cfg.nodes {
            if let NodeSpec::Rma { priority, .. } = node {
                *priority = specs.next();
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
