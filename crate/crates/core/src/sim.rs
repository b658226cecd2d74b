//! Slot-loop orchestration: topology events, agent hooks, metrics and output files.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::policy::Policy;
use crate::agent::{AgentConfig, CycleOutcome, MetricScope, RmaAgent};
use crate::aoi::{NodeId, Slot, SystemAoi};
use crate::backend::{
    reflect_and_decide, BackendError, Candidate, CycleRequest, DecideAdvice, Mode, ReasoningBackend, ReflectAdvice,
    RemoteBackend, ScriptedBackend,
};
use crate::channel::{FeedbackFrame, Station, World};
use crate::error::{Error, Result};
use crate::nodes::{AlohaConfig, FixedProbConfig, LegacyNode, TdmaConfig};
use crate::scenario::{BackendKind, DynamicEvent, NodeSpec, ScenarioConfig};

pub const BUILD_STAMP: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const PERIOD_CSV_HEADER: &str = "period,slot_end,node_id,p_executing,delta_p,window_mean_aoi,cnt_my_success,cnt_my_collision,cnt_other_success,cnt_other_collision,cnt_idle";

pub const CYCLE_CSV_HEADER: &str =
    "cycle,slot_end,node_id,p_before,p_after,cycle_mean_aoi,aoi_delta,skipped,strategy_stored";

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum SimNode {
    Legacy(LegacyNode),
    Rma(Box<RmaAgent>),
}

impl Station for SimNode {
    fn decide(&mut self, id: NodeId, slot: Slot) -> std::result::Result<bool, String> {
        match self {
            SimNode::Legacy(n) => Station::decide(n, id, slot),
            SimNode::Rma(a) => a.decide(id, slot),
        }
    }

    fn on_feedback(&mut self, id: NodeId, frame: &FeedbackFrame) {
        if let SimNode::Rma(a) = self {
            a.on_feedback(id, frame);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub period: u64,
    pub slot_end: Slot,
    pub node_id: NodeId,
    pub p_executing: f64,
    pub delta_p: f64,
    pub window_mean_aoi: f64,
    pub cnt_my_success: u32,
    pub cnt_my_collision: u32,
    pub cnt_other_success: u32,
    pub cnt_other_collision: u32,
    pub cnt_idle: u32,
}

impl PeriodRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.period,
            self.slot_end,
            self.node_id,
            self.p_executing,
            self.delta_p,
            self.window_mean_aoi,
            self.cnt_my_success,
            self.cnt_my_collision,
            self.cnt_other_success,
            self.cnt_other_collision,
            self.cnt_idle
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::Contract(format!("malformed period row: {line:?}"));
        if f.len() != 11 {
            return Err(bad());
        }
        let u = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
        let c = |i: usize| f[i].parse::<u32>().map_err(|_| bad());
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(PeriodRow {
            period: u(0)?,
            slot_end: u(1)?,
            node_id: NodeId(c(2)?),
            p_executing: x(3)?,
            delta_p: x(4)?,
            window_mean_aoi: x(5)?,
            cnt_my_success: c(6)?,
            cnt_my_collision: c(7)?,
            cnt_other_success: c(8)?,
            cnt_other_collision: c(9)?,
            cnt_idle: c(10)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: u64,
    pub slot_end: Slot,
    pub node_id: NodeId,
    pub p_before: f64,
    pub p_after: f64,
    pub cycle_mean_aoi: f64,
    pub aoi_delta: Option<f64>,
    pub skipped: bool,
    pub strategy_stored: bool,
}

impl CycleRow {
    fn new(slot_end: Slot, node_id: NodeId, o: &CycleOutcome) -> Self {
        CycleRow {
            cycle: o.cycle,
            slot_end,
            node_id,
            p_before: o.p_before,
            p_after: o.p_after,
            cycle_mean_aoi: o.cycle_mean_aoi,
            aoi_delta: o.aoi_delta,
            skipped: o.skipped,
            strategy_stored: o.strategy_stored,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.slot_end,
            self.node_id,
            self.p_before,
            self.p_after,
            self.cycle_mean_aoi,
            self.aoi_delta.map(|d| d.to_string()).unwrap_or_default(),
            self.skipped,
            self.strategy_stored
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::Contract(format!("malformed cycle row: {line:?}"));
        if f.len() != 9 {
            return Err(bad());
        }
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let b = |i: usize| f[i].parse::<bool>().map_err(|_| bad());
        Ok(CycleRow {
            cycle: f[0].parse().map_err(|_| bad())?,
            slot_end: f[1].parse().map_err(|_| bad())?,
            node_id: NodeId(f[2].parse().map_err(|_| bad())?),
            p_before: x(3)?,
            p_after: x(4)?,
            cycle_mean_aoi: x(5)?,
            aoi_delta: if f[6].is_empty() { None } else { Some(x(6)?) },
            skipped: b(7)?,
            strategy_stored: b(8)?,
        })
    }
}

/// Trailing mean of a node's own age over one observation window.
#[derive(Debug, Clone)]
struct ThresholdWatch {
    threshold: f64,
    window: usize,
    recent: VecDeque<u64>,
    sum: u64,
    crossed: Option<Slot>,
}

impl ThresholdWatch {
    fn push(&mut self, slot: Slot, aoi: u64) {
        self.recent.push_back(aoi);
        self.sum += aoi;
        if self.recent.len() > self.window {
            self.sum -= self.recent.pop_front().unwrap_or(0);
        }
        if self.crossed.is_none()
            && self.recent.len() == self.window
            && self.sum as f64 / self.window as f64 <= self.threshold
        {
            self.crossed = Some(slot);
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TailAcc {
    sum: u64,
    count: u64,
}

struct InFlight {
    req: CycleRequest,
    handle: JoinHandle<std::result::Result<(ReflectAdvice, DecideAdvice), BackendError>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub slots: Slot,
    pub metric_scope: MetricScope,
    pub mode: Mode,
    pub rma_nodes: Vec<NodeId>,
    /// Time-average age of every node active at the end, over its lifetime.
    pub final_node_aoi: BTreeMap<NodeId, f64>,
    pub system_aoi_sum: f64,
    pub system_aoi_mean: f64,
    /// Time-average ages over the final fifth of the run.
    pub steady_state_node_aoi: BTreeMap<NodeId, f64>,
    pub steady_state_system_mean: f64,
    pub steady_state_system_sum: f64,
    /// The headline number: steady-state system mean, or the RMA nodes'
    /// mean steady-state age when optimising per node.
    pub headline_aoi: f64,
    pub threshold_crossing: BTreeMap<NodeId, Option<Slot>>,
    pub policy_trajectory: BTreeMap<NodeId, Vec<f64>>,
    pub reports: BTreeMap<NodeId, u64>,
    pub reflections: BTreeMap<NodeId, u64>,
    pub period_mean_aoi: BTreeMap<NodeId, f64>,
    pub backend_failures: u64,
    pub skipped_reflections: u64,
    /// `(slot, active nodes)` at the start and after every topology change.
    pub node_count_trajectory: Vec<(Slot, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub slot_log: bool,
}

pub fn agent_config(cfg: &ScenarioConfig) -> AgentConfig {
    let a = &cfg.agent;
    AgentConfig {
        period_len: cfg.n_slots_per_period,
        periods_per_cycle: cfg.periods_per_cycle,
        delta_max: a.delta_max,
        strategy_capacity: a.strategy_capacity,
        scope: cfg.metric_scope,
        mode: cfg.mode,
        observe_enabled: a.observe,
        reflection_enabled: a.reflection,
        policy: Policy { p_global: a.p_initial, beta: a.beta, p_min: a.p_min, p_max: a.p_max },
    }
}

pub fn make_backend(cfg: &ScenarioConfig) -> Arc<dyn ReasoningBackend> {
    match cfg.backend {
        BackendKind::Scripted => Arc::new(ScriptedBackend::new(cfg.scripted)),
        BackendKind::Remote => Arc::new(RemoteBackend::new(cfg.remote.clone())),
    }
}

fn build_node(cfg: &ScenarioConfig, spec: &NodeSpec, id: NodeId) -> Result<SimNode> {
    Ok(match spec {
        NodeSpec::Tdma { frame_len, slots, .. } => {
            SimNode::Legacy(LegacyNode::tdma(TdmaConfig::new(*frame_len, slots.iter().copied())?)?)
        }
        NodeSpec::Aloha { q, seed, .. } => {
            SimNode::Legacy(LegacyNode::aloha(AlohaConfig { q: *q, seed: *seed }, cfg.seed, id)?)
        }
        NodeSpec::Fixed { p, seed, .. } => {
            SimNode::Legacy(LegacyNode::fixed(FixedProbConfig { p: *p, seed: *seed }, cfg.seed, id)?)
        }
        NodeSpec::Rma { priority, .. } => {
            let spec = if cfg.mode == Mode::Priority { *priority } else { None };
            SimNode::Rma(Box::new(RmaAgent::new(id, agent_config(cfg), spec, cfg.seed)?))
        }
    })
}

pub struct Simulation {
    cfg: ScenarioConfig,
    world: World<SimNode>,
    backend: Arc<dyn ReasoningBackend>,
    events: VecDeque<DynamicEvent>,
    periods: Vec<PeriodRow>,
    cycles: Vec<CycleRow>,
    slot_log: Option<Vec<String>>,
    tail_start: Slot,
    tail: BTreeMap<NodeId, TailAcc>,
    watches: BTreeMap<NodeId, ThresholdWatch>,
    node_counts: Vec<(Slot, usize)>,
    inflight: BTreeMap<NodeId, InFlight>,
    hold: Option<NodeId>,
    held: bool,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, backend: Arc<dyn ReasoningBackend>, opts: SimOptions) -> Result<Self> {
        cfg.validate()?;
        let mut sim = Simulation {
            tail_start: cfg.total_slots - cfg.total_slots / 5,
            world: World::new(),
            backend,
            events: cfg.dynamic_events.iter().cloned().collect(),
            periods: Vec::new(),
            cycles: Vec::new(),
            slot_log: opts.slot_log.then(Vec::new),
            tail: BTreeMap::new(),
            watches: BTreeMap::new(),
            node_counts: Vec::new(),
            inflight: BTreeMap::new(),
            hold: None,
            held: false,
            cfg,
        };
        let nodes = sim.cfg.nodes.clone();
        for (i, spec) in nodes.iter().enumerate() {
            let id = NodeId(spec.id().unwrap_or(i as u32));
            sim.add(spec, id)?;
        }
        sim.node_counts.push((1, sim.world.nodes().len()));
        Ok(sim)
    }

    /// Builds the backend named in the config.
    pub fn from_config(cfg: ScenarioConfig, opts: SimOptions) -> Result<Self> {
        let backend = make_backend(&cfg);
        Self::new(cfg, backend, opts)
    }

    fn add(&mut self, spec: &NodeSpec, id: NodeId) -> Result<()> {
        let node = build_node(&self.cfg, spec, id)?;
        if let SimNode::Rma(agent) = &node {
            if let Some(p) = agent.priority() {
                self.watches.insert(
                    id,
                    ThresholdWatch {
                        threshold: p.aoi_threshold,
                        window: self.cfg.n_slots_per_period,
                        recent: VecDeque::new(),
                        sum: 0,
                        crossed: None,
                    },
                );
            }
        }
        self.world.add_node(id, node)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World<SimNode> {
        &self.world
    }

    pub fn slot(&self) -> Slot {
        self.world.slot()
    }

    pub fn periods(&self) -> &[PeriodRow] {
        &self.periods
    }

    pub fn cycles(&self) -> &[CycleRow] {
        &self.cycles
    }

    pub fn slot_log(&self) -> Option<&[String]> {
        self.slot_log.as_deref()
    }

    pub fn backend(&self) -> &Arc<dyn ReasoningBackend> {
        &self.backend
    }

    pub fn agent(&self, id: NodeId) -> Option<&RmaAgent> {
        match self.world.node(id).map(|e| &e.station) {
            Some(SimNode::Rma(a)) => Some(a),
            _ => None,
        }
    }

    pub fn agent_mut(&mut self, id: NodeId) -> Option<&mut RmaAgent> {
        match self.world.node_mut(id).map(|e| &mut e.station) {
            Some(SimNode::Rma(a)) => Some(a),
            _ => None,
        }
    }

    pub fn rma_ids(&self) -> Vec<NodeId> {
        self.world.nodes().iter().filter(|e| matches!(e.station, SimNode::Rma(_))).map(|e| e.id).collect()
    }

    /// Exact copy of the run state, including every random stream. Fails
    /// while an asynchronous reflection is in flight.
    pub fn snapshot(&self) -> Result<Simulation> {
        if !self.inflight.is_empty() {
            return Err(Error::Contract("cannot snapshot with reflections in flight".into()));
        }
        Ok(Simulation {
            cfg: self.cfg.clone(),
            world: self.world.clone(),
            backend: Arc::clone(&self.backend),
            events: self.events.clone(),
            periods: self.periods.clone(),
            cycles: self.cycles.clone(),
            slot_log: self.slot_log.clone(),
            tail_start: self.tail_start,
            tail: self.tail.clone(),
            watches: self.watches.clone(),
            node_counts: self.node_counts.clone(),
            inflight: BTreeMap::new(),
            hold: self.hold,
            held: self.held,
        })
    }

    /// Stops the loop whenever `node` reaches a cycle boundary, leaving the
    /// cycle for the caller to close.
    pub fn set_hold(&mut self, node: Option<NodeId>) {
        self.hold = node;
        self.held = false;
    }

    pub fn is_held(&self) -> bool {
        self.held
    }

    pub fn release(&mut self) {
        self.held = false;
    }

    pub fn record_cycle(&mut self, node: NodeId, outcome: &CycleOutcome) {
        self.cycles.push(CycleRow::new(self.world.slot(), node, outcome));
    }

    fn apply_events(&mut self, slot: Slot) -> Result<()> {
        let mut changed = false;
        while self.events.front().is_some_and(|e| e.slot() <= slot) {
            let event = self.events.pop_front().unwrap();
            match event {
                DynamicEvent::Remove { ids, .. } => {
                    for id in ids {
                        let id = NodeId(id);
                        self.inflight.remove(&id);
                        self.world.remove_node(id)?;
                    }
                }
                DynamicEvent::Add { nodes, .. } => {
                    for spec in nodes {
                        let id = spec.id().map_or_else(|| self.world.next_free_id(), NodeId);
                        self.add(&spec, id)?;
                    }
                }
            }
            changed = true;
        }
        if changed {
            self.node_counts.push((slot, self.world.nodes().len()));
        }
        Ok(())
    }

    /// Runs one slot with its period and cycle hooks.
    pub fn step(&mut self) -> Result<()> {
        let slot = self.world.slot() + 1;
        self.apply_events(slot)?;
        let (frame, record) = self.world.step()?;
        if let Some(log) = &mut self.slot_log {
            log.push(record.to_line());
        }
        if slot > self.tail_start {
            for n in &frame.nodes {
                let acc = self.tail.entry(n.id).or_default();
                acc.sum += n.aoi;
                acc.count += 1;
            }
        }
        for (id, watch) in &mut self.watches {
            if let Some(e) = frame.entry(*id) {
                watch.push(slot, e.aoi);
            }
        }
        self.hooks(slot)
    }

    fn hooks(&mut self, slot: Slot) -> Result<()> {
        let asynchronous = self.cfg.agent.asynchronous;
        let Simulation { world, backend, periods, cycles, inflight, hold, held, .. } = self;
        for entry in world.nodes_mut() {
            let SimNode::Rma(agent) = &mut entry.station else { continue };
            if !agent.period_ready() {
                continue;
            }
            let id = entry.id;
            if let Some(done) = inflight.get(&id).filter(|f| f.handle.is_finished()).map(|_| id) {
                let f = inflight.remove(&done).unwrap();
                let outcome = finish_inflight(agent, f);
                cycles.push(CycleRow::new(slot, id, &outcome));
            }
            let out = agent.close_period(slot, backend.as_ref())?;
            let r = &out.report;
            let c = &r.state_counts;
            periods.push(PeriodRow {
                period: r.period,
                slot_end: slot,
                node_id: id,
                p_executing: r.p_executing,
                delta_p: r.delta_p,
                window_mean_aoi: r.window_mean_aoi,
                cnt_my_success: c.my_success,
                cnt_my_collision: c.my_collision,
                cnt_other_success: c.other_success,
                cnt_other_collision: c.other_collision,
                cnt_idle: c.idle,
            });
            if !agent.cycle_ready() {
                continue;
            }
            if *hold == Some(id) {
                *held = true;
                continue;
            }
            if !asynchronous || !agent.config().reflection_enabled {
                let outcome = agent.close_cycle(backend.as_ref())?;
                cycles.push(CycleRow::new(slot, id, &outcome));
                continue;
            }
            if let Some(f) = inflight.remove(&id) {
                let outcome = finish_inflight(agent, f);
                cycles.push(CycleRow::new(slot, id, &outcome));
            }
            let req = agent.prepare_cycle()?;
            let b = Arc::clone(backend);
            let sent = req.clone();
            let handle = std::thread::spawn(move || reflect_and_decide(b.as_ref(), &sent, Candidate::Primary));
            inflight.insert(id, InFlight { req, handle });
        }
        Ok(())
    }

    /// Steps until `slots` slots have run in total.
    pub fn run_until(&mut self, slots: Slot) -> Result<()> {
        while self.world.slot() < slots {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until the held node reaches a cycle boundary or the run ends.
    pub fn run_until_held(&mut self) -> Result<bool> {
        self.held = false;
        while self.world.slot() < self.cfg.total_slots {
            self.step()?;
            if self.held {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Runs to `total_slots`, waits for outstanding reflections and
    /// returns the summary.
    pub fn run_to_end(&mut self) -> Result<RunSummary> {
        self.run_until(self.cfg.total_slots)?;
        self.drain();
        Ok(self.summary())
    }

    fn drain(&mut self) {
        let slot = self.world.slot();
        let pending: Vec<NodeId> = self.inflight.keys().copied().collect();
        for id in pending {
            let f = self.inflight.remove(&id).unwrap();
            if let Some(SimNode::Rma(agent)) = self.world.node_mut(id).map(|e| &mut e.station) {
                let outcome = finish_inflight(agent, f);
                self.cycles.push(CycleRow::new(slot, id, &outcome));
            }
        }
    }

    pub fn summary(&self) -> RunSummary {
        let rma_nodes = self.rma_ids();
        let final_node_aoi: BTreeMap<NodeId, f64> =
            self.world.nodes().iter().filter_map(|e| e.tracker.average().ok().map(|a| (e.id, a))).collect();
        let system = SystemAoi::from_averages(final_node_aoi.values().copied().collect()).ok();
        let steady_state_node_aoi: BTreeMap<NodeId, f64> = self
            .world
            .nodes()
            .iter()
            .filter_map(|e| self.tail.get(&e.id).filter(|a| a.count > 0).map(|a| (e.id, a.sum as f64 / a.count as f64)))
            .collect();
        let ss_sum: f64 = steady_state_node_aoi.values().sum();
        let ss_mean = if steady_state_node_aoi.is_empty() { 0.0 } else { ss_sum / steady_state_node_aoi.len() as f64 };
        let headline_aoi = match self.cfg.metric_scope {
            MetricScope::System => ss_mean,
            MetricScope::Node => {
                let v: Vec<f64> = rma_nodes.iter().filter_map(|id| steady_state_node_aoi.get(id)).copied().collect();
                if v.is_empty() {
                    ss_mean
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            }
        };

        let mut policy_trajectory: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for c in &self.cycles {
            policy_trajectory.entry(c.node_id).or_default().push(c.p_after);
        }
        let mut reports: BTreeMap<NodeId, u64> = BTreeMap::new();
        let mut aoi_sums: BTreeMap<NodeId, f64> = BTreeMap::new();
        for p in &self.periods {
            *reports.entry(p.node_id).or_default() += 1;
            *aoi_sums.entry(p.node_id).or_default() += p.window_mean_aoi;
        }
        let period_mean_aoi = aoi_sums.iter().map(|(id, s)| (*id, s / reports[id] as f64)).collect();

        let mut reflections = BTreeMap::new();
        let (mut failures, mut skipped) = (0, 0);
        for e in self.world.nodes().iter().chain(self.world.retired()) {
            if let SimNode::Rma(a) = &e.station {
                reflections.insert(e.id, a.memory().reflections().len() as u64);
                failures += a.stats().backend_failures;
                skipped += a.stats().skipped_reflections;
            }
        }

        RunSummary {
            scenario: self.cfg.name.clone(),
            seed: self.cfg.seed,
            slots: self.world.slot(),
            metric_scope: self.cfg.metric_scope,
            mode: self.cfg.mode,
            rma_nodes,
            final_node_aoi,
            system_aoi_sum: system.as_ref().map_or(0.0, |s| s.sum),
            system_aoi_mean: system.as_ref().map_or(0.0, |s| s.mean),
            steady_state_node_aoi,
            steady_state_system_mean: ss_mean,
            steady_state_system_sum: ss_sum,
            headline_aoi,
            threshold_crossing: self.watches.iter().map(|(id, w)| (*id, w.crossed)).collect(),
            policy_trajectory,
            reports,
            reflections,
            period_mean_aoi,
            backend_failures: failures,
            skipped_reflections: skipped,
            node_count_trajectory: self.node_counts.clone(),
        }
    }

    pub fn periods_csv(&self) -> String {
        let mut s = String::from(PERIOD_CSV_HEADER);
        s.push('\n');
        for row in &self.periods {
            let _ = writeln!(s, "{}", row.to_csv());
        }
        s
    }

    pub fn cycles_csv(&self) -> String {
        let mut s = String::from(CYCLE_CSV_HEADER);
        s.push('\n');
        for row in &self.cycles {
            let _ = writeln!(s, "{}", row.to_csv());
        }
        s
    }

    pub fn summary_json(&self, summary: &RunSummary) -> Result<String> {
        let doc = json!({
            "build": BUILD_STAMP,
            "metadata": {
                "slot_duration_ms": self.cfg.slot_duration_ms,
                "simulated_ms": self.world.slot() as f64 * self.cfg.slot_duration_ms,
            },
            "config": self.cfg,
            "summary": summary,
        });
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Writes `periods.csv`, `cycles.csv`, `summary.json` and, when
    /// enabled, `slots.log` into `out_dir`.
    pub fn write_outputs(&self, summary: &RunSummary, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = out_dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("periods.csv", self.periods_csv())?;
        write("cycles.csv", self.cycles_csv())?;
        write("summary.json", self.summary_json(summary)?)?;
        if let Some(lines) = &self.slot_log {
            let mut body = lines.join("\n");
            body.push('\n');
            write("slots.log", body)?;
        }
        Ok(())
    }
}

fn finish_inflight(agent: &mut RmaAgent, f: InFlight) -> CycleOutcome {
    let result =
        f.handle.join().unwrap_or_else(|_| Err(BackendError::Unavailable("reflection worker panicked".into())));
    agent.finish_cycle(&f.req, result)
}

/// Runs a scenario to completion with the configured backend, writing the
/// output files when `out_dir` is given.
pub fn run(cfg: ScenarioConfig, out_dir: Option<&Path>, opts: SimOptions) -> Result<RunSummary> {
    let mut sim = Simulation::from_config(cfg, opts)?;
    let summary = sim.run_to_end()?;
    if let Some(dir) = out_dir {
        sim.write_outputs(&summary, dir)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;

    #[test]
    fn cadence_counts() {
        let mut cfg = builtin_scenario("s1").unwrap();
        cfg.total_slots = 601;
        let mut sim = Simulation::from_config(cfg, SimOptions::default()).unwrap();
        let s = sim.run_to_end().unwrap();
        assert_eq!(s.reports[&NodeId(2)], 3);
        assert_eq!(s.reflections[&NodeId(2)], 1);
        assert_eq!(sim.cycles().len(), 1);
    }

    #[test]
    fn csv_rows_round_trip() {
        let mut cfg = builtin_scenario("s1").unwrap();
        cfg.total_slots = 1200;
        let mut sim = Simulation::from_config(cfg, SimOptions::default()).unwrap();
        sim.run_to_end().unwrap();
        for row in sim.periods() {
            assert_eq!(&PeriodRow::parse_csv(&row.to_csv()).unwrap(), row);
        }
        for row in sim.cycles() {
            assert_eq!(&CycleRow::parse_csv(&row.to_csv()).unwrap(), row);
        }
    }

    #[test]
    fn async_mode_completes_every_cycle() {
        let mut cfg = builtin_scenario("s1").unwrap();
        cfg.total_slots = 6000;
        cfg.agent.asynchronous = true;
        let mut sim = Simulation::from_config(cfg, SimOptions::default()).unwrap();
        let s = sim.run_to_end().unwrap();
        assert_eq!(s.reflections[&NodeId(2)], 10);
        assert_eq!(sim.cycles().len(), 10);
    }

    #[test]
    fn threshold_watch_needs_full_window() {
        let mut w = ThresholdWatch { threshold: 2.0, window: 3, recent: VecDeque::new(), sum: 0, crossed: None };
        w.push(1, 1);
        w.push(2, 1);
        assert_eq!(w.crossed, None);
        w.push(3, 4);
        assert_eq!(w.crossed, Some(3));
        w.push(4, 9);
        assert_eq!(w.crossed, Some(3));
    }
}
