//! The reflective access agent: per-slot execution, per-period observation
//! and per-cycle reflection with decision.

pub mod memory;
pub mod policy;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aoi::{NodeId, Slot};
use crate::backend::{
    reflect_and_decide, BackendError, Candidate, CycleRequest, DecideAdvice, Mode, ObserveRequest, ReasoningBackend,
    ReflectAdvice,
};
use crate::channel::{FeedbackFrame, Station};
use crate::error::{Error, Result};
use crate::rng::NodeRng;

use memory::{MemoryBank, ObservationReport, ReflectionRecord, ShortTermEntry, StrategyRecord};
use policy::{
    execute_decision, priority_initial_policy, priority_perturbation, Perturbation, PerturbationOrigin, Policy,
    PrioritySpec,
};

/// Which age the agent optimises.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricScope {
    /// Mean instantaneous age over all active nodes.
    #[default]
    System,
    /// The node's own age.
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub period_len: usize,
    pub periods_per_cycle: usize,
    pub delta_max: f64,
    pub strategy_capacity: usize,
    pub scope: MetricScope,
    pub mode: Mode,
    pub observe_enabled: bool,
    pub reflection_enabled: bool,
    pub policy: Policy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            period_len: 200,
            periods_per_cycle: 3,
            delta_max: 0.05,
            strategy_capacity: 10,
            scope: MetricScope::System,
            mode: Mode::Normal,
            observe_enabled: true,
            reflection_enabled: true,
            policy: Policy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStats {
    pub observe_calls: u64,
    pub reflect_calls: u64,
    pub backend_failures: u64,
    pub skipped_reflections: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodOutcome {
    pub report: ObservationReport,
    /// Offset in force for the next period.
    pub next_perturbation: Perturbation,
    pub analysis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub cycle: u64,
    pub p_before: f64,
    pub p_after: f64,
    pub cycle_mean_aoi: f64,
    pub aoi_delta: Option<f64>,
    pub skipped: bool,
    pub strategy_stored: bool,
}

#[derive(Debug, Clone)]
pub struct RmaAgent {
    id: NodeId,
    config: AgentConfig,
    policy: Policy,
    priority: Option<PrioritySpec>,
    rng: NodeRng,
    observe_pert: Perturbation,
    memory: MemoryBank,
    periods_closed: u64,
    cycles_closed: u64,
    prev_report: Option<ObservationReport>,
    prev_cycle_mean: Option<f64>,
    last_adjustment: f64,
    pending: Option<(bool, f64)>,
    last_effective_p: f64,
    stats: AgentStats,
}

impl RmaAgent {
    pub fn new(id: NodeId, config: AgentConfig, priority: Option<PrioritySpec>, scenario_seed: u64) -> Result<Self> {
        if config.period_len == 0 || config.periods_per_cycle == 0 {
            return Err(Error::Config("period length and cycle length must be at least 1".into()));
        }
        if config.delta_max.is_nan() || config.delta_max < 0.0 {
            return Err(Error::Config("delta_max must be non-negative".into()));
        }
        let mut policy = config.policy;
        if let Some(spec) = &priority {
            spec.validate()?;
            policy = priority_initial_policy(spec, &policy);
        }
        policy.validate()?;
        Ok(RmaAgent {
            id,
            config,
            policy,
            priority,
            rng: NodeRng::new(scenario_seed, id),
            observe_pert: Perturbation::zero(PerturbationOrigin::Observe, 0),
            memory: MemoryBank::new(config.period_len, config.periods_per_cycle, config.strategy_capacity)?,
            periods_closed: 0,
            cycles_closed: 0,
            prev_report: None,
            prev_cycle_mean: None,
            last_adjustment: 0.0,
            pending: None,
            last_effective_p: policy.p_global,
            stats: AgentStats::default(),
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn priority(&self) -> Option<&PrioritySpec> {
        self.priority.as_ref()
    }

    pub fn memory(&self) -> &MemoryBank {
        &self.memory
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn observe_perturbation(&self) -> &Perturbation {
        &self.observe_pert
    }

    pub fn last_effective_p(&self) -> f64 {
        self.last_effective_p
    }

    pub fn periods_closed(&self) -> u64 {
        self.periods_closed
    }

    pub fn cycles_closed(&self) -> u64 {
        self.cycles_closed
    }

    pub fn rng_position(&self) -> u128 {
        self.rng.position()
    }

    pub fn period_ready(&self) -> bool {
        self.memory.period_full()
    }

    pub fn cycle_ready(&self) -> bool {
        self.memory.cycle_full()
    }

    /// Draws this slot's decision; the priority offset is redrawn every slot.
    pub fn execute(&mut self) -> bool {
        let mut perts = vec![self.observe_pert];
        if let Some(spec) = &self.priority {
            perts.push(priority_perturbation(spec, &mut self.rng, self.periods_closed, self.config.delta_max));
        }
        let (tx, p) = execute_decision(&self.policy, &perts, &mut self.rng);
        self.pending = Some((tx, p));
        self.last_effective_p = p;
        tx
    }

    /// Records the slot outcome into short-term memory.
    pub fn record(&mut self, frame: &FeedbackFrame) -> Result<()> {
        let (tx, p) = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract(format!("node {} got feedback without deciding", self.id)))?;
        let me =
            frame.entry(self.id).ok_or_else(|| Error::Contract(format!("node {} missing from feedback", self.id)))?;
        let total = frame.total_aoi();
        let metric = match self.config.scope {
            MetricScope::System => frame.mean_aoi(),
            MetricScope::Node => me.aoi as f64,
        };
        self.memory.push_short(ShortTermEntry {
            state: me.state,
            transmitted: tx,
            p_executing: p,
            metric_aoi: metric,
            own_aoi: me.aoi,
            others_aoi: total - me.aoi,
        })
    }

    fn observe_request(&self, report: &ObservationReport) -> ObserveRequest {
        ObserveRequest {
            node: self.id,
            mode: self.config.mode,
            priority: self.priority.map(|s| s.priority),
            report: report.clone(),
            previous: self.prev_report.clone(),
        }
    }

    /// Closes a full observation window. The Observe stage is skipped on the
    /// first window and when observation is disabled.
    pub fn close_period(&mut self, slot_end: Slot, backend: &dyn ReasoningBackend) -> Result<PeriodOutcome> {
        let report =
            self.memory.take_period(self.periods_closed, slot_end, self.policy.p_global, self.observe_pert.delta_p)?;
        let next = self.periods_closed + 1;
        let mut analysis = None;
        let pert = if self.config.observe_enabled && self.prev_report.is_some() {
            self.stats.observe_calls += 1;
            match backend.observe(&self.observe_request(&report)) {
                Ok(advice) => {
                    analysis = Some(advice.analysis_text);
                    Perturbation::new(advice.delta_p, PerturbationOrigin::Observe, next, self.config.delta_max)
                }
                Err(e) => {
                    log::warn!("node {}: observe failed at slot {slot_end}: {e}", self.id);
                    self.stats.backend_failures += 1;
                    Perturbation::zero(PerturbationOrigin::Observe, next)
                }
            }
        } else {
            Perturbation::zero(PerturbationOrigin::Observe, next)
        };
        self.observe_pert = pert;
        self.memory.push_long(report.clone())?;
        self.prev_report = Some(report.clone());
        self.periods_closed = next;
        Ok(PeriodOutcome { report, next_perturbation: pert, analysis })
    }

    /// Empties long-term memory and builds the Reflect/Decide input.
    pub fn prepare_cycle(&mut self) -> Result<CycleRequest> {
        if !self.memory.cycle_full() {
            return Err(Error::Contract(format!(
                "cycle closed with {} of {} reports",
                self.memory.long().len(),
                self.config.periods_per_cycle
            )));
        }
        let long_term = self.memory.take_cycle();
        let cycle_mean_aoi = long_term.iter().map(|r| r.window_mean_aoi).sum::<f64>() / long_term.len() as f64;
        let aoi_delta = self.prev_cycle_mean.map(|prev| cycle_mean_aoi - prev);
        self.prev_cycle_mean = Some(cycle_mean_aoi);
        let last_reflection = self.memory.reflections().iter().rev().find(|r| !r.skipped).map(|r| r.text.clone());
        Ok(CycleRequest {
            node: self.id,
            cycle: self.cycles_closed,
            mode: self.config.mode,
            priority: self.priority.map(|s| s.priority),
            long_term,
            p_global: self.policy.p_global,
            p_min: self.policy.p_min,
            p_max: self.policy.p_max,
            aoi_delta,
            cycle_mean_aoi,
            last_reflection,
            last_adjustment: self.last_adjustment,
            strategy_memory: self.memory.strategies().to_vec(),
        })
    }

    fn context(req: &CycleRequest) -> String {
        let windows: Vec<_> = req
            .long_term
            .iter()
            .map(|r| {
                json!({
                    "period": r.period,
                    "p_executing": r.p_executing,
                    "delta_p": r.delta_p,
                    "window_mean_aoi": r.window_mean_aoi,
                    "state_counts": r.state_counts,
                })
            })
            .collect();
        json!({
            "cycle": req.cycle,
            "p_global": req.p_global,
            "cycle_mean_aoi": req.cycle_mean_aoi,
            "aoi_delta": req.aoi_delta,
            "windows": windows,
        })
        .to_string()
    }

    /// Applies a Reflect/Decide result, or records a skipped reflection when
    /// the backend failed.
    pub fn finish_cycle(
        &mut self,
        req: &CycleRequest,
        result: std::result::Result<(ReflectAdvice, DecideAdvice), BackendError>,
    ) -> CycleOutcome {
        self.stats.reflect_calls += 1;
        let p_before = self.policy.p_global;
        let improvement = req.aoi_delta.map_or(0.0, |d| -d);
        let mut stored = false;
        let skipped = match result {
            Ok((reflection, decision)) => {
                let f = decision.new_p - req.p_global;
                self.policy = self.policy.adjusted(f);
                if req.aoi_delta.is_some_and(|d| d < 0.0) && decision.store_current {
                    stored = self.memory.push_strategy(StrategyRecord {
                        p: req.p_global,
                        aoi_delta: req.aoi_delta.unwrap_or(0.0),
                        cycle: req.cycle,
                        priority_tag: self.priority.map(|s| s.priority).into(),
                    });
                }
                self.memory.push_reflection(ReflectionRecord {
                    cycle: req.cycle,
                    text: reflection.reflection_text,
                    aoi_improvement: improvement,
                    context: Self::context(req),
                    skipped: false,
                });
                false
            }
            Err(e) => {
                log::warn!("node {}: reflection skipped in cycle {}: {e}", self.id, req.cycle);
                self.stats.backend_failures += 1;
                self.stats.skipped_reflections += 1;
                self.memory.push_reflection(ReflectionRecord {
                    cycle: req.cycle,
                    text: format!("skipped: {e}"),
                    aoi_improvement: improvement,
                    context: Self::context(req),
                    skipped: true,
                });
                true
            }
        };
        self.last_adjustment = self.policy.p_global - p_before;
        self.cycles_closed += 1;
        CycleOutcome {
            cycle: req.cycle,
            p_before,
            p_after: self.policy.p_global,
            cycle_mean_aoi: req.cycle_mean_aoi,
            aoi_delta: req.aoi_delta,
            skipped,
            strategy_stored: stored,
        }
    }

    /// Closes a cycle without reflecting; long-term memory is still cleared.
    pub fn pass_cycle(&mut self, req: &CycleRequest) -> CycleOutcome {
        self.last_adjustment = 0.0;
        self.cycles_closed += 1;
        CycleOutcome {
            cycle: req.cycle,
            p_before: self.policy.p_global,
            p_after: self.policy.p_global,
            cycle_mean_aoi: req.cycle_mean_aoi,
            aoi_delta: req.aoi_delta,
            skipped: false,
            strategy_stored: false,
        }
    }

    /// Synchronous cycle close: Reflect, then Decide, then apply.
    pub fn close_cycle(&mut self, backend: &dyn ReasoningBackend) -> Result<CycleOutcome> {
        let req = self.prepare_cycle()?;
        if !self.config.reflection_enabled {
            return Ok(self.pass_cycle(&req));
        }
        let result = reflect_and_decide(backend, &req, Candidate::Primary);
        Ok(self.finish_cycle(&req, result))
    }
}

impl Station for RmaAgent {
    fn decide(&mut self, id: NodeId, _slot: Slot) -> std::result::Result<bool, String> {
        if id != self.id {
            return Err(format!("agent {} asked to decide as {id}", self.id));
        }
        Ok(self.execute())
    }

    fn on_feedback(&mut self, _id: NodeId, frame: &FeedbackFrame) {
        if let Err(e) = self.record(frame) {
            log::error!("{e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ObserveAdvice, ScriptedBackend};
    use crate::channel::World;

    struct Failing;

    impl ReasoningBackend for Failing {
        fn observe(&self, _: &ObserveRequest) -> std::result::Result<ObserveAdvice, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn reflect(&self, _: &CycleRequest, _: Candidate) -> std::result::Result<ReflectAdvice, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn decide(&self, _: &CycleRequest, _: &ReflectAdvice) -> std::result::Result<DecideAdvice, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
    }

    struct Fixed {
        new_p: f64,
        store: bool,
    }

    impl ReasoningBackend for Fixed {
        fn observe(&self, _: &ObserveRequest) -> std::result::Result<ObserveAdvice, BackendError> {
            Ok(ObserveAdvice { analysis_text: String::new(), delta_p: 0.5 })
        }
        fn reflect(&self, _: &CycleRequest, _: Candidate) -> std::result::Result<ReflectAdvice, BackendError> {
            Ok(ReflectAdvice { reflection_text: "r".into(), suggested_adjustment: 0.03 })
        }
        fn decide(&self, _: &CycleRequest, _: &ReflectAdvice) -> std::result::Result<DecideAdvice, BackendError> {
            Ok(DecideAdvice { decision_text: "d".into(), new_p: self.new_p, store_current: self.store })
        }
    }

    fn small_config() -> AgentConfig {
        AgentConfig { period_len: 4, periods_per_cycle: 2, ..AgentConfig::default() }
    }

    fn run_slots(world: &mut World<RmaAgent>, backend: &dyn ReasoningBackend, slots: u64) -> Vec<CycleOutcome> {
        let mut cycles = Vec::new();
        for _ in 0..slots {
            world.step().unwrap();
            let slot = world.slot();
            for entry in world.nodes_mut() {
                let agent = &mut entry.station;
                if agent.period_ready() {
                    agent.close_period(slot, backend).unwrap();
                    if agent.cycle_ready() {
                        cycles.push(agent.close_cycle(backend).unwrap());
                    }
                }
            }
        }
        cycles
    }

    fn solo(config: AgentConfig) -> World<RmaAgent> {
        let mut w = World::new();
        w.add_node(NodeId(0), RmaAgent::new(NodeId(0), config, None, 1).unwrap()).unwrap();
        w
    }

    #[test]
    fn cadence() {
        let mut w = solo(small_config());
        let cycles = run_slots(&mut w, &ScriptedBackend::default(), 17);
        let a = &w.nodes()[0].station;
        assert_eq!(a.periods_closed(), 4);
        assert_eq!(cycles.len(), 2);
        assert_eq!(a.memory().reflections().len(), 2);
        assert_eq!(a.memory().short().len(), 1);
        assert!(a.memory().long().is_empty());
    }

    #[test]
    fn decide_marker_sets_policy_and_strategy_memory() {
        let mut a = RmaAgent::new(NodeId(0), small_config(), None, 1).unwrap();
        a.policy = a.policy.with_p(0.35);
        let mut req = CycleRequest {
            node: NodeId(0),
            cycle: 0,
            mode: Mode::Normal,
            priority: None,
            long_term: Vec::new(),
            p_global: 0.35,
            p_min: 0.01,
            p_max: 0.99,
            aoi_delta: Some(-2.8),
            cycle_mean_aoi: 45.1,
            last_reflection: None,
            last_adjustment: 0.0,
            strategy_memory: Vec::new(),
        };
        let b = Fixed { new_p: 0.38, store: true };
        let res = reflect_and_decide(&b, &req, Candidate::Primary);
        let out = a.finish_cycle(&req, res);
        assert!((out.p_after - 0.38).abs() < 1e-12);
        assert!(out.strategy_stored);
        assert_eq!(a.memory().strategies()[0].p, 0.35);
        assert_eq!(a.memory().strategies()[0].aoi_delta, -2.8);
        assert!((a.memory().reflections()[0].aoi_improvement - 2.8).abs() < 1e-12);

        req.p_global = a.policy().p_global;
        req.aoi_delta = Some(0.5);
        let b = Fixed { new_p: req.p_global, store: true };
        let res = reflect_and_decide(&b, &req, Candidate::Primary);
        let out = a.finish_cycle(&req, res);
        assert_eq!(out.p_before, out.p_after);
        assert_eq!(a.memory().strategies().len(), 1);
    }

    #[test]
    fn backend_failure_keeps_policy() {
        let mut w = solo(small_config());
        let cycles = run_slots(&mut w, &Failing, 16);
        let a = &w.nodes()[0].station;
        assert!(cycles.iter().all(|c| c.skipped && c.p_before == c.p_after));
        assert_eq!(a.policy().p_global, 0.30);
        assert_eq!(a.observe_perturbation().delta_p, 0.0);
        assert!(a.memory().reflections().iter().all(|r| r.skipped));
        assert_eq!(a.stats().backend_failures, 3 + 2);
    }

    #[test]
    fn observe_offset_is_clamped_and_skipped_on_first_window() {
        let b = Fixed { new_p: 0.3, store: false };
        let mut w = solo(small_config());
        run_slots(&mut w, &b, 4);
        assert_eq!(w.nodes()[0].station.observe_perturbation().delta_p, 0.0);
        run_slots(&mut w, &b, 4);
        assert_eq!(w.nodes()[0].station.observe_perturbation().delta_p, 0.05);
    }

    #[test]
    fn no_reflection_leaves_policy_but_clears_long_memory() {
        let cfg = AgentConfig { reflection_enabled: false, ..small_config() };
        let mut w = solo(cfg);
        let b = Fixed { new_p: 0.9, store: true };
        let cycles = run_slots(&mut w, &b, 16);
        let a = &w.nodes()[0].station;
        assert_eq!(cycles.len(), 2);
        assert_eq!(a.policy().p_global, 0.30);
        assert!(a.memory().reflections().is_empty());
        assert!(a.memory().long().is_empty());
    }

    #[test]
    fn trajectory_is_reproducible() {
        let trace = || {
            let mut w = solo(small_config());
            let cycles = run_slots(&mut w, &ScriptedBackend::default(), 400);
            (cycles, w.nodes()[0].tracker.sum_delta(), w.nodes()[0].station.rng_position())
        };
        assert_eq!(trace(), trace());
    }

    #[test]
    fn priority_spec_sets_initial_policy() {
        let cfg = AgentConfig { mode: Mode::Priority, ..small_config() };
        let a = RmaAgent::new(NodeId(0), cfg, Some(PrioritySpec::high(4.0)), 1).unwrap();
        assert_eq!(a.policy().p_global, 0.5);
    }
}
