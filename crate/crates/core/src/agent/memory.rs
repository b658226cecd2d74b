//! The four memory banks of an agent.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::aoi::{PerNodeSlotState, Slot};
use crate::error::{Error, Result};

use super::policy::Priority;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    pub my_success: u32,
    pub my_collision: u32,
    pub other_success: u32,
    pub other_collision: u32,
    pub idle: u32,
}

impl StateCounts {
    pub fn record(&mut self, state: PerNodeSlotState) {
        match state {
            PerNodeSlotState::MySuccess => self.my_success += 1,
            PerNodeSlotState::MyCollision => self.my_collision += 1,
            PerNodeSlotState::OtherSuccess => self.other_success += 1,
            PerNodeSlotState::OtherCollision => self.other_collision += 1,
            PerNodeSlotState::Idle => self.idle += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.my_success + self.my_collision + self.other_success + self.other_collision + self.idle
    }

    fn rate(&self, n: u32) -> f64 {
        match self.total() {
            0 => 0.0,
            t => f64::from(n) / f64::from(t),
        }
    }

    /// Share of slots that ended in a collision, own or not.
    pub fn collision_rate(&self) -> f64 {
        self.rate(self.my_collision + self.other_collision)
    }

    pub fn idle_rate(&self) -> f64 {
        self.rate(self.idle)
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(self.my_success)
    }

    /// Slots in which this node heard nothing but its own success or silence.
    pub fn own_or_idle(&self) -> u32 {
        self.my_success + self.idle
    }

    pub fn render(&self) -> String {
        format!(
            "success={}, collision={}, other_success={}, other_collision={}, idle={}",
            self.my_success, self.my_collision, self.other_success, self.other_collision, self.idle
        )
    }
}

/// One slot of M_short.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortTermEntry {
    pub state: PerNodeSlotState,
    pub transmitted: bool,
    pub p_executing: f64,
    /// The AoI this agent optimises: system mean or its own age.
    pub metric_aoi: f64,
    pub own_aoi: u64,
    /// Sum of every other active node's age in this slot.
    pub others_aoi: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReport {
    pub period: u64,
    pub slot_end: Slot,
    /// Mean effective probability over the window.
    pub p_executing: f64,
    pub p_cycle: f64,
    /// Observe-origin offset that was active during the window.
    pub delta_p: f64,
    pub aoi_seq: Vec<f64>,
    pub state_counts: StateCounts,
    pub window_mean_aoi: f64,
    pub own_mean_aoi: f64,
    /// Window mean of the summed age of all other nodes.
    pub others_aoi_sum: f64,
}

impl ObservationReport {
    /// Builds a report from a full window of short-term entries.
    pub fn from_entries(
        period: u64,
        slot_end: Slot,
        p_cycle: f64,
        delta_p: f64,
        entries: &[ShortTermEntry],
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoSamples);
        }
        let n = entries.len() as f64;
        let mut counts = StateCounts::default();
        for e in entries {
            counts.record(e.state);
        }
        let aoi_seq: Vec<f64> = entries.iter().map(|e| e.metric_aoi).collect();
        Ok(ObservationReport {
            period,
            slot_end,
            p_executing: entries.iter().map(|e| e.p_executing).sum::<f64>() / n,
            p_cycle,
            delta_p,
            window_mean_aoi: aoi_seq.iter().sum::<f64>() / n,
            own_mean_aoi: entries.iter().map(|e| e.own_aoi as f64).sum::<f64>() / n,
            others_aoi_sum: entries.iter().map(|e| e.others_aoi as f64).sum::<f64>() / n,
            aoi_seq,
            state_counts: counts,
        })
    }

    pub fn window_len(&self) -> usize {
        self.aoi_seq.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub cycle: u64,
    pub text: String,
    /// Previous cycle mean minus this cycle's mean; positive means fresher.
    pub aoi_improvement: f64,
    /// Serialized cycle summary the reflection was based on.
    pub context: String,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityTag {
    High,
    Low,
    None,
}

impl From<Option<Priority>> for PriorityTag {
    fn from(p: Option<Priority>) -> Self {
        match p {
            Some(Priority::High) => PriorityTag::High,
            Some(Priority::Low) => PriorityTag::Low,
            None => PriorityTag::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecord {
    pub p: f64,
    pub aoi_delta: f64,
    pub cycle: u64,
    pub priority_tag: PriorityTag,
}

impl StrategyRecord {
    /// Best first: larger AoI drop, then high before low priority, then older.
    pub fn rank(a: &StrategyRecord, b: &StrategyRecord) -> Ordering {
        a.aoi_delta.total_cmp(&b.aoi_delta).then(a.priority_tag.cmp(&b.priority_tag)).then(a.cycle.cmp(&b.cycle))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    short: Vec<ShortTermEntry>,
    long: Vec<ObservationReport>,
    reflections: Vec<ReflectionRecord>,
    strategies: Vec<StrategyRecord>,
    period_len: usize,
    cycle_len: usize,
    capacity: usize,
}

impl MemoryBank {
    pub fn new(period_len: usize, cycle_len: usize, capacity: usize) -> Result<Self> {
        if period_len == 0 || cycle_len == 0 {
            return Err(Error::Config("period and cycle lengths must be positive".into()));
        }
        Ok(MemoryBank {
            short: Vec::with_capacity(period_len),
            long: Vec::with_capacity(cycle_len),
            reflections: Vec::new(),
            strategies: Vec::new(),
            period_len,
            cycle_len,
            capacity,
        })
    }

    pub fn short(&self) -> &[ShortTermEntry] {
        &self.short
    }

    pub fn long(&self) -> &[ObservationReport] {
        &self.long
    }

    pub fn reflections(&self) -> &[ReflectionRecord] {
        &self.reflections
    }

    pub fn strategies(&self) -> &[StrategyRecord] {
        &self.strategies
    }

    pub fn period_full(&self) -> bool {
        self.short.len() == self.period_len
    }

    pub fn cycle_full(&self) -> bool {
        self.long.len() == self.cycle_len
    }

    pub fn push_short(&mut self, entry: ShortTermEntry) -> Result<()> {
        if self.period_full() {
            return Err(Error::Contract("short-term memory is full".into()));
        }
        self.short.push(entry);
        Ok(())
    }

    /// Drains M_short into a report. Requires exactly one full window.
    pub fn take_period(
        &mut self,
        period: u64,
        slot_end: Slot,
        p_cycle: f64,
        delta_p: f64,
    ) -> Result<ObservationReport> {
        if !self.period_full() {
            return Err(Error::Contract(format!(
                "period closed with {} of {} slots",
                self.short.len(),
                self.period_len
            )));
        }
        let report = ObservationReport::from_entries(period, slot_end, p_cycle, delta_p, &self.short)?;
        self.short.clear();
        Ok(report)
    }

    pub fn push_long(&mut self, report: ObservationReport) -> Result<()> {
        if self.cycle_full() {
            return Err(Error::Contract("long-term memory is full".into()));
        }
        self.long.push(report);
        Ok(())
    }

    /// Empties M_long, handing back the cycle's reports.
    pub fn take_cycle(&mut self) -> Vec<ObservationReport> {
        std::mem::take(&mut self.long)
    }

    pub fn push_reflection(&mut self, record: ReflectionRecord) {
        self.reflections.push(record);
    }

    /// Stores a strategy that lowered AoI; returns whether it was kept.
    pub fn push_strategy(&mut self, record: StrategyRecord) -> bool {
        if record.aoi_delta.is_nan() || record.aoi_delta >= 0.0 || self.capacity == 0 {
            return false;
        }
        let at = self.strategies.partition_point(|s| StrategyRecord::rank(s, &record) != Ordering::Greater);
        if at >= self.capacity {
            return false;
        }
        self.strategies.insert(at, record);
        self.strategies.truncate(self.capacity);
        true
    }
}
