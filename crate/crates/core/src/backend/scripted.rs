//! Deterministic rule engine standing in for a language model.
//!
//! Replies are written in the same prose shape a model would produce, with
//! the numbers embedded in the phrases the parser understands, so the agent
//! treats both backends identically.
//!
//! Reflect estimates a target probability from a renewal approximation of
//! the channel seen over the cycle: with `pi0` the share of slots in which
//! no other node transmitted and `c` the mean summed age of the other nodes
//! scaled by `1 - p`, the weighted sum `w / (p pi0) + c / (1 - p)` is
//! minimised at `p = 1 / (1 + sqrt(c pi0 / w))`. The suggestion steps toward
//! that target in hundredths, at most `reflect_cap` per cycle.

use serde::{Deserialize, Serialize};

use super::parse::{parse_adjustment, parse_strategy_output};
use super::prompts::{format_aoi_delta, format_probability};
use super::{
    BackendError, Candidate, CycleRequest, DecideAdvice, ObserveAdvice, ObserveRequest, ReasoningBackend, ReflectAdvice,
};
use crate::agent::memory::ObservationReport;
use crate::agent::policy::Priority;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub collision_high: f64,
    pub collision_low: f64,
    pub idle_high: f64,
    pub observe_step: f64,
    pub reflect_cap: f64,
    pub deadband: f64,
    pub high_cap: f64,
    pub high_weight: f64,
    pub low_weight: f64,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        ScriptedConfig {
            collision_high: 0.15,
            collision_low: 0.05,
            idle_high: 0.30,
            observe_step: 0.02,
            reflect_cap: 0.03,
            deadband: 0.015,
            high_cap: 0.06,
            high_weight: 2.0,
            low_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub config: ScriptedConfig,
}

/// Signed value in whole hundredths, half away from zero.
fn hundredths(x: f64) -> i64 {
    let h = (x.abs() * 100.0 + 0.5 + 1e-9).floor() as i64;
    if x < 0.0 {
        -h
    } else {
        h
    }
}

fn from_hundredths(h: i64) -> f64 {
    h as f64 / 100.0
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn adjustment_phrase(h: i64, target: f64) -> String {
    let target = format_probability(target);
    match h.signum() {
        1 => format!("increase the transmission probability by {} to p={target}", from_hundredths(h)),
        -1 => format!("decrease the transmission probability by {} to p={target}", from_hundredths(-h)),
        _ => format!("keep the transmission probability at p={target}"),
    }
}

fn mean<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl ScriptedBackend {
    pub fn new(config: ScriptedConfig) -> Self {
        ScriptedBackend { config }
    }

    pub fn observe_delta(&self, report: &ObservationReport) -> f64 {
        let c = &self.config;
        let coll = report.state_counts.collision_rate();
        let idle = report.state_counts.idle_rate();
        if coll > c.collision_high {
            -c.observe_step
        } else if idle > c.idle_high && coll < c.collision_low {
            c.observe_step
        } else {
            0.0
        }
    }

    fn weight(&self, priority: Option<Priority>) -> f64 {
        match priority {
            Some(Priority::High) => self.config.high_weight,
            Some(Priority::Low) => self.config.low_weight,
            None => 1.0,
        }
    }

    /// Renewal-model estimate of the best cycle-level probability.
    pub fn target_probability(&self, reports: &[ObservationReport], priority: Option<Priority>) -> f64 {
        let slots: u32 = reports.iter().map(|r| r.state_counts.total()).sum();
        if slots == 0 {
            return 0.0;
        }
        let quiet: u32 = reports.iter().map(|r| r.state_counts.own_or_idle()).sum();
        let pi0 = f64::from(quiet) / f64::from(slots);
        if pi0 == 0.0 {
            return 0.0;
        }
        let c = mean(reports.iter().map(|r| (1.0 - r.p_executing) * r.others_aoi_sum));
        1.0 / (1.0 + (c * pi0 / self.weight(priority)).sqrt())
    }

    /// Suggested change in hundredths before the priority overlay.
    fn base_suggestion(&self, req: &CycleRequest) -> i64 {
        let c = &self.config;
        let Some(delta) = req.aoi_delta else { return 0 };
        let p_exec = mean(req.long_term.iter().map(|r| r.p_executing));
        let idle = mean(req.long_term.iter().map(|r| r.state_counts.idle_rate()));
        let gap = self.target_probability(&req.long_term, req.priority) - p_exec;
        let cap = hundredths(c.reflect_cap);
        if gap > c.deadband && delta < 0.0 && idle > c.idle_high {
            hundredths(gap).min(cap)
        } else if gap < -c.deadband {
            -hundredths(-gap).min(cap)
        } else if delta > 0.0 && req.last_adjustment != 0.0 {
            let back = hundredths(req.last_adjustment / 2.0).abs().max(1);
            -back * req.last_adjustment.signum() as i64
        } else {
            0
        }
    }

    /// Suggested change in hundredths for one candidate.
    pub fn suggestion(&self, req: &CycleRequest, candidate: Candidate) -> i64 {
        let base = self.base_suggestion(req);
        let h = match req.priority {
            Some(Priority::High) if base > 0 => (2 * base).min(hundredths(self.config.high_cap)),
            Some(Priority::Low) if base != 0 => base.signum() * ((base.abs() + 1) / 2).max(1),
            _ => base,
        };
        match candidate {
            Candidate::Primary => h,
            Candidate::Alternate if h != 0 => h.signum() * (h.abs() / 2).max(1),
            Candidate::Alternate => 0,
        }
    }
}

impl ReasoningBackend for ScriptedBackend {
    fn observe(&self, req: &ObserveRequest) -> Result<ObserveAdvice, BackendError> {
        let r = &req.report;
        let counts = &r.state_counts;
        let trend = match &req.previous {
            None => {
                format!("The current window AoI is {:.2}; there is no previous window to compare.", r.window_mean_aoi)
            }
            Some(prev) => {
                let word = if r.window_mean_aoi < prev.window_mean_aoi {
                    "shows improvement compared to"
                } else if r.window_mean_aoi > prev.window_mean_aoi {
                    "is worse than"
                } else {
                    "matches"
                };
                format!(
                    "The current window AoI of {:.2} {word} the previous window's {:.2}.",
                    r.window_mean_aoi, prev.window_mean_aoi
                )
            }
        };
        let delta_p = if req.previous.is_some() { self.observe_delta(r) } else { 0.0 };
        let h = hundredths(delta_p);
        let advice = match h.signum() {
            1 => format!(
                "The channel is under-used, so it is recommended to increase the transmission probability by {}.",
                from_hundredths(h)
            ),
            -1 => format!(
                "Collisions are frequent, so it is recommended to decrease the transmission probability by {}.",
                from_hundredths(-h)
            ),
            _ => "It is recommended to keep the transmission probability unchanged.".to_owned(),
        };
        let text = format!(
            "1. Performance trend analysis\n{trend} The collision rate is {:.1}% and the idle rate is {:.1}%.\n\n2. Strategy adjustment suggestions\n{advice}\n",
            pct(counts.collision_rate()),
            pct(counts.idle_rate()),
        );
        Ok(ObserveAdvice { delta_p: parse_adjustment(&text), analysis_text: text })
    }

    fn reflect(&self, req: &CycleRequest, candidate: Candidate) -> Result<ReflectAdvice, BackendError> {
        let h = self.suggestion(req, candidate);
        let target = (req.p_global + from_hundredths(h)).clamp(req.p_min, req.p_max);
        let reports = &req.long_term;
        let coll = mean(reports.iter().map(|r| r.state_counts.collision_rate()));
        let idle = mean(reports.iter().map(|r| r.state_counts.idle_rate()));
        let succ = mean(reports.iter().map(|r| r.state_counts.success_rate()));
        let prefix = match req.priority {
            Some(p) => format!("- {}: ", p.label()),
            None => String::new(),
        };
        let text = format!(
            "1. Strategy effect analysis: The transmission strategy p={} gave a cycle mean AoI of {:.2} (aoi_delta={}). Average collision rate {:.1}%, idle rate {:.1}%, own success rate {:.1}%.\n2. Improvement plan design:\n{prefix}It is recommended to {}.\n",
            format_probability(req.p_global),
            req.cycle_mean_aoi,
            format_aoi_delta(req.aoi_delta),
            pct(coll),
            pct(idle),
            pct(succ),
            adjustment_phrase(h, target),
        );
        Ok(ReflectAdvice { suggested_adjustment: parse_adjustment(&text), reflection_text: text })
    }

    fn decide(&self, req: &CycleRequest, reflection: &ReflectAdvice) -> Result<DecideAdvice, BackendError> {
        let h = hundredths(reflection.suggested_adjustment);
        let new_p = (req.p_global + from_hundredths(h)).clamp(req.p_min, req.p_max);
        let p = format_probability(req.p_global);
        let improved = req.aoi_delta.is_some_and(|d| d < 0.0);
        let evaluation = match req.aoi_delta {
            None => format!("The current strategy p={p} has no previous cycle to compare against."),
            Some(d) if d < 0.0 => format!("The current strategy p={p} reduced the mean AoI (aoi_delta={d:.2})."),
            Some(d) => format!("The current strategy p={p} did not reduce the mean AoI (aoi_delta={d:.2})."),
        };
        let memory = if improved {
            format!("Memory update: Store current strategy p={p} in strategy memory base")
        } else {
            "Memory update: Keep strategy memory unchanged".to_owned()
        };
        let prefix = match req.priority {
            Some(pr) => format!("- {}: ", pr.label()),
            None => String::new(),
        };
        let text = format!(
            "1. Strategy effect evaluation: {evaluation}\n2. Strategy generation and memory management:\n{prefix}Based on the Reflect module's suggestion, {}. Strategy output: [p={}]\n{memory}\n",
            adjustment_phrase(h, new_p),
            format_probability(new_p),
        );
        let new_p = parse_strategy_output(&text)?;
        Ok(DecideAdvice { decision_text: text, new_p, store_current: improved })
    }
}
