//! Dual-candidate reflection collection and dataset export.
//!
//! At a cycle boundary of the target agent the whole simulation is cloned.
//! Each clone closes the cycle with one reflection candidate and runs exactly
//! one more cycle; the drop in mean age over that cycle is the candidate's
//! reward. Collection then carries on from the primary branch.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::MetricScope;
use crate::aoi::NodeId;
use crate::backend::prompts::reflect_prompt;
use crate::backend::{reflect_and_decide, Candidate};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sim::{SimOptions, Simulation};

/// `aoi_before - aoi_after`, so improvement is positive. The difference is
/// quantised to 1e-9 slots, which keeps decimal inputs exact and the result
/// antisymmetric.
pub fn compute_reward(aoi_before: f64, aoi_after: f64) -> f64 {
    debug_assert!(aoi_before.is_finite() && aoi_after.is_finite());
    let r = ((aoi_before - aoi_after) * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    HighQuality,
    LowQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub cycle: u64,
    pub candidate: Candidate,
    pub context: String,
    pub reflection_text: String,
    pub aoi_before: f64,
    pub aoi_after: f64,
    pub reward: f64,
    pub scope: MetricScope,
    pub label: QualityLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl PreferencePair {
    pub fn new(chosen: &RewardSample, rejected: &RewardSample) -> Result<Self> {
        if chosen.context != rejected.context {
            return Err(Error::Contract("preference pair candidates must share a prompt".into()));
        }
        if chosen.reward.is_nan() || rejected.reward.is_nan() || chosen.reward <= rejected.reward {
            return Err(Error::Contract(format!(
                "chosen reward {} does not exceed rejected reward {}",
                chosen.reward, rejected.reward
            )));
        }
        Ok(PreferencePair {
            prompt: chosen.context.clone(),
            chosen: chosen.reflection_text.clone(),
            rejected: rejected.reflection_text.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSamples {
    pub a: RewardSample,
    pub b: RewardSample,
}

impl DualSamples {
    /// The preference pair, or `None` on a tie.
    pub fn pair(&self) -> Option<PreferencePair> {
        let (hi, lo) = if self.a.reward >= self.b.reward { (&self.a, &self.b) } else { (&self.b, &self.a) };
        PreferencePair::new(hi, lo).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<RewardSample>,
    pub pairs: Vec<PreferencePair>,
    pub skipped: Vec<String>,
}

struct Evaluated {
    sample: RewardSample,
    continued: bool,
}

/// Closes the held cycle with `candidate` and runs one more cycle.
fn evaluate(sim: &mut Simulation, target: NodeId, candidate: Candidate) -> Result<Evaluated> {
    let backend = sim.backend().clone();
    let scope = sim.config().metric_scope;
    let agent = sim.agent_mut(target).ok_or_else(|| Error::Contract(format!("node {target} is not an agent")))?;
    let req = agent.prepare_cycle()?;
    let context = reflect_prompt(&req)?;
    let result = reflect_and_decide(backend.as_ref(), &req, candidate);
    let reflection_text = match &result {
        Ok((r, _)) => r.reflection_text.clone(),
        Err(e) => return Err(Error::Backend(e.clone())),
    };
    let outcome = agent.finish_cycle(&req, result);
    sim.record_cycle(target, &outcome);
    sim.release();
    let continued = sim.run_until_held()?;
    if !continued {
        return Err(Error::Contract("run ended inside the evaluation cycle".into()));
    }
    let agent = sim.agent(target).ok_or_else(|| Error::Contract(format!("node {target} left the run")))?;
    let long = agent.memory().long();
    let aoi_after = long.iter().map(|r| r.window_mean_aoi).sum::<f64>() / long.len() as f64;
    Ok(Evaluated {
        sample: RewardSample {
            cycle: req.cycle,
            candidate,
            context,
            reflection_text,
            aoi_before: req.cycle_mean_aoi,
            aoi_after,
            reward: compute_reward(req.cycle_mean_aoi, aoi_after),
            scope,
            label: QualityLabel::LowQuality,
        },
        continued,
    })
}

/// Evaluates both candidates from one snapshot taken at the held cycle
/// boundary. `sim` continues along the primary branch and is left held at
/// the next boundary.
pub fn collect_dual_candidates(sim: &mut Simulation, target: NodeId) -> Result<DualSamples> {
    if !sim.is_held() {
        return Err(Error::Contract("simulation is not held at a cycle boundary".into()));
    }
    let mut branch_b = sim.snapshot()?;
    let mut a = evaluate(sim, target, Candidate::Primary)?;
    let mut b = evaluate(&mut branch_b, target, Candidate::Alternate)?;
    debug_assert!(a.continued && b.continued);
    if a.sample.reward >= b.sample.reward {
        a.sample.label = QualityLabel::HighQuality;
    } else {
        b.sample.label = QualityLabel::HighQuality;
    }
    Ok(DualSamples { a: a.sample, b: b.sample })
}

/// Collects `cycles` dual-candidate samples on the lowest-id agent.
pub fn collect_dataset(cfg: ScenarioConfig, cycles: usize) -> Result<Dataset> {
    if cfg.agent.asynchronous {
        return Err(Error::Config("dataset collection needs synchronous reflection".into()));
    }
    if !cfg.agent.reflection {
        return Err(Error::Config("dataset collection needs reflection enabled".into()));
    }
    let mut sim = Simulation::from_config(cfg, SimOptions::default())?;
    let target = *sim.rma_ids().first().ok_or_else(|| Error::Config("scenario has no agent".into()))?;
    sim.set_hold(Some(target));
    let mut out = Dataset::default();
    let mut held = sim.run_until_held()?;
    while held && out.samples.len() < 2 * cycles {
        match collect_dual_candidates(&mut sim, target) {
            Ok(dual) => {
                if let Some(pair) = dual.pair() {
                    out.pairs.push(pair);
                }
                out.samples.push(dual.a);
                out.samples.push(dual.b);
            }
            Err(e) => {
                let reason = format!("cycle {}: {e}", sim.agent(target).map_or(0, |a| a.cycles_closed()));
                log::warn!("dual-candidate collection skipped at {reason}");
                out.skipped.push(reason);
            }
        }
        held = sim.is_held();
    }
    Ok(out)
}

fn write_lines<T: Serialize>(records: impl Iterator<Item = T>, path: &Path) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for r in records {
        let line = serde_json::to_string(&r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Writes `{"prompt", "completion"}` lines for the high-quality samples.
pub fn export_sft(samples: &[RewardSample], path: &Path) -> Result<usize> {
    let records = samples
        .iter()
        .filter(|s| s.label == QualityLabel::HighQuality)
        .map(|s| SftRecord { prompt: s.context.clone(), completion: s.reflection_text.clone() });
    write_lines(records, path)
}

pub fn export_preferences(pairs: &[PreferencePair], path: &Path) -> Result<usize> {
    write_lines(pairs.iter(), path)
}

pub fn read_sft(path: &Path) -> Result<Vec<SftRecord>> {
    read_lines(path)
}

pub fn read_preferences(path: &Path) -> Result<Vec<PreferencePair>> {
    read_lines(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(reward: f64, label: QualityLabel) -> RewardSample {
        RewardSample {
            cycle: 0,
            candidate: Candidate::Primary,
            context: "ctx".into(),
            reflection_text: format!("r{reward}"),
            aoi_before: 10.0,
            aoi_after: 10.0 - reward,
            reward,
            scope: MetricScope::System,
            label,
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(48.7, 45.1), 3.6);
        assert_eq!(compute_reward(10.0, 10.0), 0.0);
        assert_eq!(compute_reward(5.0, 7.5), -2.5);
    }

    #[test]
    fn pair_invariant() {
        let hi = sample(3.6, QualityLabel::HighQuality);
        let lo = sample(1.2, QualityLabel::LowQuality);
        assert!(PreferencePair::new(&hi, &lo).is_ok());
        assert!(PreferencePair::new(&lo, &hi).is_err());
        assert!(PreferencePair::new(&hi, &hi).is_err());
        let mut other = lo.clone();
        other.context = "different".into();
        assert!(PreferencePair::new(&hi, &other).is_err());
        let tie = DualSamples { a: sample(1.0, QualityLabel::HighQuality), b: sample(1.0, QualityLabel::LowQuality) };
        assert!(tie.pair().is_none());
    }

    #[test]
    fn sft_filters_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let samples: Vec<_> = (0..10)
            .map(|i| sample(i as f64, if i < 6 { QualityLabel::HighQuality } else { QualityLabel::LowQuality }))
            .collect();
        assert_eq!(export_sft(&samples, &path).unwrap(), 6);
        let back = read_sft(&path).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[2].prompt, "ctx");
        let empty = dir.path().join("empty.jsonl");
        assert_eq!(export_sft(&[], &empty).unwrap(), 0);
        assert_eq!(std::fs::read(&empty).unwrap().len(), 0);
    }

    proptest! {
        #[test]
        fn reward_is_antisymmetric(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            prop_assert_eq!(compute_reward(a, b), -compute_reward(b, a));
        }
    }
}
