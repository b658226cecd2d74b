//! Prompt templates and their placeholder rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CycleRequest, Mode, ObserveRequest, ReflectAdvice};
use crate::agent::memory::{ObservationReport, StrategyRecord};
use crate::error::{Error, Result};

pub const PLACEHOLDERS: [&str; 11] = [
    "strategy_executing",
    "strategy_output",
    "aoi_current",
    "aoi_previous",
    "states_current",
    "states_previous",
    "long_term_memory",
    "aoi_delta",
    "last_reflection",
    "current_reflection",
    "strategy_memory",
];

/// Rendered in place of a value that does not exist yet.
pub const NONE_TEXT: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Observe,
    Reflect,
    Decide,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Observe, Role::Reflect, Role::Decide];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Observe => "observe",
            Role::Reflect => "reflect",
            Role::Decide => "decide",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: Role,
    pub mode: Mode,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(role: Role, mode: Mode) -> Self {
        let body = match (role, mode) {
            (Role::Observe, Mode::Normal) => include_str!("../../prompts/observe.normal.txt"),
            (Role::Observe, Mode::Priority) => include_str!("../../prompts/observe.priority.txt"),
            (Role::Reflect, Mode::Normal) => include_str!("../../prompts/reflect.normal.txt"),
            (Role::Reflect, Mode::Priority) => include_str!("../../prompts/reflect.priority.txt"),
            (Role::Decide, Mode::Normal) => include_str!("../../prompts/decide.normal.txt"),
            (Role::Decide, Mode::Priority) => include_str!("../../prompts/decide.priority.txt"),
        };
        PromptTemplate { role, mode, body: body.to_owned() }
    }

    /// Loads `{role}.{mode}.txt` from `dir`.
    pub fn from_dir(dir: &Path, role: Role, mode: Mode) -> Result<Self> {
        let path = dir.join(format!("{}.{}.txt", role.as_str(), mode.as_str()));
        let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(PromptTemplate { role, mode, body })
    }

    /// Known placeholders in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut found = Vec::new();
        for piece in scan(&self.body) {
            if let Piece::Slot(name) = piece {
                if !found.contains(&name) {
                    found.push(name);
                }
            }
        }
        found
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'static str),
}

fn scan(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let known = rest[open + 1..].find('}').and_then(|close| {
            let name = &rest[open + 1..open + 1 + close];
            PLACEHOLDERS.iter().find(|p| **p == name).map(|p| (*p, close))
        });
        match known {
            Some((name, close)) => {
                out.push(Piece::Text(&rest[..open]));
                out.push(Piece::Slot(name));
                rest = &rest[open + close + 2..];
            }
            None => {
                out.push(Piece::Text(&rest[..=open]));
                rest = &rest[open + 1..];
            }
        }
    }
    out.push(Piece::Text(rest));
    out
}

/// Substitutes every known placeholder verbatim. Braces that do not name a
/// placeholder are left alone.
pub fn render_prompt(tpl: &PromptTemplate, inputs: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(tpl.body.len() + 256);
    for piece in scan(&tpl.body) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = inputs.get(name).ok_or_else(|| Error::MissingPlaceholder(name.to_owned()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Probability rounded to four decimals in shortest form.
pub fn format_probability(p: f64) -> String {
    let r = (p * 1e4).round() / 1e4;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

pub fn format_aoi_seq(seq: &[f64]) -> String {
    let items: Vec<String> = seq.iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", items.join(", "))
}

pub fn format_aoi_delta(delta: Option<f64>) -> String {
    delta.map_or_else(|| NONE_TEXT.to_owned(), |d| format!("{d:.2}"))
}

pub fn format_long_term(reports: &[ObservationReport]) -> String {
    if reports.is_empty() {
        return NONE_TEXT.to_owned();
    }
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "window {}: p'={}, mean AoI {:.2}, states {}",
                i + 1,
                format_probability(r.p_executing),
                r.window_mean_aoi,
                r.state_counts.render()
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn format_strategy_memory(records: &[StrategyRecord]) -> String {
    if records.is_empty() {
        return "empty".to_owned();
    }
    records
        .iter()
        .map(|s| format!("p={} (aoi_delta={:.2}, cycle {})", format_probability(s.p), s.aoi_delta, s.cycle))
        .collect::<Vec<_>>()
        .join("; ")
}

fn map(pairs: Vec<(&str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

pub fn observe_inputs(req: &ObserveRequest) -> BTreeMap<String, String> {
    let prev = req.previous.as_ref();
    map(vec![
        ("strategy_executing", format_probability(req.report.p_executing)),
        ("strategy_output", format_probability(req.report.p_cycle)),
        ("aoi_current", format_aoi_seq(&req.report.aoi_seq)),
        ("aoi_previous", prev.map_or_else(|| NONE_TEXT.to_owned(), |r| format_aoi_seq(&r.aoi_seq))),
        ("states_current", req.report.state_counts.render()),
        ("states_previous", prev.map_or_else(|| NONE_TEXT.to_owned(), |r| r.state_counts.render())),
    ])
}

pub fn reflect_inputs(req: &CycleRequest) -> BTreeMap<String, String> {
    map(vec![
        ("long_term_memory", format_long_term(&req.long_term)),
        ("strategy_output", format_probability(req.p_global)),
        ("aoi_delta", format_aoi_delta(req.aoi_delta)),
        ("last_reflection", req.last_reflection.clone().unwrap_or_else(|| NONE_TEXT.to_owned())),
    ])
}

pub fn decide_inputs(req: &CycleRequest, reflection: &ReflectAdvice) -> BTreeMap<String, String> {
    map(vec![
        ("current_reflection", reflection.reflection_text.clone()),
        ("strategy_output", format_probability(req.p_global)),
        ("strategy_memory", format_strategy_memory(&req.strategy_memory)),
        ("aoi_delta", format_aoi_delta(req.aoi_delta)),
    ])
}

/// The rendered Reflect prompt for a cycle; also used as dataset context.
pub fn reflect_prompt(req: &CycleRequest) -> Result<String> {
    render_prompt(&PromptTemplate::builtin(Role::Reflect, req.mode), &reflect_inputs(req))
}
