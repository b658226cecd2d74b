//! Reasoning backends for the Observe, Reflect and Decide stages.

pub mod parse;
pub mod prompts;
pub mod remote;
pub mod scripted;

use serde::{Deserialize, Serialize};

use crate::agent::memory::{ObservationReport, StrategyRecord};
use crate::agent::policy::Priority;
use crate::aoi::NodeId;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{ScriptedBackend, ScriptedConfig};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("could not parse backend reply: {0}")]
    ParseFailure(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Normal,
    Priority,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Priority => "priority",
        }
    }
}

/// Which of the two reflection candidates to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Candidate {
    Primary,
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveAdvice {
    pub analysis_text: String,
    pub delta_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectAdvice {
    pub reflection_text: String,
    pub suggested_adjustment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideAdvice {
    pub decision_text: String,
    pub new_p: f64,
    pub store_current: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveRequest {
    pub node: NodeId,
    pub mode: Mode,
    pub priority: Option<Priority>,
    pub report: ObservationReport,
    pub previous: Option<ObservationReport>,
}

/// Everything Reflect and Decide see at a cycle boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRequest {
    pub node: NodeId,
    pub cycle: u64,
    pub mode: Mode,
    pub priority: Option<Priority>,
    pub long_term: Vec<ObservationReport>,
    pub p_global: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// This cycle's mean AoI minus the previous cycle's; `None` on the first cycle.
    pub aoi_delta: Option<f64>,
    pub cycle_mean_aoi: f64,
    pub last_reflection: Option<String>,
    /// Policy change applied at the previous cycle boundary.
    pub last_adjustment: f64,
    pub strategy_memory: Vec<StrategyRecord>,
}

pub trait ReasoningBackend: Send + Sync {
    fn observe(&self, req: &ObserveRequest) -> Result<ObserveAdvice, BackendError>;

    fn reflect(&self, req: &CycleRequest, candidate: Candidate) -> Result<ReflectAdvice, BackendError>;

    fn decide(&self, req: &CycleRequest, reflection: &ReflectAdvice) -> Result<DecideAdvice, BackendError>;
}

impl<B: ReasoningBackend + ?Sized> ReasoningBackend for std::sync::Arc<B> {
    fn observe(&self, req: &ObserveRequest) -> Result<ObserveAdvice, BackendError> {
        (**self).observe(req)
    }

    fn reflect(&self, req: &CycleRequest, candidate: Candidate) -> Result<ReflectAdvice, BackendError> {
        (**self).reflect(req, candidate)
    }

    fn decide(&self, req: &CycleRequest, reflection: &ReflectAdvice) -> Result<DecideAdvice, BackendError> {
        (**self).decide(req, reflection)
    }
}

/// Reflect then Decide for one candidate.
pub fn reflect_and_decide(
    backend: &dyn ReasoningBackend,
    req: &CycleRequest,
    candidate: Candidate,
) -> Result<(ReflectAdvice, DecideAdvice), BackendError> {
    let reflection = backend.reflect(req, candidate)?;
    let decision = backend.decide(req, &reflection)?;
    Ok((reflection, decision))
}
