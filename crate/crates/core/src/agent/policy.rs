use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NodeRng;

/// Cycle-level transmission policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub p_global: f64,
    pub beta: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy { p_global: 0.30, beta: 1.0, p_min: 0.01, p_max: 0.99 }
    }
}

impl Policy {
    pub fn new(p_global: f64, beta: f64, p_min: f64, p_max: f64) -> Result<Self> {
        let policy = Policy { p_global, beta, p_min, p_max };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) || self.p_min > self.p_max {
            return Err(Error::Config(format!("invalid clamp bounds [{}, {}]", self.p_min, self.p_max)));
        }
        if !(self.p_min..=self.p_max).contains(&self.p_global) {
            return Err(Error::Config(format!("p_global {} outside [{}, {}]", self.p_global, self.p_min, self.p_max)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn clamp(&self, p: f64) -> f64 {
        if p.is_nan() {
            return self.p_global;
        }
        p.clamp(self.p_min, self.p_max)
    }

    /// Per-slot probability under an additive perturbation.
    pub fn effective(&self, delta_p: f64) -> f64 {
        self.clamp(self.p_global + delta_p)
    }

    /// `p + beta * adjustment`, clamped.
    pub fn adjusted(&self, adjustment: f64) -> Policy {
        let step = if adjustment.is_finite() { adjustment } else { 0.0 };
        Policy { p_global: self.clamp(self.p_global + self.beta * step), ..*self }
    }

    pub fn with_p(&self, p: f64) -> Policy {
        Policy { p_global: self.clamp(p), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationOrigin {
    Observe,
    Priority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub delta_p: f64,
    pub origin: PerturbationOrigin,
    pub valid_period: u64,
}

impl Perturbation {
    /// Clamps `delta_p` into `[-delta_max, delta_max]`; non-finite input becomes 0.
    pub fn new(delta_p: f64, origin: PerturbationOrigin, valid_period: u64, delta_max: f64) -> Self {
        let delta_p = if delta_p.is_finite() { delta_p.clamp(-delta_max, delta_max) } else { 0.0 };
        Perturbation { delta_p, origin, valid_period }
    }

    pub fn zero(origin: PerturbationOrigin, valid_period: u64) -> Self {
        Perturbation { delta_p: 0.0, origin, valid_period }
    }
}

/// Draws a transmission decision from the policy plus the summed offsets.
/// Returns the decision and the effective probability used.
pub fn execute_decision(policy: &Policy, perturbations: &[Perturbation], rng: &mut NodeRng) -> (bool, f64) {
    let delta: f64 = perturbations.iter().map(|p| p.delta_p).sum();
    let p = policy.effective(delta);
    (rng.bernoulli(p), p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    High,
    Low,
}

impl Priority {
    pub fn label(self) -> &'static str {
        match self {
            Priority::High => "RMA1 high priority",
            Priority::Low => "RMA2 low priority",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrioritySpec {
    pub priority: Priority,
    pub p_initial: f64,
    pub theta: f64,
    pub epsilon_half_width: f64,
    /// AoI target in slots.
    pub aoi_threshold: f64,
}

impl PrioritySpec {
    pub fn high(aoi_threshold: f64) -> Self {
        PrioritySpec {
            priority: Priority::High,
            p_initial: 0.50,
            theta: 0.01,
            epsilon_half_width: 0.005,
            aoi_threshold,
        }
    }

    pub fn low(aoi_threshold: f64) -> Self {
        PrioritySpec {
            priority: Priority::Low,
            p_initial: 0.30,
            theta: -0.01,
            epsilon_half_width: 0.005,
            aoi_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sign_ok = match self.priority {
            Priority::High => self.theta >= 0.0,
            Priority::Low => self.theta <= 0.0,
        };
        if !sign_ok {
            return Err(Error::Config(format!(
                "{:?} priority needs theta of matching sign, got {}",
                self.priority, self.theta
            )));
        }
        if !(0.0..=1.0).contains(&self.p_initial) {
            return Err(Error::Config(format!("p_initial {} is not a probability", self.p_initial)));
        }
        if self.epsilon_half_width.is_nan() || self.epsilon_half_width < 0.0 {
            return Err(Error::Config("noise half-width must be non-negative".into()));
        }
        if self.aoi_threshold.is_nan() || self.aoi_threshold <= 0.0 {
            return Err(Error::Config("AoI threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Checks a high/low pair: each spec valid and the high one starts strictly higher.
pub fn validate_priority_pair(high: &PrioritySpec, low: &PrioritySpec) -> Result<()> {
    high.validate()?;
    low.validate()?;
    if high.priority != Priority::High || low.priority != Priority::Low {
        return Err(Error::Config("priority pair must be (High, Low)".into()));
    }
    if high.p_initial <= low.p_initial {
        return Err(Error::Config(format!(
            "high-priority initial p {} must exceed low-priority {}",
            high.p_initial, low.p_initial
        )));
    }
    Ok(())
}

pub fn priority_initial_policy(spec: &PrioritySpec, base: &Policy) -> Policy {
    Policy { p_global: spec.p_initial, ..*base }
}

/// `theta + eps` with `eps` uniform on the spec's noise interval.
pub fn priority_perturbation(spec: &PrioritySpec, rng: &mut NodeRng, period: u64, delta_max: f64) -> Perturbation {
    let eps = if spec.epsilon_half_width > 0.0 { rng.symmetric(spec.epsilon_half_width) } else { 0.0 };
    Perturbation::new(spec.theta + eps, PerturbationOrigin::Priority, period, delta_max)
}
