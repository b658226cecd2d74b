//! Chat-completion HTTP client backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parse::{parse_adjustment_from, parse_store_current, parse_strategy_output, priority_section};
use super::prompts::{decide_inputs, observe_inputs, reflect_inputs, render_prompt, PromptTemplate, Role};
use super::{
    BackendError, Candidate, CycleRequest, DecideAdvice, Mode, ObserveAdvice, ObserveRequest, ReasoningBackend,
    ReflectAdvice,
};
use crate::agent::policy::Priority;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    /// Used for the second reflection candidate.
    pub alternate_temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "local-model".into(),
            temperature: 0.0,
            alternate_temperature: 0.7,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 250,
            api_key_env: Some("AOI_RMA_API_KEY".into()),
        }
    }
}

enum Failure {
    Retry(String),
    Fatal(String),
}

fn extract_content(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("malformed reply: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| "reply has no choices[0].message.content".to_owned())?;
    if content.trim().is_empty() {
        return Err("reply content is empty".into());
    }
    Ok(content.to_owned())
}

/// POSTs one chat-completion request and returns the first choice's text.
/// Transport errors, 429 and 5xx are retried with exponential backoff.
pub fn remote_call(
    cfg: &RemoteConfig,
    system_text: &str,
    user_text: &str,
    temperature: f64,
) -> Result<String, BackendError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs.max(0.001))))
        .http_status_as_error(false)
        .build()
        .into();
    let body = json!({
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": system_text},
            {"role": "user", "content": user_text},
        ],
        "temperature": temperature,
    })
    .to_string();
    let token = cfg.api_key_env.as_deref().and_then(|name| std::env::var(name).ok());

    let mut last = String::new();
    for attempt in 0..=cfg.max_retries {
        if attempt > 0 {
            let wait = cfg.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(wait));
        }
        let mut request = agent.post(&cfg.endpoint_url).header("Content-Type", "application/json");
        if let Some(t) = &token {
            request = request.header("Authorization", &format!("Bearer {t}"));
        }
        let outcome = match request.send(body.as_str()) {
            Err(e) => Failure::Retry(format!("request failed: {e}")),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    match extract_content(&text) {
                        Ok(content) => return Ok(content),
                        Err(e) => Failure::Fatal(e),
                    }
                } else if status == 429 || status >= 500 {
                    Failure::Retry(format!("HTTP {status}"))
                } else {
                    Failure::Fatal(format!("HTTP {status}"))
                }
            }
        };
        match outcome {
            Failure::Fatal(msg) => return Err(BackendError::Unavailable(msg)),
            Failure::Retry(msg) => {
                log::warn!("backend attempt {} of {} failed: {msg}", attempt + 1, cfg.max_retries + 1);
                last = msg;
            }
        }
    }
    Err(BackendError::Unavailable(format!("{last} after {} attempts", cfg.max_retries + 1)))
}

#[derive(Debug, Clone, Default)]
pub struct RemoteBackend {
    pub config: RemoteConfig,
}

fn system_text(role: Role, mode: Mode, priority: Option<Priority>) -> String {
    let format_hint = match role {
        Role::Observe | Role::Reflect => {
            "State any change as \"increase the transmission probability by X\" or \"decrease the transmission probability by X\"."
        }
        Role::Decide => {
            "Finish with \"Strategy output: [p=X]\" and, if the current strategy should be archived, \"Memory update: Store current strategy\"."
        }
    };
    match (mode, priority) {
        (Mode::Priority, Some(p)) => format!("You are advising node {}. {format_hint}", p.label()),
        _ => format_hint.to_owned(),
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteBackend { config }
    }

    fn call(
        &self,
        role: Role,
        mode: Mode,
        priority: Option<Priority>,
        user: &str,
        temperature: f64,
    ) -> Result<String, BackendError> {
        remote_call(&self.config, &system_text(role, mode, priority), user, temperature)
    }
}

fn render(role: Role, mode: Mode, inputs: &std::collections::BTreeMap<String, String>) -> Result<String, BackendError> {
    render_prompt(&PromptTemplate::builtin(role, mode), inputs).map_err(|e| BackendError::ParseFailure(e.to_string()))
}

impl ReasoningBackend for RemoteBackend {
    fn observe(&self, req: &ObserveRequest) -> Result<ObserveAdvice, BackendError> {
        let prompt = render(Role::Observe, req.mode, &observe_inputs(req))?;
        let text = self.call(Role::Observe, req.mode, req.priority, &prompt, self.config.temperature)?;
        let delta_p = parse_adjustment_from(priority_section(&text, req.priority), Some(req.report.p_executing));
        Ok(ObserveAdvice { analysis_text: text, delta_p })
    }

    fn reflect(&self, req: &CycleRequest, candidate: Candidate) -> Result<ReflectAdvice, BackendError> {
        let prompt = render(Role::Reflect, req.mode, &reflect_inputs(req))?;
        let temperature = match candidate {
            Candidate::Primary => self.config.temperature,
            Candidate::Alternate => self.config.alternate_temperature,
        };
        let text = self.call(Role::Reflect, req.mode, req.priority, &prompt, temperature)?;
        let suggested_adjustment = parse_adjustment_from(priority_section(&text, req.priority), Some(req.p_global));
        Ok(ReflectAdvice { reflection_text: text, suggested_adjustment })
    }

    fn decide(&self, req: &CycleRequest, reflection: &ReflectAdvice) -> Result<DecideAdvice, BackendError> {
        let prompt = render(Role::Decide, req.mode, &decide_inputs(req, reflection))?;
        let text = self.call(Role::Decide, req.mode, req.priority, &prompt, self.config.temperature)?;
        let section = priority_section(&text, req.priority);
        let new_p = parse_strategy_output(section)?;
        let store_current = parse_store_current(section);
        Ok(DecideAdvice { decision_text: text, new_p, store_current })
    }
}
