//! Extraction of numbers from free-text replies.

use std::sync::OnceLock;

use regex::Regex;

use super::BackendError;
use crate::agent::policy::Priority;

fn strategy_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)Strategy output:\s*\[\s*\$?\s*p\s*=\s*([0-9]*\.?[0-9]+)\s*\$?\s*\]").unwrap())
}

fn adjustment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(increas(?:e|es|ing)|decreas(?:e|es|ing)|adjust(?:s|ing)?)\s+the\s+transmission\s+probability\s+by\s+\$?\s*([0-9]*\.?[0-9]+)\$?(?:\s+to\s+\$?\s*p\s*=\s*([0-9]*\.?[0-9]+))?",
        )
        .unwrap()
    })
}

fn store_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)Memory update:\s*Store current strategy").unwrap())
}

/// The number in the last `Strategy output: [p=X]` marker.
pub fn parse_strategy_output(text: &str) -> Result<f64, BackendError> {
    let caps = strategy_re()
        .captures_iter(text)
        .last()
        .ok_or_else(|| BackendError::ParseFailure("no strategy output marker".into()))?;
    caps[1].parse::<f64>().map_err(|e| BackendError::ParseFailure(format!("bad strategy value {:?}: {e}", &caps[1])))
}

/// Signed adjustment from the last "increase/decrease the transmission
/// probability by X" phrase; 0 when there is none.
pub fn parse_adjustment(text: &str) -> f64 {
    parse_adjustment_from(text, None)
}

/// Like [`parse_adjustment`], but also accepts the neutral "adjust ... by X
/// to p=Y" form, whose sign comes from comparing Y with `current`.
pub fn parse_adjustment_from(text: &str, current: Option<f64>) -> f64 {
    let mut last = 0.0;
    for caps in adjustment_re().captures_iter(text) {
        let Ok(by) = caps[2].parse::<f64>() else { continue };
        let verb = caps[1].to_ascii_lowercase();
        let sign = if verb.starts_with("increas") {
            1.0
        } else if verb.starts_with("decreas") {
            -1.0
        } else {
            let target = caps.get(3).and_then(|m| m.as_str().parse::<f64>().ok());
            match (target, current) {
                (Some(t), Some(c)) if t > c => 1.0,
                (Some(t), Some(c)) if t < c => -1.0,
                _ => continue,
            }
        };
        last = sign * by;
    }
    last
}

pub fn parse_store_current(text: &str) -> bool {
    store_re().is_match(text)
}

/// The bullet addressed to `priority` in a multi-role reply, or the whole
/// text when there is no such bullet.
pub fn priority_section(text: &str, priority: Option<Priority>) -> &str {
    let Some(p) = priority else { return text };
    let label = p.label().to_ascii_lowercase();
    let mut offset = 0;
    let mut start = None;
    let mut end = text.len();
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let is_bullet = trimmed.starts_with("- ") || trimmed.starts_with("* ");
        if is_bullet {
            if start.is_some() {
                end = offset;
                break;
            }
            if trimmed[2..].trim_start().to_ascii_lowercase().starts_with(&label) {
                start = Some(offset);
            }
        }
        offset += line.len();
    }
    match start {
        Some(s) => &text[s..end],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_marker() {
        assert_eq!(parse_strategy_output("… Strategy output: [$p=0.38$] …").unwrap(), 0.38);
        assert_eq!(parse_strategy_output("Strategy output: [ p = .5 ]").unwrap(), 0.5);
        assert_eq!(parse_strategy_output("Strategy output: [p=0.41] then Strategy output: [p=0.36]").unwrap(), 0.36);
        assert!(matches!(parse_strategy_output("no marker here"), Err(BackendError::ParseFailure(_))));
    }

    #[test]
    fn adjustment_phrases() {
        assert_eq!(parse_adjustment("slightly increase the transmission probability by 0.02"), 0.02);
        assert_eq!(parse_adjustment("decrease the transmission probability by 0.05"), -0.05);
        assert_eq!(parse_adjustment("keep the strategy unchanged"), 0.0);
        assert_eq!(parse_adjustment("by increasing the transmission probability by 0.01 to p=0.36"), 0.01);
        assert_eq!(
            parse_adjustment(
                "increase the transmission probability by 0.03, then decrease the transmission probability by 0.01"
            ),
            -0.01
        );
        let neutral = "slightly adjust the transmission probability by 0.02 to $p=0.37$";
        assert_eq!(parse_adjustment(neutral), 0.0);
        assert_eq!(parse_adjustment_from(neutral, Some(0.35)), 0.02);
        assert_eq!(parse_adjustment_from(neutral, Some(0.40)), -0.02);
    }

    #[test]
    fn sections() {
        let text = "intro\n- Normal mode: a\n- RMA1 high priority: b\n  more b\n- RMA2 low priority: c\n";
        assert_eq!(priority_section(text, Some(Priority::High)), "- RMA1 high priority: b\n  more b\n");
        assert_eq!(priority_section(text, Some(Priority::Low)), "- RMA2 low priority: c\n");
        assert_eq!(priority_section(text, None), text);
        assert_eq!(priority_section("plain", Some(Priority::High)), "plain");
    }

    #[test]
    fn store_flag() {
        assert!(parse_store_current("Memory update: Store current strategy $p=0.35$ in strategy memory base"));
        assert!(!parse_store_current("Memory update: keep memory unchanged"));
    }
}
