//! Normative judgments: is a given proxy use appropriate?

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::detect::Witness;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("malformed policy: {0}")]
    Policy(#[from] serde_json::Error),
    #[error("witness {0} is already judged")]
    Duplicate(String),
    #[error("console: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentSource {
    Policy,
    Interactive,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub witness_id: String,
    pub appropriate: bool,
    pub source: JudgmentSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Judgment {
    pub fn new(witness_id: &str, appropriate: bool, source: JudgmentSource, note: Option<String>) -> Judgment {
        Judgment {
            witness_id: witness_id.to_string(),
            appropriate,
            source,
            note,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Append-only judgment record, at most one per witness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JudgmentLog(Vec<Judgment>);

impl JudgmentLog {
    pub fn get(&self, witness_id: &str) -> Option<&Judgment> {
        self.0.iter().find(|j| j.witness_id == witness_id)
    }

    pub fn record(&mut self, j: Judgment) -> Result<(), OracleError> {
        if self.get(&j.witness_id).is_some() {
            return Err(OracleError::Duplicate(j.witness_id));
        }
        self.0.push(j);
        Ok(())
    }

    pub fn entries(&self) -> &[Judgment] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Conditions on a witness; absent keys are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions_any: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_max: Option<usize>,
}

impl PolicyMatch {
    pub fn matches(&self, w: &Witness) -> bool {
        let ge = |v: f64, min: Option<f64>| min.is_none_or(|m| v >= m);
        let le = |v: f64, max: Option<f64>| max.is_none_or(|m| v <= m);
        ge(w.epsilon_hat, self.epsilon_min)
            && le(w.epsilon_hat, self.epsilon_max)
            && ge(w.delta_hat, self.delta_min)
            && le(w.delta_hat, self.delta_max)
            && self.size_max.is_none_or(|m| w.size <= m)
            && self
                .mentions_any
                .as_ref()
                .is_none_or(|names| names.iter().any(|n| w.subprogram.mentions(n)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    #[serde(rename = "match", default)]
    pub matcher: PolicyMatch,
    pub appropriate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Ordered rules; the first matching rule decides, else `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
    pub default: bool,
}

impl Policy {
    pub fn reject_all() -> Policy {
        Policy {
            rules: Vec::new(),
            default: false,
        }
    }

    pub fn approve_all() -> Policy {
        Policy {
            rules: Vec::new(),
            default: true,
        }
    }

    pub fn verdict(&self, w: &Witness) -> (bool, Option<String>) {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(w))
            .map(|r| (r.appropriate, r.note.clone()))
            .unwrap_or((self.default, None))
    }
}

pub fn parse_policy(text: &str) -> Result<Policy, OracleError> {
    Ok(serde_json::from_str(text)?)
}

pub fn print_policy(p: &Policy) -> String {
    serde_json::to_string_pretty(p).expect("policy serializes")
}

pub enum Answer {
    Judged(Judgment),
    /// No judgment is available now; the caller should suspend.
    Pending,
}

pub trait Oracle {
    fn judge(&mut self, w: &Witness) -> Result<Answer, OracleError>;
}

impl Oracle for Policy {
    fn judge(&mut self, w: &Witness) -> Result<Answer, OracleError> {
        let (appropriate, note) = self.verdict(w);
        Ok(Answer::Judged(Judgment::new(&w.id, appropriate, JudgmentSource::Policy, note)))
    }
}

/// Judgments supplied from elsewhere (the HTTP service); anything not yet
/// supplied is pending.
#[derive(Debug, Clone, Default)]
pub struct Queue(pub BTreeMap<String, Judgment>);

impl Oracle for Queue {
    fn judge(&mut self, w: &Witness) -> Result<Answer, OracleError> {
        Ok(match self.0.remove(&w.id) {
            Some(j) => Answer::Judged(j),
            None => Answer::Pending,
        })
    }
}

/// Asks on a console. End of input leaves the witness pending.
pub struct Interactive<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> Interactive<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Interactive { input, output }
    }
}

impl<R: BufRead, W: Write> Oracle for Interactive<R, W> {
    fn judge(&mut self, w: &Witness) -> Result<Answer, OracleError> {
        writeln!(self.output, "witness {} at [{}]: {}", w.id, w.site_key(), w.subprogram_text)?;
        writeln!(
            self.output,
            "  association {:.4}  influence {:.4}  size {}",
            w.epsilon_hat, w.delta_hat, w.size
        )?;
        loop {
            write!(self.output, "appropriate? [y/n] ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(Answer::Pending);
            }
            let (answer, note) = match line.trim().split_once(char::is_whitespace) {
                Some((a, n)) => (a, Some(n.trim().to_string())),
                None => (line.trim(), None),
            };
            let appropriate = match answer.to_ascii_lowercase().as_str() {
                "y" | "yes" => true,
                "n" | "no" => false,
                _ => continue,
            };
            return Ok(Answer::Judged(Judgment::new(&w.id, appropriate, JudgmentSource::Interactive, note)));
        }
    }
}
