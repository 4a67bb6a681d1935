//! Summarizer backends: the built-in keyword rules, or an HTTP endpoint that
//! forwards the summary prompt to a language model.

use std::cell::Cell;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use xmalign_core::textpipe::{summarize_rule_based, KeywordTable, Report, SUMMARY_PROMPT};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizerConfig {
    pub backend: Backend,
    /// Required for the remote backend, e.g. `http://127.0.0.1:8080/summarize`.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    /// Keep the rule-based summary when the endpoint fails.
    pub fallback_to_rules: bool,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Rule,
            endpoint: None,
            timeout_ms: 10_000,
            fallback_to_rules: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Rule,
    Remote,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    report: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    summary: String,
}

pub struct RemoteSummarizer {
    endpoint: String,
    agent: ureq::Agent,
}

enum Failure {
    Transient(String),
    Permanent(String),
}

impl RemoteSummarizer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    fn attempt(&self, body: &str) -> std::result::Result<String, Failure> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str::<RemoteResponse>(&text)
                .map(|r| r.summary)
                .map_err(|e| Failure::Permanent(format!("malformed response body: {e}"))),
            500..=599 => Err(Failure::Transient(format!("HTTP {status}"))),
            _ => Err(Failure::Permanent(format!("HTTP {status}"))),
        }
    }

    /// Retries once after a transport error or a 5xx answer.
    pub fn summarize(&self, report: &str) -> Result<Report> {
        let body = serde_json::to_string(&RemoteRequest {
            prompt: SUMMARY_PROMPT,
            report,
        })
        .expect("request serializes");
        let summary = match self.attempt(&body) {
            Ok(s) => s,
            Err(Failure::Permanent(msg)) => return Err(AppError::Remote(msg)),
            Err(Failure::Transient(_)) => self.attempt(&body).map_err(|f| match f {
                Failure::Transient(m) | Failure::Permanent(m) => AppError::Remote(m),
            })?,
        };
        Report::new(summary, true).map_err(|e| AppError::Remote(format!("unusable summary: {e}")))
    }
}

/// The configured backend, ready to summarize reports.
pub enum Summarizer {
    Rule(KeywordTable),
    Remote {
        client: RemoteSummarizer,
        fallback: Option<KeywordTable>,
        /// Set after the first failure so a dead endpoint is not retried for
        /// every report.
        gave_up: Cell<bool>,
    },
}

impl Summarizer {
    pub fn from_config(cfg: &SummarizerConfig, table: KeywordTable) -> Result<Self> {
        match cfg.backend {
            Backend::Rule => Ok(Summarizer::Rule(table)),
            Backend::Remote => {
                let endpoint = cfg
                    .endpoint
                    .clone()
                    .ok_or_else(|| AppError::Config("summarizer.endpoint is required for the remote backend".into()))?;
                Ok(Summarizer::Remote {
                    client: RemoteSummarizer::new(endpoint, Duration::from_millis(cfg.timeout_ms)),
                    fallback: cfg.fallback_to_rules.then_some(table),
                    gave_up: Cell::new(false),
                })
            }
        }
    }

    pub fn summarize(&self, report: &str) -> Result<Report> {
        match self {
            Summarizer::Rule(table) => Ok(summarize_rule_based(report, table)),
            Summarizer::Remote {
                client,
                fallback,
                gave_up,
            } => {
                if let (true, Some(table)) = (gave_up.get(), fallback) {
                    return Ok(summarize_rule_based(report, table));
                }
                match (client.summarize(report), fallback) {
                    (Ok(r), _) => Ok(r),
                    (Err(e), Some(table)) => {
                        eprintln!("warning: {e}; using rule-based summaries from here on");
                        gave_up.set(true);
                        Ok(summarize_rule_based(report, table))
                    }
                    (Err(e), None) => Err(e),
                }
            }
        }
    }
}
