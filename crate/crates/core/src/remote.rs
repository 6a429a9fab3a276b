//! HTTP annotator client.
//!
//! Wire protocol: `POST <endpoint>/compare` with body
//! `{"prompt": .., "candidate_a": .., "candidate_b": ..}`; the service answers
//! `{"prob_a_preferred": p}` with `p` in `[0, 1]`. Candidate text is the
//! space label when one exists, otherwise the identifier.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preference::Annotator;
use crate::space::Space;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; `/compare` is appended unless already present.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first failure on timeouts and 5xx responses.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    50
}
fn default_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/compare") {
            base.to_owned()
        } else {
            format!("{base}/compare")
        }
    }
}

#[derive(Debug, Serialize)]
struct CompareRequest<'a> {
    prompt: &'a str,
    candidate_a: &'a str,
    candidate_b: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompareResponse {
    prob_a_preferred: f64,
}

enum Failure {
    Retryable(String),
    Fatal(String),
    Protocol(String),
}

pub struct RemoteAnnotator {
    space: Arc<Space>,
    config: RemoteConfig,
    url: String,
    agent: ureq::Agent,
    name: String,
}

impl RemoteAnnotator {
    pub fn new(space: Arc<Space>, config: RemoteConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteAnnotator {
            url: config.url(),
            name: format!("remote:{}", config.endpoint),
            space,
            config,
            agent,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str, a: &str, b: &str) -> Result<f64, Failure> {
        let body = CompareRequest {
            prompt,
            candidate_a: a,
            candidate_b: b,
        };
        let mut response = match self.agent.post(&self.url).send_json(&body) {
            Ok(r) => r,
            Err(e) => return Err(Failure::Retryable(e.to_string())),
        };
        let status = response.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        let parsed: CompareResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Protocol(format!("unreadable response body: {e}")))?;
        let p = parsed.prob_a_preferred;
        if !(0.0..=1.0).contains(&p) {
            return Err(Failure::Protocol(format!(
                "prob_a_preferred {p} is outside [0, 1]"
            )));
        }
        Ok(p)
    }

    /// Compares raw text, retrying timeouts and 5xx responses per config.
    pub fn compare_text(&self, prompt: &str, a: &str, b: &str) -> Result<f64> {
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 && self.config.backoff_ms > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.attempt(prompt, a, b) {
                Ok(p) => return Ok(p),
                Err(Failure::Protocol(msg)) => return Err(Error::Protocol(msg)),
                Err(Failure::Fatal(msg)) => {
                    last = msg;
                    break;
                }
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(Error::Annotation {
            prompt: prompt.to_owned(),
            a: a.to_owned(),
            b: b.to_owned(),
            message: format!("{last} (after {} retries)", self.config.max_retries),
        })
    }
}

impl Annotator for RemoteAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &Arc<Space> {
        &self.space
    }

    fn annotate_at(&self, prompt: usize, a: usize, b: usize) -> Result<f64> {
        let s = &self.space;
        self.compare_text(s.prompt_text(prompt), s.response_text(prompt, a), s.response_text(prompt, b))
            .map_err(|e| match e {
                Error::Annotation { message, .. } => Error::Annotation {
                    prompt: s.prompt_id(prompt).to_owned(),
                    a: s.response_id(prompt, a).to_owned(),
                    b: s.response_id(prompt, b).to_owned(),
                    message,
                },
                other => other,
            })
    }

    /// Issues up to `max_in_flight` requests at once. Results are stored by
    /// query position, so completion order does not matter.
    fn annotate_batch(&self, queries: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        let workers = self.config.max_in_flight.min(queries.len()).max(1);
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<f64>>>> =
            Mutex::new((0..queries.len()).map(|_| None).collect());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= queries.len() {
                        break;
                    }
                    let (x, a, b) = queries[i];
                    let r = self.annotate_at(x, a, b);
                    results.lock().expect("result slot lock")[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("result slot lock")
            .into_iter()
            .map(|r| r.expect("every query is answered"))
            .collect()
    }
}
