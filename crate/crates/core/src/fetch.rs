//! Client for an external embedding service.
//!
//! Protocol: `POST <base>/embed` with `{"inputs":[{"id":..,"text":..}]}`; the
//! service answers `{"dim":..,"vectors":[{"id":..,"values":[..]}]}` containing
//! exactly one vector per requested id.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingKind, EmbeddingStore, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub batch_size: usize,
    /// Number of batches in flight at once.
    pub concurrency: usize,
    /// Attempts per batch, including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            batch_size: 64,
            concurrency: 4,
            max_attempts: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(2),
            timeout: Duration::from_secs(60),
        }
    }
}

impl FetchOptions {
    /// Delay before retry number `retry` (0-based), doubling up to `max_backoff`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Serialize)]
pub struct EmbedInput<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub inputs: Vec<EmbedInput<'a>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct EmbedVector {
    pub id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<EmbedVector>,
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

/// Dimension plus the vectors of one batch.
type BatchResult = Result<(usize, Vec<(String, Vector)>)>;

fn embed_url(service_url: &str) -> String {
    let base = service_url.trim_end_matches('/');
    if base.ends_with("/embed") {
        base.to_string()
    } else {
        format!("{base}/embed")
    }
}

fn post_batch(agent: &ureq::Agent, url: &str, batch: &[(String, String)]) -> Result<EmbedResponse, Failure> {
    let request = EmbedRequest { inputs: batch.iter().map(|(id, text)| EmbedInput { id, text }).collect() };
    match agent.post(url).send_json(&request) {
        Ok(mut response) => response
            .body_mut()
            .read_json::<EmbedResponse>()
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("malformed response: {e}")))),
        Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
            Err(Failure::Retryable(format!("http status {code}")))
        }
        Err(ureq::Error::StatusCode(code)) => Err(Failure::Fatal(Error::Protocol(format!("http status {code}")))),
        Err(e) => Err(Failure::Retryable(e.to_string())),
    }
}

fn fetch_batch(
    agent: &ureq::Agent,
    url: &str,
    batch: &[(String, String)],
    options: &FetchOptions,
) -> Result<EmbedResponse> {
    let attempts = options.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(options.backoff(attempt - 1));
        }
        match post_batch(agent, url, batch) {
            Ok(response) => return Ok(response),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retryable(msg)) => {
                log::warn!("embedding request failed (attempt {}/{attempts}): {msg}", attempt + 1);
                last = msg;
            }
        }
    }
    Err(Error::Network { attempts, message: last })
}

/// Checks a response against its request batch and returns its vectors.
fn validate(batch: &[(String, String)], response: EmbedResponse) -> Result<(usize, Vec<(String, Vector)>)> {
    if response.dim == 0 {
        return Err(Error::Protocol("response declares dim 0".into()));
    }
    let requested: HashSet<&str> = batch.iter().map(|(id, _)| id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(response.vectors.len());
    for v in response.vectors {
        if v.values.len() != response.dim {
            return Err(Error::Protocol(format!(
                "vector `{}` has {} values, response declares dim {}",
                v.id,
                v.values.len(),
                response.dim
            )));
        }
        if !requested.contains(v.id.as_str()) || !seen.insert(v.id.clone()) {
            return Err(Error::Protocol(format!("unexpected or repeated id `{}`", v.id)));
        }
        let vector = Vector::new(v.values).map_err(|e| Error::Protocol(e.to_string()))?;
        out.push((v.id, vector));
    }
    if seen.len() != requested.len() {
        return Err(Error::Protocol(format!(
            "response carries {} of {} requested vectors",
            seen.len(),
            requested.len()
        )));
    }
    Ok((response.dim, out))
}

/// Embeds `texts` (id, text) through the service at `service_url`.
///
/// Duplicate ids are rejected before any request is sent. Transport failures, 429
/// and 5xx responses are retried with capped exponential backoff.
pub fn fetch_embeddings(
    service_url: &str,
    texts: &[(String, String)],
    kind: EmbeddingKind,
    options: &FetchOptions,
) -> Result<EmbeddingStore> {
    if texts.is_empty() {
        return Err(Error::InvalidRecord("no texts to embed".into()));
    }
    let mut ids = HashSet::with_capacity(texts.len());
    for (id, _) in texts {
        if !ids.insert(id.as_str()) {
            return Err(Error::DuplicateId { kind: "embedding request", id: id.clone() });
        }
    }

    let url = embed_url(service_url);
    let agent =
        ureq::Agent::new_with_config(ureq::Agent::config_builder().timeout_global(Some(options.timeout)).build());
    let batches: Vec<&[(String, String)]> = texts.chunks(options.batch_size.max(1)).collect();
    let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new((0..batches.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = options.concurrency.clamp(1, batches.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(i) else { break };
                let outcome = fetch_batch(&agent, &url, batch, options).and_then(|r| validate(batch, r));
                let failed = outcome.is_err();
                results.lock().expect("result slots")[i] = Some(outcome);
                if failed {
                    // Stop handing out new batches once one has failed.
                    next.store(batches.len(), Ordering::Relaxed);
                }
            });
        }
    });

    // Assemble in request order so the store is independent of completion order.
    let mut store: Option<EmbeddingStore> = None;
    for slot in results.into_inner().expect("result slots") {
        let (dim, vectors) = match slot {
            Some(outcome) => outcome?,
            None => continue,
        };
        let store = store.get_or_insert_with(|| EmbeddingStore::new(kind, dim));
        if store.dim() != dim {
            return Err(Error::Protocol(format!("inconsistent dims across responses: {} and {dim}", store.dim())));
        }
        for (id, v) in vectors {
            store.insert(id, v)?;
        }
    }
    store.ok_or_else(|| Error::Protocol("no responses received".into()))
}
