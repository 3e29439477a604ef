//! Blocking HTTP backend for chat-completion endpoints, with a response
//! cache, bounded retries, and bounded request parallelism.
//!
//! The API key is read from an environment variable only when a network call
//! is actually needed; fully cached requests work with no key and no
//! connectivity. The key is never written to any artifact.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, ResponseCache};
use super::{Attempt, Backend, BackendError, ChatRequest};
use crate::answers::RawResponse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt, for 429/5xx and transport errors.
    pub max_retries: u32,
    /// Backoff schedule in milliseconds; the last entry repeats.
    pub retry_backoff_ms: Vec<u64>,
    /// Upper bound on concurrent requests when sampling one completion per
    /// call.
    pub max_in_flight: usize,
    /// Ask for all samples in one call via the `n` body parameter instead of
    /// one call per sample.
    pub use_n_parameter: bool,
    pub cache_path: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key_env: "GLAPE_API_KEY".to_string(),
            timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff_ms: vec![250, 500, 1000],
            max_in_flight: 4,
            use_n_parameter: true,
            cache_path: None,
        }
    }
}

impl HttpConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.endpoint_url.is_empty() {
            return Err(crate::Error::Config("backend endpoint_url is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(crate::Error::Config(
                "backend max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(crate::Error::Config(format!(
                "backend timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    n: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    cache: Option<ResponseCache>,
    run_seed: u64,
    network_calls: AtomicU64,
    last_attempts: Mutex<Vec<Attempt>>,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig, run_seed: u64) -> Result<Self, BackendError> {
        let cache = match &cfg.cache_path {
            Some(p) => Some(ResponseCache::open(p)?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                message: format!("cannot build http client: {e}"),
                attempts: Vec::new(),
            })?;
        Ok(HttpBackend {
            cfg,
            client,
            cache,
            run_seed,
            network_calls: AtomicU64::new(0),
            last_attempts: Mutex::new(Vec::new()),
        })
    }

    /// Attempts made for the most recent `complete` call that reached the
    /// network.
    pub fn last_attempts(&self) -> Vec<Attempt> {
        self.last_attempts.lock().unwrap().clone()
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    fn backoff_ms(&self, attempt_no: u32) -> u64 {
        let schedule = &self.cfg.retry_backoff_ms;
        if schedule.is_empty() {
            return 0;
        }
        let idx = (attempt_no as usize).min(schedule.len() - 1);
        schedule[idx]
    }

    fn key_for(&self, req: &ChatRequest, sample_index: usize) -> String {
        cache_key(
            &req.model_id,
            req.system_text.as_deref(),
            &req.user_text,
            req.temperature,
            req.max_tokens,
            sample_index,
            self.run_seed,
        )
    }

    /// One endpoint round-trip with retries. Returns the choice texts.
    fn fetch(&self, req: &ChatRequest, n: usize, api_key: &str) -> Result<Vec<String>, BackendError> {
        let mut messages = Vec::new();
        if let Some(system) = &req.system_text {
            messages.push(WireMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &req.user_text,
        });
        let body = WireRequest {
            model: &req.model_id,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            n,
        };
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut attempt_no: u32 = 0;
        loop {
            let send_result = self
                .client
                .post(&self.cfg.endpoint_url)
                .bearer_auth(api_key)
                .json(&body)
                .send();
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let number = attempt_no + 1;
            match send_result {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        attempts.push(Attempt {
                            number,
                            outcome: format!("http {}", status.as_u16()),
                            backoff_ms: None,
                        });
                        self.record_attempts(&attempts);
                        let parsed: WireResponse = resp.json().map_err(|e| {
                            BackendError::MalformedPayload(format!("invalid json: {e}"))
                        })?;
                        if parsed.choices.is_empty() {
                            return Err(BackendError::MalformedPayload(
                                "response has no choices".into(),
                            ));
                        }
                        let mut texts = Vec::with_capacity(parsed.choices.len());
                        for (i, choice) in parsed.choices.into_iter().enumerate() {
                            texts.push(choice.message.content.ok_or_else(|| {
                                BackendError::MalformedPayload(format!(
                                    "choice {i} has no message content"
                                ))
                            })?);
                        }
                        return Ok(texts);
                    }
                    let code = status.as_u16();
                    let retryable = code == 429 || status.is_server_error();
                    let body_excerpt: String =
                        resp.text().unwrap_or_default().chars().take(200).collect();
                    if retryable && attempt_no < self.cfg.max_retries {
                        let ms = self.backoff_ms(attempt_no);
                        attempts.push(Attempt {
                            number,
                            outcome: format!("http {code}"),
                            backoff_ms: Some(ms),
                        });
                        tracing::debug!(status = code, backoff_ms = ms, "retrying request");
                        std::thread::sleep(Duration::from_millis(ms));
                    } else {
                        attempts.push(Attempt {
                            number,
                            outcome: format!("http {code}"),
                            backoff_ms: None,
                        });
                        self.record_attempts(&attempts);
                        return Err(BackendError::HttpStatus {
                            status: code,
                            body_excerpt,
                            attempts,
                        });
                    }
                }
                Err(e) => {
                    if attempt_no < self.cfg.max_retries {
                        let ms = self.backoff_ms(attempt_no);
                        attempts.push(Attempt {
                            number,
                            outcome: format!("transport: {e}"),
                            backoff_ms: Some(ms),
                        });
                        tracing::debug!(error = %e, backoff_ms = ms, "retrying request");
                        std::thread::sleep(Duration::from_millis(ms));
                    } else {
                        attempts.push(Attempt {
                            number,
                            outcome: format!("transport: {e}"),
                            backoff_ms: None,
                        });
                        self.record_attempts(&attempts);
                        return Err(BackendError::Transport {
                            message: e.to_string(),
                            attempts,
                        });
                    }
                }
            }
            attempt_no += 1;
        }
    }

    fn record_attempts(&self, attempts: &[Attempt]) {
        self.last_attempts
            .lock()
            .unwrap()
            .extend(attempts.iter().cloned());
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<RawResponse>, BackendError> {
        assert!(req.n_samples > 0, "request must ask for at least one sample");
        let keys: Vec<String> = (0..req.n_samples).map(|i| self.key_for(req, i)).collect();
        let mut texts: Vec<Option<String>> = keys
            .iter()
            .map(|k| self.cache.as_ref().and_then(|c| c.get(k)))
            .collect();
        let missing: Vec<usize> = texts
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.is_none().then_some(i))
            .collect();
        tracing::info!(
            samples = req.n_samples,
            cached = req.n_samples - missing.len(),
            key = %&keys[0][..16],
            "completion request"
        );
        if !missing.is_empty() {
            let api_key = std::env::var(&self.cfg.api_key_env)
                .map_err(|_| BackendError::MissingApiKey(self.cfg.api_key_env.clone()))?;
            self.last_attempts.lock().unwrap().clear();
            if self.cfg.use_n_parameter {
                let got = self.fetch(req, missing.len(), &api_key)?;
                if got.len() < missing.len() {
                    return Err(BackendError::MalformedPayload(format!(
                        "asked for {} choices, endpoint returned {}",
                        missing.len(),
                        got.len()
                    )));
                }
                for (&slot, text) in missing.iter().zip(got) {
                    if let Some(c) = &self.cache {
                        c.put(&keys[slot], &text)?;
                    }
                    texts[slot] = Some(text);
                }
            } else {
                let single = ChatRequest {
                    n_samples: 1,
                    ..req.clone()
                };
                let mut fetched: Vec<(usize, Result<Vec<String>, BackendError>)> = Vec::new();
                for chunk in missing.chunks(self.cfg.max_in_flight.max(1)) {
                    let results = std::thread::scope(|s| {
                        let handles: Vec<_> = chunk
                            .iter()
                            .map(|&slot| {
                                let single = &single;
                                let api_key = api_key.as_str();
                                s.spawn(move || (slot, self.fetch(single, 1, api_key)))
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("fetch thread panicked"))
                            .collect::<Vec<_>>()
                    });
                    fetched.extend(results);
                }
                fetched.sort_by_key(|(slot, _)| *slot);
                for (slot, result) in fetched {
                    let got = result?;
                    let text = got.into_iter().next().ok_or_else(|| {
                        BackendError::MalformedPayload("response has no choices".into())
                    })?;
                    if let Some(c) = &self.cache {
                        c.put(&keys[slot], &text)?;
                    }
                    texts[slot] = Some(text);
                }
            }
        }
        Ok(texts
            .into_iter()
            .enumerate()
            .map(|(sample_index, text)| RawResponse {
                sample_index,
                text: text.expect("all samples filled"),
            })
            .collect())
    }

    fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }
}
