//! Client for a remote encoder service.
//!
//! Wire protocol: `POST {endpoint}/embed` with
//! `{"kind": "text" | "image", "payload": <string>}` answered by
//! `{"dim": N, "values": [...]}`. Image payloads are the base64 encoding of the
//! frame's RGB file. Transport errors, 429 and 5xx responses are retried with
//! exponential backoff.

use std::fs;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_query, Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::frame::FrameRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    kind: &'a str,
    payload: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    values: Vec<f32>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteProvider {
    endpoint: String,
    d_clip: usize,
    d_rnr: usize,
    retry: RetryPolicy,
    agent: ureq::Agent,
    in_flight: InFlight,
}

enum Attempt {
    Done(Vec<f32>),
    Retry { message: String, status: Option<u16> },
    Fatal { message: String, status: Option<u16> },
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, d_clip: usize, d_rnr: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        RemoteProvider {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            d_clip,
            d_rnr,
            retry: RetryPolicy::default(),
            agent,
            in_flight: InFlight {
                limit: 8,
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    fn attempt(&self, body: &EmbedRequest<'_>) -> Attempt {
        let _slot = self.in_flight.acquire();
        let url = format!("{}/embed", self.endpoint);
        let mut resp = match self.agent.post(&url).send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    message: e.to_string(),
                    status: None,
                }
            }
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Attempt::Retry {
                message: format!("server answered {status}"),
                status: Some(status),
            };
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal {
                message: format!("server answered {status}"),
                status: Some(status),
            };
        }
        match resp.body_mut().read_json::<EmbedResponse>() {
            Ok(r) if r.dim == r.values.len() => Attempt::Done(r.values),
            Ok(r) => Attempt::Fatal {
                message: format!("response dim {} but {} values", r.dim, r.values.len()),
                status: Some(status),
            },
            Err(e) => Attempt::Fatal {
                message: format!("malformed response: {e}"),
                status: Some(status),
            },
        }
    }

    fn request(&self, kind: &str, payload: &str, dim: usize) -> Result<Embedding> {
        let body = EmbedRequest { kind, payload };
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        for n in 1..=attempts {
            match self.attempt(&body) {
                Attempt::Done(values) => {
                    if values.len() != dim {
                        return Err(Error::Provider {
                            message: format!("expected dim {dim}, got {}", values.len()),
                            attempts: n,
                            last_status: Some(200),
                        });
                    }
                    return Embedding::from_f32(&values);
                }
                Attempt::Fatal { message, status } => {
                    return Err(Error::Provider {
                        message,
                        attempts: n,
                        last_status: status,
                    })
                }
                Attempt::Retry { message, status } => {
                    if n == attempts {
                        return Err(Error::Provider {
                            message,
                            attempts: n,
                            last_status: status,
                        });
                    }
                    log::warn!("embed request failed ({message}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
        unreachable!("loop returns on the final attempt")
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn clip_dim(&self) -> usize {
        self.d_clip
    }

    fn rnr_dim(&self) -> usize {
        self.d_rnr
    }

    fn embed_text(&self, query: &str) -> Result<Embedding> {
        self.request("text", check_query(query)?, self.d_clip)
    }

    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        let path = frame
            .rgb_path
            .as_ref()
            .ok_or_else(|| Error::frame(&frame.id, "remote provider needs an rgb_path"))?;
        let bytes = fs::read(path)
            .map_err(|e| Error::frame(&frame.id, format!("{}: {e}", path.display())))?;
        let payload = base64::engine::general_purpose::STANDARD.encode(bytes);
        self.request("image", &payload, self.d_clip)
    }

    fn embed_frame_rnr(&self, _frame: &FrameRecord) -> Result<Option<Embedding>> {
        Ok(None)
    }
}
