use std::fmt;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};
use crate::pool::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackoffSchedule {
    pub initial_ms: u64,
    pub multiplier: f64,
    pub max_ms: u64,
    pub max_attempts: u32,
}

impl Default for BackoffSchedule {
    fn default() -> Self {
        Self {
            initial_ms: 500,
            multiplier: 2.0,
            max_ms: 30_000,
            max_attempts: 5,
        }
    }
}

impl BackoffSchedule {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.initial_ms as f64 * self.multiplier.max(1.0).powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_ms as f64) as u64)
    }
}

/// Connection settings for one model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Model name sent to the endpoint; also the backend id.
    pub model: String,
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: f64,
    #[serde(default)]
    pub backoff: BackoffSchedule,
    /// Ask for all `n` samples in one call. Per-completion usage is then
    /// apportioned from the aggregate.
    #[serde(default)]
    pub multi_sample: bool,
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout() -> f64 {
    120.0
}

impl BackendConfig {
    pub fn new(model: &str, endpoint: &str) -> Self {
        Self {
            model: model.to_string(),
            endpoint: endpoint.to_string(),
            api_key_env: None,
            max_in_flight: default_in_flight(),
            request_timeout_s: default_timeout(),
            backoff: BackoffSchedule::default(),
            multi_sample: false,
        }
    }
}

struct Token(String);

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

/// Blocking client for `POST {endpoint}/chat/completions`.
pub struct HttpBackend {
    config: BackendConfig,
    token: Option<Token>,
    client: Client,
    in_flight: Semaphore,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("token", &self.token)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let token = match &config.api_key_env {
            Some(var) => Some(Token(std::env::var(var).map_err(|_| {
                BackendError::AuthFailure(format!("environment variable {var} is not set"))
            })?)),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_s.max(0.001)))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            token,
            client,
            in_flight,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(&self, req: &GenerationRequest, n: u32, seed: Option<u64>) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "n": n,
            "max_tokens": req.max_new_tokens,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        body
    }

    /// One logical call with retries.
    fn call(&self, body: &Value) -> Result<ChatReply, BackendError> {
        let backoff = &self.config.backoff;
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.send_once(body)
            };
            match outcome {
                Ok(reply) => return Ok(reply),
                Err((err, retry_after)) if err.is_retryable() && attempt + 1 < backoff.max_attempts.max(1) => {
                    let wait = retry_after.unwrap_or_else(|| backoff.delay(attempt));
                    log::warn!("{}: {err}; retrying in {:?}", self.config.model, wait);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }

    fn send_once(&self, body: &Value) -> Result<ChatReply, (BackendError, Option<Duration>)> {
        let mut rb = self.client.post(self.url()).json(body);
        if let Some(Token(t)) = &self.token {
            rb = rb.bearer_auth(t);
        }
        let resp = rb
            .send()
            .map_err(|e| (BackendError::Transport(e.to_string()), None))?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(|s| Duration::from_secs_f64(s.max(0.0)));
        let text = resp
            .text()
            .map_err(|e| (BackendError::Transport(e.to_string()), None))?;
        if status.is_success() {
            return parse_reply(&text).map_err(|e| (e, None));
        }
        let snippet: String = text.chars().take(200).collect();
        let err = match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => BackendError::AuthFailure(format!("{status}")),
            StatusCode::TOO_MANY_REQUESTS => BackendError::RateLimited(snippet),
            s if s.is_server_error() => BackendError::Transport(format!("{s}: {snippet}")),
            s => BackendError::InvalidRequest(format!("{s}: {snippet}")),
        };
        Err((err, retry_after))
    }
}

#[derive(Debug)]
struct ChatReply {
    completions: Vec<String>,
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn parse_reply(text: &str) -> Result<ChatReply, BackendError> {
    let bad = |m: &str| BackendError::MalformedResponse(m.to_string());
    let v: Value = serde_json::from_str(text).map_err(|e| bad(&format!("not JSON: {e}")))?;
    let choices = v["choices"].as_array().ok_or_else(|| bad("missing choices"))?;
    let completions = choices
        .iter()
        .map(|c| {
            c["message"]["content"]
                .as_str()
                .or_else(|| c["text"].as_str())
                .map(str::to_string)
                .ok_or_else(|| bad("choice without content"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let usage = &v["usage"];
    let prompt_tokens = usage["prompt_tokens"].as_u64().ok_or_else(|| bad("missing usage.prompt_tokens"))?;
    let completion_tokens = usage["completion_tokens"]
        .as_u64()
        .ok_or_else(|| bad("missing usage.completion_tokens"))?;
    Ok(ChatReply {
        completions,
        prompt_tokens,
        completion_tokens,
    })
}

/// Splits `total` across completions in proportion to their character
/// length, by largest remainder. Sums to `total` exactly.
fn apportion(total: u64, completions: &[String]) -> Vec<u64> {
    let n = completions.len();
    if n == 0 {
        return Vec::new();
    }
    let weights: Vec<u128> = completions.iter().map(|c| c.chars().count().max(1) as u128).collect();
    let sum: u128 = weights.iter().sum();
    let mut shares: Vec<u64> = weights.iter().map(|w| (total as u128 * w / sum) as u64).collect();
    let mut rems: Vec<(u128, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| ((total as u128 * w) % sum, i))
        .collect();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = total - shares.iter().sum::<u64>();
    for &(_, i) in rems.iter().take(left as usize) {
        shares[i] += 1;
    }
    shares
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate()?;
        if self.config.multi_sample || req.n == 1 {
            let reply = self.call(&self.body(req, req.n, req.seed))?;
            let tokens = if reply.completions.len() == 1 {
                vec![reply.completion_tokens]
            } else {
                apportion(reply.completion_tokens, &reply.completions)
            };
            return Ok(GenerationResponse::new(
                reply.completions,
                reply.prompt_tokens,
                tokens,
                &self.config.model,
            ));
        }
        // One call per sample gives exact per-completion usage.
        let indices: Vec<u32> = (0..req.n).collect();
        let replies = crate::pool::bounded_map(&indices, self.config.max_in_flight, |_, &i| {
            let seed = req.seed.map(|s| s.wrapping_add(i as u64));
            self.call(&self.body(req, 1, seed))
        });
        let mut completions = Vec::with_capacity(req.n as usize);
        let mut tokens = Vec::with_capacity(req.n as usize);
        let mut prompt_tokens = None;
        for reply in replies {
            let mut reply = reply?;
            if reply.completions.len() != 1 {
                return Err(BackendError::MalformedResponse(format!(
                    "asked for 1 completion, got {}",
                    reply.completions.len()
                )));
            }
            prompt_tokens.get_or_insert(reply.prompt_tokens);
            completions.push(reply.completions.remove(0));
            tokens.push(reply.completion_tokens);
        }
        Ok(GenerationResponse::new(
            completions,
            prompt_tokens.unwrap_or(0),
            tokens,
            &self.config.model,
        ))
    }
}
