//! Chat-completions over HTTP.

use std::fmt;
use std::time::{Duration, Instant};

use cpe_core::backend::{BackendConfig, BackendError, ChatBackend, ChatRequest, Completion, GenerationParams, Usage};
use serde::Serialize;
use serde_json::Value;

pub const RETRY_DELAYS: [Duration; 2] = [Duration::from_millis(500), Duration::from_secs(2)];

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model_id: String,
    params: GenerationParams,
    token: Option<String>,
    retry_delays: Vec<Duration>,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteBackend {
    /// Reads the credential from the environment variable the config names.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let BackendConfig::Remote { endpoint, model_id, auth_env_name, params, timeout_ms } = cfg else {
            return Err(BackendError::InvalidConfig("not a remote backend config".to_string()));
        };
        let token = match auth_env_name {
            Some(name) => Some(
                std::env::var(name)
                    .map_err(|_| BackendError::InvalidConfig(format!("environment variable {name} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(*timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: endpoint.clone(),
            model_id: model_id.clone(),
            params: params.clone(),
            token,
            retry_delays: RETRY_DELAYS.to_vec(),
        })
    }

    pub fn with_retry_delays(mut self, delays: Vec<Duration>) -> Self {
        self.retry_delays = delays;
        self
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<(u16, String), ureq::Error> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(body)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string()?;
        Ok((status, text))
    }
}

fn parse_completion(body: &str) -> Result<(String, Usage), BackendError> {
    let malformed = |what: &str| BackendError::Transport(format!("malformed provider response: {what}"));
    let value: Value = serde_json::from_str(body).map_err(|e| malformed(&e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no choices[0].message.content"))?;
    let usage = Usage {
        prompt_units: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_units: value.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    };
    Ok((content.to_string(), usage))
}

impl ChatBackend for RemoteBackend {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError> {
        if req.messages().is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        let body = WireRequest {
            model: &self.model_id,
            messages: req
                .messages()
                .iter()
                .map(|m| WireMessage { role: m.role.as_str(), content: &m.content })
                .collect(),
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            seed: self.params.seed,
        };
        let started = Instant::now();
        let mut delays = self.retry_delays.iter();
        loop {
            match self.attempt(&body) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let (content, usage) = parse_completion(&text)?;
                    return Ok(Completion { content, usage, latency: started.elapsed() });
                }
                Ok((status, text)) => return Err(BackendError::ProviderError { status, body: text }),
                Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout),
                Err(e) => match delays.next() {
                    Some(delay) => {
                        tracing::warn!(endpoint = %self.endpoint, error = %e, "chat completion failed, retrying");
                        std::thread::sleep(*delay);
                    }
                    None => return Err(BackendError::Transport(e.to_string())),
                },
            }
        }
    }
}
