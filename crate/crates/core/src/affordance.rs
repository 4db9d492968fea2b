//! Affordance queries: an LLM turns an indirect request ("a drink to wake me
//! up") into concrete comma-separated targets, which are then searched in
//! order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::geometry::Cell;
use crate::map::FeatureMap;
use crate::query::{multi_object_search_items, split_prompt, Leg, QuerySpec, SearchOptions};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_MAX_TARGETS: usize = 8;

/// System prompt sent with every affordance request. Reconstructed: the
/// instruction asks for indoor locations or objects as a bare comma-separated
/// list.
pub const DEFAULT_SYSTEM_PROMPT: &str = "You help a robot that navigates inside a house. \
The user describes a need. Reply only with a comma-separated list of indoor locations \
or objects where the need can be satisfied, most likely first. Do not add any other words.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

/// Chat-completion request body: `{model, messages: [{role, content}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl ChatRequest {
    /// Hex SHA-256 of the serialized request; keys recorded fixtures.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&body))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

fn content_of(resp: &ChatResponse) -> Result<String> {
    resp.choices
        .first()
        .map(|c| c.message.content.clone())
        .ok_or_else(|| Error::Client("response has no choices".into()))
}

/// Returns the assistant message content for a chat request.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Live chat-completion endpoint, e.g. `https://host/v1/chat/completions`.
#[derive(Debug)]
pub struct HttpChatClient {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .new_agent();
        HttpChatClient {
            url: url.into(),
            api_key,
            agent,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| Error::Client(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(Error::Client(format!("endpoint answered {status}")));
        }
        let body: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("malformed response: {e}")))?;
        content_of(&body)
    }
}

/// Replays recorded responses keyed by [`ChatRequest::fingerprint`].
///
/// Fixture file: a JSON object mapping request hash to the full
/// chat-completion response (`{"choices": [{"message": {...}}]}`).
#[derive(Debug, Clone, Default)]
pub struct RecordedChatClient {
    responses: BTreeMap<String, serde_json::Value>,
}

impl RecordedChatClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let responses = serde_json::from_slice(&fs::read(path)?)?;
        Ok(RecordedChatClient { responses })
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(&self.responses)?)?;
        Ok(())
    }

    /// Records `content` as the assistant reply to `request`.
    pub fn record(&mut self, request: &ChatRequest, content: &str) {
        let resp = ChatResponse {
            choices: vec![ChatChoice {
                message: ChatMessage::new("assistant", content),
            }],
        };
        self.responses.insert(
            request.fingerprint(),
            serde_json::to_value(resp).expect("response serializes"),
        );
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatClient for RecordedChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let key = request.fingerprint();
        let value = self
            .responses
            .get(&key)
            .ok_or_else(|| Error::Client(format!("no recorded response for request {key}")))?;
        let resp: ChatResponse = serde_json::from_value(value.clone())
            .map_err(|e| Error::Client(format!("malformed recorded response: {e}")))?;
        content_of(&resp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRequest {
    pub query: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_max_targets")]
    pub max_targets: usize,
}

fn default_model() -> String {
    DEFAULT_MODEL.to_owned()
}

fn default_max_targets() -> usize {
    DEFAULT_MAX_TARGETS
}

impl AffordanceRequest {
    pub fn new(query: impl Into<String>) -> Self {
        AffordanceRequest {
            query: query.into(),
            model: default_model(),
            max_targets: DEFAULT_MAX_TARGETS,
        }
    }

    pub fn chat_request(&self, system_prompt: &str) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage::new("system", system_prompt),
                ChatMessage::new("user", self.query.trim()),
            ],
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceResult {
    pub targets: Vec<String>,
    pub raw_response: String,
}

/// Comma-split, trimmed, empties dropped, truncated to `max_targets`.
pub fn parse_targets(content: &str, max_targets: usize) -> Result<Vec<String>> {
    let mut targets = split_prompt(content);
    targets.truncate(max_targets);
    if targets.is_empty() {
        return Err(Error::Parse {
            message: "no targets in assistant content".into(),
            raw_response: content.to_owned(),
        });
    }
    Ok(targets)
}

pub fn resolve_affordance(
    req: &AffordanceRequest,
    client: &dyn ChatClient,
    system_prompt: &str,
) -> Result<AffordanceResult> {
    if req.query.trim().is_empty() {
        return Err(Error::input("affordance query must not be empty"));
    }
    if req.max_targets == 0 {
        return Err(Error::input("max_targets must be positive"));
    }
    let raw_response = client.complete(&req.chat_request(system_prompt))?;
    let targets = parse_targets(&raw_response, req.max_targets)?;
    Ok(AffordanceResult {
        targets,
        raw_response,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceSearch {
    pub targets: Vec<String>,
    pub raw_response: String,
    pub legs: Vec<Leg>,
}

/// Resolves the request, then searches the targets in order as one
/// multi-object search.
#[allow(clippy::too_many_arguments)]
pub fn affordance_search(
    map: &FeatureMap,
    req: &AffordanceRequest,
    client: &dyn ChatClient,
    system_prompt: &str,
    start: Cell,
    template: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    options: &SearchOptions,
) -> Result<AffordanceSearch> {
    let resolved = resolve_affordance(req, client, system_prompt)?;
    let legs = multi_object_search_items(map, &resolved.targets, start, template, provider, options)?;
    Ok(AffordanceSearch {
        targets: resolved.targets,
        raw_response: resolved.raw_response,
        legs,
    })
}
