//! Chat-style layout providers.
//!
//! A provider answers one `(system, user)` exchange with raw text. The HTTP
//! client and the fixture provider are safe to share across threads; the
//! fallback provider is a pure function of its inputs.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::grid::fallback_plan;
use super::planner::{parse_canvas_from_system, strip_user_prompt, BACKGROUND_SYSTEM_PROMPT};
use super::scene_parse::parse_scene;

pub const DEFAULT_API_KEY_ENV: &str = "STITCH_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no recorded response for {0:?}")]
    NoFixture(String),
    #[error("fallback planner declined: {0}")]
    Declined(String),
}

pub trait LayoutProvider: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError>;
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpChatProvider {
    agent: ureq::Agent,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(120))).build().into();
        Self { agent, base_url: base_url.trim_end_matches('/').to_string(), model: model.to_string(), api_key }
    }

    /// Reads the API key from `env_var`; a missing variable means no auth header.
    pub fn from_env(base_url: &str, model: &str, env_var: &str) -> Self {
        Self::new(base_url, model, std::env::var(env_var).ok())
    }
}

impl LayoutProvider for HttpChatProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let value: serde_json::Value =
            response.body_mut().read_json().map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse(value.to_string()))
    }
}

/// Offline provider: parses the description into a scene, places it with
/// the 2x2 grid planner and replies in the same shape a chat model would.
#[derive(Debug, Clone, Default)]
pub struct FallbackProvider;

impl LayoutProvider for FallbackProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        if system == BACKGROUND_SYSTEM_PROMPT {
            return Ok("background".to_string());
        }
        let canvas = parse_canvas_from_system(system)
            .ok_or_else(|| ProviderError::Declined("system prompt names no canvas".into()))?;
        let description = strip_user_prompt(user);
        let scene = parse_scene(description);
        let plan = fallback_plan(&scene, canvas).map_err(|e| ProviderError::Declined(e.to_string()))?;
        let entries: Vec<_> = plan
            .objects
            .iter()
            .map(|o| {
                json!({
                    "prompt": o.sub_prompt,
                    "x_min": o.bbox.x_min,
                    "y_min": o.bbox.y_min,
                    "x_max": o.bbox.x_max,
                    "y_max": o.bbox.y_max,
                })
            })
            .collect();
        Ok(format!(
            "Objects were read from the description. Each one received a cell of a two by two grid. \
             The occupied cells were stretched to tile the canvas.\n{}",
            serde_json::to_string_pretty(&entries).expect("json")
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    /// `"layout"` or `"background"`.
    pub kind: String,
    pub user: String,
    /// Replies handed out in order; the last one repeats.
    pub responses: Vec<String>,
}

type ReplyQueue = (Vec<String>, usize);

/// Replays recorded replies keyed by request kind and user prompt.
#[derive(Debug, Default)]
pub struct FixtureProvider {
    replies: Mutex<HashMap<(String, String), ReplyQueue>>,
}

impl FixtureProvider {
    pub fn new(records: Vec<FixtureRecord>) -> Self {
        let replies = records.into_iter().map(|r| ((r.kind, r.user), (r.responses, 0))).collect();
        Self { replies: Mutex::new(replies) }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    /// Single description with a layout reply and a background reply.
    pub fn single(description: &str, layout_replies: &[&str], background: &str) -> Self {
        let user = super::planner::user_prompt(description);
        Self::new(vec![
            FixtureRecord {
                kind: "layout".into(),
                user: user.clone(),
                responses: layout_replies.iter().map(|s| s.to_string()).collect(),
            },
            FixtureRecord { kind: "background".into(), user, responses: vec![background.to_string()] },
        ])
    }
}

impl LayoutProvider for FixtureProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let kind = if system == BACKGROUND_SYSTEM_PROMPT { "background" } else { "layout" };
        let mut replies = self.replies.lock().expect("fixture lock poisoned");
        let (list, cursor) = replies
            .get_mut(&(kind.to_string(), user.to_string()))
            .ok_or_else(|| ProviderError::NoFixture(format!("{kind}: {user}")))?;
        let reply = list
            .get((*cursor).min(list.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| ProviderError::NoFixture(format!("{kind}: {user}")))?;
        *cursor += 1;
        Ok(reply)
    }
}
