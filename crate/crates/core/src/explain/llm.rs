use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Evidence, Explanation, Technique};
use crate::corpus::{Label, Review};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE_VERSION: &str = "v1";

/// Environment variable holding the bearer token for [`HttpLlmClient`].
pub const LLM_KEY_ENV: &str = "REVIEWAD_LLM_API_KEY";

const PLACEHOLDERS: [&str; 3] = ["product", "review", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

/// A chat-completion backend. One call, no retries.
pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        (**self).complete(messages)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        (**self).complete(messages)
    }
}

/// System and per-review prompt templates with `{product}`, `{review}` and `{label}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub version: String,
    pub system: String,
    pub review: String,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        PromptTemplates {
            version: DEFAULT_TEMPLATE_VERSION.to_string(),
            system: include_str!("../../templates/llm/v1/system.txt").to_string(),
            review: include_str!("../../templates/llm/v1/review.txt").to_string(),
        }
    }

    pub fn new(
        version: impl Into<String>,
        system: impl Into<String>,
        review: impl Into<String>,
    ) -> Result<Self> {
        let t = PromptTemplates {
            version: version.into(),
            system: system.into(),
            review: review.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Reads `system.txt` and `review.txt`; the directory name is the version.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let version = dir.file_name().and_then(|n| n.to_str()).ok_or_else(|| {
            Error::validation(format!("template directory {} has no name", dir.display()))
        })?;
        Self::new(
            version,
            std::fs::read_to_string(dir.join("system.txt"))?,
            std::fs::read_to_string(dir.join("review.txt"))?,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.version.trim().is_empty() {
            return Err(Error::validation("template version must not be empty"));
        }
        for (name, body) in [("system", &self.system), ("review", &self.review)] {
            for slot in slots(body) {
                if !PLACEHOLDERS.contains(&slot) {
                    return Err(Error::validation(format!(
                        "{name} template uses unknown placeholder {{{slot}}}"
                    )));
                }
            }
        }
        for required in ["review", "label"] {
            if !slots(&self.review).any(|s| s == required) {
                return Err(Error::validation(format!(
                    "review template lacks {{{required}}}"
                )));
            }
        }
        Ok(())
    }

    pub fn render_system(&self, product: &str) -> String {
        render(&self.system, product, "", "")
    }

    pub fn render_review(&self, product: &str, review: &str, label: Label) -> String {
        render(&self.review, product, review, label.as_str())
    }

    pub fn messages(&self, product: &str, review: &str, label: Label) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.render_system(product).trim_end()),
            ChatMessage::user(self.render_review(product, review, label).trim_end()),
        ]
    }
}

fn slots(template: &str) -> impl Iterator<Item = &str> {
    template
        .split('{')
        .skip(1)
        .filter_map(|s| s.split_once('}').map(|(name, _)| name))
}

/// Single pass so that braces inside substituted values are never re-expanded.
fn render(template: &str, product: &str, review: &str, label: &str) -> String {
    let mut out = String::with_capacity(template.len() + review.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let value = PLACEHOLDERS
            .iter()
            .zip([product, review, label])
            .find(|(name, _)| {
                tail[1..].starts_with(*name) && tail[1 + name.len()..].starts_with('}')
            });
        match value {
            Some((name, v)) => {
                out.push_str(v);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

type CacheKey = (String, Label, String);

/// Renders prompts, calls the client with retries and caches completions by
/// (review id, label, template version).
pub struct LlmExplainer<C> {
    client: C,
    templates: PromptTemplates,
    retries: u32,
    cache: Mutex<HashMap<CacheKey, String>>,
}

impl<C: LlmClient> LlmExplainer<C> {
    pub fn new(client: C, templates: PromptTemplates, retries: u32) -> Self {
        LlmExplainer {
            client,
            templates,
            retries,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn explain(
        &self,
        review: &Review,
        label: Label,
        product_name: &str,
    ) -> Result<Explanation> {
        let key = (review.id.clone(), label, self.templates.version.clone());
        let hit = self.cache.lock().expect("cache lock").get(&key).cloned();
        let text = match hit {
            Some(t) => t,
            None => {
                let messages = self.templates.messages(product_name, &review.text, label);
                let t = self.complete_with_retries(&messages)?;
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(key, t.clone());
                t
            }
        };
        Ok(Explanation {
            review_id: review.id.clone(),
            method: Technique::Llm,
            verdict: label,
            evidence: Evidence::Prose { text },
        })
    }

    fn complete_with_retries(&self, messages: &[ChatMessage]) -> Result<String> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.client.complete(messages) {
                Ok(text) if text.trim().is_empty() => return Err(Error::EmptyCompletion),
                Ok(text) => return Ok(text.trim().to_string()),
                Err(Error::Transport { message, .. }) => last = message,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Transport {
            message: last,
            retries: self.retries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_key_env")]
    pub key_env: String,
}

fn default_timeout() -> u64 {
    60
}

fn default_key_env() -> String {
    LLM_KEY_ENV.to_string()
}

/// Client for OpenAI-compatible chat-completion endpoints.
///
/// The bearer token is read from `key_env` at construction; when the variable
/// is unset no `Authorization` header is sent.
pub struct HttpLlmClient {
    config: HttpLlmConfig,
    key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpLlmClient {
    pub fn new(config: HttpLlmConfig) -> Self {
        let key = std::env::var(&config.key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpLlmClient { config, key, agent }
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let transport = |message: String| Error::Transport {
            message,
            retries: 0,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(CompletionRequest {
                model: &self.config.model,
                messages,
                temperature: self.config.temperature,
            })
            .map_err(|e| transport(e.to_string()))?;
        let body: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport(e.to_string()))?;
        Ok(body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Returns the rendered per-review prompt.
    Echo,
    /// Answers by exact per-review prompt; unknown prompts are a `NotFound` error.
    Recorded(BTreeMap<String, String>),
    /// Every call is a transport failure.
    Failing,
    /// Every call returns whitespace.
    Empty,
}

/// Offline client for tests and demos; counts calls.
#[derive(Debug)]
pub struct MockLlmClient {
    mode: MockMode,
    calls: AtomicUsize,
}

impl MockLlmClient {
    pub fn new(mode: MockMode) -> Self {
        MockLlmClient {
            mode,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn echo() -> Self {
        Self::new(MockMode::Echo)
    }

    /// Loads a JSON object mapping per-review prompts to completions.
    pub fn recorded_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::new(MockMode::Recorded(map)))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for MockLlmClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        match &self.mode {
            MockMode::Echo => Ok(prompt.to_string()),
            MockMode::Recorded(map) => map
                .get(prompt)
                .cloned()
                .ok_or_else(|| Error::NotFound("no recorded completion for prompt".into())),
            MockMode::Failing => Err(Error::Transport {
                message: "mock backend unavailable".into(),
                retries: 0,
            }),
            MockMode::Empty => Ok("  \n".into()),
        }
    }
}
