//! Turning free-text gesture requests into cost programs with a chat model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use dexhand_core::gesture::{CostProgram, Exemplar, ParseError, GRAMMAR};
use dexhand_core::hand::HandConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Serve canned replies and never touch the network.
    pub offline: bool,
    /// Directory of `<request>.txt` replies used in offline mode.
    pub canned_dir: Option<PathBuf>,
    pub temperature: f64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            offline: true,
            canned_dir: None,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("server answered with status {0}")]
    Status(u16),
    #[error("malformed server reply: {0}")]
    BadResponse(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("no canned reply for request '{0}'")]
    NoCanned(String),
    #[error("need at least 2 exemplars, got {0}")]
    TooFewExemplars(usize),
    #[error("reply still unparseable after a retry: {error}")]
    Unparseable { reply: String, error: ParseError },
    #[error("canned replies: {0}")]
    Canned(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    fn new(role: &str, content: String) -> Self {
        Self { role: role.into(), content }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

/// Something that answers chat requests.
pub trait Transport {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(cfg: &LlmClientConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| LlmError::MissingKey(cfg.api_key_env.clone()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => LlmError::Timeout,
                ureq::Error::StatusCode(c) => LlmError::Status(c),
                e => LlmError::Network(e.to_string()),
            })?;
        let body: ChatResponse = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            e => LlmError::BadResponse(e.to_string()),
        })?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices".into()))
    }
}

/// Offline replies keyed by normalised request text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Canned {
    replies: BTreeMap<String, String>,
}

fn key(request: &str) -> String {
    request
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() || c == '-' { '_' } else { c })
        .collect()
}

impl Canned {
    /// One fenced reply per built-in exemplar of `hand`.
    pub fn builtin(hand: &HandConfig) -> Self {
        let mut c = Self::default();
        for ex in Exemplar::ALL {
            if let Ok(src) = ex.source(hand) {
                c.insert(ex.name(), &format!("```\n{src}\n```"));
            }
        }
        c
    }

    pub fn insert(&mut self, request: &str, reply: &str) {
        self.replies.insert(key(request), reply.into());
    }

    /// Adds every `*.txt` file of `dir`, keyed by file stem.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), LlmError> {
        let entries = fs::read_dir(dir).map_err(|e| LlmError::Canned(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.extension().is_some_and(|e| e == "txt") {
                let text = fs::read_to_string(&p).map_err(|e| LlmError::Canned(format!("{}: {e}", p.display())))?;
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                self.insert(stem, &text);
            }
        }
        Ok(())
    }

    pub fn get(&self, request: &str) -> Option<&str> {
        self.replies.get(&key(request)).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExemplar {
    pub description: String,
    pub source: String,
}

impl PromptExemplar {
    pub fn builtin(ex: Exemplar, hand: &HandConfig) -> dexhand_core::Result<Self> {
        Ok(Self {
            description: ex.description().into(),
            source: ex.source(hand)?,
        })
    }
}

pub fn system_prompt(hand: &HandConfig, exemplars: &[PromptExemplar]) -> String {
    let mut s = String::new();
    s.push_str("You write cost functions for a simulated robot hand. A planner moves the fingers to make the cost as small as possible, ");
    s.push_str("so the cost must be lowest when the hand forms the requested gesture.\n\n");
    s.push_str(&format!("Hand: {} with {} fingers.\n", hand.name, hand.num_fingers));
    for i in 0..hand.num_fingers {
        let name = hand.finger_names.get(i).map_or("", String::as_str);
        s.push_str(&format!("  finger {i} {name}"));
        if let Some(d) = hand.extension_dirs.get(i) {
            s.push_str(&format!(", points along [{}, {}, {}] when straight", d[0], d[1], d[2]));
        }
        s.push('\n');
    }
    s.push_str("\nLanguage:\n");
    s.push_str(GRAMMAR);
    s.push_str("\n\nExamples:\n");
    for ex in exemplars {
        s.push_str(&format!("Gesture: {}\n```\n{}\n```\n", ex.description, ex.source));
    }
    s.push_str("\nAnswer with one expression inside a single ``` block and nothing else.");
    s
}

/// Body of the first fenced block, or the whole reply when there is none.
pub fn extract_program(reply: &str) -> &str {
    let Some(open) = reply.find("```") else {
        return reply.trim();
    };
    let rest = &reply[open + 3..];
    let first_line = rest.split('\n').next().unwrap_or_default();
    if let Some(close) = first_line.find("```") {
        return first_line[..close].trim();
    }
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match body.find("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub program: CostProgram,
    pub reply: String,
    pub attempts: usize,
}

/// Asks for a program; a reply that does not parse is sent back once with
/// the error attached. Offline mode answers from `canned` and never calls
/// `transport`.
pub fn generate_cost(
    request: &str,
    exemplars: &[PromptExemplar],
    hand: &HandConfig,
    cfg: &LlmClientConfig,
    transport: &dyn Transport,
    canned: &Canned,
) -> Result<Generated, LlmError> {
    if exemplars.len() < 2 {
        return Err(LlmError::TooFewExemplars(exemplars.len()));
    }
    let system = system_prompt(hand, exemplars);
    let mut user = format!("Gesture: {request}");
    let mut last_error = None;
    for attempt in 1..=2 {
        let req = ChatRequest {
            model: cfg.model.clone(),
            messages: vec![Message::new("system", system.clone()), Message::new("user", user.clone())],
            temperature: cfg.temperature,
        };
        let reply = if cfg.offline {
            canned.get(request).ok_or_else(|| LlmError::NoCanned(request.into()))?.to_string()
        } else {
            transport.complete(&req)?
        };
        match CostProgram::for_hand(extract_program(&reply), hand) {
            Ok(program) => {
                return Ok(Generated {
                    program,
                    reply,
                    attempts: attempt,
                })
            }
            Err(e) => {
                user = format!("Gesture: {request}\n\nYour previous answer was rejected: {e}. Send a corrected expression.");
                last_error = Some((reply, e));
            }
        }
    }
    let (reply, error) = last_error.expect("two failed attempts");
    Err(LlmError::Unparseable { reply, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_is_extracted() {
        assert_eq!(extract_program("Sure:\n```text\nnorm(tip(0) - tip(1))\n```\nDone"), "norm(tip(0) - tip(1))");
        assert_eq!(extract_program("  2.5 \n"), "2.5");
        assert_eq!(extract_program("```\n1\n```\n```\n2\n```"), "1");
        assert_eq!(extract_program("```tip(0).x```\nbye"), "tip(0).x");
    }

    #[test]
    fn keys_are_normalised() {
        let mut c = Canned::default();
        c.insert("Thumb Up", "x");
        assert_eq!(c.get("thumb-up"), Some("x"));
        assert_eq!(c.get(" THUMB_UP "), Some("x"));
    }
}
