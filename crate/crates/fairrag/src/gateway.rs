//! Uniform chat-completion interface over three model tiers.
//!
//! Two backends: a live HTTP chat-completion endpoint and a deterministic
//! scripted backend for desk-scale verification. The gateway owns routing
//! (agent role → tier), token accounting, and per-call cost annotation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{Accounting, ModelTier, QueryClass};
use crate::econ::CostModel;
use crate::error::{Error, Result};
use crate::ingest::Tokenizer;

/// Pipeline stages that invoke the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Validator,
    Decomposer,
    Filter,
    Sea,
    Refiner,
    Generator,
    DirectAnswer,
}

/// Role → tier map. Total over all roles; the generator additionally
/// keys on the triage class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub validator: ModelTier,
    pub decomposer: ModelTier,
    pub filter: ModelTier,
    pub sea: ModelTier,
    pub refiner: ModelTier,
    pub generator_small: ModelTier,
    pub generator_large: ModelTier,
    pub generator_reasoner: ModelTier,
    pub direct_answer: ModelTier,
}

impl Default for RoutingTable {
    fn default() -> Self {
        RoutingTable {
            validator: ModelTier::Large,
            decomposer: ModelTier::Small,
            filter: ModelTier::Large,
            sea: ModelTier::Small,
            refiner: ModelTier::Large,
            generator_small: ModelTier::Small,
            generator_large: ModelTier::Large,
            generator_reasoner: ModelTier::Reasoner,
            direct_answer: ModelTier::Small,
        }
    }
}

impl RoutingTable {
    /// Every role pinned to one tier, as in the static ablations.
    pub fn static_tier(tier: ModelTier) -> Self {
        RoutingTable {
            validator: tier,
            decomposer: tier,
            filter: tier,
            sea: tier,
            refiner: tier,
            generator_small: tier,
            generator_large: tier,
            generator_reasoner: tier,
            direct_answer: tier,
        }
    }

    pub fn route(&self, role: AgentRole, class: Option<QueryClass>) -> ModelTier {
        match role {
            AgentRole::Validator => self.validator,
            AgentRole::Decomposer => self.decomposer,
            AgentRole::Filter => self.filter,
            AgentRole::Sea => self.sea,
            AgentRole::Refiner => self.refiner,
            AgentRole::DirectAnswer => self.direct_answer,
            AgentRole::Generator => match class {
                Some(QueryClass::ValidSmall) => self.generator_small,
                Some(QueryClass::ValidReasoner) => self.generator_reasoner,
                _ => self.generator_large,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub tier: ModelTier,
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Raw backend output; usage is absent when the backend does not report it.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    pub usage: Option<(u64, u64)>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<BackendResponse>;
}

/// One canned response, matched against the prompt by substring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
}

/// Deterministic backend: rules are consumed in order, matched by
/// substring over the prompt. A request no remaining rule matches is an
/// error naming the prompt head.
pub struct ScriptedBackend {
    rules: Mutex<Vec<Option<ScriptRule>>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend {
            rules: Mutex::new(rules.into_iter().map(Some).collect()),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut rules = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line).map_err(|e| Error::CorpusSchema {
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(ScriptedBackend::new(rules))
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<BackendResponse> {
        let mut rules = self.rules.lock().unwrap();
        for slot in rules.iter_mut() {
            if let Some(rule) = slot {
                if req.prompt.contains(&rule.pattern) {
                    let response = rule.response.clone();
                    *slot = None;
                    return Ok(BackendResponse {
                        text: response,
                        usage: None,
                    });
                }
            }
        }
        Err(Error::ScriptedRuleMiss {
            prompt_head: req.prompt.chars().take(80).collect(),
        })
    }
}

/// Live chat-completion backend speaking the common JSON body
/// {model, messages, temperature, max_tokens}.
pub struct HttpBackend {
    base_url: String,
    models: HashMap<ModelTier, String>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    max_attempts: u32,
}

impl HttpBackend {
    pub fn new(
        base_url: String,
        models: HashMap<ModelTier, String>,
        api_key: Option<String>,
    ) -> Self {
        HttpBackend {
            base_url,
            models,
            api_key,
            client: reqwest::blocking::Client::new(),
            max_attempts: 3,
        }
    }
}

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
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<BackendResponse> {
        let model = self.models.get(&req.tier).ok_or_else(|| {
            Error::Config(format!("no model configured for tier {}", req.tier))
        })?;
        let body = WireRequest {
            model,
            messages: vec![WireMessage {
                role: "user",
                content: &req.prompt,
            }],
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        };
        let mut last_err = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                // backoff 1s/2s/4s
                std::thread::sleep(Duration::from_secs(1 << (attempt - 1)));
            }
            let mut request = self.client.post(&self.base_url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_err = format!("status {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(Error::BackendStatus {
                            status: status.as_u16(),
                            message: resp.text().unwrap_or_default(),
                        });
                    }
                    let wire: WireResponse = resp.json().map_err(|e| Error::Config(format!(
                        "malformed backend response: {e}"
                    )))?;
                    let choice = wire.choices.into_iter().next().ok_or_else(|| {
                        Error::Config("backend returned no choices".to_string())
                    })?;
                    return Ok(BackendResponse {
                        text: choice.message.content,
                        usage: wire.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
                    });
                }
                Err(e) => {
                    last_err = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            attempts: self.max_attempts,
            message: last_err,
        })
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
struct InflightCap {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InflightCap {
    fn new(cap: usize) -> Self {
        InflightCap {
            available: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

/// Chat gateway: routes, calls the backend, and records accounting into
/// the caller's trace context.
pub struct Gateway {
    backend: Box<dyn Backend>,
    routing: RoutingTable,
    cost: CostModel,
    tokenizer: Box<dyn Tokenizer>,
    max_output_tokens: u32,
    temperature: f64,
    cap: InflightCap,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, routing: RoutingTable, cost: CostModel) -> Self {
        Gateway {
            backend,
            routing,
            cost,
            tokenizer: Box::new(crate::ingest::WordTokenizer),
            max_output_tokens: 2048,
            temperature: 0.0,
            cap: InflightCap::new(8),
        }
    }

    pub fn with_inflight_cap(mut self, cap: usize) -> Self {
        self.cap = InflightCap::new(cap);
        self
    }

    pub fn routing(&self) -> &RoutingTable {
        &self.routing
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    /// Complete one agent call and accumulate counters into `acct`.
    /// Backend usage wins over local counting when both exist.
    pub fn complete(
        &self,
        role: AgentRole,
        class: Option<QueryClass>,
        prompt: String,
        acct: &mut Accounting,
    ) -> Result<ChatResponse> {
        let tier = self.routing.route(role, class);
        self.complete_with_tier(tier, prompt, acct)
    }

    /// Complete a call on an explicit tier, bypassing role routing. Used
    /// by the evaluation judges, which are not pipeline roles.
    pub fn complete_with_tier(
        &self,
        tier: ModelTier,
        prompt: String,
        acct: &mut Accounting,
    ) -> Result<ChatResponse> {
        if prompt.is_empty() {
            return Err(Error::Config("empty prompt".to_string()));
        }
        let req = ChatRequest {
            tier,
            prompt,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        };
        self.cap.acquire();
        let result = self.backend.complete(&req);
        self.cap.release();
        let raw = result?;
        let (prompt_tokens, completion_tokens) = raw.usage.unwrap_or_else(|| {
            (
                self.tokenizer.count(&req.prompt) as u64,
                self.tokenizer.count(&raw.text) as u64,
            )
        });
        acct.api_calls += 1;
        acct.prompt_tokens += prompt_tokens;
        acct.completion_tokens += completion_tokens;
        acct.cost_usd += self.cost.call_cost(tier, prompt_tokens, completion_tokens);
        Ok(ChatResponse {
            text: raw.text,
            prompt_tokens,
            completion_tokens,
        })
    }
}
