//! Pluggable decision backends.
//!
//! All agent decisions flow through [`DecisionBackend`]: a deterministic
//! [`MockBackend`] for desk-scale runs, and a provider-agnostic
//! chat-completion HTTP client ([`RemoteBackend`]) for real language
//! models. Both satisfy the same response contract (role-legal actions,
//! token counts present), so simulations are backend-agnostic.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ActionKind, Stance};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
}

/// The prompt families a backend can be asked to answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    DiffuserAction,
    VerifierAction,
    Distill,
    Consolidate,
    Decompose,
    PolicyReflect,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::DiffuserAction,
        PromptKind::VerifierAction,
        PromptKind::Distill,
        PromptKind::Consolidate,
        PromptKind::Decompose,
        PromptKind::PolicyReflect,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::DiffuserAction => "diffuser-action",
            PromptKind::VerifierAction => "verifier-action",
            PromptKind::Distill => "distill",
            PromptKind::Consolidate => "consolidate",
            PromptKind::Decompose => "decompose",
            PromptKind::PolicyReflect => "policy-reflect",
        }
    }
}

/// Structured digest of the agent state behind a request. The mock backend
/// decides from this alone; the remote backend only reads the prompt.
#[derive(Debug, Clone)]
pub enum RequestContext {
    DiffuserAction {
        /// cosine(persona embedding, news embedding)
        persona_news_cos: f64,
        /// similarities of the top short-term memory retrievals (up to 3)
        stm_top_sims: Vec<f64>,
        /// a warning record is present in short-term memory
        warning_seen: bool,
        /// cosine sign context used for the mock stance rule
        news_head: String,
    },
    VerifierAction {
        keyword_hit: bool,
        policy_hit: bool,
    },
    DistillGenerate {
        profile_text: String,
    },
    DistillRefine {
        profile_text: String,
        nearest_comment: String,
    },
    Consolidate {
        record_texts: Vec<String>,
    },
    Decompose {
        news_text: String,
    },
    PolicyReflect {
        entity_key: String,
        truth_label: String,
    },
}

impl RequestContext {
    pub fn kind(&self) -> PromptKind {
        match self {
            RequestContext::DiffuserAction { .. } => PromptKind::DiffuserAction,
            RequestContext::VerifierAction { .. } => PromptKind::VerifierAction,
            RequestContext::DistillGenerate { .. } | RequestContext::DistillRefine { .. } => {
                PromptKind::Distill
            }
            RequestContext::Consolidate { .. } => PromptKind::Consolidate,
            RequestContext::Decompose { .. } => PromptKind::Decompose,
            RequestContext::PolicyReflect { .. } => PromptKind::PolicyReflect,
        }
    }
}

/// A fully-substituted prompt plus the structured context it was built
/// from. Constructors in [`prompts`] guarantee no placeholder survives.
#[derive(Debug, Clone)]
pub struct DecisionRequest {
    pub kind: PromptKind,
    pub agent_id: String,
    pub prompt: String,
    pub context: RequestContext,
}

impl DecisionRequest {
    pub fn new(agent_id: impl Into<String>, prompt: String, context: RequestContext) -> Self {
        DecisionRequest {
            kind: context.kind(),
            agent_id: agent_id.into(),
            prompt,
            context,
        }
    }

    /// Legal actions for the request's role.
    pub fn legal_actions(&self) -> &'static [ActionKind] {
        match self.kind {
            PromptKind::DiffuserAction => &[
                ActionKind::Comment,
                ActionKind::Forward,
                ActionKind::Like,
                ActionKind::View,
            ],
            PromptKind::VerifierAction => &[
                ActionKind::Comment,
                ActionKind::Forward,
                ActionKind::Like,
                ActionKind::View,
                ActionKind::FactCheck,
                ActionKind::Warn,
            ],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecisionResponse {
    /// Chosen action for action prompts; `None` for text prompts.
    pub action: Option<ActionKind>,
    /// Completion text: generated comment, summary, decomposition, etc.
    pub text: String,
    pub stance: Option<Stance>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// True when an illegal remote action string was coerced to `view`.
    pub coerced: bool,
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// A decision policy. Implementations must be deterministic given the
/// request and the caller-owned RNG stream.
pub trait DecisionBackend {
    fn decide(
        &self,
        req: &DecisionRequest,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionResponse, BackendError>;
}

fn uniform01(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Decision thresholds for the mock diffuser rule; score components are
/// weighted 0.6 persona-news similarity, 0.3 mean short-term retrieval
/// similarity, 0.1 seeded jitter.
#[derive(Debug, Clone)]
pub struct MockThresholds {
    pub forward: f64,
    pub comment: f64,
    pub like: f64,
}

impl Default for MockThresholds {
    fn default() -> Self {
        MockThresholds { forward: 0.55, comment: 0.45, like: 0.35 }
    }
}

/// Deterministic stand-in for a language model. Every reply is a pure
/// function of the request digest and the agent's RNG stream; token counts
/// are whitespace-token counts of prompt and completion.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub thresholds: MockThresholds,
}

impl MockBackend {
    pub fn new() -> MockBackend {
        MockBackend::default()
    }

    pub fn with_thresholds(thresholds: MockThresholds) -> MockBackend {
        MockBackend { thresholds }
    }

    fn respond(&self, req: &DecisionRequest, action: Option<ActionKind>, text: String, stance: Option<Stance>) -> DecisionResponse {
        DecisionResponse {
            prompt_tokens: whitespace_tokens(&req.prompt),
            completion_tokens: whitespace_tokens(&text).max(1),
            action,
            stance,
            text,
            coerced: false,
        }
    }
}

/// First `n` whitespace tokens of a text, joined back with single spaces.
fn head_tokens(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Lowercased, whitespace-collapsed text, capped at `n` tokens.
pub fn normalize_snippet(text: &str, n: usize) -> String {
    text.split_whitespace()
        .take(n)
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Buckets the tokens of a text into entity / event / topic sub-queries.
/// Entities are capitalized tokens, events are lowercase tokens with
/// verb-like suffixes, topics are the rest; duplicates keep their first
/// occurrence only.
pub fn decompose_buckets(text: &str) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut entity = Vec::new();
    let mut event = Vec::new();
    let mut topic = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        if !seen.insert(token.to_lowercase()) {
            continue;
        }
        let first_upper = token.chars().next().is_some_and(|c| c.is_uppercase());
        let lower = token.to_lowercase();
        if first_upper {
            entity.push(token.to_string());
        } else if lower.ends_with("ing") || lower.ends_with("ed") || lower.ends_with("es") || lower.ends_with('s') {
            event.push(token.to_string());
        } else {
            topic.push(token.to_string());
        }
    }
    (entity, event, topic)
}

impl DecisionBackend for MockBackend {
    fn decide(
        &self,
        req: &DecisionRequest,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionResponse, BackendError> {
        match &req.context {
            RequestContext::DiffuserAction {
                persona_news_cos,
                stm_top_sims,
                warning_seen,
                news_head,
            } => {
                // A visible warning suppresses engagement outright.
                if *warning_seen {
                    return Ok(self.respond(req, Some(ActionKind::View), "view".into(), None));
                }
                let mem = if stm_top_sims.is_empty() {
                    0.0
                } else {
                    stm_top_sims.iter().take(3).sum::<f64>() / stm_top_sims.len().min(3) as f64
                };
                let jitter = uniform01(rng);
                let score = 0.6 * persona_news_cos + 0.3 * mem + 0.1 * jitter;
                let t = &self.thresholds;
                let action = if score > t.forward {
                    ActionKind::Forward
                } else if score > t.comment {
                    ActionKind::Comment
                } else if score > t.like {
                    ActionKind::Like
                } else {
                    ActionKind::View
                };
                let (text, stance) = match action {
                    ActionKind::Comment => {
                        let stance = if *persona_news_cos >= 0.35 {
                            Stance::Pos
                        } else if *persona_news_cos >= 0.15 {
                            Stance::Neu
                        } else {
                            Stance::Neg
                        };
                        let word = match stance {
                            Stance::Pos => "agree",
                            Stance::Neu => "unsure",
                            Stance::Neg => "doubt",
                        };
                        (format!("comment {word} about {news_head}"), Some(stance))
                    }
                    other => (other.as_str().to_string(), None),
                };
                Ok(self.respond(req, Some(action), text, stance))
            }
            RequestContext::VerifierAction { keyword_hit, policy_hit } => {
                if *keyword_hit || *policy_hit {
                    Ok(self.respond(
                        req,
                        Some(ActionKind::Warn),
                        "warn this claim fails verification".into(),
                        Some(Stance::Neg),
                    ))
                } else {
                    Ok(self.respond(req, Some(ActionKind::Forward), "forward".into(), None))
                }
            }
            RequestContext::DistillGenerate { profile_text } => {
                // The persona "speaks like its profile": echo it back.
                let text = profile_text.clone();
                Ok(self.respond(req, None, text, None))
            }
            RequestContext::DistillRefine { profile_text, nearest_comment } => {
                let text = format!("{profile_text} | notes: {}", normalize_snippet(nearest_comment, 12));
                Ok(self.respond(req, None, text, None))
            }
            RequestContext::Consolidate { record_texts } => {
                let digest = record_texts
                    .iter()
                    .map(|t| head_tokens(t, 6))
                    .collect::<Vec<_>>()
                    .join(" / ");
                Ok(self.respond(req, None, format!("digest: {digest}"), None))
            }
            RequestContext::Decompose { news_text } => {
                let (entity, event, topic) = decompose_buckets(news_text);
                let text = format!(
                    "entity: {}\nevent: {}\ntopic: {}",
                    entity.join(" "),
                    event.join(" "),
                    topic.join(" ")
                );
                Ok(self.respond(req, None, text, None))
            }
            RequestContext::PolicyReflect { entity_key, truth_label } => {
                let text = format!("entity|{entity_key}|misjudged: {truth_label}");
                Ok(self.respond(req, None, text, None))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completion backend
// ---------------------------------------------------------------------------

/// Provider-agnostic chat-completion settings. The API key is read from
/// `api_key_env` at call time; it never appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteBackendConfig {
    pub endpoint_url: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
}

impl Default for RemoteBackendConfig {
    fn default() -> Self {
        RemoteBackendConfig {
            endpoint_url: String::new(),
            model: "default".into(),
            api_key_env: "EARLYCAST_API_KEY".into(),
            temperature: 0.7,
            top_p: 0.9,
            max_retries: 3,
            retry_base_ms: 200,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

/// HTTP JSON chat-completion client with bounded exponential-backoff
/// retries. Action prompts are answered by the first token of the final
/// nonempty completion line; an illegal action string is coerced to
/// `view` and flagged.
pub struct RemoteBackend {
    pub config: RemoteBackendConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteBackendConfig) -> RemoteBackend {
        RemoteBackend {
            client: reqwest::blocking::Client::new(),
            config,
        }
    }

    fn post_once(&self, prompt: &str) -> Result<ChatResponse, String> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
            top_p: self.config.top_p,
        };
        let mut request = self.client.post(&self.config.endpoint_url).json(&body);
        if let Ok(token) = std::env::var(&self.config.api_key_env) {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("endpoint returned {status}"));
        }
        response.json::<ChatResponse>().map_err(|e| e.to_string())
    }

    fn post_with_retries(&self, prompt: &str) -> Result<ChatResponse, BackendError> {
        let attempts = self.config.max_retries.max(1);
        let mut last_err = String::new();
        for attempt in 0..attempts {
            match self.post_once(prompt) {
                Ok(resp) => return Ok(resp),
                Err(message) => {
                    last_err = message;
                    if attempt + 1 < attempts {
                        let backoff = self.config.retry_base_ms.saturating_mul(1 << attempt);
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(BackendError::Transport { attempts, message: last_err })
    }
}

fn parse_action_line(text: &str, legal: &[ActionKind]) -> (ActionKind, bool) {
    let line = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_lowercase();
    let token = line
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .find(|t| !t.is_empty())
        .unwrap_or("");
    for action in legal {
        if token == action.as_str() {
            return (*action, false);
        }
    }
    (ActionKind::View, true)
}

fn parse_stance_line(text: &str) -> Option<Stance> {
    for line in text.lines() {
        let lower = line.trim().to_lowercase();
        if let Some(rest) = lower.strip_prefix("stance:") {
            return match rest.trim() {
                "pos" | "positive" => Some(Stance::Pos),
                "neu" | "neutral" => Some(Stance::Neu),
                "neg" | "negative" => Some(Stance::Neg),
                _ => None,
            };
        }
    }
    None
}

impl DecisionBackend for RemoteBackend {
    fn decide(
        &self,
        req: &DecisionRequest,
        _rng: &mut dyn RngCore,
    ) -> Result<DecisionResponse, BackendError> {
        let response = self.post_with_retries(&req.prompt)?;
        let choice = response
            .choices
            .first()
            .ok_or_else(|| BackendError::BadResponse("no choices".into()))?;
        let text = choice.message.content.clone();
        let (prompt_tokens, completion_tokens) = match &response.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (whitespace_tokens(&req.prompt), whitespace_tokens(&text)),
        };
        let (action, stance, coerced) = match req.kind {
            PromptKind::DiffuserAction | PromptKind::VerifierAction => {
                let (action, coerced) = parse_action_line(&text, req.legal_actions());
                (Some(action), parse_stance_line(&text), coerced)
            }
            _ => (None, None, false),
        };
        Ok(DecisionResponse { action, text, stance, prompt_tokens, completion_tokens, coerced })
    }
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

/// Filled prompt builders for every request family. All placeholders are
/// substituted through `format!`, so a built prompt never carries a
/// template marker.
pub mod prompts {
    use crate::corpus::ActionKind;

    fn action_list(actions: &[ActionKind]) -> String {
        actions.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
    }

    pub fn diffuser_action(
        persona: &str,
        news: &str,
        stm_digest: &str,
        ltm_digest: &str,
        actions: &[ActionKind],
    ) -> String {
        format!(
            "Persona: {persona}\nA friend shared this news with you: {news}\n\
             Recent interactions you remember: {stm_digest}\n\
             Older knowledge that seems related: {ltm_digest}\n\
             Pick exactly one reaction from [{}] and answer with that word on the last line.",
            action_list(actions)
        )
    }

    pub fn verifier_action(
        persona: &str,
        news: &str,
        policy_digest: &str,
        fact_check_digest: &str,
        actions: &[ActionKind],
    ) -> String {
        format!(
            "Persona: {persona}\nYou review claims for accuracy on a social network.\n\
             Claim under review: {news}\n\
             Your judgment policies: {policy_digest}\n\
             Fact-check notes: {fact_check_digest}\n\
             If the claim looks false, respond with warn to caution your followers.\n\
             Pick exactly one reaction from [{}] and answer with that word on the last line.",
            action_list(actions)
        )
    }

    pub fn distill_generate(profile: &str) -> String {
        format!(
            "Persona profile: {profile}\n\
             Write one short comment this person would plausibly post about a news story."
        )
    }

    pub fn distill_refine(profile: &str, generated: &str, conflicting_evidence: &str) -> String {
        format!(
            "Persona profile: {profile}\n\
             A comment written in this persona's voice was: {generated}\n\
             It disagrees with what the persona's real comments look like: {conflicting_evidence}\n\
             Explain the mismatch briefly, then output a revised persona profile."
        )
    }

    pub fn consolidate(records: &[String]) -> String {
        format!(
            "Summarize these recent social interactions into one compact note, \
             keeping the main events and opinions:\n{}",
            records.join("\n")
        )
    }

    pub fn decompose(news: &str) -> String {
        format!(
            "Split the following news into three query lines, formatted as \
             'entity: ...', 'event: ...', 'topic: ...':\n{news}"
        )
    }

    pub fn policy_reflect(
        news: &str,
        policy_digest: &str,
        social_context: &str,
        truth_label: &str,
        trace: &str,
    ) -> String {
        format!(
            "News: {news}\nYour judgment policies: {policy_digest}\n\
             Social context: {social_context}\nYour reasoning was: {trace}\n\
             The verified label is: {truth_label}. Your call did not match it.\n\
             Walk through where the reasoning went wrong step by step, then emit revised \
             policy rules, one per line, formatted as level|key|guidance where level is \
             entity, event, or meta."
        )
    }
}

// ---------------------------------------------------------------------------
// Token ledger
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl LedgerRow {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Per-prompt-kind running token totals. Totals only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    rows: BTreeMap<PromptKind, LedgerRow>,
}

impl TokenLedger {
    pub fn new() -> TokenLedger {
        TokenLedger::default()
    }

    pub fn record(&mut self, kind: PromptKind, prompt_tokens: u64, completion_tokens: u64) {
        let row = self.rows.entry(kind).or_default();
        row.calls += 1;
        row.prompt_tokens += prompt_tokens;
        row.completion_tokens += completion_tokens;
    }

    pub fn record_response(&mut self, kind: PromptKind, resp: &DecisionResponse) {
        self.record(kind, resp.prompt_tokens, resp.completion_tokens);
    }

    pub fn row(&self, kind: PromptKind) -> LedgerRow {
        self.rows.get(&kind).copied().unwrap_or_default()
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (kind, row) in &other.rows {
            let mine = self.rows.entry(*kind).or_default();
            mine.calls += row.calls;
            mine.prompt_tokens += row.prompt_tokens;
            mine.completion_tokens += row.completion_tokens;
        }
    }

    pub fn grand_total(&self) -> LedgerRow {
        let mut total = LedgerRow::default();
        for row in self.rows.values() {
            total.calls += row.calls;
            total.prompt_tokens += row.prompt_tokens;
            total.completion_tokens += row.completion_tokens;
        }
        total
    }

    /// Fixed-column text table: kind, calls, prompt, completion, total,
    /// with one row per prompt kind (zeros included) plus a grand total.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>14} {:>18} {:>10}\n",
            "prompt-kind", "calls", "prompt-tokens", "completion-tokens", "total"
        ));
        for kind in PromptKind::ALL {
            let row = self.row(kind);
            out.push_str(&format!(
                "{:<16} {:>8} {:>14} {:>18} {:>10}\n",
                kind.as_str(),
                row.calls,
                row.prompt_tokens,
                row.completion_tokens,
                row.total()
            ));
        }
        let total = self.grand_total();
        out.push_str(&format!(
            "{:<16} {:>8} {:>14} {:>18} {:>10}\n",
            "total",
            total.calls,
            total.prompt_tokens,
            total.completion_tokens,
            total.total()
        ));
        out
    }
}
