use std::fmt;
use std::sync::LazyLock;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Level, Result};

/// Rule-based intra-step perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraRule {
    /// `a - b` ↔ `a + b`.
    SignFlip,
    /// `a - b` → `b - a`, `a / b` → `b / a`.
    OperandSwap,
    /// Drops an `or …` alternative, a `±`, or the equality of a non-strict bound.
    DroppedCase,
    /// Shifts one integer by one. Used when no configured rule applies.
    NumberShift,
    /// Appends an unjustified restriction. Used when nothing else applies.
    MistakenAssumption,
}

impl IntraRule {
    pub const fn as_str(self) -> &'static str {
        match self {
            IntraRule::SignFlip => "sign_flip",
            IntraRule::OperandSwap => "operand_swap",
            IntraRule::DroppedCase => "dropped_case",
            IntraRule::NumberShift => "number_shift",
            IntraRule::MistakenAssumption => "mistaken_assumption",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopTheme {
    ModChecks,
    Bounds,
    SymmetryObservations,
    EquivalentReformulations,
}

impl LoopTheme {
    pub const ALL: [LoopTheme; 4] =
        [LoopTheme::ModChecks, LoopTheme::Bounds, LoopTheme::SymmetryObservations, LoopTheme::EquivalentReformulations];

    pub const fn as_str(self) -> &'static str {
        match self {
            LoopTheme::ModChecks => "mod_checks",
            LoopTheme::Bounds => "bounds",
            LoopTheme::SymmetryObservations => "symmetry_observations",
            LoopTheme::EquivalentReformulations => "equivalent_reformulations",
        }
    }
}

/// A rewritten step and what was done to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub text: String,
    /// Clause of `text` that carries the change.
    pub span: String,
    /// Rule or remote error type (intra), or `stagnation_loop` (inter).
    pub error_type: String,
    pub theme: Option<LoopTheme>,
    pub paragraphs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Candidate intra rules; one applicable rule is drawn per sample.
    pub intra_rules: Vec<IntraRule>,
    pub loop_themes: Vec<LoopTheme>,
    /// Loop paragraphs appended at inter level, 3 to 5.
    pub loop_paragraphs: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            intra_rules: vec![IntraRule::SignFlip, IntraRule::OperandSwap, IntraRule::DroppedCase],
            loop_themes: LoopTheme::ALL.to_vec(),
            loop_paragraphs: 3,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3..=5).contains(&self.loop_paragraphs) {
            return Err(Error::Config(format!("loop_paragraphs must be 3, 4 or 5, got {}", self.loop_paragraphs)));
        }
        if self.loop_themes.is_empty() {
            return Err(Error::Config("loop_themes is empty".into()));
        }
        Ok(())
    }
}

const OPERAND: &str = r"[A-Za-z0-9_^()]+(?:\.[0-9]+)?";

static ADDITIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"({OPERAND}) ([+-]) ({OPERAND})")).unwrap());
static NONCOMMUTATIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"({OPERAND}) ([-/]) ({OPERAND})")).unwrap());
static ALTERNATIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r",? or [^,.;:\n]+").unwrap());
static PLUS_MINUS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"±|\+/-").unwrap());
static NONSTRICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r">=|<=|≥|≤").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// One candidate edit: replace `range` of the input with `with`.
struct Edit {
    range: std::ops::Range<usize>,
    with: String,
}

fn edits(rule: IntraRule, text: &str) -> Vec<Edit> {
    match rule {
        IntraRule::SignFlip => ADDITIVE
            .captures_iter(text)
            .map(|c| {
                let op = c.get(2).unwrap();
                Edit { range: op.range(), with: if op.as_str() == "-" { "+" } else { "-" }.into() }
            })
            .collect(),
        IntraRule::OperandSwap => NONCOMMUTATIVE
            .captures_iter(text)
            .filter(|c| c[1] != c[3])
            .map(|c| Edit { range: c.get(0).unwrap().range(), with: format!("{} {} {}", &c[3], &c[2], &c[1]) })
            .collect(),
        IntraRule::DroppedCase => {
            let mut out: Vec<Edit> = ALTERNATIVE
                .find_iter(text)
                .filter(|m| m.start() > 0)
                .map(|m| Edit { range: m.range(), with: String::new() })
                .collect();
            out.extend(PLUS_MINUS.find_iter(text).map(|m| Edit { range: m.range(), with: "+".into() }));
            out.extend(NONSTRICT.find_iter(text).map(|m| {
                let strict = if matches!(m.as_str(), ">=" | "≥") { ">" } else { "<" };
                Edit { range: m.range(), with: strict.into() }
            }));
            out.sort_by_key(|e| e.range.start);
            out
        }
        IntraRule::NumberShift => INTEGER
            .find_iter(text)
            .map(|m| {
                let with = match m.as_str().parse::<u64>().ok().and_then(|n| n.checked_add(1)) {
                    Some(n) => n.to_string(),
                    None => format!("{}1", m.as_str()),
                };
                Edit { range: m.range(), with }
            })
            .collect(),
        IntraRule::MistakenAssumption => vec![Edit { range: text.len()..text.len(), with: MISTAKEN_ASSUMPTION.into() }],
    }
}

const MISTAKEN_ASSUMPTION: &str = " Only the positive case can occur here, so the others need no further thought.";

/// Clause of `text` around byte `at`, bounded by sentence punctuation or newlines.
fn clause_around(text: &str, at: usize) -> String {
    let mut at = at.min(text.len());
    while !text.is_char_boundary(at) {
        at -= 1;
    }
    let is_break = |c: char| matches!(c, '.' | ';' | '\n' | '!' | '?');
    let start = text[..at].rfind(is_break).map_or(0, |i| i + 1);
    let end = text[at..].find(is_break).map_or(text.len(), |i| at + i);
    let clause = text[start..end].trim();
    if clause.is_empty() { text.trim() } else { clause }.to_string()
}

fn apply(text: &str, edit: &Edit) -> (String, String) {
    let mut out = String::with_capacity(text.len() + edit.with.len());
    out.push_str(&text[..edit.range.start]);
    out.push_str(&edit.with);
    out.push_str(&text[edit.range.end..]);
    let anchor = if edit.with.is_empty() { edit.range.start.saturating_sub(1) } else { edit.range.start + edit.with.len() / 2 };
    let span = clause_around(&out, anchor);
    (out, span)
}

/// Deterministic textual perturbations driven by the caller's RNG.
#[derive(Debug, Clone, Default)]
pub struct RuleRewriter {
    pub config: RuleConfig,
}

impl RuleRewriter {
    pub fn new(config: RuleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn rewrite<R: Rng + ?Sized>(&self, step: &str, level: Level, rng: &mut R) -> Result<Rewrite> {
        match level {
            Level::Intra => Ok(self.intra(step, rng)),
            Level::Inter => Ok(self.inter(step, rng)),
            Level::Inst => Err(Error::InvalidInput("instance level is not rewritten".into())),
        }
    }

    fn intra<R: Rng + ?Sized>(&self, step: &str, rng: &mut R) -> Rewrite {
        let applicable: Vec<(IntraRule, Vec<Edit>)> = self
            .config
            .intra_rules
            .iter()
            .map(|&r| (r, edits(r, step)))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        let (rule, candidates) = if !applicable.is_empty() {
            let pick = rng.random_range(0..applicable.len());
            applicable.into_iter().nth(pick).unwrap()
        } else {
            let shift = edits(IntraRule::NumberShift, step);
            if shift.is_empty() {
                (IntraRule::MistakenAssumption, edits(IntraRule::MistakenAssumption, step))
            } else {
                (IntraRule::NumberShift, shift)
            }
        };
        let edit = &candidates[rng.random_range(0..candidates.len())];
        let (text, span) = apply(step, edit);
        Rewrite { text, span, error_type: rule.as_str().into(), theme: None, paragraphs: 0 }
    }

    fn inter<R: Rng + ?Sized>(&self, step: &str, rng: &mut R) -> Rewrite {
        let theme = *self.config.loop_themes.choose(rng).expect("validated non-empty");
        let n = self.config.loop_paragraphs;
        let bank = loop_bank(theme);
        let mut picks: Vec<usize> = (0..bank.len()).collect();
        let mut text = step.to_string();
        let mut first = String::new();
        for p in 0..n {
            let pick = picks.swap_remove(rng.random_range(0..picks.len()));
            let a = rng.random_range(3..10u32);
            let b = a + rng.random_range(1..6u32);
            let para = bank[pick].replace("{a}", &a.to_string()).replace("{b}", &b.to_string());
            if p == 0 {
                first.clone_from(&para);
            }
            text.push_str("\n\n");
            text.push_str(&para);
        }
        Rewrite { text, span: first, error_type: "stagnation_loop".into(), theme: Some(theme), paragraphs: n }
    }
}

/// Paragraph stems per theme; each bank holds at least five so every paragraph
/// count up to 5 draws distinct stems.
fn loop_bank(theme: LoopTheme) -> &'static [&'static str] {
    match theme {
        LoopTheme::ModChecks => &[
            "Let me look at everything modulo {a}. The residues that survive are the same ones I started with, so that filter removes nothing.",
            "Maybe modulo {b} is sharper. Working it through, every residue class is still possible, which again leaves the search untouched.",
            "Going back to mod {a} once more in case I missed a class. No, the same classes remain and I am where I was.",
            "Combining mod {a} and mod {b} should cut things down. It only reproduces the conditions I already had.",
            "One more residue check, this time on the other expression. It is permissive in exactly the same way.",
        ],
        LoopTheme::Bounds => &[
            "First a bound: the quantity is at most {b}. That restates what I already knew and does not narrow the cases.",
            "Tightening the estimate to {a} needs the same inequality again, so nothing new comes out.",
            "Let me bound it from below instead. The lower bound is trivial and leaves the range as wide as before.",
            "Perhaps a sharper constant helps. Redoing the estimate with {b} in place of {a} gives the identical range.",
            "Returning to the upper bound, I still get the same limit, and the candidates have not changed.",
        ],
        LoopTheme::SymmetryObservations => &[
            "The expression is symmetric, so I can swap the two variables. That halves the bookkeeping but not the problem.",
            "Swapping back, the same condition appears in mirrored form, which I have already examined.",
            "Maybe a sign symmetry helps: replacing each variable with its negative gives the same equation, and the cases stay the same.",
            "Let me use the symmetry to assume an ordering. The reduced case is the original one with relabeled names.",
            "Looking at the symmetry once more, it only confirms that the two halves behave alike.",
        ],
        LoopTheme::EquivalentReformulations => &[
            "Let me rewrite the condition in another form. After simplifying it is the same statement as before.",
            "Maybe moving every term to one side helps. Factoring gives back the expression I began with.",
            "Substituting a shifted variable by {a} looks promising, but expanding it returns the original equation.",
            "Let me write it as a difference instead. That is the previous reformulation with the terms reordered.",
            "Trying one more substitution with {b}, I land on the same constraint in slightly different notation.",
        ],
    }
}

/// Token holder whose `Debug` never shows the value.
#[derive(Clone)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: String) -> Self {
        Self(value)
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Chat-completion URL.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    /// Additional attempts after the first failure.
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub temperature: f64,
    /// Prompt template id: `builtin`, or a directory holding `intra.txt` and `inter.txt`.
    pub prompts: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: String::new(),
            token_env: None,
            retries: 3,
            backoff_ms: 500,
            timeout_ms: 60_000,
            max_in_flight: 8,
            temperature: 0.7,
            prompts: "builtin".into(),
        }
    }
}

/// Error types the remote rewriter is asked to inject.
pub const REMOTE_ERROR_TYPES: [&str; 6] =
    ["dropped_case", "invalid_division", "sign_error", "algebra_simplification_error", "mistaken_assumption", "domain_violation"];

const BUILTIN_INTRA: &str = include_str!("../../fixtures/prompts/intra.txt");
const BUILTIN_INTER: &str = include_str!("../../fixtures/prompts/inter.txt");

/// What the remote rewriter sees for one step.
#[derive(Debug, Clone)]
pub struct RemoteRequest<'a> {
    pub problem: &'a str,
    pub context: &'a [String],
    pub step: &'a str,
    pub level: Level,
    pub error_type: &'a str,
    pub theme: LoopTheme,
    pub paragraphs: usize,
}

/// Chat-completion client for remote rewriting.
#[derive(Debug)]
pub struct RemoteRewriter {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<Secret>,
    config: RemoteConfig,
    intra_prompt: String,
    inter_prompt: String,
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
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl RemoteRewriter {
    /// Resolves the endpoint, token and prompts. A missing endpoint or token
    /// variable is a configuration error.
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| Error::Config("remote rewriter needs an endpoint".into()))?;
        if config.model.trim().is_empty() {
            return Err(Error::Config("remote rewriter needs a model name".into()));
        }
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let token = match &config.token_env {
            Some(var) => Some(Secret::new(
                std::env::var(var).map_err(|_| Error::Config(format!("token variable {var} is not set")))?,
            )),
            None => None,
        };
        let (intra_prompt, inter_prompt) = if config.prompts == "builtin" {
            (BUILTIN_INTRA.to_string(), BUILTIN_INTER.to_string())
        } else {
            let dir = std::path::Path::new(&config.prompts);
            (std::fs::read_to_string(dir.join("intra.txt"))?, std::fs::read_to_string(dir.join("inter.txt"))?)
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self { agent, endpoint, token, config, intra_prompt, inter_prompt })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Fills the prompt template for one request.
    pub fn prompt(&self, req: &RemoteRequest) -> String {
        let template = if req.level == Level::Inter { &self.inter_prompt } else { &self.intra_prompt };
        let context = if req.context.is_empty() { "(none)".to_string() } else { req.context.join("\n\n") };
        template
            .replace("{problem}", req.problem)
            .replace("{context}", &context)
            .replace("{step}", req.step)
            .replace("{error_type}", req.error_type)
            .replace("{error_length}", "short")
            .replace("{loop_theme}", req.theme.as_str())
            .replace("{loop_length_paragraphs}", &req.paragraphs.to_string())
    }

    /// Sends one request with retries; returns the trimmed reply.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
        };
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.send(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(Error::Rewrite(e)),
                Err(Attempt::Retry(e)) => {
                    tracing::warn!(attempt, error = %e, "remote rewrite attempt failed");
                    last = e;
                }
            }
        }
        Err(Error::Rewrite(format!("remote rewrite failed after {} attempts: {last}", self.config.retries + 1)))
    }

    fn send(&self, body: &ChatRequest) -> std::result::Result<String, Attempt> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {}", t.expose()));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => Attempt::Retry(format!("status {code}")),
            ureq::Error::StatusCode(code) => Attempt::Fatal(format!("status {code}")),
            other => Attempt::Retry(other.to_string()),
        })?;
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| Attempt::Retry(format!("malformed response: {e}")))?;
        let content = parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
        let content = content.trim().to_string();
        if content.is_empty() {
            return Err(Attempt::Retry("empty completion".into()));
        }
        Ok(content)
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

/// Rewriter selection as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewriterConfig {
    RuleBased(RuleConfig),
    Remote(RemoteConfig),
}

impl Default for RewriterConfig {
    fn default() -> Self {
        RewriterConfig::RuleBased(RuleConfig::default())
    }
}

#[derive(Debug)]
pub enum Rewriter {
    Rule(RuleRewriter),
    Remote(RemoteRewriter),
}

impl Rewriter {
    pub fn from_config(config: &RewriterConfig) -> Result<Self> {
        match config {
            RewriterConfig::RuleBased(c) => Ok(Rewriter::Rule(RuleRewriter::new(c.clone())?)),
            RewriterConfig::Remote(c) => Ok(Rewriter::Remote(RemoteRewriter::new(c.clone())?)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rewriter::Rule(_) => "rule_based",
            Rewriter::Remote(_) => "remote",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Rewriter::Rule(_))
    }

    /// Concurrent requests allowed while rewriting a corpus.
    pub fn max_in_flight(&self) -> usize {
        match self {
            Rewriter::Rule(_) => 1,
            Rewriter::Remote(r) => r.config.max_in_flight,
        }
    }

    /// Rewrites step `j` (1-based) of `steps`.
    pub fn rewrite_step<R: Rng + ?Sized>(
        &self,
        problem: &str,
        steps: &[String],
        j: usize,
        level: Level,
        rng: &mut R,
    ) -> Result<Rewrite> {
        if j == 0 || j > steps.len() {
            return Err(Error::InvalidInput(format!("step {j} outside 1..={}", steps.len())));
        }
        let step = &steps[j - 1];
        match self {
            Rewriter::Rule(r) => r.rewrite(step, level, rng),
            Rewriter::Remote(r) => {
                if level == Level::Inst {
                    return Err(Error::InvalidInput("instance level is not rewritten".into()));
                }
                let error_type = *REMOTE_ERROR_TYPES.choose(rng).unwrap();
                let theme = *LoopTheme::ALL.choose(rng).unwrap();
                let paragraphs = rng.random_range(3..=5);
                let req = RemoteRequest { problem, context: &steps[..j - 1], step, level, error_type, theme, paragraphs };
                let text = r.complete(&r.prompt(&req))?;
                Ok(match level {
                    Level::Intra => Rewrite { span: text.clone(), text, error_type: error_type.into(), theme: None, paragraphs: 0 },
                    _ => Rewrite {
                        span: text.clone(),
                        text,
                        error_type: "stagnation_loop".into(),
                        theme: Some(theme),
                        paragraphs,
                    },
                })
            }
        }
    }
}
