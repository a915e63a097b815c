//! Chat backends: a deterministic in-process mock and a generic
//! chat-completions HTTP client.

use std::collections::VecDeque;
use std::sync::{Condvar, LazyLock, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts::{decision_answer, recommendation_answer};
use super::{Message, Role};
use crate::da_model::{optimal_demand, DaParams};
use crate::data::{demand_to_tokens, returns_to_prices, Allocation, ChoiceRound, Provenance, ReturnPair, SubjectDataset, DEFAULT_SLACK};
use crate::error::{Error, Result};
use crate::estimation::{recover_params, EstimationConfig};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_VAR: &str = "CHAT_API_KEY";

pub trait ChatBackend: Send + Sync {
    fn send(&self, messages: &[Message]) -> Result<String>;

    /// Short description recorded in transcripts.
    fn describe(&self) -> String;

    /// Largest number of sessions worth running at once.
    fn max_concurrency(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Answers with the optimal choice of fixed parameters.
    #[default]
    Maximizer,
    /// Fits parameters to the data table in the prompt and answers with
    /// their optimal choices; falls back to fixed parameters without data.
    Learner,
    /// Never gives a usable answer.
    Garbage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    pub rate_per_min: u32,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
    pub mock_mode: MockMode,
    pub mock_beta: f64,
    pub mock_rho: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            temperature: 0.5,
            max_retries: 5,
            rate_per_min: 60,
            max_concurrent: 4,
            timeout_secs: 120,
            backoff_ms: 1000,
            mock_mode: MockMode::Maximizer,
            mock_beta: 0.0,
            mock_rho: 0.5,
        }
    }
}

impl BackendConfig {
    /// Builds the configured backend. The HTTP backend needs an endpoint,
    /// a model and the API key in the environment.
    pub fn build(&self, estimation: &EstimationConfig) -> Result<Box<dyn ChatBackend>> {
        match self.kind {
            BackendKind::Mock => {
                let params = DaParams::new(self.mock_beta, self.mock_rho)
                    .map_err(|e| Error::Config(format!("backend.mock_beta/mock_rho: {e}")))?;
                Ok(Box::new(MockBackend {
                    mode: self.mock_mode,
                    params,
                    estimation: estimation.clone(),
                }))
            }
            BackendKind::Http => Ok(Box::new(HttpBackend::from_config(self)?)),
        }
    }
}

static RETURNS_IN_SENTENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"asset A returns ([0-9.]+) dollars, and investing every 1 point for asset B returns ([0-9.]+) dollars").unwrap()
});
static TABLE_ROW: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^\| ([0-9.]+) \| ([0-9.]+) \| ([0-9.]+)(?: \| ([0-9.]+))? \|$").unwrap()
});

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub mode: MockMode,
    pub params: DaParams,
    pub estimation: EstimationConfig,
}

impl MockBackend {
    pub fn maximizer(params: DaParams) -> Self {
        Self {
            mode: MockMode::Maximizer,
            params,
            estimation: EstimationConfig::default(),
        }
    }

    pub fn learner(fallback: DaParams, estimation: EstimationConfig) -> Self {
        Self {
            mode: MockMode::Learner,
            params: fallback,
            estimation,
        }
    }

    pub fn garbage() -> Self {
        Self {
            mode: MockMode::Garbage,
            params: DaParams::new(0.0, 1.0).unwrap(),
            estimation: EstimationConfig::default(),
        }
    }

    fn tokens(r: ReturnPair, params: DaParams) -> (f64, f64) {
        let x = optimal_demand(returns_to_prices(r), params).demand;
        let t_a = demand_to_tokens(r, x).a();
        (t_a, 100.0 - t_a)
    }

    fn pair(a: &str, b: &str) -> Result<ReturnPair> {
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Backend(format!("mock: bad number `{s}`: {e}")));
        ReturnPair::new(parse(a)?, parse(b)?)
    }

    /// Rows of the 4-column data table in the assistant turns.
    fn sample_from(messages: &[Message]) -> Result<Option<SubjectDataset>> {
        let mut rounds = Vec::new();
        for m in messages.iter().filter(|m| m.role == Role::Assistant) {
            for c in TABLE_ROW.captures_iter(&m.content) {
                let Some(tb) = c.get(4) else { continue };
                let r = Self::pair(&c[1], &c[2])?;
                let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Backend(e.to_string()));
                let t = Allocation::new(parse(&c[3])?, parse(tb.as_str())?)?;
                rounds.push(ChoiceRound::from_tokens(rounds.len() as u32 + 1, r, t, DEFAULT_SLACK)?);
            }
        }
        if rounds.is_empty() {
            return Ok(None);
        }
        SubjectDataset::new("prompt-sample", Provenance::Human, rounds).map(Some)
    }

    fn params_for(&self, messages: &[Message]) -> Result<DaParams> {
        if self.mode != MockMode::Learner {
            return Ok(self.params);
        }
        match Self::sample_from(messages)? {
            Some(ds) => Ok(recover_params(&ds, &self.estimation)?.params),
            None => Ok(self.params),
        }
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, messages: &[Message]) -> Result<String> {
        if self.mode == MockMode::Garbage {
            return Ok("I am not sure what to do here.".into());
        }
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| Error::Backend("mock: no user message".into()))?;
        let params = self.params_for(messages)?;
        if let Some(c) = RETURNS_IN_SENTENCE.captures(&user.content) {
            let (a, b) = Self::tokens(Self::pair(&c[1], &c[2])?, params);
            return Ok(decision_answer(a, b));
        }
        let rows: Vec<(f64, f64)> = TABLE_ROW
            .captures_iter(&user.content)
            .filter(|c| c.get(4).is_none())
            .map(|c| Self::pair(&c[2], &c[3]).map(|r| Self::tokens(r, params)))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Err(Error::Backend("mock: prompt carries no returns".into()));
        }
        Ok(recommendation_answer(&rows))
    }

    fn describe(&self) -> String {
        format!(
            "mock:{:?}(beta={},rho={})",
            self.mode,
            self.params.beta(),
            self.params.rho()
        )
        .to_lowercase()
    }

    fn max_concurrency(&self) -> usize {
        rayon::current_num_threads()
    }
}

/// Counting semaphore for in-flight requests.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.slots.lock().unwrap();
        while *free == 0 {
            free = self.freed.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Sliding one-minute window of request start times.
struct RateLimiter {
    per_min: usize,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    fn wait(&self) {
        if self.per_min == 0 {
            return;
        }
        let window = Duration::from_secs(60);
        loop {
            let mut q = self.starts.lock().unwrap();
            let now = Instant::now();
            while q.front().is_some_and(|t| now.duration_since(*t) >= window) {
                q.pop_front();
            }
            if q.len() < self.per_min {
                q.push_back(now);
                return;
            }
            let sleep = window - now.duration_since(*q.front().unwrap());
            drop(q);
            std::thread::sleep(sleep);
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
    max_retries: u32,
    backoff: Duration,
    max_concurrent: usize,
    gate: Gate,
    limiter: RateLimiter,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        let api_key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config(format!("http backend needs {API_KEY_VAR} in the environment")))?;
        Self::new(cfg, api_key)
    }

    /// Backend with an explicit key instead of the environment.
    pub fn new(cfg: &BackendConfig, api_key: String) -> Result<Self> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("backend.endpoint is required for the http backend".into()))?;
        let model = cfg
            .model
            .clone()
            .ok_or_else(|| Error::Config("backend.model is required for the http backend".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        let max_concurrent = cfg.max_concurrent.max(1);
        Ok(Self {
            client,
            endpoint,
            model,
            api_key,
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            max_concurrent,
            gate: Gate {
                slots: Mutex::new(max_concurrent),
                freed: Condvar::new(),
            },
            limiter: RateLimiter {
                per_min: cfg.rate_per_min as usize,
                starts: Mutex::new(VecDeque::new()),
            },
        })
    }

    fn attempt(&self, messages: &[Message]) -> Attempt {
        self.limiter.wait();
        let _slot = self.gate.acquire();
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: self.temperature,
        };
        let resp = match self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(format!("HTTP {status}: {text}"));
        }
        match resp.json::<ChatResponse>() {
            Ok(r) => match r.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(text) => Attempt::Done(text),
                None => Attempt::Fatal("response has no message content".into()),
            },
            Err(e) => Attempt::Retry(format!("malformed response: {e}")),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, messages: &[Message]) -> Result<String> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(messages) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(msg) => return Err(Error::Backend(msg)),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(Error::Backend(format!(
            "giving up after {} retries: {last}",
            self.max_retries
        )))
    }

    fn describe(&self) -> String {
        format!("http:{}@{}", self.model, self.endpoint)
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrent
    }
}
