//! Access to chat-completion models for the pipeline roles.

pub mod ledger;
pub mod provider;
pub mod reply;
pub mod templates;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{CallContext, CostLedger, PricingTable, Stage, Usd};
pub use provider::{ChatRequest, MockProvider, MockScript, ModelResponse, Provider, ProviderError, ScriptEntry};
pub use reply::{parse_structured_reply, Field, FieldKind, ReplyFormatError};
pub use templates::{render_prompt, Bindings, RenderedPrompt, TemplateError, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    AuthorRule,
    AuthorCode,
    JudgeRule,
    JudgeCode,
    Expander,
    Solver,
    JudgeAnswer,
    Analyst,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::AuthorRule,
        Role::AuthorCode,
        Role::JudgeRule,
        Role::JudgeCode,
        Role::Expander,
        Role::Solver,
        Role::JudgeAnswer,
        Role::Analyst,
    ];

    pub fn default_temperature(self) -> f64 {
        match self {
            Role::AuthorRule | Role::Expander => 0.5,
            Role::AuthorCode => 0.2,
            Role::JudgeRule | Role::JudgeCode => 0.1,
            Role::Solver | Role::JudgeAnswer | Role::Analyst => 1e-7,
        }
    }

    /// Solvers get a single attempt; everything else retries transient
    /// provider failures.
    pub fn default_retries(self) -> u32 {
        match self {
            Role::Solver => 0,
            _ => 3,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retries: u32,
}

impl RoleConfig {
    pub fn new(role: Role, model_name: impl Into<String>) -> Self {
        RoleConfig {
            role,
            model_name: model_name.into(),
            temperature: role.default_temperature(),
            max_output_tokens: 4096,
            retries: role.default_retries(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("provider failed after {attempts} attempt(s): {last}")]
    Provider { attempts: u32, last: ProviderError },
    #[error("provider call budget exhausted")]
    BudgetExhausted,
}

/// Provider plus retry policy, rate cap, call budget and cost ledger.
pub struct Gateway {
    provider: Box<dyn Provider>,
    pricing: PricingTable,
    ledger: CostLedger,
    backoff_base: Duration,
    min_interval: Option<Duration>,
    last_send: Mutex<Option<Instant>>,
    budget: Option<AtomicU64>,
    cancel: Option<Arc<AtomicBool>>,
    attempts: AtomicU64,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, pricing: PricingTable) -> Self {
        Gateway {
            provider,
            pricing,
            ledger: CostLedger::new(),
            backoff_base: Duration::from_secs(1),
            min_interval: None,
            last_send: Mutex::new(None),
            budget: None,
            cancel: None,
            attempts: AtomicU64::new(0),
        }
    }

    pub fn mock(script: MockScript, pricing: PricingTable) -> Self {
        Gateway::new(Box::new(MockProvider::new(script)), pricing)
    }

    /// Delay before retry `k` is `base * 2^k`.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// At most `per_second` requests per second.
    pub fn with_rate_cap(mut self, per_second: f64) -> Self {
        if per_second > 0.0 {
            self.min_interval = Some(Duration::from_secs_f64(1.0 / per_second));
        }
        self
    }

    /// At most `calls` provider requests, retries included.
    pub fn with_call_budget(mut self, calls: u64) -> Self {
        self.budget = Some(AtomicU64::new(calls));
        self
    }

    /// Once `flag` is set, new requests fail as if the budget were spent;
    /// calls already sent finish normally.
    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn pricing(&self) -> &PricingTable {
        &self.pricing
    }

    /// Provider requests sent so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Whether callers must keep provider traffic in a fixed order.
    pub fn sequential(&self) -> bool {
        self.provider.order_sensitive()
    }

    fn take_budget(&self) -> Result<(), GatewayError> {
        if self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
            return Err(GatewayError::BudgetExhausted);
        }
        let Some(budget) = &self.budget else { return Ok(()) };
        budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1))
            .map(|_| ())
            .map_err(|_| GatewayError::BudgetExhausted)
    }

    fn pace(&self) {
        let Some(interval) = self.min_interval else { return };
        let mut last = self.last_send.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let next = prev + interval;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            }
        }
        *last = Some(Instant::now());
    }

    /// Sends one prompt, retrying transient failures with exponential
    /// backoff, and bills the successful call.
    pub fn complete(
        &self,
        config: &RoleConfig,
        prompt: RenderedPrompt,
        ctx: &CallContext,
    ) -> Result<ModelResponse, GatewayError> {
        let request = ChatRequest {
            role: config.role,
            model: config.model_name.clone(),
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
            prompt,
        };
        let mut attempt = 0u32;
        loop {
            self.take_budget()?;
            self.pace();
            self.attempts.fetch_add(1, Ordering::SeqCst);
            attempt += 1;
            match self.provider.send(&request) {
                Ok(resp) => {
                    let cost = self
                        .pricing
                        .cost(&config.model_name, resp.prompt_tokens, resp.completion_tokens);
                    self.ledger.record(
                        config.role,
                        &config.model_name,
                        ctx,
                        resp.prompt_tokens,
                        resp.completion_tokens,
                        cost,
                    );
                    return Ok(resp);
                }
                Err(ProviderError::Auth(msg)) => return Err(GatewayError::Config(msg)),
                Err(e @ ProviderError::Transient { .. }) if attempt <= config.retries => {
                    let _ = e;
                    let factor = 1u32 << (attempt - 1).min(16);
                    thread::sleep(self.backoff_base * factor);
                }
                Err(last) => return Err(GatewayError::Provider { attempts: attempt, last }),
            }
        }
    }
}
