//! Seed generation, expansion into variations, and corpus assembly.

mod corpus;
mod expand;
mod seed;

pub use corpus::{
    build_corpus, corpus_counts, expand_seeds, generate_seeds, load_manifest, remap_tasks, CellCounts, Corpus,
    CorpusCounts, CorpusManifest, CorpusPlan, ExpansionRun, ManifestError, ManifestRow, PlanCell, SeedRun,
};
pub use expand::{expand_seed, ExpansionState, IndexOutcome};
pub use seed::{generate_seed, SeedAttempt, SeedOutcome, SeedRequest, SeedStage};

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::canonical::sha256_hex;
use crate::llm::{
    parse_structured_reply, CallContext, Field, Gateway, GatewayError, RenderedPrompt, ReplyFormatError, Role,
    RoleConfig, TemplateError, TemplateId,
};
use crate::runtime::RuleExecutor;
use crate::verification::{GateOptions, RunnerCrashed};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Runner(#[from] RunnerCrashed),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("inspiration rule list is empty")]
    NoInspiration,
    #[error("task {0} is not an accepted seed with a rule")]
    NotExpandable(String),
}

impl PipelineError {
    /// Budget exhaustion ends a corpus run early instead of failing it.
    pub fn is_budget(&self) -> bool {
        matches!(self, PipelineError::Gateway(GatewayError::BudgetExhausted))
    }
}

/// Model settings for every generation role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRoles {
    pub author_rule: RoleConfig,
    pub author_code: RoleConfig,
    pub judge_rule: RoleConfig,
    pub judge_code: RoleConfig,
    pub expander: RoleConfig,
}

impl GenerationRoles {
    /// Every role on one model with default settings.
    pub fn uniform(model: &str) -> Self {
        GenerationRoles {
            author_rule: RoleConfig::new(Role::AuthorRule, model),
            author_code: RoleConfig::new(Role::AuthorCode, model),
            judge_rule: RoleConfig::new(Role::JudgeRule, model),
            judge_code: RoleConfig::new(Role::JudgeCode, model),
            expander: RoleConfig::new(Role::Expander, model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    /// Worked examples per task; the author is asked for one more input
    /// to serve as the query.
    pub examples_per_task: usize,
    /// Inspiration rules sampled into each rule-author prompt.
    pub inspiration_k: usize,
    pub max_variations: u8,
    /// Parallel seed attempts. Ignored (treated as 1) for scripted providers.
    pub width: usize,
    pub fuzz: usize,
    pub seed: u64,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            examples_per_task: 4,
            inspiration_k: 3,
            max_variations: 9,
            width: 4,
            fuzz: 0,
            seed: 0,
        }
    }
}

/// Everything a generation step needs.
pub struct Generator<'a, E: RuleExecutor> {
    pub gateway: &'a Gateway,
    pub exec: &'a E,
    pub roles: GenerationRoles,
    pub options: GenerationOptions,
    pub inspiration: Vec<String>,
}

impl<'a, E: RuleExecutor> Generator<'a, E> {
    pub fn new(gateway: &'a Gateway, exec: &'a E, roles: GenerationRoles) -> Self {
        Generator {
            gateway,
            exec,
            roles,
            options: GenerationOptions::default(),
            inspiration: crate::golden::inspiration_rules(),
        }
    }

    pub fn with_options(mut self, options: GenerationOptions) -> Self {
        self.options = options;
        self
    }

    pub(crate) fn gate(&self, salt: &str) -> GateOptions {
        GateOptions {
            fuzz: self.options.fuzz,
            fuzz_seed: derive_seed(self.options.seed, salt),
        }
    }

    pub(crate) fn width(&self) -> usize {
        if self.gateway.sequential() {
            1
        } else {
            self.options.width.max(1)
        }
    }

    /// One role call with reply-format retries. `Ok(Err(_))` means every
    /// attempt came back unparseable.
    pub(crate) fn ask(
        &self,
        config: &RoleConfig,
        prompt: RenderedPrompt,
        ctx: &CallContext,
        fields: &[Field],
        transcript: &mut Transcript,
    ) -> Result<Result<Map<String, Json>, ReplyFormatError>, GatewayError> {
        let mut last = ReplyFormatError::NoObject;
        for attempt in 0..=config.retries {
            let resp = match self.gateway.complete(config, prompt.clone(), ctx) {
                Ok(r) => r,
                Err(e) => {
                    transcript.push(config.role, &prompt, attempt, None, Some(e.to_string()));
                    return Err(e);
                }
            };
            let parsed = parse_structured_reply(&resp.text, fields);
            let error = parsed.as_ref().err().map(|e| e.to_string());
            transcript.push(config.role, &prompt, attempt, Some(resp.text), error);
            match parsed {
                Ok(map) => return Ok(Ok(map)),
                Err(e) => last = e,
            }
        }
        Ok(Err(last))
    }
}

/// Stable 64-bit seed from a run seed and a key.
pub fn derive_seed(run_seed: u64, key: &str) -> u64 {
    let digest = sha256_hex(format!("{run_seed}:{key}"));
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub(crate) fn rng_for(run_seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, key))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub role: Role,
    pub template_id: TemplateId,
    /// Reply-format retry number within this role call.
    pub attempt: u32,
    pub system: String,
    pub user: String,
    pub reply: Option<String>,
    pub error: Option<String>,
}

/// Ordered log of role calls made for one seed or expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    fn push(&mut self, role: Role, prompt: &RenderedPrompt, attempt: u32, reply: Option<String>, error: Option<String>) {
        self.entries.push(TranscriptEntry {
            step: self.entries.len(),
            role,
            template_id: prompt.template_id,
            attempt,
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            reply,
            error,
        });
    }

    pub fn roles(&self) -> Vec<Role> {
        self.entries.iter().map(|e| e.role).collect()
    }
}

/// Applies `f` to every item on up to `width` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], width: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if width <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..width.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = parallel_map(&items, 8, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn derived_seeds_are_stable() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
