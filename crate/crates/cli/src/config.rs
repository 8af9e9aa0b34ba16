//! Run configuration, loaded from one TOML file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use cyclebench::analysis::VariationOptions;
use cyclebench::evaluation::LeaderboardOptions;
use cyclebench::llm::{PricingTable, Role, RoleConfig};
use cyclebench::pipeline::{CorpusPlan, GenerationOptions, GenerationRoles, PlanCell};
use cyclebench::runtime::{Limits, RunnerCommand};
use cyclebench::value::Dimension;

use crate::CliError;

/// Environment variable that replaces `provider.base_url`.
pub const BASE_URL_ENV: &str = "CYCLEBENCH_BASE_URL";

/// Every field is optional; the defaults are listed next to each one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where every subcommand reads and writes. Default `run`, relative to
    /// the config file.
    pub run_dir: PathBuf,
    /// Seeds all sampling: inspiration picks, symbol maps, fuzzing. Default 0.
    pub seed: u64,
    pub provider: ProviderConfig,
    pub models: ModelsConfig,
    pub runner: RunnerConfig,
    pub generation: GenerationConfig,
    pub plan: PlanConfig,
    pub budget: BudgetConfig,
    /// Prices per million tokens by model name. Unlisted models cost 0.
    pub pricing: PricingTable,
    pub evaluation: EvaluationConfig,
    pub analysis: VariationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("run"),
            seed: 0,
            provider: ProviderConfig::default(),
            models: ModelsConfig::default(),
            runner: RunnerConfig::default(),
            generation: GenerationConfig::default(),
            plan: PlanConfig::default(),
            budget: BudgetConfig::default(),
            pricing: PricingTable::default(),
            evaluation: EvaluationConfig::default(),
            analysis: VariationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-compatible chat completions endpoint.
    #[default]
    Http,
    /// Replays `mock_script`.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Default `http`.
    pub kind: ProviderKind,
    /// Default `https://api.openai.com/v1`; `CYCLEBENCH_BASE_URL` wins.
    pub base_url: String,
    /// Name of the variable holding the API key. Default `CYCLEBENCH_API_KEY`.
    pub api_key_env: String,
    /// Default 120.
    pub timeout_secs: u64,
    /// Request cap; 0 (default) means uncapped.
    pub rate_per_second: f64,
    /// First retry delay, doubled per retry. Default 1000.
    pub backoff_ms: u64,
    /// Script file for `kind = "mock"`, relative to the config file.
    pub mock_script: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Http,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "CYCLEBENCH_API_KEY".into(),
            timeout_secs: 120,
            rate_per_second: 0.0,
            backoff_ms: 1000,
            mock_script: None,
        }
    }
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Model names. Any role left unset uses `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Default `gpt-4o`.
    pub default: String,
    pub author_rule: Option<String>,
    pub author_code: Option<String>,
    pub judge_rule: Option<String>,
    pub judge_code: Option<String>,
    pub expander: Option<String>,
    pub judge_answer: Option<String>,
    pub analyst: Option<String>,
    /// Models evaluated by `evaluate`. Default empty.
    pub solvers: Vec<String>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            default: "gpt-4o".into(),
            author_rule: None,
            author_code: None,
            judge_rule: None,
            judge_code: None,
            expander: None,
            judge_answer: None,
            analyst: None,
            solvers: Vec::new(),
        }
    }
}

impl ModelsConfig {
    pub fn role(&self, role: Role) -> RoleConfig {
        let pick = match role {
            Role::AuthorRule => &self.author_rule,
            Role::AuthorCode => &self.author_code,
            Role::JudgeRule => &self.judge_rule,
            Role::JudgeCode => &self.judge_code,
            Role::Expander => &self.expander,
            Role::JudgeAnswer => &self.judge_answer,
            Role::Analyst => &self.analyst,
            Role::Solver => &None,
        };
        RoleConfig::new(role, pick.as_deref().unwrap_or(&self.default))
    }

    pub fn generation(&self) -> GenerationRoles {
        GenerationRoles {
            author_rule: self.role(Role::AuthorRule),
            author_code: self.role(Role::AuthorCode),
            judge_rule: self.role(Role::JudgeRule),
            judge_code: self.role(Role::JudgeCode),
            expander: self.role(Role::Expander),
        }
    }

    pub fn solvers(&self) -> Vec<RoleConfig> {
        self.solvers.iter().map(|m| RoleConfig::new(Role::Solver, m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    /// Worker processes. Default 4.
    pub pool_size: usize,
    /// Program and arguments. Empty (default) means `CYCLEBENCH_RUNNER`,
    /// then the bundled Python worker.
    pub command: Vec<String>,
    /// Defaults: 2000 ms wall clock, 256 MB, 1 MiB of output.
    pub limits: Limits,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            pool_size: 4,
            command: Vec::new(),
            limits: Limits::default(),
        }
    }
}

impl RunnerConfig {
    pub fn command(&self) -> RunnerCommand {
        match self.command.split_first() {
            Some((program, args)) => RunnerCommand::new(program, args),
            None => RunnerCommand::from_env(),
        }
    }
}

/// Generation settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Default 4.
    pub examples_per_task: usize,
    /// Default 3.
    pub inspiration_k: usize,
    /// Default 9.
    pub max_variations: u8,
    /// Default 4; scripted providers always run one at a time.
    pub width: usize,
    /// Extra mutated round-trip probes per rule. Default 0.
    pub fuzz: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let d = GenerationOptions::default();
        GenerationConfig {
            examples_per_task: d.examples_per_task,
            inspiration_k: d.inspiration_k,
            max_variations: d.max_variations,
            width: d.width,
            fuzz: d.fuzz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Default `["D1", "D2", "D3"]`, crossed with both domains.
    pub dimensions: Vec<Dimension>,
    /// Default 1.
    pub seeds_per_cell: usize,
    /// Default 3.
    pub attempts_per_seed: usize,
    /// Default true.
    pub remap_symbolic: bool,
    /// Explicit cells; when non-empty, `dimensions` and `seeds_per_cell`
    /// are ignored.
    pub cells: Vec<PlanCell>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            dimensions: vec![Dimension::D1, Dimension::D2, Dimension::D3],
            seeds_per_cell: 1,
            attempts_per_seed: 3,
            remap_symbolic: true,
            cells: Vec::new(),
        }
    }
}

impl PlanConfig {
    pub fn plan(&self) -> CorpusPlan {
        let mut plan = CorpusPlan::grid(&self.dimensions, self.seeds_per_cell);
        if !self.cells.is_empty() {
            plan.cells = self.cells.clone();
        }
        plan.attempts_per_seed = self.attempts_per_seed;
        plan.remap_symbolic = self.remap_symbolic;
        plan
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Provider requests per subcommand, retries included. Default unlimited.
    pub max_calls: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Concurrent solver calls. Default 4.
    pub width: usize,
    /// Leave P1 tasks whose map does not commute with the rule (and their
    /// P0 sources) out of the P0/P1 columns. Default true.
    pub exclude_noncommuting: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            width: 4,
            exclude_noncommuting: LeaderboardOptions::default().exclude_noncommuting,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.run_dir = base.join(&config.run_dir);
        if let Some(script) = &config.provider.mock_script {
            config.provider.mock_script = Some(base.join(script));
        }
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.trim().is_empty() {
                config.provider.base_url = url;
            }
        }
        Ok(config)
    }

    pub fn generation_options(&self) -> GenerationOptions {
        GenerationOptions {
            examples_per_task: self.generation.examples_per_task,
            inspiration_k: self.generation.inspiration_k,
            max_variations: self.generation.max_variations,
            width: self.generation.width,
            fuzz: self.generation.fuzz,
            seed: self.seed,
        }
    }

    pub fn leaderboard_options(&self) -> LeaderboardOptions {
        LeaderboardOptions {
            exclude_noncommuting: self.evaluation.exclude_noncommuting,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_file_matches_defaults_where_it_says_so() {
        let text = include_str!("../../../cyclebench.example.toml");
        let c: RunConfig = toml::from_str(text).unwrap();
        let d = RunConfig::default();
        assert_eq!(c.provider, d.provider);
        assert_eq!(c.runner, d.runner);
        assert_eq!(c.generation, d.generation);
        assert_eq!(c.plan, d.plan);
        assert_eq!(c.evaluation, d.evaluation);
        assert_eq!(c.analysis, d.analysis);
        assert_eq!(c.budget, d.budget);
        assert_eq!(c.models.solvers, ["gpt-4o-mini"]);
        assert_eq!(c.models.role(Role::Analyst).model_name, "gpt-4o");
        assert_eq!(c.models.role(Role::JudgeAnswer).model_name, "gpt-4o-mini");
        assert_eq!(c.pricing.models.len(), 2);
    }

    #[test]
    fn empty_file_is_all_defaults_and_round_trips() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let back: RunConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in ["colour = 1", "[provider]\nretries = 2", "[runner.limits]\ncpu = 1", "[analysis]\nlevel = 3"] {
            assert!(toml::from_str::<RunConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn plan_cells_override_the_grid() {
        let c: RunConfig = toml::from_str(
            "[plan]\nseeds_per_cell = 5\ncells = [{ dimension = \"D2\", domain = \"Semantic\", seeds = 2 }]",
        )
        .unwrap();
        let plan = c.plan.plan();
        assert_eq!(plan.cells.len(), 1);
        assert_eq!(plan.cells[0].seeds, 2);
        assert_eq!(RunConfig::default().plan.plan().cells.len(), 6);
    }
}
