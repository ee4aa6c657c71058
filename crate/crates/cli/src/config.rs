//! Run specification: defaults, overridden by a config file, overridden by
//! command-line flags.
//!
//! The config file is TOML whose keys are flattened to dotted names, so
//! `backend.kind = "frequency"` and a `[backend]` table with `kind = ...`
//! are equivalent.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tkgcast::backends::{HttpConfig, MockFallback};
use tkgcast::evaluation::{Directions, EvalMode};
use tkgcast::history::{HistoryDirection, Scope};
use tkgcast::{BackendKind, EvalConfig, HistoryStrategy, PromptOptions, PromptStyle};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Mock backend script (fingerprint → distribution JSON).
    pub script: Option<PathBuf>,
    /// Mock behaviour for prompts missing from the script: "uniform" or "empty".
    pub mock_fallback: String,
    #[serde(flatten)]
    pub http: HttpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistorySpec {
    pub length: usize,
    pub scope: Scope,
    pub direction: HistoryDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSpec {
    pub style: PromptStyle,
    pub include_time: bool,
    /// Shuffle the history lines; uses `shuffle_seed`, else the run seed.
    pub shuffle: bool,
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSpec {
    pub mode: EvalMode,
    pub feedback_k: usize,
    pub directions: Directions,
    pub fallback_rank: usize,
}

/// Fully resolved configuration of one run; echoed into its summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub dataset: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Raw time units per step; detected from the data when unset.
    pub interval: Option<u32>,
    pub backend: BackendSpec,
    pub history: HistorySpec,
    pub prompt: PromptSpec,
    pub eval: EvalSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            out: None,
            seed: 0,
            interval: None,
            backend: BackendSpec {
                kind: BackendKind::Frequency,
                script: None,
                mock_fallback: "uniform".into(),
                http: HttpConfig::default(),
            },
            history: HistorySpec {
                length: 100,
                scope: Scope::Entity,
                direction: HistoryDirection::Unidirectional,
            },
            prompt: PromptSpec {
                style: PromptStyle::Index,
                include_time: true,
                shuffle: false,
                shuffle_seed: None,
            },
            eval: EvalSpec {
                mode: EvalMode::SingleStep,
                feedback_k: 1,
                directions: Directions::Both,
                fallback_rank: tkgcast::evaluation::DEFAULT_FALLBACK_RANK,
            },
        }
    }
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().with_context(|| format!("config key {key} must be a string"))
}

fn as_uint<T: TryFrom<i64>>(key: &str, v: &toml::Value) -> Result<T> {
    let n = v.as_integer().with_context(|| format!("config key {key} must be an integer"))?;
    T::try_from(n).map_err(|_| anyhow::anyhow!("config key {key} is out of range: {n}"))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().with_context(|| format!("config key {key} must be true or false"))
}

fn parse<T: std::str::FromStr>(key: &str, v: &toml::Value) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let s = as_str(key, v)?;
    s.parse().map_err(|e| anyhow::anyhow!("config key {key}: {e}"))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunSpec {
    /// Applies every key of a config file on top of `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("invalid config {}", path.display()))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        let base = path.parent().unwrap_or(Path::new("."));
        for (key, value) in pairs {
            self.apply(&key, &value, base)?;
        }
        Ok(())
    }

    /// Sets one dotted key. Relative paths resolve against `base`.
    pub fn apply(&mut self, key: &str, v: &toml::Value, base: &Path) -> Result<()> {
        let path = |v: &toml::Value| -> Result<PathBuf> { Ok(base.join(as_str(key, v)?)) };
        match key {
            "dataset" => self.dataset = path(v)?,
            "out" => self.out = Some(path(v)?),
            "seed" => self.seed = as_uint(key, v)?,
            "interval" => self.interval = Some(as_uint(key, v)?),
            "backend.kind" => self.backend.kind = parse(key, v)?,
            "backend.script" => self.backend.script = Some(path(v)?),
            "backend.mock_fallback" => self.backend.mock_fallback = as_str(key, v)?.to_string(),
            "backend.endpoint" => self.backend.http.endpoint = as_str(key, v)?.to_string(),
            "backend.model" => self.backend.http.model = as_str(key, v)?.to_string(),
            "backend.auth_env" => self.backend.http.auth_env = Some(as_str(key, v)?.to_string()),
            "backend.timeout_ms" => self.backend.http.timeout_ms = as_uint(key, v)?,
            "backend.max_inflight" => self.backend.http.max_inflight = as_uint(key, v)?,
            "backend.retries" => self.backend.http.retries = as_uint(key, v)?,
            "backend.backoff_ms" => self.backend.http.backoff_ms = as_uint(key, v)?,
            "backend.top_logprobs" => self.backend.http.top_logprobs = as_uint(key, v)?,
            "backend.max_chat_tokens" => self.backend.http.max_chat_tokens = as_uint(key, v)?,
            "history.length" => self.history.length = as_uint(key, v)?,
            "history.scope" => self.history.scope = parse(key, v)?,
            "history.direction" => self.history.direction = parse(key, v)?,
            "prompt.style" => self.prompt.style = parse(key, v)?,
            "prompt.include_time" => self.prompt.include_time = as_bool(key, v)?,
            "prompt.shuffle" => self.prompt.shuffle = as_bool(key, v)?,
            "prompt.shuffle_seed" => self.prompt.shuffle_seed = Some(as_uint(key, v)?),
            "eval.mode" => self.eval.mode = parse(key, v)?,
            "eval.feedback_k" => self.eval.feedback_k = as_uint(key, v)?,
            "eval.directions" => self.eval.directions = parse(key, v)?,
            "eval.fallback_rank" => self.eval.fallback_rank = as_uint(key, v)?,
            "backend.api_key" | "backend.token" => {
                bail!("{key}: tokens are read from the environment variable named by backend.auth_env")
            }
            other => bail!("unknown config key {other}"),
        }
        Ok(())
    }

    pub fn mock_fallback(&self) -> Result<MockFallback> {
        match self.backend.mock_fallback.as_str() {
            "uniform" => Ok(MockFallback::Uniform),
            "empty" => Ok(MockFallback::Empty),
            other => bail!("backend.mock_fallback must be uniform or empty, got {other:?}"),
        }
    }

    pub fn prompt_options(&self) -> Result<PromptOptions> {
        let seed = self
            .prompt
            .shuffle_seed
            .or(self.prompt.shuffle.then_some(self.seed));
        Ok(PromptOptions::new(self.prompt.include_time, seed)?)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let strategy = HistoryStrategy::new(self.history.scope, self.history.direction, self.history.length)?;
        let cfg = EvalConfig {
            mode: self.eval.mode,
            feedback_k: self.eval.feedback_k,
            strategy,
            style: self.prompt.style,
            opts: self.prompt_options()?,
            directions: self.eval.directions,
            fallback_rank: self.eval.fallback_rank,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running a query.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            bail!("no dataset given (use --dataset or the `dataset` config key)");
        }
        if !self.dataset.is_dir() {
            bail!("dataset directory {} does not exist", self.dataset.display());
        }
        if let Some(script) = &self.backend.script {
            if !script.is_file() {
                bail!("mock script {} does not exist", script.display());
            }
        }
        self.mock_fallback()?;
        self.eval_config()?;
        Ok(())
    }
}
