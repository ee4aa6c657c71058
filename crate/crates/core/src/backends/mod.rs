//! Model backends: anything that turns a prompt into a first-token
//! distribution (or, for chat models, a completion string).

use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::history::HistoryWindow;
use crate::prompting::Prompt;
use crate::scalar::Real;

mod heuristic;
mod http;
mod mock;

pub use heuristic::{frequency_score, recency_score, HeuristicBackend};
pub use http::{extract_top_logprobs, HttpChatBackend, HttpCompletionBackend, HttpConfig};
pub use mock::{mock_generate, MockBackend, MockFallback, MockScript};

/// Maximum number of entries kept in a distribution.
pub const MAX_TOP_TOKENS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("no historical facts for query")]
    EmptyHistory,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend does not provide token log-probabilities: {0}")]
    Capability(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("unexpected backend response: {0}")]
    Protocol(String),
}

/// Top first-token candidates, unique by text and sorted by descending
/// log-probability (ties by token text).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution<F> {
    entries: Vec<(String, F)>,
}

impl<F: Real> Default for TokenDistribution<F> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<F: Real> TokenDistribution<F> {
    /// Normalizes raw entries: non-finite values are dropped, duplicate
    /// tokens keep their highest log-probability, and only the top
    /// [`MAX_TOP_TOKENS`] survive.
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, F)>,
        S: Into<String>,
    {
        let mut best: std::collections::HashMap<String, F> = std::collections::HashMap::new();
        for (token, lp) in entries {
            if !lp.is_finite() {
                continue;
            }
            let slot = best.entry(token.into()).or_insert(lp);
            if lp > *slot {
                *slot = lp;
            }
        }
        let mut entries: Vec<(String, F)> = best.into_iter().collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        entries.truncate(MAX_TOP_TOKENS);
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, F)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<F: Real> Serialize for TokenDistribution<F> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.entries.len()))?;
        for e in &self.entries {
            seq.serialize_element(e)?;
        }
        seq.end()
    }
}

impl<'de, F: Real + Deserialize<'de>> Deserialize<'de> for TokenDistribution<F> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: Vec<(String, F)> = Vec::deserialize(deserializer)?;
        Ok(Self::new(raw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendResponse<F: Real> {
    Distribution(TokenDistribution<F>),
    /// Raw completion text from chat models without log-probabilities.
    Completion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Frequency,
    Recency,
    Mock,
    HttpCompletion,
    HttpChat,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Frequency => "frequency",
            Self::Recency => "recency",
            Self::Mock => "mock",
            Self::HttpCompletion => "http-completion",
            Self::HttpChat => "http-chat",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "frequency" => Ok(Self::Frequency),
            "recency" => Ok(Self::Recency),
            "mock" => Ok(Self::Mock),
            "http-completion" | "completion" => Ok(Self::HttpCompletion),
            "http-chat" | "chat" => Ok(Self::HttpChat),
            other => Err(BackendError::Config(format!("unknown backend kind {other:?}"))),
        }
    }
}

/// Everything a backend may look at for one query.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a Prompt,
    pub window: &'a HistoryWindow,
    pub correlation_id: u64,
}

pub trait Backend<F: Real>: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError>;

    /// Upper bound on concurrent `generate` calls.
    fn max_inflight(&self) -> usize {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

impl<F: Real, B: Backend<F> + ?Sized> Backend<F> for Box<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError> {
        (**self).generate(request)
    }

    fn max_inflight(&self) -> usize {
        (**self).max_inflight()
    }
}
