//! Temporal knowledge graph forecasting with in-context learning.
//!
//! The pipeline retrieves the history of a query from a [`TemporalKg`],
//! renders it into a numbered prompt, asks a [`Backend`] for the first-token
//! distribution, decodes the numeric labels back into entities and scores the
//! ranking with raw and time-aware filtered Hits@k.
//!
//! Scores and metrics are generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64` (or `f32`).

pub mod backends;
pub mod decoding;
pub mod evaluation;
pub mod history;
pub mod kg_store;
pub mod prompting;
pub mod scalar;

pub use backends::{Backend, BackendError, BackendKind, BackendResponse, GenerationRequest, TokenDistribution};
pub use decoding::{decode, RankedPrediction};
pub use evaluation::{collate, rank_of, run_multi_step, run_single_step, EvalConfig, EvalReport, FilterSetting, QueryResult};
pub use history::{canonicalize, retrieve_history, ForecastQuery, HistorySource, HistoryStrategy, HistoryWindow};
pub use kg_store::{load_dataset, Dictionary, EntityId, Quadruple, RelationId, TemporalKg, Timestamp};
pub use prompting::{build_chat_messages, build_prompt, LabelMap, Prompt, PromptOptions, PromptStyle};
pub use scalar::Real;

pub type Distribution = TokenDistribution<f64>;
pub type Distribution32 = TokenDistribution<f32>;
pub type Prediction = RankedPrediction<f64>;
pub type Prediction32 = RankedPrediction<f32>;
pub type Response = BackendResponse<f64>;
pub type Report = EvalReport<f64>;
pub type Report32 = EvalReport<f32>;
