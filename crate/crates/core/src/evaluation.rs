//! Query collation, single-/multi-step evaluation loops and Hits@k.
//!
//! Test timestamps are processed in ascending order. Every query of one
//! timestamp sees the same history (nothing from its own timestamp), so the
//! queries of a timestamp run concurrently. In single-step mode the history
//! is every graph fact before the query time, test facts included; in
//! multi-step mode test facts are hidden and the top predictions of earlier
//! timestamps are inserted instead.
//!
//! Metrics average over (query, gold answer) pairs, not over queries.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendResponse};
use crate::decoding::{decode, RankedPrediction};
use crate::history::{canonicalize, retrieve_history, to_raw, ForecastQuery, HistorySource, HistoryStrategy, QueryDirection};
use crate::kg_store::{EntityId, FactIndex, Quadruple, Split, TemporalKg, Timestamp};
use crate::prompting::{build_prompt, PromptOptions, PromptStyle, Vocabulary};
use crate::scalar::Real;

/// Cut-offs reported in every table.
pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Rank assigned when the gold entity is missing from the prediction.
pub const DEFAULT_FALLBACK_RANK: usize = 100;

/// Number of distribution entries copied into per-query logs.
const LOGGED_TOKENS: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(&'static str),
    #[error("unknown value {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[serde(rename = "single")]
    SingleStep,
    #[serde(rename = "multi")]
    MultiStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directions {
    #[serde(rename = "tail")]
    TailOnly,
    #[serde(rename = "head")]
    HeadOnly,
    Both,
}

impl Directions {
    fn includes(self, d: QueryDirection) -> bool {
        matches!(
            (self, d),
            (Self::Both, _) | (Self::TailOnly, QueryDirection::Tail) | (Self::HeadOnly, QueryDirection::Head)
        )
    }
}

impl FromStr for EvalMode {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "single-step" => Ok(Self::SingleStep),
            "multi" | "multi-step" => Ok(Self::MultiStep),
            _ => Err(EvalError::Unknown(s.into())),
        }
    }
}

impl FromStr for Directions {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tail" => Ok(Self::TailOnly),
            "head" => Ok(Self::HeadOnly),
            "both" => Ok(Self::Both),
            _ => Err(EvalError::Unknown(s.into())),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleStep => "single",
            Self::MultiStep => "multi",
        })
    }
}

impl fmt::Display for Directions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TailOnly => "tail",
            Self::HeadOnly => "head",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSetting {
    Raw,
    TimeAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub feedback_k: usize,
    pub strategy: HistoryStrategy,
    pub style: PromptStyle,
    pub opts: PromptOptions,
    pub directions: Directions,
    pub fallback_rank: usize,
}

impl EvalConfig {
    pub fn new(strategy: HistoryStrategy) -> Self {
        Self {
            mode: EvalMode::SingleStep,
            feedback_k: 1,
            strategy,
            style: PromptStyle::Index,
            opts: PromptOptions::default(),
            directions: Directions::Both,
            fallback_rank: DEFAULT_FALLBACK_RANK,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.feedback_k == 0 {
            return Err(EvalError::Config("feedback_k must be at least 1"));
        }
        if self.fallback_rank == 0 {
            return Err(EvalError::Config("fallback_rank must be at least 1"));
        }
        if self.strategy.length == 0 {
            return Err(EvalError::Config("history length must be at least 1"));
        }
        if self.opts.validate().is_err() {
            return Err(EvalError::Config("shuffling requires time-removed prompts"));
        }
        Ok(())
    }
}

/// Groups test facts sharing the known slot(s) and timestamp into single
/// queries with all matching answers as gold. Output is ordered by
/// timestamp, tail queries before head queries, then first appearance.
pub fn collate(test_facts: &[Quadruple], directions: Directions) -> Vec<ForecastQuery> {
    let mut queries: Vec<ForecastQuery> = Vec::new();
    let mut slot: HashMap<(QueryDirection, EntityId, u32, Timestamp), usize> = HashMap::new();
    for dir in [QueryDirection::Tail, QueryDirection::Head] {
        if !directions.includes(dir) {
            continue;
        }
        for f in test_facts {
            let (known, answer) = match dir {
                QueryDirection::Tail => (f.subject, f.object),
                QueryDirection::Head => (f.object, f.subject),
            };
            let key = (dir, known, f.relation.0, f.timestamp);
            let idx = *slot.entry(key).or_insert_with(|| {
                queries.push(ForecastQuery {
                    known_entity: known,
                    relation: f.relation,
                    direction: dir,
                    timestamp: f.timestamp,
                    gold: BTreeSet::new(),
                });
                queries.len() - 1
            });
            queries[idx].gold.insert(answer);
        }
    }
    queries.sort_by_key(|q| (q.timestamp, q.direction));
    queries
}

/// 1-based rank of `gold`. Under the time-aware filter, other valid answers
/// ranked above it are skipped. Missing gold or no prediction → `fallback`.
pub fn rank_of<F: Real>(
    gold: EntityId,
    prediction: &RankedPrediction<F>,
    other_valid: &BTreeSet<EntityId>,
    filter: FilterSetting,
    fallback: usize,
) -> usize {
    if prediction.no_prediction {
        return fallback;
    }
    let Some(pos) = prediction.entities().position(|e| e == gold) else {
        return fallback;
    };
    match filter {
        FilterSetting::Raw => pos + 1,
        FilterSetting::TimeAware => {
            let skipped = prediction.entities().take(pos).filter(|e| other_valid.contains(e)).count();
            pos + 1 - skipped
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult<F: Real> {
    /// The query as collated (head queries are not canonicalized here).
    pub query: ForecastQuery,
    /// Gold answers, aligned with the two rank vectors.
    pub gold: Vec<EntityId>,
    pub raw_rank: Vec<usize>,
    pub filtered_rank: Vec<usize>,
    pub predicted_top1: Option<EntityId>,
    pub no_prediction: bool,
    pub prompt_fingerprint: Option<String>,
    pub history_len: usize,
    pub top_tokens: Vec<(String, F)>,
    pub completion: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HitsAtK<F: Real> {
    #[serde(rename = "hits@1")]
    pub at1: F,
    #[serde(rename = "hits@3")]
    pub at3: F,
    #[serde(rename = "hits@10")]
    pub at10: F,
}

impl<F: Real> HitsAtK<F> {
    pub fn get(&self, k: usize) -> Option<F> {
        match k {
            1 => Some(self.at1),
            3 => Some(self.at3),
            10 => Some(self.at10),
            _ => None,
        }
    }

    pub fn as_array(&self) -> [F; 3] {
        [self.at1, self.at3, self.at10]
    }

    fn from_ranks<'a>(ranks: impl Iterator<Item = &'a usize> + Clone, total: usize) -> Self {
        let frac = |k: usize| {
            if total == 0 {
                F::zero()
            } else {
                F::from_count(ranks.clone().filter(|&&r| r <= k).count()) / F::from_count(total)
            }
        };
        Self {
            at1: frac(1),
            at3: frac(3),
            at10: frac(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HitsTable<F: Real> {
    pub raw: HitsAtK<F>,
    pub time_aware: HitsAtK<F>,
}

impl<F: Real> HitsTable<F> {
    pub fn get(&self, filter: FilterSetting) -> &HitsAtK<F> {
        match filter {
            FilterSetting::Raw => &self.raw,
            FilterSetting::TimeAware => &self.time_aware,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F: Real> {
    pub hits: HitsTable<F>,
    pub num_queries: usize,
    pub num_gold_facts: usize,
    pub num_no_prediction: usize,
    pub results: Vec<QueryResult<F>>,
}

impl<F: Real> EvalReport<F> {
    pub fn from_results(results: Vec<QueryResult<F>>) -> Self {
        let num_gold_facts = results.iter().map(|r| r.gold.len()).sum();
        let raw = HitsAtK::from_ranks(results.iter().flat_map(|r| r.raw_rank.iter()), num_gold_facts);
        let time_aware = HitsAtK::from_ranks(results.iter().flat_map(|r| r.filtered_rank.iter()), num_gold_facts);
        Self {
            hits: HitsTable { raw, time_aware },
            num_queries: results.len(),
            num_gold_facts,
            num_no_prediction: results.iter().filter(|r| r.no_prediction).count(),
            results,
        }
    }

    /// One JSON object per query.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> io::Result<()> {
        for r in &self.results {
            let line = LogRecord {
                query: &r.query,
                direction: r.query.direction,
                timestamp: r.query.timestamp,
                prompt_fingerprint: r.prompt_fingerprint.as_deref(),
                top_tokens: &r.top_tokens,
                gold: &r.gold,
                raw_rank: &r.raw_rank,
                filtered_rank: &r.filtered_rank,
                predicted_top1: r.predicted_top1,
                no_prediction: r.no_prediction,
                history_len: r.history_len,
                completion: r.completion.as_deref(),
                error: r.error.as_deref(),
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct LogRecord<'a, F: Real> {
    query: &'a ForecastQuery,
    direction: QueryDirection,
    timestamp: Timestamp,
    prompt_fingerprint: Option<&'a str>,
    top_tokens: &'a [(String, F)],
    gold: &'a [EntityId],
    raw_rank: &'a [usize],
    filtered_rank: &'a [usize],
    predicted_top1: Option<EntityId>,
    no_prediction: bool,
    history_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Scores one query against a history source. Returns the logged result and
/// the decoded prediction (in terms of the canonical query).
pub fn evaluate_query<F: Real, B: Backend<F> + ?Sized>(
    source: &HistorySource<'_>,
    query: &ForecastQuery,
    backend: &B,
    cfg: &EvalConfig,
    correlation_id: u64,
) -> (QueryResult<F>, RankedPrediction<F>) {
    let kg = source.kg();
    let canonical = canonicalize(query, kg.num_relations());
    let window = retrieve_history(source, &canonical, &cfg.strategy);
    let vocab = Vocabulary::new(kg.entities(), kg.relations());

    let mut result = QueryResult {
        query: query.clone(),
        gold: query.gold.iter().copied().collect(),
        raw_rank: Vec::new(),
        filtered_rank: Vec::new(),
        predicted_top1: None,
        no_prediction: true,
        prompt_fingerprint: None,
        history_len: window.len(),
        top_tokens: Vec::new(),
        completion: None,
        error: None,
    };

    let prediction = match build_prompt(&window, &canonical, vocab, cfg.style, &cfg.opts) {
        Err(e) => {
            result.error = Some(e.to_string());
            RankedPrediction::none()
        }
        Ok(prompt) => {
            result.prompt_fingerprint = Some(prompt.fingerprint());
            let request = crate::backends::GenerationRequest {
                prompt: &prompt,
                window: &window,
                correlation_id,
            };
            match backend.generate(&request) {
                Ok(response) => {
                    match &response {
                        BackendResponse::Distribution(d) => {
                            result.top_tokens = d.entries().iter().take(LOGGED_TOKENS).cloned().collect();
                        }
                        BackendResponse::Completion(text) => result.completion = Some(text.clone()),
                    }
                    decode(&response, &prompt.labels)
                }
                Err(e) => {
                    result.error = Some(e.to_string());
                    RankedPrediction::none()
                }
            }
        }
    };

    result.no_prediction = prediction.no_prediction;
    result.predicted_top1 = prediction.top1();
    for &gold in &result.gold {
        let mut others = query.gold.clone();
        others.remove(&gold);
        result
            .raw_rank
            .push(rank_of(gold, &prediction, &others, FilterSetting::Raw, cfg.fallback_rank));
        result
            .filtered_rank
            .push(rank_of(gold, &prediction, &others, FilterSetting::TimeAware, cfg.fallback_rank));
    }
    (result, prediction)
}

/// A logged result together with its decoded prediction.
type Scored<F> = (QueryResult<F>, RankedPrediction<F>);

fn evaluate_batch<F: Real, B: Backend<F> + ?Sized>(
    source: &HistorySource<'_>,
    queries: &[ForecastQuery],
    first_id: u64,
    backend: &B,
    cfg: &EvalConfig,
) -> Vec<Scored<F>> {
    let workers = backend.max_inflight().clamp(1, queries.len().max(1));
    if workers == 1 {
        return queries
            .iter()
            .enumerate()
            .map(|(i, q)| evaluate_query(source, q, backend, cfg, first_id + i as u64))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Scored<F>>>> = Mutex::new(vec![None; queries.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let out = evaluate_query(source, &queries[i], backend, cfg, first_id + i as u64);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|s| s.expect("every query evaluated"))
        .collect()
}

fn group_by_timestamp(queries: &[ForecastQuery]) -> Vec<&[ForecastQuery]> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=queries.len() {
        if i == queries.len() || queries[i].timestamp != queries[start].timestamp {
            if i > start {
                groups.push(&queries[start..i]);
            }
            start = i;
        }
    }
    groups
}

fn sorted(queries: &[ForecastQuery]) -> Vec<ForecastQuery> {
    let mut q = queries.to_vec();
    q.sort_by_key(|q| q.timestamp);
    q
}

/// Ground-truth history: every graph fact before the query time is visible.
pub fn run_single_step<F: Real, B: Backend<F> + ?Sized>(
    kg: &TemporalKg,
    queries: &[ForecastQuery],
    backend: &B,
    cfg: &EvalConfig,
) -> EvalReport<F> {
    let queries = sorted(queries);
    let source = HistorySource::full(kg);
    let mut results = Vec::with_capacity(queries.len());
    let mut next_id = 0u64;
    for group in group_by_timestamp(&queries) {
        let out = evaluate_batch(&source, group, next_id, backend, cfg);
        next_id += group.len() as u64;
        results.extend(out.into_iter().map(|(r, _)| r));
    }
    EvalReport::from_results(results)
}

/// Test facts are hidden; after each timestamp the top `feedback_k`
/// predictions of every query are added as predicted facts (each distinct
/// fact once).
pub fn run_multi_step<F: Real, B: Backend<F> + ?Sized>(
    kg: &TemporalKg,
    queries: &[ForecastQuery],
    backend: &B,
    cfg: &EvalConfig,
) -> EvalReport<F> {
    let queries = sorted(queries);
    let nr = kg.num_relations();
    let mut predicted = FactIndex::new();
    let mut inserted: HashSet<Quadruple> = HashSet::new();
    let mut results = Vec::with_capacity(queries.len());
    let mut next_id = 0u64;
    for group in group_by_timestamp(&queries) {
        let out = {
            let source = HistorySource::background(kg, Some(&predicted));
            evaluate_batch(&source, group, next_id, backend, cfg)
        };
        next_id += group.len() as u64;
        for (query, (result, prediction)) in group.iter().zip(out) {
            let canonical = canonicalize(query, nr);
            for entity in prediction.top(cfg.feedback_k) {
                let fact = Quadruple {
                    subject: canonical.known_entity,
                    relation: canonical.relation,
                    object: entity,
                    timestamp: canonical.timestamp,
                };
                // a tail query and its mirrored head query may predict the same fact
                let raw = to_raw(fact, nr);
                if inserted.insert(raw) {
                    predicted.push(raw).expect("timestamps are processed in ascending order");
                }
            }
            results.push(result);
        }
    }
    EvalReport::from_results(results)
}

pub fn run<F: Real, B: Backend<F> + ?Sized>(
    kg: &TemporalKg,
    queries: &[ForecastQuery],
    backend: &B,
    cfg: &EvalConfig,
) -> EvalReport<F> {
    match cfg.mode {
        EvalMode::SingleStep => run_single_step(kg, queries, backend, cfg),
        EvalMode::MultiStep => run_multi_step(kg, queries, backend, cfg),
    }
}

/// Collated queries for the graph's test split.
pub fn test_queries(kg: &TemporalKg, directions: Directions) -> Vec<ForecastQuery> {
    collate(&kg.split_facts(Split::Test), directions)
}
