//! Forecast queries and selection of the historical facts shown for a query.
//!
//! Retrieval works on the canonical (tail-prediction) form of a query. The
//! graph is read as if every raw fact `(s, p, o, t)` were also present as
//! `(o, p⁻¹, s, t)`; a strategy then selects facts whose subject is the
//! query entity:
//!
//! | scope  | direction | relations admitted          |
//! |--------|-----------|-----------------------------|
//! | Entity | Uni       | same orientation as query   |
//! | Entity | Bi        | any                         |
//! | Pair   | Uni       | exactly the query relation  |
//! | Pair   | Bi        | query relation or inverse   |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{inverse_relation, EntityId, FactIndex, IndexKey, Quadruple, RelationId, TemporalKg, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryDirection {
    /// `(s, p, ?, t)`
    Tail,
    /// `(?, p, o, t)`
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastQuery {
    pub known_entity: EntityId,
    pub relation: RelationId,
    pub direction: QueryDirection,
    pub timestamp: Timestamp,
    pub gold: BTreeSet<EntityId>,
}

impl ForecastQuery {
    pub fn tail(subject: u32, relation: u32, timestamp: u32, gold: impl IntoIterator<Item = u32>) -> Self {
        Self {
            known_entity: EntityId(subject),
            relation: RelationId(relation),
            direction: QueryDirection::Tail,
            timestamp: Timestamp(timestamp),
            gold: gold.into_iter().map(EntityId).collect(),
        }
    }

    pub fn head(object: u32, relation: u32, timestamp: u32, gold: impl IntoIterator<Item = u32>) -> Self {
        Self {
            direction: QueryDirection::Head,
            ..Self::tail(object, relation, timestamp, gold)
        }
    }
}

/// Rewrites head queries into tail form via the inverse relation. Tail
/// queries are returned unchanged, so the function is idempotent.
pub fn canonicalize(query: &ForecastQuery, num_relations: u32) -> ForecastQuery {
    match query.direction {
        QueryDirection::Tail => query.clone(),
        QueryDirection::Head => ForecastQuery {
            relation: inverse_relation(query.relation, num_relations).unwrap_or(query.relation),
            direction: QueryDirection::Tail,
            ..query.clone()
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Entity,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryDirection {
    #[serde(rename = "uni")]
    Unidirectional,
    #[serde(rename = "bi")]
    Bidirectional,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StrategyError {
    #[error("history length must be at least 1")]
    ZeroLength,
    #[error("unknown value {0:?}")]
    Unknown(String),
}

impl FromStr for Scope {
    type Err = StrategyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "entity" => Ok(Self::Entity),
            "pair" => Ok(Self::Pair),
            _ => Err(StrategyError::Unknown(s.into())),
        }
    }
}

impl FromStr for HistoryDirection {
    type Err = StrategyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uni" | "unidirectional" => Ok(Self::Unidirectional),
            "bi" | "bidirectional" => Ok(Self::Bidirectional),
            _ => Err(StrategyError::Unknown(s.into())),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Entity => "entity",
            Self::Pair => "pair",
        })
    }
}

impl fmt::Display for HistoryDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unidirectional => "uni",
            Self::Bidirectional => "bi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStrategy {
    pub scope: Scope,
    pub direction: HistoryDirection,
    pub length: usize,
}

impl HistoryStrategy {
    pub fn new(scope: Scope, direction: HistoryDirection, length: usize) -> Result<Self, StrategyError> {
        if length == 0 {
            return Err(StrategyError::ZeroLength);
        }
        Ok(Self {
            scope,
            direction,
            length,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryFact {
    pub fact: Quadruple,
    /// Inserted from a model prediction rather than ground truth.
    pub predicted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub facts: Vec<HistoryFact>,
}

impl HistoryWindow {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.facts.iter().map(|f| f.fact.object)
    }
}

/// Which facts a query may see: graph facts strictly before the query time,
/// optionally excluding the test split, plus predicted facts.
#[derive(Debug, Clone, Copy)]
pub struct HistorySource<'a> {
    kg: &'a TemporalKg,
    visible_end: u32,
    extra: Option<&'a FactIndex>,
}

impl<'a> HistorySource<'a> {
    /// Every graph fact earlier than the query, test split included.
    pub fn full(kg: &'a TemporalKg) -> Self {
        Self {
            kg,
            visible_end: kg.facts().len() as u32,
            extra: None,
        }
    }

    /// Train and valid facts only, plus the given predicted facts.
    pub fn background(kg: &'a TemporalKg, extra: Option<&'a FactIndex>) -> Self {
        Self {
            kg,
            visible_end: kg.test_start(),
            extra,
        }
    }

    pub fn with_extra(mut self, extra: &'a FactIndex) -> Self {
        self.extra = Some(extra);
        self
    }

    pub fn kg(&self) -> &'a TemporalKg {
        self.kg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CandidateKey {
    timestamp: Timestamp,
    from_extra: bool,
    pos: u32,
    rewritten: bool,
}

fn streams(query: &ForecastQuery, strategy: &HistoryStrategy, num_relations: u32) -> Vec<(IndexKey, bool)> {
    let e = query.known_entity;
    let forward = query.relation.0 < num_relations;
    let base = RelationId(query.relation.0 % num_relations.max(1));
    let (as_is, rewritten) = match strategy.scope {
        Scope::Entity => (IndexKey::Subject(e), IndexKey::Object(e)),
        Scope::Pair => (IndexKey::SubjectRelation(e, base), IndexKey::ObjectRelation(e, base)),
    };
    match (strategy.direction, forward) {
        (HistoryDirection::Bidirectional, _) => vec![(as_is, false), (rewritten, true)],
        (HistoryDirection::Unidirectional, true) => vec![(as_is, false)],
        (HistoryDirection::Unidirectional, false) => vec![(rewritten, true)],
    }
}

/// Selects the most recent `strategy.length` facts for a canonical query,
/// in ascending (timestamp, graph order, predicted-last) order.
pub fn retrieve_history(source: &HistorySource<'_>, query: &ForecastQuery, strategy: &HistoryStrategy) -> HistoryWindow {
    let kg = source.kg;
    let nr = kg.num_relations();
    let limit = strategy.length;
    let mut candidates: Vec<(CandidateKey, Quadruple)> = Vec::new();

    for (key, rewrite) in streams(query, strategy, nr) {
        let index = kg.index();
        let before = index.facts_before(query.timestamp, key);
        let visible = &before[..before.partition_point(|&p| p < source.visible_end)];
        collect_tail(&mut candidates, index, visible, rewrite, false, limit, nr);
        if let Some(extra) = source.extra {
            let before = extra.facts_before(query.timestamp, key);
            collect_tail(&mut candidates, extra, before, rewrite, true, limit, nr);
        }
    }

    candidates.sort_by_key(|(k, _)| *k);
    let skip = candidates.len().saturating_sub(limit);
    HistoryWindow {
        facts: candidates
            .into_iter()
            .skip(skip)
            .map(|(k, fact)| HistoryFact {
                fact,
                predicted: k.from_extra,
            })
            .collect(),
    }
}

fn collect_tail(
    out: &mut Vec<(CandidateKey, Quadruple)>,
    index: &FactIndex,
    positions: &[u32],
    rewrite: bool,
    from_extra: bool,
    limit: usize,
    num_relations: u32,
) {
    let start = positions.len().saturating_sub(limit);
    for &pos in &positions[start..] {
        let raw = *index.get(pos);
        let fact = if rewrite { swap(raw, num_relations) } else { raw };
        out.push((
            CandidateKey {
                timestamp: raw.timestamp,
                from_extra,
                pos,
                rewritten: rewrite,
            },
            fact,
        ));
    }
}

/// `(s, p, o, t) -> (o, p⁻¹, s, t)`
pub fn swap(fact: Quadruple, num_relations: u32) -> Quadruple {
    Quadruple {
        subject: fact.object,
        relation: inverse_relation(fact.relation, num_relations).unwrap_or(fact.relation),
        object: fact.subject,
        timestamp: fact.timestamp,
    }
}

/// Converts a canonical-form fact back to raw orientation (relation < |R|).
pub fn to_raw(fact: Quadruple, num_relations: u32) -> Quadruple {
    if fact.relation.0 >= num_relations {
        swap(fact, num_relations)
    } else {
        fact
    }
}
