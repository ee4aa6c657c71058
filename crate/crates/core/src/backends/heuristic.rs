//! Frequency and recency rule baselines.
//!
//! Both emit a full ranking over the distinct history objects so that
//! Hits@3/10 are defined. The pseudo log-probability of the entry at 1-based
//! position `k` is `-k`.

use std::cmp::Reverse;
use std::collections::HashMap;

use crate::history::HistoryWindow;
use crate::kg_store::EntityId;
use crate::prompting::LabelMap;
use crate::scalar::Real;

use super::{Backend, BackendError, BackendKind, BackendResponse, GenerationRequest, TokenDistribution};

#[derive(Debug, Clone, Copy)]
struct ObjectStats {
    count: usize,
    /// Window position of the latest occurrence.
    last: usize,
    label: u32,
}

fn object_stats(window: &HistoryWindow, labels: &LabelMap) -> Result<Vec<ObjectStats>, BackendError> {
    if window.is_empty() {
        return Err(BackendError::EmptyHistory);
    }
    let mut by_entity: HashMap<EntityId, (usize, usize)> = HashMap::new();
    for (pos, obj) in window.objects().enumerate() {
        let e = by_entity.entry(obj).or_insert((0, pos));
        e.0 += 1;
        e.1 = pos;
    }
    Ok(by_entity
        .into_iter()
        .filter_map(|(entity, (count, last))| {
            labels.label_of(entity).map(|label| ObjectStats { count, last, label })
        })
        .collect())
}

fn to_distribution<F: Real>(ranked: Vec<ObjectStats>) -> TokenDistribution<F> {
    TokenDistribution::new(
        ranked
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.label.to_string(), -F::from_count(i + 1))),
    )
}

/// Ranks objects by occurrence count; ties go to the more recent object,
/// then to the smaller label.
pub fn frequency_score<F: Real>(window: &HistoryWindow, labels: &LabelMap) -> Result<TokenDistribution<F>, BackendError> {
    let mut stats = object_stats(window, labels)?;
    stats.sort_by_key(|s| (Reverse(s.count), Reverse(s.last), s.label));
    Ok(to_distribution(stats))
}

/// Ranks objects by their latest occurrence in the window, most recent first;
/// ties go to the higher count, then to the smaller label.
pub fn recency_score<F: Real>(window: &HistoryWindow, labels: &LabelMap) -> Result<TokenDistribution<F>, BackendError> {
    let mut stats = object_stats(window, labels)?;
    stats.sort_by_key(|s| (Reverse(s.last), Reverse(s.count), s.label));
    Ok(to_distribution(stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicBackend {
    kind: BackendKind,
}

impl HeuristicBackend {
    pub fn frequency() -> Self {
        Self {
            kind: BackendKind::Frequency,
        }
    }

    pub fn recency() -> Self {
        Self {
            kind: BackendKind::Recency,
        }
    }
}

impl<F: Real> Backend<F> for HeuristicBackend {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<F>, BackendError> {
        let labels = &request.prompt.labels;
        let dist = match self.kind {
            BackendKind::Recency => recency_score(request.window, labels)?,
            _ => frequency_score(request.window, labels)?,
        };
        Ok(BackendResponse::Distribution(dist))
    }
}
