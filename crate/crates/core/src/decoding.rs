//! Mapping backend output back onto candidate entities through the prompt's
//! numeric labels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::BackendResponse;
use crate::kg_store::EntityId;
use crate::prompting::LabelMap;
use crate::scalar::Real;

/// Entities ranked by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction<F: Real> {
    pub ranking: Vec<(EntityId, F)>,
    pub no_prediction: bool,
}

impl<F: Real> RankedPrediction<F> {
    pub fn none() -> Self {
        Self {
            ranking: Vec::new(),
            no_prediction: true,
        }
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.ranking.iter().map(|(e, _)| *e)
    }

    pub fn top(&self, k: usize) -> impl Iterator<Item = EntityId> + '_ {
        self.entities().take(k)
    }

    pub fn top1(&self) -> Option<EntityId> {
        self.ranking.first().map(|(e, _)| *e)
    }
}

/// Label named by a token, if the trimmed text is exactly a canonical
/// decimal number ("07" and "1." do not match).
pub fn token_label(token: &str) -> Option<u32> {
    let t = token.trim();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) || (t.len() > 1 && t.starts_with('0')) {
        return None;
    }
    t.parse().ok()
}

/// Leading integer of a chat completion, e.g. `" 17"` → 17, `"3."` → 3.
pub fn parse_leading_label(completion: &str) -> Option<u32> {
    let t = completion.trim_start();
    let end = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    t[..end].parse().ok()
}

pub fn decode<F: Real>(response: &BackendResponse<F>, labels: &LabelMap) -> RankedPrediction<F> {
    match response {
        BackendResponse::Distribution(dist) => {
            let mut best: HashMap<u32, F> = HashMap::new();
            for (token, lp) in dist.entries() {
                let Some(label) = token_label(token) else { continue };
                if labels.entity_of(label).is_none() {
                    continue;
                }
                let slot = best.entry(label).or_insert(*lp);
                if *lp > *slot {
                    *slot = *lp;
                }
            }
            let mut scored: Vec<(u32, F)> = best.into_iter().collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let ranking: Vec<(EntityId, F)> = scored
                .into_iter()
                .map(|(label, lp)| (labels.entity_of(label).expect("checked above"), lp))
                .collect();
            RankedPrediction {
                no_prediction: ranking.is_empty(),
                ranking,
            }
        }
        BackendResponse::Completion(text) => match parse_leading_label(text).and_then(|l| labels.entity_of(l)) {
            Some(entity) => RankedPrediction {
                ranking: vec![(entity, F::zero())],
                no_prediction: false,
            },
            None => RankedPrediction::none(),
        },
    }
}
