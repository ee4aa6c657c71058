//! Rendering of history windows into numbered prompts.
//!
//! Every history fact becomes one line `t: [S, R, n. O]`, where `n` is the
//! label of the object entity. Labels are handed out in order of first
//! appearance, so a recurring object keeps its label. The prompt ends with the
//! open query line `t: [S, R,` and no trailing newline.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::history::{ForecastQuery, HistoryWindow};
use crate::kg_store::{Dictionary, EntityId, RelationId};

/// Largest number of distinct labels a prompt may carry (labels 0..=99).
pub const MAX_LABELS: usize = 100;

pub const SYSTEM_INSTRUCTION: &str = "You must be able to correctly predict the next {object_label} from a given text consisting of multiple quadruplets in the form of \"{time}:[{subject}, {relation}, {object_label}. {object}]\" and the query in the form of \"{time}:[{subject}, {relation},\" in the end.\n\nYou must generate only the single number for {object_label} without any explanation.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no historical facts for query")]
    EmptyHistory,
    #[error("invalid prompt options: {0}")]
    InvalidOptions(&'static str),
    #[error("unknown prompt style {0:?}")]
    UnknownStyle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Entities and relations printed as dictionary ids.
    Index,
    /// Entities and relations printed as dictionary labels.
    Lexical,
}

impl FromStr for PromptStyle {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "index" => Ok(Self::Index),
            "lexical" => Ok(Self::Lexical),
            _ => Err(PromptError::UnknownStyle(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub include_time: bool,
    pub shuffle_seed: Option<u64>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            include_time: true,
            shuffle_seed: None,
        }
    }
}

impl PromptOptions {
    pub fn new(include_time: bool, shuffle_seed: Option<u64>) -> Result<Self, PromptError> {
        let opts = Self {
            include_time,
            shuffle_seed,
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.shuffle_seed.is_some() && self.include_time {
            return Err(PromptError::InvalidOptions("shuffling requires time-removed prompts"));
        }
        Ok(())
    }
}

/// Per-prompt bijection between numeric labels and entities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    label_of: HashMap<EntityId, u32>,
    entity_of: Vec<EntityId>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the entity's label, assigning the next free one on first sight.
    pub fn assign(&mut self, entity: EntityId) -> u32 {
        if let Some(&label) = self.label_of.get(&entity) {
            return label;
        }
        let label = self.entity_of.len() as u32;
        self.entity_of.push(entity);
        self.label_of.insert(entity, label);
        label
    }

    pub fn label_of(&self, entity: EntityId) -> Option<u32> {
        self.label_of.get(&entity).copied()
    }

    pub fn entity_of(&self, label: u32) -> Option<EntityId> {
        self.entity_of.get(label as usize).copied()
    }

    /// The label that the next unseen entity would receive.
    pub fn next_label(&self) -> u32 {
        self.entity_of.len() as u32
    }

    pub fn len(&self) -> usize {
        self.entity_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_of.is_empty()
    }

    /// `(label, entity)` pairs in label order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, EntityId)> + '_ {
        self.entity_of.iter().enumerate().map(|(l, &e)| (l as u32, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub labels: LabelMap,
    pub query: ForecastQuery,
    pub style: PromptStyle,
}

impl Prompt {
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.text)
    }
}

/// Stable 64-bit hex digest of prompt text.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// Entity and relation dictionaries used by lexical prompts.
#[derive(Debug, Clone, Copy)]
pub struct Vocabulary<'a> {
    pub entities: &'a Dictionary,
    pub relations: &'a Dictionary,
}

impl<'a> Vocabulary<'a> {
    pub fn new(entities: &'a Dictionary, relations: &'a Dictionary) -> Self {
        Self { entities, relations }
    }

    fn entity(&self, style: PromptStyle, e: EntityId) -> String {
        match style {
            PromptStyle::Index => e.to_string(),
            PromptStyle::Lexical => self
                .entities
                .label(e.0)
                .map(str::to_owned)
                .unwrap_or_else(|| e.to_string()),
        }
    }

    fn relation(&self, style: PromptStyle, r: RelationId) -> String {
        match style {
            PromptStyle::Index => r.to_string(),
            PromptStyle::Lexical => {
                let nr = self.relations.len() as u32;
                let (base, inverse) = if r.0 >= nr && nr > 0 { (r.0 - nr, true) } else { (r.0, false) };
                let label = self.relations.label(base).map(str::to_owned).unwrap_or_else(|| base.to_string());
                if inverse {
                    format!("inverse {label}")
                } else {
                    label
                }
            }
        }
    }
}

/// Index of the first window fact kept so that at most [`MAX_LABELS`]
/// distinct objects remain; older facts are dropped first.
fn label_cap_start(window: &HistoryWindow) -> usize {
    let mut seen = HashSet::new();
    for (i, f) in window.facts.iter().enumerate().rev() {
        if seen.insert(f.fact.object) && seen.len() > MAX_LABELS {
            return i + 1;
        }
    }
    0
}

pub fn build_prompt(
    window: &HistoryWindow,
    query: &ForecastQuery,
    vocab: Vocabulary<'_>,
    style: PromptStyle,
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    opts.validate()?;
    if window.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    let facts = &window.facts[label_cap_start(window)..];
    let mut order: Vec<usize> = (0..facts.len()).collect();
    if let Some(seed) = opts.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let mut labels = LabelMap::new();
    let mut text = String::new();
    for i in order {
        let f = &facts[i].fact;
        let n = labels.assign(f.object);
        if opts.include_time {
            let _ = write!(text, "{}: ", f.timestamp);
        }
        let _ = writeln!(
            text,
            "[{}, {}, {}. {}]",
            vocab.entity(style, f.subject),
            vocab.relation(style, f.relation),
            n,
            vocab.entity(style, f.object)
        );
    }
    if opts.include_time {
        let _ = write!(text, "{}: ", query.timestamp);
    }
    let _ = write!(
        text,
        "[{}, {},",
        vocab.entity(style, query.known_entity),
        vocab.relation(style, query.relation)
    );

    Ok(Prompt {
        text,
        labels,
        query: query.clone(),
        style,
    })
}

/// `(system, user)` messages for chat backends.
pub fn build_chat_messages(prompt: &Prompt) -> (String, String) {
    (SYSTEM_INSTRUCTION.to_string(), prompt.text.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryFact;
    use crate::kg_store::Quadruple;

    fn window(facts: &[(u32, u32, u32, u32)]) -> HistoryWindow {
        HistoryWindow {
            facts: facts
                .iter()
                .map(|&(s, r, o, t)| HistoryFact {
                    fact: Quadruple::new(s, r, o, t),
                    predicted: false,
                })
                .collect(),
        }
    }

    fn superbowl_vocab() -> (Dictionary, Dictionary) {
        (
            Dictionary::from_pairs([("Superbowl", 0), ("St Louis", 1), ("Baltimore", 2)]).unwrap(),
            Dictionary::from_pairs([("Champion", 0)]).unwrap(),
        )
    }

    #[test]
    fn lexical_superbowl_lines() {
        let (e, r) = superbowl_vocab();
        let w = window(&[(0, 0, 1, 2000), (0, 0, 2, 2001)]);
        let q = ForecastQuery::tail(0, 0, 2023, [1]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Lexical, &PromptOptions::default()).unwrap();
        assert_eq!(
            p.text,
            "2000: [Superbowl, Champion, 0. St Louis]\n2001: [Superbowl, Champion, 1. Baltimore]\n2023: [Superbowl, Champion,"
        );
    }

    #[test]
    fn index_superbowl_lines() {
        let (e, r) = superbowl_vocab();
        let w = window(&[(0, 0, 1, 2000), (0, 0, 2, 2001)]);
        let q = ForecastQuery::tail(0, 0, 2023, [1]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Index, &PromptOptions::default()).unwrap();
        assert_eq!(p.text, "2000: [0, 0, 0. 1]\n2001: [0, 0, 1. 2]\n2023: [0, 0,");
        assert_eq!(p.labels.entity_of(0), Some(EntityId(1)));
        assert_eq!(p.labels.entity_of(1), Some(EntityId(2)));
    }

    #[test]
    fn recurring_object_reuses_label() {
        let (e, r) = superbowl_vocab();
        let w = window(&[(0, 0, 2, 1), (0, 0, 1, 2), (0, 0, 2, 3)]);
        let q = ForecastQuery::tail(0, 0, 4, [1]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Index, &PromptOptions::default()).unwrap();
        assert_eq!(p.labels.label_of(EntityId(2)), Some(0));
        assert_eq!(p.text.lines().nth(2).unwrap(), "3: [0, 0, 0. 2]");
        assert_eq!(p.labels.len(), 2);
    }

    #[test]
    fn empty_window_is_an_error() {
        let (e, r) = superbowl_vocab();
        let q = ForecastQuery::tail(0, 0, 4, [1]);
        let err = build_prompt(&HistoryWindow::default(), &q, Vocabulary::new(&e, &r), PromptStyle::Index, &PromptOptions::default())
            .unwrap_err();
        assert_eq!(err, PromptError::EmptyHistory);
    }

    #[test]
    fn shuffle_requires_time_removed() {
        assert!(PromptOptions::new(true, Some(7)).is_err());
        assert!(PromptOptions::new(false, Some(7)).is_ok());
    }

    #[test]
    fn lexical_inverse_relation() {
        let (e, r) = superbowl_vocab();
        let w = window(&[(1, 1, 0, 3)]);
        let q = ForecastQuery::tail(1, 1, 4, [0]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Lexical, &PromptOptions::default()).unwrap();
        assert_eq!(p.text, "3: [St Louis, inverse Champion, 0. Superbowl]\n4: [St Louis, inverse Champion,");
    }

    #[test]
    fn label_cap_drops_oldest_facts() {
        let e = Dictionary::numeric(300);
        let r = Dictionary::numeric(1);
        let facts: Vec<_> = (0..150u32).map(|i| (0, 0, i + 1, i)).collect();
        let w = window(&facts);
        let q = ForecastQuery::tail(0, 0, 200, [1]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Index, &PromptOptions::default()).unwrap();
        assert_eq!(p.labels.len(), MAX_LABELS);
        assert!(p.text.starts_with("50: [0, 0, 0. 51]\n"));
    }

    #[test]
    fn chat_messages() {
        let (e, r) = superbowl_vocab();
        let w = window(&[(0, 0, 1, 2000)]);
        let q = ForecastQuery::tail(0, 0, 2023, [1]);
        let p = build_prompt(&w, &q, Vocabulary::new(&e, &r), PromptStyle::Index, &PromptOptions::default()).unwrap();
        let (system, user) = build_chat_messages(&p);
        assert!(system.contains("generate only the single number"));
        assert_eq!(user.as_bytes(), p.text.as_bytes());
    }
}
