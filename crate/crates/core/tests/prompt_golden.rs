//! Byte-exact prompt fixtures under `testdata/prompts/`.

mod common;

use std::path::PathBuf;

use tkgcast::history::{retrieve_history, HistoryDirection, HistorySource, HistoryStrategy, Scope};
use tkgcast::kg_store::{Dictionary, Quadruple, TemporalKg};
use tkgcast::prompting::Vocabulary;
use tkgcast::{build_prompt, ForecastQuery, PromptOptions, PromptStyle};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata/prompts").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn render(kg: &TemporalKg, q: &ForecastQuery, st: HistoryStrategy, style: PromptStyle, opts: PromptOptions) -> String {
    let w = retrieve_history(&HistorySource::full(kg), q, &st);
    build_prompt(&w, q, Vocabulary::new(kg.entities(), kg.relations()), style, &opts).unwrap().text
}

fn uni_entity(len: usize) -> HistoryStrategy {
    HistoryStrategy::new(Scope::Entity, HistoryDirection::Unidirectional, len).unwrap()
}

#[test]
fn acled_index() {
    let (kg, q) = common::acled_scenario();
    assert_eq!(render(&kg, &q, uni_entity(5), PromptStyle::Index, PromptOptions::default()), fixture("acled_index.txt"));
}

#[test]
fn acled_lexical() {
    let (kg, q) = common::acled_scenario();
    assert_eq!(render(&kg, &q, uni_entity(5), PromptStyle::Lexical, PromptOptions::default()), fixture("acled_lexical.txt"));
}

#[test]
fn acled_index_no_time() {
    let (kg, q) = common::acled_scenario();
    let opts = PromptOptions::new(false, None).unwrap();
    assert_eq!(render(&kg, &q, uni_entity(5), PromptStyle::Index, opts), fixture("acled_index_no_time.txt"));
}

#[test]
fn acled_index_shuffled() {
    let (kg, q) = common::acled_scenario();
    let opts = PromptOptions::new(false, Some(42)).unwrap();
    assert_eq!(render(&kg, &q, uni_entity(5), PromptStyle::Index, opts), fixture("acled_index_shuffled_42.txt"));
}

#[test]
fn superbowl_lexical_bidirectional() {
    let entities = Dictionary::from_pairs([("Superbowl", 0), ("St Louis", 1), ("Baltimore", 2), ("Kupp", 3), ("Los Angeles", 4)]).unwrap();
    let relations = Dictionary::from_pairs([("Champion", 0), ("Played", 1)]).unwrap();
    let train = vec![
        Quadruple::new(0, 0, 2, 2001),
        Quadruple::new(0, 0, 1, 2002),
        Quadruple::new(0, 0, 2, 2003),
        Quadruple::new(3, 1, 0, 2005),
    ];
    let test = vec![Quadruple::new(0, 0, 4, 2023)];
    let kg = TemporalKg::from_splits("superbowl", entities, relations, train, vec![], test, 1).unwrap();
    let q = ForecastQuery::tail(0, 0, 2023, [4]);
    let st = HistoryStrategy::new(Scope::Entity, HistoryDirection::Bidirectional, 100).unwrap();
    assert_eq!(render(&kg, &q, st, PromptStyle::Lexical, PromptOptions::default()), fixture("superbowl_lexical_bi.txt"));
}
