mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use tkgcast::history::{canonicalize, retrieve_history, swap, HistoryDirection, HistorySource, HistoryStrategy, QueryDirection, Scope};
use tkgcast::kg_store::{Quadruple, TemporalKg};
use tkgcast::ForecastQuery;

const NE: u32 = 10;
const NR: u32 = 3;

/// Brute-force retrieval over the augmented graph: every raw fact and its
/// inverse, filtered by the strategy, ordered by (time, graph position,
/// inverse-after-raw), keeping the most recent `length`.
fn oracle(kg: &TemporalKg, visible_end: usize, q: &ForecastQuery, st: &HistoryStrategy) -> Vec<Quadruple> {
    let nr = kg.num_relations();
    let forward = q.relation.0 < nr;
    let mut out = Vec::new();
    for (pos, raw) in kg.facts().iter().enumerate().take(visible_end) {
        if raw.timestamp >= q.timestamp {
            continue;
        }
        for (is_inv, f) in [(false, *raw), (true, swap(*raw, nr))] {
            if f.subject != q.known_entity {
                continue;
            }
            let ok = match (st.scope, st.direction) {
                (Scope::Entity, HistoryDirection::Unidirectional) => is_inv != forward,
                (Scope::Entity, HistoryDirection::Bidirectional) => true,
                (Scope::Pair, HistoryDirection::Unidirectional) => f.relation == q.relation,
                (Scope::Pair, HistoryDirection::Bidirectional) => f.relation.0 % nr == q.relation.0 % nr,
            };
            if ok {
                out.push(((f.timestamp, pos, is_inv), f));
            }
        }
    }
    out.sort_by_key(|x| x.0);
    let skip = out.len().saturating_sub(st.length);
    out.into_iter().skip(skip).map(|x| x.1).collect()
}

fn strategy() -> impl Strategy<Value = HistoryStrategy> {
    (
        prop_oneof![Just(Scope::Entity), Just(Scope::Pair)],
        prop_oneof![Just(HistoryDirection::Unidirectional), Just(HistoryDirection::Bidirectional)],
        1usize..30,
    )
        .prop_map(|(s, d, l)| HistoryStrategy::new(s, d, l).unwrap())
}

fn query() -> impl Strategy<Value = ForecastQuery> {
    (0..NE, 0..NR, 0u32..16, any::<bool>()).prop_map(|(e, r, t, head)| {
        let q = if head { ForecastQuery::head(e, r, t, [0]) } else { ForecastQuery::tail(e, r, t, [0]) };
        canonicalize(&q, NR)
    })
}

fn facts(w: &tkgcast::HistoryWindow) -> Vec<Quadruple> {
    w.facts.iter().map(|f| f.fact).collect()
}

proptest! {
    #[test]
    fn retrieval_matches_oracle(seed in 0u64..500, q in query(), st in strategy()) {
        let kg = common::random_kg(seed, NE, NR, 15, 6, 2, 3);
        let full = retrieve_history(&HistorySource::full(&kg), &q, &st);
        prop_assert_eq!(facts(&full), oracle(&kg, kg.facts().len(), &q, &st));
        let bg = retrieve_history(&HistorySource::background(&kg, None), &q, &st);
        prop_assert_eq!(facts(&bg), oracle(&kg, kg.test_start() as usize, &q, &st));
    }

    #[test]
    fn windows_are_past_and_bounded(seed in 0u64..500, q in query(), st in strategy()) {
        let kg = common::random_kg(seed, NE, NR, 15, 6, 2, 3);
        let w = retrieve_history(&HistorySource::full(&kg), &q, &st);
        prop_assert!(w.len() <= st.length);
        prop_assert!(w.facts.iter().all(|f| f.fact.timestamp < q.timestamp && f.fact.subject == q.known_entity));
        prop_assert!(w.facts.windows(2).all(|p| p[0].fact.timestamp <= p[1].fact.timestamp));
    }

    #[test]
    fn unlimited_windows_nest(seed in 0u64..500, q in query()) {
        let kg = common::random_kg(seed, NE, NR, 15, 6, 2, 3);
        let src = HistorySource::full(&kg);
        let get = |s, d| -> BTreeSet<Quadruple> {
            facts(&retrieve_history(&src, &q, &HistoryStrategy::new(s, d, usize::MAX).unwrap())).into_iter().collect()
        };
        let (eu, eb) = (get(Scope::Entity, HistoryDirection::Unidirectional), get(Scope::Entity, HistoryDirection::Bidirectional));
        let (pu, pb) = (get(Scope::Pair, HistoryDirection::Unidirectional), get(Scope::Pair, HistoryDirection::Bidirectional));
        prop_assert!(eu.is_subset(&eb));
        prop_assert!(pu.is_subset(&pb));
        prop_assert!(pu.is_subset(&eu));
        prop_assert!(pb.is_subset(&eb));
    }

    #[test]
    fn canonicalize_is_idempotent(e in 0..NE, r in 0..NR, t in 0u32..20, head in any::<bool>()) {
        let q = if head { ForecastQuery::head(e, r, t, [1]) } else { ForecastQuery::tail(e, r, t, [1]) };
        let c = canonicalize(&q, NR);
        prop_assert_eq!(c.direction, QueryDirection::Tail);
        prop_assert_eq!(&canonicalize(&c, NR), &c);
        prop_assert_eq!(c.relation.0 >= NR, head);
    }
}

#[test]
fn background_source_hides_all_test_facts() {
    let kg = common::random_kg(11, NE, NR, 15, 6, 2, 3);
    let first_test_t = kg.facts()[kg.test_start() as usize].timestamp;
    let st = HistoryStrategy::new(Scope::Entity, HistoryDirection::Bidirectional, usize::MAX).unwrap();
    let src = HistorySource::background(&kg, None);
    let queries = tkgcast::evaluation::test_queries(&kg, tkgcast::evaluation::Directions::Both);
    assert!(!queries.is_empty());
    for q in queries {
        let w = retrieve_history(&src, &canonicalize(&q, NR), &st);
        assert!(w.facts.iter().all(|f| f.fact.timestamp < first_test_t && !f.predicted));
    }
}
