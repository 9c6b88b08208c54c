//! Span decoding and metric properties, including the frozen fixture.

mod common;

use dhg_core::corpus::{AspectTag, Polarity, Span};
use dhg_core::decode::{bio_spans, span_sentiment};
use dhg_core::metrics::{f_all, f_aspect, sentence_acc_noop, subset_filter, MetricsReport, Subset};
use proptest::prelude::*;

fn arb_tags(max: usize) -> impl Strategy<Value = Vec<AspectTag>> {
    prop::collection::vec((0usize..3).prop_map(AspectTag::from_index), 0..=max)
}

fn arb_dist() -> impl Strategy<Value = [f64; 3]> {
    (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

fn arb_pairs(n: usize) -> impl Strategy<Value = Vec<(Span, Polarity)>> {
    prop::collection::vec((1usize..=n, 0usize..3, 0usize..3), 0..4).prop_map(move |v| {
        let mut out: Vec<(Span, Polarity)> = v
            .into_iter()
            .map(|(s, len, p)| (Span::new(s, (s + len).min(n)), Polarity::from_index(p)))
            .collect();
        out.sort();
        out.dedup_by_key(|(s, _)| *s);
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spans_are_sorted_disjoint_and_cover_every_b(tags in arb_tags(12)) {
        let spans = bio_spans(&tags);
        for w in spans.windows(2) {
            prop_assert!(w[0].end < w[1].start);
        }
        for (i, t) in tags.iter().enumerate() {
            let pos = i + 1;
            let covered = spans.iter().any(|s| s.start <= pos && pos <= s.end);
            prop_assert_eq!(covered, *t != AspectTag::O);
            if *t == AspectTag::B {
                prop_assert!(spans.iter().any(|s| s.start == pos));
            }
        }
    }

    #[test]
    fn span_sentiment_is_permutation_invariant(dists in prop::collection::vec(arb_dist(), 1..6), rot in 0usize..6) {
        let n = dists.len();
        let span = Span::new(1, n);
        let (p, c) = span_sentiment(span, &dists).unwrap();
        let mut rotated = dists.clone();
        rotated.rotate_left(rot % n);
        let (p2, c2) = span_sentiment(span, &rotated).unwrap();
        prop_assert_eq!(p, p2);
        prop_assert!((c - c2).abs() < 1e-12);
        // all tokens agreeing reproduces that distribution
        let same = vec![dists[0]; n];
        let (p3, c3) = span_sentiment(span, &same).unwrap();
        let best = dists[0].iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!((c3 - best).abs() < 1e-12);
        prop_assert_eq!(dists[0][p3.index()], best);
    }

    #[test]
    fn pair_f1_never_exceeds_span_f1(draws in prop::collection::vec((arb_pairs(8), arb_pairs(8)), 1..6)) {
        let gold: Vec<_> = draws.iter().map(|d| d.0.clone()).collect();
        let pred: Vec<_> = draws.iter().map(|d| d.1.clone()).collect();
        let spans = |v: &Vec<Vec<(Span, Polarity)>>| v.iter().map(|s| s.iter().map(|p| p.0).collect::<Vec<_>>()).collect::<Vec<_>>();
        let fa = f_aspect(&spans(&pred), &spans(&gold)).f1();
        let fall = f_all(&pred, &gold).f1();
        prop_assert!(fall <= fa + 1e-15);
        prop_assert!((0.0..=1.0).contains(&fall) && (0.0..=1.0).contains(&fa));
    }

    #[test]
    fn metrics_ignore_sentence_order(draws in prop::collection::vec((arb_pairs(5), arb_pairs(5)), 1..6)) {
        let items: Vec<_> = draws
            .iter()
            .map(|(g, p)| dhg_core::metrics::EvalItem {
                gold: g.clone(),
                pred: p.clone(),
                token_dists: vec![[0.5, 0.3, 0.2]; 5],
            })
            .collect();
        let a = MetricsReport::compute(&items).unwrap();
        let mut rev = items.clone();
        rev.reverse();
        let b = MetricsReport::compute(&rev).unwrap();
        prop_assert_eq!(&a, &b);
        // F recomputable from counts
        let c = a.pair_counts;
        if c.pred + c.gold > 0 && c.tp > 0 {
            let (p, r) = (c.precision(), c.recall());
            prop_assert!((a.f_all - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }
}

#[test]
fn frozen_fixture_reproduces_hand_computed_scores() {
    let text = std::fs::read_to_string(common::fixture_path("metrics.txt")).unwrap();
    let items = common::read_metric_fixture(&text);
    let r = MetricsReport::compute(&items).unwrap();
    assert_eq!(r.f_a, 0.5);
    assert_eq!(r.f_all, 0.5);
    assert_eq!(r.acc_s, 0.5);
    assert_eq!(r.f_s, (2.0 / 3.0) / 2.0);
    assert_eq!(r.sentence_acc_noop, Some(1.0));
    assert_eq!((r.aspect_counts.tp, r.aspect_counts.pred, r.aspect_counts.gold), (1, 2, 2));
}

#[test]
fn noop_accuracy_examples() {
    let none: Vec<Vec<Span>> = vec![vec![]; 3];
    assert_eq!(sentence_acc_noop(&none, &none).unwrap().0, 1.0);
    let pred = vec![vec![Span::new(1, 1)], vec![]];
    let gold: Vec<Vec<Span>> = vec![vec![], vec![]];
    assert_eq!(sentence_acc_noop(&pred, &gold).unwrap().0, 0.5);
}

#[test]
fn subsets_of_the_toy_corpus() {
    let c = common::toy_corpus();
    let multi = subset_filter(&c, Subset::Multi);
    let noop = subset_filter(&c, Subset::Noop);
    assert!(multi.sentences.iter().all(|s| s.gold_aspects().len() >= 2));
    assert!(noop.sentences.iter().all(|s| s.gold_aspects().is_empty()));
    assert_eq!(multi.len(), c.span_stats().multi_aspect_sentences);
    assert_eq!(noop.len(), c.span_stats().no_aspect_sentences);
    assert_eq!(subset_filter(&c, Subset::All), c);
}
