//! Structural guarantees of the iterative graph rewiring.

mod common;

use dhg_core::corpus::{Corpus, Polarity};
use dhg_core::dhg::{forward_sentence, run_dhg, DhgConfig, DhgMode};
use dhg_core::graph::{sentiment_budgets, HeteroGraph, NodeId};
use dhg_core::model::cell::{adjacency_vars, node_inputs};
use dhg_core::model::{crf_scores, mlp_logits, run_stack, sim_logits};
use dhg_core::numcore::Tape;
use dhg_core::pipeline::Tagger;
use dhg_core::trainer::{init_tagger, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tagger(corpus: &Corpus, dhg: DhgConfig, seed: u64) -> Tagger {
    let cfg = TrainConfig {
        hidden: 8,
        embed_dim: 6,
        seed,
        dhg,
        ..TrainConfig::default()
    };
    init_tagger(corpus, &cfg, None).unwrap()
}

/// Sharpens the similarity head so confident sentiment edges appear.
fn sharpen(t: &mut Tagger, factor: f64) {
    let id = t.model.senti;
    t.model.store.value_mut(id).scale_assign(factor);
}

/// Replays a trace from the initial graph, checking degree budgets after
/// every drop step and that the replay reaches the reported final graph.
fn replay(graph0: &HeteroGraph, out: &dhg_core::dhg::DhgOutput, dist: &[f64; 3]) {
    let mut g = graph0.clone();
    for rec in &out.trace.iterations {
        for e in &rec.added {
            g.add_sentiment_edge(NodeId::Word(e.word), NodeId::Sentiment(e.polarity), e.conf)
                .unwrap();
        }
        let budgets = sentiment_budgets(&g, dist);
        for (w, p) in &rec.dropped {
            g.remove_sentiment_edge(*w, *p);
        }
        for p in Polarity::ALL {
            assert!(
                g.sentiment_degree(p) <= budgets[p.index()],
                "iteration {}: {p} degree {} over budget {}",
                rec.iteration,
                g.sentiment_degree(p),
                budgets[p.index()]
            );
        }
        g.check_invariants().unwrap();
    }
    assert_eq!(g.sentiment_edges(), out.graph.sentiment_edges());
}

#[test]
fn epsilon_one_never_adds_edges() {
    let corpus = common::toy_corpus();
    for seed in 0..3 {
        let mut t = tagger(&corpus, DhgConfig { epsilon: 1.0, ..DhgConfig::default() }, seed);
        sharpen(&mut t, 50.0);
        for s in &corpus.sentences {
            let mut tape = Tape::new(&t.model.store);
            let out = run_dhg(
                &mut tape,
                &t.model,
                &t.token_ids(s),
                &t.initial_graph(s),
                &t.dhg,
                &t.train_dist,
                DhgMode::Eval,
            )
            .unwrap();
            assert!(out.trace.iterations.iter().all(|r| r.added.is_empty()));
            assert!(out.graph.sentiment_edges().is_empty());
        }
    }
}

#[test]
fn predicted_edges_exceed_epsilon_and_respect_budgets() {
    let corpus = common::toy_corpus();
    let mut total_added = 0;
    for (seed, eps) in [(1, 0.5), (2, 0.75), (3, 0.4)] {
        let mut t = tagger(&corpus, DhgConfig { epsilon: eps, times: 3, ..DhgConfig::default() }, seed);
        sharpen(&mut t, 30.0);
        for s in &corpus.sentences {
            let g0 = t.initial_graph(s);
            let mut tape = Tape::new(&t.model.store);
            let out = run_dhg(&mut tape, &t.model, &t.token_ids(s), &g0, &t.dhg, &t.train_dist, DhgMode::Eval)
                .unwrap();
            for rec in &out.trace.iterations {
                for e in &rec.added {
                    assert!(!e.forced);
                    assert!(e.conf > eps, "conf {} <= {eps}", e.conf);
                    assert_eq!(e.conf, rec.probs[e.word - 1][e.polarity.index()]);
                    total_added += 1;
                }
            }
            replay(&g0, &out, &t.train_dist);
        }
    }
    assert!(total_added > 0, "sharpened heads should add edges");
}

#[test]
fn forced_edges_in_training_also_respect_budgets() {
    let corpus = common::toy_corpus();
    let t = tagger(&corpus, DhgConfig { tf_keep: 1.0, ..DhgConfig::default() }, 5);
    for s in &corpus.sentences {
        let g0 = t.initial_graph(s);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new(&t.model.store);
        let out = run_dhg(
            &mut tape,
            &t.model,
            &t.token_ids(s),
            &g0,
            &t.dhg,
            &t.train_dist,
            DhgMode::Train {
                epoch: 0,
                gold: s,
                dropout: 0.5,
                force_teacher: true,
                rng: &mut rng,
            },
        )
        .unwrap();
        assert!(!out.predicted_edges);
        let gold: Vec<(usize, Polarity)> = s
            .tokens
            .iter()
            .filter_map(|tok| tok.sentiment.map(|p| (tok.index, p)))
            .collect();
        for rec in &out.trace.iterations {
            let added: Vec<(usize, Polarity)> = rec.added.iter().map(|e| (e.word, e.polarity)).collect();
            assert_eq!(added, gold);
            assert!(rec.added.iter().all(|e| e.forced && e.conf == 1.0));
        }
        replay(&g0, &out, &t.train_dist);
    }
}

/// The aspect/sentiment stacks and heads run once on the initial graph.
fn static_pass(t: &Tagger, s: &dhg_core::corpus::Sentence) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ids = t.token_ids(s);
    let g0 = t.initial_graph(s);
    let m = &t.model;
    let mut tape = Tape::new(&m.store);
    let x = node_inputs(&mut tape, m, &ids).unwrap();
    let _senti = tape.param(m.senti);
    let adj = adjacency_vars(&mut tape, &g0);
    let h = run_stack(&mut tape, &m.shared, x, x, &adj, None).unwrap();
    let hm = run_stack(&mut tape, &m.ae, x, h, &adj, None).unwrap();
    let hn = run_stack(&mut tape, &m.as_, x, h, &adj, None).unwrap();
    let n = s.len();
    let mw = tape.slice_rows(hm, 0, n).unwrap();
    let nw = tape.slice_rows(hn, 0, n).unwrap();
    let crf = crf_scores(&mut tape, m, mw).unwrap();
    let mlp = mlp_logits(&mut tape, m, nw).unwrap();
    let senti = tape.param(m.senti);
    let sim = sim_logits(&mut tape, nw, senti).unwrap();
    (
        tape.value(crf).data().to_vec(),
        tape.value(mlp).data().to_vec(),
        tape.value(sim).data().to_vec(),
    )
}

#[test]
fn single_iteration_equals_static_pass_bit_for_bit() {
    let corpus = common::toy_corpus();
    let mut t = tagger(&corpus, DhgConfig { times: 1, epsilon: 0.4, ..DhgConfig::default() }, 11);
    sharpen(&mut t, 30.0);
    for s in &corpus.sentences {
        let mut tape = Tape::new(&t.model.store);
        let out = forward_sentence(
            &mut tape,
            &t.model,
            &t.token_ids(s),
            &t.initial_graph(s),
            &t.dhg,
            &t.train_dist,
            DhgMode::Eval,
        )
        .unwrap();
        let (crf, mlp, sim) = static_pass(&t, s);
        assert_eq!(tape.value(out.crf_scores).data(), crf.as_slice());
        assert_eq!(tape.value(out.mlp_logits).data(), mlp.as_slice());
        assert_eq!(tape.value(out.sim_logits).data(), sim.as_slice());
    }
}

/// Iteration 2 must read the graph produced by iteration 1 and continue
/// from iteration 1's hidden states.
#[test]
fn second_iteration_reads_the_rewired_graph() {
    let corpus = common::toy_corpus();
    let t = tagger(&corpus, DhgConfig { times: 2, ..DhgConfig::default() }, 13);
    let s = &corpus.sentences[0];
    let ids = t.token_ids(s);
    let g0 = t.initial_graph(s);
    let script = vec![vec![(6, Polarity::Pos), (14, Polarity::Neg), (2, Polarity::Pos)], vec![]];

    let mut tape = Tape::new(&t.model.store);
    let out = run_dhg(&mut tape, &t.model, &ids, &g0, &t.dhg, &t.train_dist, DhgMode::Scripted(&script))
        .unwrap();
    let got = tape.value(out.m).clone();
    let got_n = tape.value(out.n).clone();

    // manual two-step unrolling
    let m = &t.model;
    let mut tape = Tape::new(&m.store);
    let x = node_inputs(&mut tape, m, &ids).unwrap();
    let _senti = tape.param(m.senti);
    let adj0 = adjacency_vars(&mut tape, &g0);
    let h = run_stack(&mut tape, &m.shared, x, x, &adj0, None).unwrap();
    let m1 = run_stack(&mut tape, &m.ae, x, h, &adj0, None).unwrap();
    let n1 = run_stack(&mut tape, &m.as_, x, h, &adj0, None).unwrap();
    let mut g1 = g0.clone();
    for &(w, p) in &script[0] {
        g1.add_sentiment_edge(NodeId::Word(w), NodeId::Sentiment(p), 1.0).unwrap();
    }
    dhg_core::graph::drop_sentiment_edges(&mut g1, &t.train_dist);
    assert_eq!(g1.sentiment_edges(), out.graph.sentiment_edges());
    assert!(!g1.sentiment_edges().is_empty());
    let adj1 = adjacency_vars(&mut tape, &g1);
    let m2 = run_stack(&mut tape, &m.ae, x, m1, &adj1, None).unwrap();
    let n2 = run_stack(&mut tape, &m.as_, x, n1, &adj1, None).unwrap();
    assert_eq!(tape.value(m2), &got);
    assert_eq!(tape.value(n2), &got_n);

    // the rewiring matters: the same recurrence on the unmodified graph differs
    let m2_static = run_stack(&mut tape, &m.ae, x, m1, &adj0, None).unwrap();
    assert_ne!(tape.value(m2_static), &got);
}

#[test]
fn eval_passes_are_deterministic_and_trace_dump_is_stable() {
    let corpus = common::toy_corpus();
    let mut t = tagger(&corpus, DhgConfig { epsilon: 0.5, ..DhgConfig::default() }, 17);
    sharpen(&mut t, 30.0);
    let s = &corpus.sentences[1];
    let run = || {
        let mut tape = Tape::new(&t.model.store);
        let out = run_dhg(&mut tape, &t.model, &t.token_ids(s), &t.initial_graph(s), &t.dhg, &t.train_dist, DhgMode::Eval)
            .unwrap();
        (out.trace.dump(), out.graph.dump(), tape.value(out.m).clone())
    };
    let a = run();
    assert_eq!(a, run());
    for line in a.0.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f[0], "ITER");
        assert!(f[2] == "ADD" || f[2] == "DROP", "{line}");
    }
}

#[test]
fn initial_graph_with_sentiment_edges_is_rejected() {
    let corpus = common::toy_corpus();
    let t = tagger(&corpus, DhgConfig::default(), 1);
    let s = &corpus.sentences[1];
    let mut g = t.initial_graph(s);
    g.add_sentiment_edge(NodeId::Word(1), NodeId::Sentiment(Polarity::Pos), 0.9)
        .unwrap();
    let mut tape = Tape::new(&t.model.store);
    assert!(run_dhg(&mut tape, &t.model, &t.token_ids(s), &g, &t.dhg, &t.train_dist, DhgMode::Eval).is_err());
}
