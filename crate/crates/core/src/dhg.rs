//! The iterative predict-and-rewire loop over the heterogeneous graph.
//!
//! Each iteration runs the aspect and sentiment stacks on the current graph,
//! scores every word against the three sentiment nodes, links confident
//! (word, polarity) pairs, and trims sentiment-node degrees back to the
//! training distribution. The next iteration reads the rewired graph; edge
//! structure itself is not differentiated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Polarity, Sentence};
use crate::error::{Error, Result};
use crate::graph::{drop_sentiment_edges, HeteroGraph, NodeId};
use crate::model::cell::{adjacency_vars, node_inputs, DropoutCtx};
use crate::model::{crf_scores, mlp_logits, run_stack, sim_logits, Model};
use crate::numcore::tensor::softmax;
use crate::numcore::{Tape, Var};

pub const DEFAULT_TIMES: usize = 3;
pub const DEFAULT_EPSILON: f64 = 0.75;
pub const DEFAULT_MU: f64 = 10.0;
/// Fraction of gold edges kept when teacher forcing (80% are dropped).
pub const DEFAULT_TF_KEEP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhgConfig {
    pub times: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub tf_keep: f64,
}

impl Default for DhgConfig {
    fn default() -> Self {
        DhgConfig {
            times: DEFAULT_TIMES,
            epsilon: DEFAULT_EPSILON,
            mu: DEFAULT_MU,
            tf_keep: DEFAULT_TF_KEEP,
        }
    }
}

impl DhgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.times == 0 {
            return Err(Error::invalid("DHG times must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::invalid(format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::invalid(format!("mu {} must be positive", self.mu)));
        }
        if !(self.tf_keep > 0.0 && self.tf_keep <= 1.0) {
            return Err(Error::invalid(format!("tf_keep {} outside (0, 1]", self.tf_keep)));
        }
        Ok(())
    }
}

/// Probability of trusting predicted edges at `epoch`:
/// `1 - mu / (mu + exp(epoch / mu))`.
pub fn teacher_forcing_prob(epoch: usize, mu: f64) -> Result<f64> {
    Ok(1.0 - teacher_forcing_complement(epoch, mu)?)
}

/// `1 - teacher_forcing_prob`, kept separate because it stays resolvable in
/// floating point long after the probability itself rounds to 1.
pub fn teacher_forcing_complement(epoch: usize, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("mu {mu} must be positive")));
    }
    Ok(mu / (mu + (epoch as f64 / mu).exp()))
}

/// Gold (word, polarity) links, each kept independently with `tf_keep`.
pub fn teacher_edges<R: Rng + ?Sized>(sentence: &Sentence, tf_keep: f64, rng: &mut R) -> Vec<(usize, Polarity)> {
    sentence
        .tokens
        .iter()
        .filter_map(|t| t.sentiment.map(|p| (t.index, p)))
        .filter(|_| tf_keep >= 1.0 || rng.gen::<f64>() < tf_keep)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEvent {
    pub word: usize,
    pub polarity: Polarity,
    pub conf: f64,
    /// Inserted from gold labels or a script rather than a prediction.
    pub forced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Similarity-head distribution per word, POS/NEG/NEU.
    pub probs: Vec<[f64; 3]>,
    pub added: Vec<EdgeEvent>,
    pub dropped: Vec<(usize, Polarity)>,
    pub m_checksum: f64,
    pub n_checksum: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    pub iterations: Vec<IterationRecord>,
}

impl IterationTrace {
    /// `ITER l ADD w→s conf` / `ITER l DROP w→s` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for rec in &self.iterations {
            for e in &rec.added {
                out.push_str(&format!(
                    "ITER {} ADD {}→{} {:.6}{}\n",
                    rec.iteration,
                    e.word,
                    e.polarity,
                    e.conf,
                    if e.forced { " forced" } else { "" }
                ));
            }
            for (w, p) in &rec.dropped {
                out.push_str(&format!("ITER {} DROP {w}→{p}\n", rec.iteration));
            }
        }
        out
    }
}

/// How sentiment edges are chosen during a pass.
pub enum DhgMode<'a> {
    /// Link every (word, polarity) with probability above epsilon.
    Eval,
    /// Training: one coin flip per pass picks predicted edges (with the
    /// scheduled probability) or subsampled gold edges; dropout is active.
    Train {
        epoch: usize,
        gold: &'a Sentence,
        dropout: f64,
        /// Always use gold edges, skipping the scheduled coin flip.
        force_teacher: bool,
        rng: &'a mut ChaCha8Rng,
    },
    /// Insert exactly the listed edges at each iteration (index 0 = first).
    Scripted(&'a [Vec<(usize, Polarity)>]),
}

pub struct DhgOutput {
    /// Aspect-stack hidden rows after the last iteration (all nodes).
    pub m: Var,
    /// Sentiment-stack hidden rows after the last iteration (all nodes).
    pub n: Var,
    pub trace: IterationTrace,
    pub graph: HeteroGraph,
    /// Whether this pass used predicted rather than gold edges.
    pub predicted_edges: bool,
}

fn checksum(tape: &Tape<'_>, v: Var) -> f64 {
    tape.value(v).data().iter().sum()
}

/// Runs the shared stack once, then `cfg.times` rounds of aspect/sentiment
/// stacks with graph rewiring in between.
pub fn run_dhg(
    tape: &mut Tape<'_>,
    model: &Model,
    token_ids: &[usize],
    graph0: &HeteroGraph,
    cfg: &DhgConfig,
    train_dist: &[f64; 3],
    mut mode: DhgMode<'_>,
) -> Result<DhgOutput> {
    cfg.validate()?;
    if !graph0.sentiment_edges().is_empty() {
        return Err(Error::Graph("initial graph already has sentiment edges".into()));
    }
    let n_words = graph0.n_words();
    if token_ids.len() != n_words {
        return Err(Error::invalid(format!(
            "{} token ids for a {n_words}-word graph",
            token_ids.len()
        )));
    }

    let predicted_edges = match &mut mode {
        DhgMode::Eval => true,
        DhgMode::Train {
            force_teacher: true, ..
        } => false,
        DhgMode::Train { epoch, rng, .. } => rng.gen::<f64>() < teacher_forcing_prob(*epoch, cfg.mu)?,
        DhgMode::Scripted(_) => false,
    };

    let mut graph = graph0.clone();
    let x = node_inputs(tape, model, token_ids)?;
    let senti = tape.param(model.senti);

    let mut adj = adjacency_vars(tape, &graph);
    let shared = {
        let mut d = dropout_ctx(&mut mode);
        run_stack(tape, &model.shared, x, x, &adj, d.as_mut())?
    };
    let mut m = shared;
    let mut n = shared;
    let mut trace = IterationTrace::default();

    for l in 1..=cfg.times {
        if l > 1 {
            adj = adjacency_vars(tape, &graph);
        }
        {
            let mut d = dropout_ctx(&mut mode);
            m = run_stack(tape, &model.ae, x, m, &adj, d.as_mut())?;
        }
        {
            let mut d = dropout_ctx(&mut mode);
            n = run_stack(tape, &model.as_, x, n, &adj, d.as_mut())?;
        }

        let nw = tape.slice_rows(n, 0, n_words)?;
        let logits = sim_logits(tape, nw, senti)?;
        let probs: Vec<[f64; 3]> = (0..n_words)
            .map(|i| {
                let p = softmax(tape.value(logits).row(i));
                [p[0], p[1], p[2]]
            })
            .collect();

        let mut added = Vec::new();
        if predicted_edges {
            for (i, row) in probs.iter().enumerate() {
                for p in Polarity::ALL {
                    let conf = row[p.index()];
                    if conf > cfg.epsilon {
                        graph.add_sentiment_edge(NodeId::Word(i + 1), NodeId::Sentiment(p), conf)?;
                        added.push(EdgeEvent {
                            word: i + 1,
                            polarity: p,
                            conf,
                            forced: false,
                        });
                    }
                }
            }
        } else {
            let forced: Vec<(usize, Polarity)> = match &mut mode {
                DhgMode::Train { gold, rng, .. } => teacher_edges(gold, cfg.tf_keep, *rng),
                DhgMode::Scripted(script) => script.get(l - 1).cloned().unwrap_or_default(),
                DhgMode::Eval => unreachable!("eval always uses predicted edges"),
            };
            for (w, p) in forced {
                graph.add_sentiment_edge(NodeId::Word(w), NodeId::Sentiment(p), 1.0)?;
                added.push(EdgeEvent {
                    word: w,
                    polarity: p,
                    conf: 1.0,
                    forced: true,
                });
            }
        }

        let dropped = drop_sentiment_edges(&mut graph, train_dist);
        graph.check_invariants()?;
        trace.iterations.push(IterationRecord {
            iteration: l,
            probs,
            added,
            dropped,
            m_checksum: checksum(tape, m),
            n_checksum: checksum(tape, n),
        });
    }

    Ok(DhgOutput {
        m,
        n,
        trace,
        graph,
        predicted_edges,
    })
}

fn dropout_ctx<'m>(mode: &'m mut DhgMode<'_>) -> Option<DropoutCtx<'m>> {
    match mode {
        DhgMode::Train { dropout, rng, .. } if *dropout > 0.0 => Some(DropoutCtx {
            rate: *dropout,
            rng,
        }),
        _ => None,
    }
}

/// Head outputs on the final-iteration hidden states.
pub struct SentenceOutputs {
    /// `n x 12` CRF scores.
    pub crf_scores: Var,
    /// `n x 4` MLP logits (POS/NEG/NEU/NONE).
    pub mlp_logits: Var,
    /// `n x 3` similarity logits (POS/NEG/NEU).
    pub sim_logits: Var,
    pub dhg: DhgOutput,
}

/// Full forward pass for one sentence.
pub fn forward_sentence(
    tape: &mut Tape<'_>,
    model: &Model,
    token_ids: &[usize],
    graph0: &HeteroGraph,
    cfg: &DhgConfig,
    train_dist: &[f64; 3],
    mode: DhgMode<'_>,
) -> Result<SentenceOutputs> {
    let dhg = run_dhg(tape, model, token_ids, graph0, cfg, train_dist, mode)?;
    let n_words = graph0.n_words();
    let m_words = tape.slice_rows(dhg.m, 0, n_words)?;
    let n_words_v = tape.slice_rows(dhg.n, 0, n_words)?;
    let crf = crf_scores(tape, model, m_words)?;
    let mlp = mlp_logits(tape, model, n_words_v)?;
    let senti = tape.param(model.senti);
    let sim = sim_logits(tape, n_words_v, senti)?;
    Ok(SentenceOutputs {
        crf_scores: crf,
        mlp_logits: mlp,
        sim_logits: sim,
        dhg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    use crate::corpus::parse_str;

    #[test]
    fn schedule_values() {
        let p0 = teacher_forcing_prob(0, 10.0).unwrap();
        assert!((p0 - (1.0 - 10.0 / 11.0)).abs() < 1e-12);
        assert!((p0 - 0.09091).abs() < 1e-5);
        let p50 = teacher_forcing_prob(50, 10.0).unwrap();
        assert!((p50 - 0.9369).abs() < 1e-4, "{p50}");
        assert!(teacher_forcing_prob(500, 10.0).unwrap() > 0.999999);
        for e in 0..300 {
            assert!(teacher_forcing_prob(e + 1, 10.0).unwrap() > teacher_forcing_prob(e, 10.0).unwrap());
        }
        for e in 0..500 {
            assert!(teacher_forcing_complement(e + 1, 10.0).unwrap() < teacher_forcing_complement(e, 10.0).unwrap());
        }
        assert_eq!(teacher_forcing_complement(0, 10.0).unwrap(), 10.0 / 11.0);
        assert!(teacher_forcing_prob(1, 0.0).is_err());
        assert!(teacher_forcing_prob(1, -1.0).is_err());
    }

    #[test]
    fn teacher_edge_sampling() {
        let c = parse_str(
            "1\tgreat\t2\tamod\tO\tNONE\n2\tbattery\t3\tcompound\tB\tPOS\n3\tlife\t0\troot\tI\tPOS\n",
            "t",
        )
        .unwrap();
        let s = &c.sentences[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            teacher_edges(s, 1.0, &mut rng),
            vec![(2, Polarity::Pos), (3, Polarity::Pos)]
        );
        let none = parse_str("1\tok\t0\troot\tO\tNONE\n", "t").unwrap();
        assert!(teacher_edges(&none.sentences[0], 1.0, &mut rng).is_empty());
        let a = teacher_edges(s, DEFAULT_TF_KEEP, &mut ChaCha8Rng::seed_from_u64(5));
        let b = teacher_edges(s, DEFAULT_TF_KEEP, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn config_defaults_and_validation() {
        let d = DhgConfig::default();
        assert_eq!((d.times, d.epsilon, d.mu, d.tf_keep), (3, 0.75, 10.0, 0.2));
        assert!(DhgConfig { times: 0, ..d }.validate().is_err());
        assert!(DhgConfig { epsilon: 0.0, ..d }.validate().is_err());
        assert!(DhgConfig { epsilon: 1.0, ..d }.validate().is_ok());
        assert!(DhgConfig { tf_keep: 0.0, ..d }.validate().is_err());
    }
}
