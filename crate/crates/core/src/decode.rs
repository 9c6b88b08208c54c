//! From model outputs to aspect spans with polarities.

use crate::corpus::{AspectTag, Polarity, Sentence, Span};
use crate::dhg::{forward_sentence, DhgMode, IterationTrace};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::model::crf_viterbi;
use crate::model::heads::NONE_CLASS;
use crate::numcore::tensor::softmax;
use crate::numcore::Tape;
use crate::pipeline::Tagger;

#[derive(Clone, Debug, PartialEq)]
pub struct AspectPrediction {
    pub span: Span,
    pub sentiment: Polarity,
    pub confidence: f64,
}

/// Everything `predict` learns about one sentence.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub sentence_id: String,
    pub tags: Vec<AspectTag>,
    pub aspects: Vec<AspectPrediction>,
    /// Per-token POS/NEG/NEU distribution used for span sentiment.
    pub token_dists: Vec<[f64; 3]>,
    pub trace: IterationTrace,
    pub graph: HeteroGraph,
}

impl Prediction {
    pub fn pairs(&self) -> Vec<(Span, Polarity)> {
        self.aspects.iter().map(|a| (a.span, a.sentiment)).collect()
    }

    /// Prediction-file lines:
    /// `sentence_id \t start \t end \t surface \t sentiment \t confidence`.
    pub fn to_lines(&self, sentence: &Sentence) -> String {
        let mut out = String::new();
        for a in &self.aspects {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\n",
                self.sentence_id,
                a.span.start,
                a.span.end,
                sentence.surface_of(a.span),
                a.sentiment,
                a.confidence
            ));
        }
        out
    }
}

/// Maximal `B I*` runs as 1-based spans. A stray `I` after `O` (or at the
/// start) opens a span as if it were `B`.
pub fn bio_spans(tags: &[AspectTag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        let pos = i + 1;
        match t {
            AspectTag::O => {
                if let Some(s) = open.take() {
                    spans.push(Span::new(s, pos - 1));
                }
            }
            AspectTag::B => {
                if let Some(s) = open.take() {
                    spans.push(Span::new(s, pos - 1));
                }
                open = Some(pos);
            }
            AspectTag::I => {
                if open.is_none() {
                    open = Some(pos);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(Span::new(s, tags.len()));
    }
    spans
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax3(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Averages the span's token distributions and returns the winning polarity
/// with its averaged probability.
pub fn span_sentiment(span: Span, dists: &[[f64; 3]]) -> Result<(Polarity, f64)> {
    if span.start == 0 || span.start > span.end || span.end > dists.len() {
        return Err(Error::invalid(format!(
            "span {}..{} outside a {}-token sentence",
            span.start,
            span.end,
            dists.len()
        )));
    }
    let rows = &dists[span.start - 1..span.end];
    let mut mean = [0.0; 3];
    for r in rows {
        for c in 0..3 {
            mean[c] += r[c];
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    let best = argmax3(&mean);
    Ok((Polarity::from_index(best), mean[best]))
}

/// Elementwise mean of the similarity-head distribution and the MLP
/// distribution restricted to POS/NEG/NEU and renormalised.
pub fn combine_heads(mlp_probs: &[f64], sim_probs: &[f64]) -> [f64; 3] {
    let polar: f64 = mlp_probs[..NONE_CLASS].iter().sum();
    std::array::from_fn(|c| {
        let mlp = if polar > 0.0 { mlp_probs[c] / polar } else { 1.0 / 3.0 };
        0.5 * (mlp + sim_probs[c])
    })
}

/// Eval-mode inference: DHG pass, Viterbi tags, spans, span sentiment.
pub fn predict(tagger: &Tagger, sentence: &Sentence) -> Result<Prediction> {
    let ids = tagger.token_ids(sentence);
    let graph0 = tagger.initial_graph(sentence);
    let mut tape = Tape::new(&tagger.model.store);
    let out = forward_sentence(
        &mut tape,
        &tagger.model,
        &ids,
        &graph0,
        &tagger.dhg,
        &tagger.train_dist,
        DhgMode::Eval,
    )?;
    let tags = crf_viterbi(tape.value(out.crf_scores));
    let mlp = tape.value(out.mlp_logits);
    let sim = tape.value(out.sim_logits);
    let token_dists: Vec<[f64; 3]> = (0..sentence.len())
        .map(|i| combine_heads(&softmax(mlp.row(i)), &softmax(sim.row(i))))
        .collect();
    let aspects = bio_spans(&tags)
        .into_iter()
        .map(|span| {
            let (sentiment, confidence) = span_sentiment(span, &token_dists)?;
            Ok(AspectPrediction {
                span,
                sentiment,
                confidence,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Prediction {
        sentence_id: sentence.id.clone(),
        tags,
        aspects,
        token_dists,
        trace: out.dhg.trace,
        graph: out.dhg.graph,
    })
}
