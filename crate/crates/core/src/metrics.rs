//! Span-level evaluation: F-a, acc-s, F-s, F-all and sentence-level no-op
//! accuracy, plus the multi-aspect / no-aspect subset filters.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{Corpus, Polarity, Span};
use crate::decode::span_sentiment;
use crate::error::{Error, Result};

/// True positives, predicted and gold counts of one micro-averaged F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrfCounts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.gold)
    }

    /// `2PR / (P + R)`, computed as `2 tp / (pred + gold)`. Nothing
    /// predicted and nothing to find scores 1.
    pub fn f1(&self) -> f64 {
        if self.pred + self.gold == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / (self.pred + self.gold) as f64
        }
    }

    fn merge(&mut self, other: PrfCounts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gold += other.gold;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

fn match_counts<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> PrfCounts {
    let mut c = PrfCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        let p: BTreeSet<T> = p.iter().cloned().collect();
        let g: BTreeSet<T> = g.iter().cloned().collect();
        c.merge(PrfCounts {
            tp: p.intersection(&g).count(),
            pred: p.len(),
            gold: g.len(),
        });
    }
    c
}

/// Exact-span micro F1 counts, one span list per sentence.
pub fn f_aspect(pred: &[Vec<Span>], gold: &[Vec<Span>]) -> PrfCounts {
    match_counts(pred, gold)
}

/// Micro F1 counts over (span, polarity) pairs; both must match.
pub fn f_all(pred: &[Vec<(Span, Polarity)>], gold: &[Vec<(Span, Polarity)>]) -> PrfCounts {
    match_counts(pred, gold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SentimentScores {
    pub acc_s: f64,
    pub f_s: f64,
    pub correct: usize,
    pub total: usize,
    /// Per-polarity counts, POS/NEG/NEU order.
    pub per_class: [PrfCounts; 3],
}

/// Polarity accuracy and macro F1 on gold spans, with each span's polarity
/// predicted from the averaged token distributions. A class enters the macro
/// average only if it occurs in gold or prediction.
pub fn sentiment_scores(
    gold: &[Vec<(Span, Polarity)>],
    dists: &[Vec<[f64; 3]>],
) -> Result<SentimentScores> {
    if gold.len() != dists.len() {
        return Err(Error::invalid(format!(
            "{} gold sentences but {} distribution lists",
            gold.len(),
            dists.len()
        )));
    }
    let mut s = SentimentScores::default();
    for (g, d) in gold.iter().zip(dists) {
        for &(span, truth) in g {
            let (guess, _) = span_sentiment(span, d)?;
            s.total += 1;
            s.per_class[truth.index()].gold += 1;
            s.per_class[guess.index()].pred += 1;
            if guess == truth {
                s.correct += 1;
                s.per_class[truth.index()].tp += 1;
            }
        }
    }
    s.acc_s = ratio(s.correct, s.total);
    let present: Vec<f64> = s
        .per_class
        .iter()
        .filter(|c| c.pred + c.gold > 0)
        .map(PrfCounts::f1)
        .collect();
    s.f_s = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(s)
}

/// Fraction of no-aspect gold sentences whose prediction is also empty.
/// Returns `(accuracy, correct, total)`.
pub fn sentence_acc_noop<T>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<(f64, usize, usize)> {
    let mut total = 0;
    let mut correct = 0;
    for (p, g) in pred.iter().zip(gold) {
        if g.is_empty() {
            total += 1;
            if p.is_empty() {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("no sentence without gold aspects"));
    }
    Ok((correct as f64 / total as f64, correct, total))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Subset {
    #[default]
    All,
    /// At least two gold aspects.
    Multi,
    /// No gold aspect.
    Noop,
}

impl Subset {
    pub fn contains(self, n_aspects: usize) -> bool {
        match self {
            Subset::All => true,
            Subset::Multi => n_aspects >= 2,
            Subset::Noop => n_aspects == 0,
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "multi" => Ok(Subset::Multi),
            "noop" => Ok(Subset::Noop),
            other => Err(Error::invalid(format!("unknown subset {other:?} (all|multi|noop)"))),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Multi => "multi",
            Subset::Noop => "noop",
        })
    }
}

pub fn subset_filter(corpus: &Corpus, kind: Subset) -> Corpus {
    Corpus::from_sentences(
        corpus
            .sentences
            .iter()
            .filter(|s| kind.contains(s.gold_aspects().len()))
            .cloned()
            .collect(),
    )
}

/// Gold pairs, predicted pairs and per-token distributions of one sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalItem {
    pub gold: Vec<(Span, Polarity)>,
    pub pred: Vec<(Span, Polarity)>,
    pub token_dists: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub sentences: usize,
    pub f_a: f64,
    pub acc_s: f64,
    pub f_s: f64,
    pub f_all: f64,
    /// `None` when the evaluated set has no no-aspect sentence.
    pub sentence_acc_noop: Option<f64>,
    pub aspect_counts: PrfCounts,
    pub pair_counts: PrfCounts,
    pub sentiment: SentimentScores,
    /// (correct, total) over no-aspect sentences.
    pub noop_counts: (usize, usize),
}

impl MetricsReport {
    pub fn compute(items: &[EvalItem]) -> Result<Self> {
        let spans = |v: &[(Span, Polarity)]| v.iter().map(|(s, _)| *s).collect::<Vec<_>>();
        let gold_pairs: Vec<_> = items.iter().map(|i| i.gold.clone()).collect();
        let pred_pairs: Vec<_> = items.iter().map(|i| i.pred.clone()).collect();
        let gold_spans: Vec<_> = items.iter().map(|i| spans(&i.gold)).collect();
        let pred_spans: Vec<_> = items.iter().map(|i| spans(&i.pred)).collect();
        let dists: Vec<_> = items.iter().map(|i| i.token_dists.clone()).collect();

        let aspect_counts = f_aspect(&pred_spans, &gold_spans);
        let pair_counts = f_all(&pred_pairs, &gold_pairs);
        let sentiment = sentiment_scores(&gold_pairs, &dists)?;
        let (noop, noop_counts) = match sentence_acc_noop(&pred_pairs, &gold_pairs) {
            Ok((acc, c, t)) => (Some(acc), (c, t)),
            Err(_) => (None, (0, 0)),
        };
        Ok(MetricsReport {
            sentences: items.len(),
            f_a: aspect_counts.f1(),
            acc_s: sentiment.acc_s,
            f_s: sentiment.f_s,
            f_all: pair_counts.f1(),
            sentence_acc_noop: noop,
            aspect_counts,
            pair_counts,
            sentiment,
            noop_counts,
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let noop = self
            .sentence_acc_noop
            .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("sentences", self.sentences.to_string());
        kv("f_a", format!("{:.6}", self.f_a));
        kv("acc_s", format!("{:.6}", self.acc_s));
        kv("f_s", format!("{:.6}", self.f_s));
        kv("f_all", format!("{:.6}", self.f_all));
        kv("sentence_acc_noop", noop);
        kv("aspect_tp", self.aspect_counts.tp.to_string());
        kv("aspect_pred", self.aspect_counts.pred.to_string());
        kv("aspect_gold", self.aspect_counts.gold.to_string());
        kv("pair_tp", self.pair_counts.tp.to_string());
        kv("pair_pred", self.pair_counts.pred.to_string());
        kv("pair_gold", self.pair_counts.gold.to_string());
        kv("sentiment_correct", self.sentiment.correct.to_string());
        kv("sentiment_total", self.sentiment.total.to_string());
        kv("noop_correct", self.noop_counts.0.to_string());
        kv("noop_total", self.noop_counts.1.to_string());
        out
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let row = |name: &str, value: Option<f64>, detail: String| {
            let v = value.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
            format!("{name:<18}{v:>8}  {detail}\n")
        };
        let prf = |c: &PrfCounts| format!("tp={} pred={} gold={}", c.tp, c.pred, c.gold);
        let mut out = format!("{:<18}{:>8}  {}\n", "metric", "value", "counts");
        out.push_str(&row("F-a", Some(self.f_a), prf(&self.aspect_counts)));
        out.push_str(&row(
            "acc-s",
            Some(self.acc_s),
            format!("correct={} total={}", self.sentiment.correct, self.sentiment.total),
        ));
        out.push_str(&row("F-s", Some(self.f_s), String::new()));
        out.push_str(&row("F-all", Some(self.f_all), prf(&self.pair_counts)));
        out.push_str(&row(
            "no-op acc",
            self.sentence_acc_noop,
            format!("correct={} total={}", self.noop_counts.0, self.noop_counts.1),
        ));
        out.push_str(&format!("{:<18}{:>8}\n", "sentences", self.sentences));
        out
    }
}
