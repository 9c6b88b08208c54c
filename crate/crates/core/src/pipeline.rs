//! A trained model bundled with everything needed to turn a sentence into
//! model inputs: vocabulary, graph construction settings, DHG settings and
//! the training sentiment distribution.

use crate::corpus::{Sentence, Vocabulary};
use crate::dhg::DhgConfig;
use crate::error::{Error, Result};
use crate::graph::{init_graph, init_pmi_graph, GraphMode, HeteroGraph, PmiStats};
use crate::model::{Model, ModelConfig};
use crate::numcore::Container;

pub const UNK: &str = "<unk>";

#[derive(Clone, Debug)]
pub struct Tagger {
    pub model: Model,
    /// Training vocabulary with [`UNK`] as the last entry.
    pub vocab: Vocabulary,
    pub graph_mode: GraphMode,
    pub window: usize,
    pub pmi: Option<PmiStats>,
    pub dhg: DhgConfig,
    pub train_dist: [f64; 3],
}

impl Tagger {
    pub fn token_ids(&self, sentence: &Sentence) -> Vec<usize> {
        let unk = self.vocab.id(UNK).expect("vocabulary has <unk>");
        sentence
            .surfaces()
            .map(|w| self.vocab.id(w).unwrap_or(unk))
            .collect()
    }

    pub fn initial_graph(&self, sentence: &Sentence) -> HeteroGraph {
        match (self.graph_mode, &self.pmi) {
            (GraphMode::Pmi, Some(stats)) => init_pmi_graph(stats, sentence, self.window),
            _ => init_graph(sentence, self.window),
        }
    }

    pub fn to_container(&self) -> Container {
        let c = &self.model.config;
        let mut meta = vec![
            ("kind".to_string(), "tagger".to_string()),
            ("vocab_size".into(), c.vocab_size.to_string()),
            ("embed_dim".into(), c.embed_dim.to_string()),
            ("hidden".into(), c.hidden.to_string()),
            ("shared_layers".into(), c.shared_layers.to_string()),
            ("ae_layers".into(), c.ae_layers.to_string()),
            ("as_layers".into(), c.as_layers.to_string()),
            ("graph_mode".into(), graph_mode_name(self.graph_mode).to_string()),
            ("window".into(), self.window.to_string()),
            ("dhg_times".into(), self.dhg.times.to_string()),
            ("dhg_epsilon".into(), float_text(self.dhg.epsilon)),
            ("dhg_mu".into(), float_text(self.dhg.mu)),
            ("dhg_tf_keep".into(), float_text(self.dhg.tf_keep)),
            (
                "train_dist".into(),
                self.train_dist.iter().map(|v| float_text(*v)).collect::<Vec<_>>().join(","),
            ),
            ("vocab".into(), self.vocab.words().join("\n")),
        ];
        if let Some(p) = &self.pmi {
            meta.push(("pmi".into(), p.to_text()));
        }
        Container {
            meta,
            tensors: self.model.named_tensors(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            c.meta(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad metadata {k}")))
        };
        let real = |k: &str| -> Result<f64> {
            parse_float(get(k)?).ok_or_else(|| Error::Checkpoint(format!("bad metadata {k}")))
        };
        let config = ModelConfig {
            vocab_size: num("vocab_size")?,
            embed_dim: num("embed_dim")?,
            hidden: num("hidden")?,
            shared_layers: num("shared_layers")?,
            ae_layers: num("ae_layers")?,
            as_layers: num("as_layers")?,
        };
        let embed = c
            .tensor("embed")
            .ok_or_else(|| Error::Checkpoint("missing parameter embed".into()))?
            .clone();
        let mut model = Model::new(config, embed, 0)?;
        model.load_tensors(&c.tensors)?;

        let vocab = Vocabulary::from_words(get("vocab")?.split('\n').map(str::to_string));
        if vocab.len() != config.vocab_size || vocab.id(UNK).is_none() {
            return Err(Error::Checkpoint("vocabulary does not match embedding rows".into()));
        }
        let dist: Vec<f64> = get("train_dist")?
            .split(',')
            .map(|v| parse_float(v).ok_or_else(|| Error::Checkpoint("bad train_dist".into())))
            .collect::<Result<_>>()?;
        let train_dist: [f64; 3] = dist
            .try_into()
            .map_err(|_| Error::Checkpoint("train_dist needs 3 values".into()))?;
        let graph_mode = parse_graph_mode(get("graph_mode")?)?;
        let pmi = c.meta("pmi").map(PmiStats::from_text).transpose()?;
        Ok(Tagger {
            model,
            vocab,
            graph_mode,
            window: num("window")?,
            pmi,
            dhg: DhgConfig {
                times: num("dhg_times")?,
                epsilon: real("dhg_epsilon")?,
                mu: real("dhg_mu")?,
                tf_keep: real("dhg_tf_keep")?,
            },
            train_dist,
        })
    }
}

pub fn graph_mode_name(m: GraphMode) -> &'static str {
    match m {
        GraphMode::Syntax => "syntax",
        GraphMode::Pmi => "pmi",
    }
}

pub fn parse_graph_mode(s: &str) -> Result<GraphMode> {
    match s {
        "syntax" => Ok(GraphMode::Syntax),
        "pmi" => Ok(GraphMode::Pmi),
        other => Err(Error::invalid(format!("unknown graph mode {other:?}"))),
    }
}

/// Bit-exact text form of a float (hex of the IEEE bits).
pub(crate) fn float_text(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

pub(crate) fn parse_float(s: &str) -> Option<f64> {
    match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok().map(f64::from_bits),
        None => s.parse().ok(),
    }
}
