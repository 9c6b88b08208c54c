//! Joint loss, the epoch loop and best-checkpoint selection.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{sentiment_distribution, AspectTag, Corpus, EmbeddingTable, Sentence, Vocabulary};
use crate::decode::{predict, Prediction};
use crate::dhg::{forward_sentence, DhgConfig, DhgMode, SentenceOutputs};
use crate::error::{Error, Result};
use crate::graph::{GraphMode, PmiStats, DEFAULT_WINDOW};
use crate::metrics::{EvalItem, MetricsReport};
use crate::model::heads::NONE_CLASS;
use crate::model::{crf_log_likelihood, Model, ModelConfig, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use crate::numcore::dropout::DEFAULT_DROPOUT;
use crate::numcore::optim::{DEFAULT_CLIP_NORM, DEFAULT_LEARNING_RATE};
use crate::numcore::{
    adam_step, clip_global_norm, grad_check, AdamState, Container, GradCheckReport, Gradients, Tape, Tensor, Var,
};
use crate::pipeline::{float_text, graph_mode_name, parse_float, Tagger, UNK};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_DEV_FRACTION: f64 = 0.2;
/// Width of the general-purpose plus domain embedding concatenation.
pub const DEFAULT_EMBED_DIM: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout_rate: f64,
    pub lambda: f64,
    pub dev_fraction: f64,
    pub seed: u64,
    pub dhg: DhgConfig,
    pub hidden: usize,
    /// Width of random embeddings when no embedding file is given.
    pub embed_dim: usize,
    pub shared_layers: usize,
    pub ae_layers: usize,
    pub as_layers: usize,
    pub window: usize,
    pub graph_mode: GraphMode,
    /// Always train on gold sentiment edges instead of the schedule.
    pub force_teacher: bool,
    /// Sentences processed concurrently within a batch.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            dropout_rate: DEFAULT_DROPOUT,
            lambda: DEFAULT_LAMBDA,
            dev_fraction: DEFAULT_DEV_FRACTION,
            seed: 1,
            dhg: DhgConfig::default(),
            hidden: DEFAULT_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            shared_layers: DEFAULT_LAYERS,
            ae_layers: DEFAULT_LAYERS,
            as_layers: DEFAULT_LAYERS,
            window: DEFAULT_WINDOW,
            graph_mode: GraphMode::Syntax,
            force_teacher: false,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("workers", self.workers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("learning_rate and clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::invalid(format!("dev_fraction {} outside (0, 1)", self.dev_fraction)));
        }
        self.dhg.validate()
    }

    /// Flat `key=value` lines, the same keys the config file accepts.
    pub fn to_kv(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("dropout", self.dropout_rate.to_string()),
            ("lambda", self.lambda.to_string()),
            ("dev_fraction", self.dev_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("dhg_times", self.dhg.times.to_string()),
            ("epsilon", self.dhg.epsilon.to_string()),
            ("mu", self.dhg.mu.to_string()),
            ("tf_keep", self.dhg.tf_keep.to_string()),
            ("hidden", self.hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("shared_layers", self.shared_layers.to_string()),
            ("ae_layers", self.ae_layers.to_string()),
            ("as_layers", self.as_layers.to_string()),
            ("window", self.window.to_string()),
            ("graph", graph_mode_name(self.graph_mode).to_string()),
            ("force_teacher", self.force_teacher.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value {v:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = p(key, value)?,
            "clip_norm" => self.clip_norm = p(key, value)?,
            "dropout" => self.dropout_rate = p(key, value)?,
            "lambda" => self.lambda = p(key, value)?,
            "dev_fraction" => self.dev_fraction = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "dhg_times" => self.dhg.times = p(key, value)?,
            "epsilon" => self.dhg.epsilon = p(key, value)?,
            "mu" => self.dhg.mu = p(key, value)?,
            "tf_keep" => self.dhg.tf_keep = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "embed_dim" => self.embed_dim = p(key, value)?,
            "shared_layers" => self.shared_layers = p(key, value)?,
            "ae_layers" => self.ae_layers = p(key, value)?,
            "as_layers" => self.as_layers = p(key, value)?,
            "window" => self.window = p(key, value)?,
            "graph" => self.graph_mode = crate::pipeline::parse_graph_mode(value.trim())?,
            "force_teacher" => self.force_teacher = p(key, value)?,
            "workers" => self.workers = p(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// SHA-256 of [`TrainConfig::to_kv`], hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Mean over sentences of the per-token CRF negative log-likelihood.
pub fn loss_ae(crf_nll: &[f64], lengths: &[usize]) -> f64 {
    assert_eq!(crf_nll.len(), lengths.len());
    let sum: f64 = crf_nll.iter().zip(lengths).map(|(l, &n)| l / n as f64).sum();
    sum / crf_nll.len() as f64
}

/// Gold class of every token for the 4-way head (NONE for non-aspects).
fn mlp_targets(sentence: &Sentence) -> Vec<usize> {
    sentence
        .tokens
        .iter()
        .map(|t| t.sentiment.map_or(NONE_CLASS, |p| p.index()))
        .collect()
}

/// `1/2 * CE4 over all tokens + 1/2 * CE3 over aspect tokens` for one
/// sentence, from probabilities.
fn sentence_loss_as(mlp: &[[f64; 4]], sim: &[[f64; 3]], sentence: &Sentence) -> f64 {
    let n = sentence.len() as f64;
    let targets = mlp_targets(sentence);
    let ce4: f64 = targets.iter().zip(mlp).map(|(&c, p)| -p[c].ln()).sum::<f64>() / n;
    let aspect: Vec<(usize, usize)> = targets
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != NONE_CLASS)
        .map(|(i, &c)| (i, c))
        .collect();
    let ce3 = if aspect.is_empty() {
        0.0
    } else {
        aspect.iter().map(|&(i, c)| -sim[i][c].ln()).sum::<f64>() / aspect.len() as f64
    };
    0.5 * ce4 + 0.5 * ce3
}

/// Sentiment loss of a batch given head probabilities, averaged over
/// sentences.
pub fn loss_as(mlp_probs: &[Vec<[f64; 4]>], sim_probs: &[Vec<[f64; 3]>], gold: &[&Sentence]) -> f64 {
    assert!(mlp_probs.len() == gold.len() && sim_probs.len() == gold.len());
    let sum: f64 = gold
        .iter()
        .zip(mlp_probs.iter().zip(sim_probs))
        .map(|(s, (m, p))| sentence_loss_as(m, p, s))
        .sum();
    sum / gold.len() as f64
}

pub fn total_loss(l_ae: f64, l_as: f64, lambda: f64) -> f64 {
    l_ae + lambda * l_as
}

/// Loss of one sentence recorded on the tape, with its two parts.
pub struct SentenceLoss {
    pub total: Var,
    pub ae: f64,
    pub as_: f64,
}

/// Builds `L_AE + lambda * L_AS` for one sentence on top of its forward pass.
pub fn sentence_loss(
    tape: &mut Tape<'_>,
    out: &SentenceOutputs,
    sentence: &Sentence,
    lambda: f64,
) -> Result<SentenceLoss> {
    let n = sentence.len();
    let gold: Vec<AspectTag> = sentence.aspect_tags();
    let ll = crf_log_likelihood(tape, out.crf_scores, &gold)?;
    let l_ae = tape.scale(ll, -1.0 / n as f64);

    let targets = mlp_targets(sentence);
    let mlp_lp = tape.log_softmax_rows(out.mlp_logits);
    let coords: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
    let ce4 = tape.select_sum(mlp_lp, &coords, -0.5 / n as f64)?;
    let aspect: Vec<(usize, usize)> = coords.into_iter().filter(|&(_, c)| c != NONE_CLASS).collect();
    let l_as = if aspect.is_empty() {
        ce4
    } else {
        let sim_lp = tape.log_softmax_rows(out.sim_logits);
        let ce3 = tape.select_sum(sim_lp, &aspect, -0.5 / aspect.len() as f64)?;
        tape.add(ce4, ce3)?
    };
    let weighted = tape.scale(l_as, lambda);
    let total = tape.add(l_ae, weighted)?;
    let ae = tape.value(l_ae).item();
    let as_ = tape.value(l_as).item();
    if !tape.value(total).item().is_finite() {
        return Err(Error::Numerical(format!("sentence {}: non-finite loss", sentence.id)));
    }
    Ok(SentenceLoss { total, ae, as_ })
}

/// Training vocabulary plus the unknown-word row.
pub fn model_vocabulary(train: &Corpus) -> Vocabulary {
    let mut v = train.vocabulary.clone();
    v.insert(UNK);
    v
}

/// A tagger with freshly initialised weights for `train`.
pub fn init_tagger(train: &Corpus, cfg: &TrainConfig, embeddings: Option<&EmbeddingTable>) -> Result<Tagger> {
    cfg.validate()?;
    let vocab = model_vocabulary(train);
    let table = match embeddings {
        Some(t) => {
            if t.vectors.len() != vocab.len() {
                return Err(Error::invalid(format!(
                    "embedding table has {} rows for a {}-word vocabulary",
                    t.vectors.len(),
                    vocab.len()
                )));
            }
            t.clone()
        }
        None => EmbeddingTable::random(&vocab, cfg.embed_dim, cfg.seed)?,
    };
    let rows: Vec<Vec<f64>> = table.vectors;
    let embed = Tensor::from_rows(&rows)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: table.dimension,
        hidden: cfg.hidden,
        shared_layers: cfg.shared_layers,
        ae_layers: cfg.ae_layers,
        as_layers: cfg.as_layers,
    };
    let model = Model::new(config, embed, cfg.seed)?;
    let pmi = match cfg.graph_mode {
        GraphMode::Pmi => Some(PmiStats::from_corpus(train)),
        GraphMode::Syntax => None,
    };
    Ok(Tagger {
        model,
        vocab,
        graph_mode: cfg.graph_mode,
        window: cfg.window,
        pmi,
        dhg: cfg.dhg,
        train_dist: sentiment_distribution(train)?,
    })
}

/// Dev-set scores recorded with a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DevScores {
    pub f_a: f64,
    pub acc_s: f64,
    pub f_s: f64,
    pub f_all: f64,
}

impl From<&MetricsReport> for DevScores {
    fn from(r: &MetricsReport) -> Self {
        DevScores {
            f_a: r.f_a,
            acc_s: r.acc_s,
            f_s: r.f_s,
            f_all: r.f_all,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub tagger: Tagger,
    /// 1-based epoch the weights come from.
    pub epoch: usize,
    pub dev: DevScores,
    pub fingerprint: String,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = self.tagger.to_container();
        c.meta.extend([
            ("epoch".to_string(), self.epoch.to_string()),
            ("dev_f_a".into(), float_text(self.dev.f_a)),
            ("dev_acc_s".into(), float_text(self.dev.acc_s)),
            ("dev_f_s".into(), float_text(self.dev.f_s)),
            ("dev_f_all".into(), float_text(self.dev.f_all)),
            ("fingerprint".into(), self.fingerprint.clone()),
            ("config".into(), self.config.to_kv()),
        ]);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let tagger = Tagger::from_container(c)?;
        let get = |k: &str| {
            c.meta(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata {k}")))
        };
        let real = |k: &str| -> Result<f64> {
            parse_float(get(k)?).ok_or_else(|| Error::Checkpoint(format!("bad metadata {k}")))
        };
        let mut config = TrainConfig::default();
        for line in get("config")?.lines() {
            if let Some((k, v)) = line.split_once('=') {
                config.set(k, v)?;
            }
        }
        Ok(Checkpoint {
            epoch: get("epoch")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad epoch".into()))?,
            dev: DevScores {
                f_a: real("dev_f_a")?,
                acc_s: real("dev_acc_s")?,
                f_s: real("dev_f_s")?,
                f_all: real("dev_f_all")?,
            },
            fingerprint: get("fingerprint")?.to_string(),
            config,
            tagger,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: DevScores,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.dev.f_a, self.dev.acc_s, self.dev.f_s, self.dev.f_all
        )
    }
}

pub struct FitResult {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl FitResult {
    /// One tab-separated line per epoch.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|l| l.line() + "\n").collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

fn with_sentence_id(e: Error, id: &str) -> Error {
    match e {
        Error::Numerical(msg) if !msg.starts_with("sentence ") => {
            Error::Numerical(format!("sentence {id}: {msg}"))
        }
        other => other,
    }
}

/// Gradient and loss parts of one training-mode pass.
fn train_step_sentence(
    tagger: &Tagger,
    sentence: &Sentence,
    cfg: &TrainConfig,
    epoch: usize,
    mut rng: ChaCha8Rng,
) -> Result<(Gradients, f64)> {
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
        DhgMode::Train {
            epoch,
            gold: sentence,
            dropout: cfg.dropout_rate,
            force_teacher: cfg.force_teacher,
            rng: &mut rng,
        },
    )?;
    let loss = sentence_loss(&mut tape, &out, sentence, cfg.lambda)?;
    let value = tape.value(loss.total).item();
    Ok((tape.backward(loss.total)?, value))
}

/// Per-sentence RNG, independent of worker scheduling.
fn sentence_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Eval-mode predictions for every sentence, in corpus order.
pub fn predict_corpus(tagger: &Tagger, corpus: &Corpus, workers: usize) -> Result<Vec<Prediction>> {
    let run = || {
        corpus
            .sentences
            .par_iter()
            .map(|s| predict(tagger, s).map_err(|e| with_sentence_id(e, &s.id)))
            .collect::<Result<Vec<_>>>()
    };
    if workers <= 1 {
        corpus
            .sentences
            .iter()
            .map(|s| predict(tagger, s).map_err(|e| with_sentence_id(e, &s.id)))
            .collect()
    } else {
        pool(workers)?.install(run)
    }
}

/// Scores predictions against the corpus' gold labels.
pub fn score(corpus: &Corpus, predictions: &[Prediction]) -> Result<MetricsReport> {
    let items: Vec<EvalItem> = corpus
        .sentences
        .iter()
        .zip(predictions)
        .map(|(s, p)| EvalItem {
            gold: s.gold_aspects(),
            pred: p.pairs(),
            token_dists: p.token_dists.clone(),
        })
        .collect();
    MetricsReport::compute(&items)
}

pub fn evaluate(tagger: &Tagger, corpus: &Corpus, workers: usize) -> Result<MetricsReport> {
    score(corpus, &predict_corpus(tagger, corpus, workers)?)
}

/// Trains on `train`, keeping the weights of the epoch with the best dev
/// F-all (earliest epoch on ties).
pub fn fit(train: &Corpus, dev: &Corpus, cfg: &TrainConfig, embeddings: Option<&EmbeddingTable>) -> Result<FitResult> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::invalid("train and dev corpora must be nonempty"));
    }
    let mut tagger = init_tagger(train, cfg, embeddings)?;
    let mut adam = AdamState::new(&tagger.model.store, cfg.learning_rate);
    let workers = if cfg.workers > 1 { Some(pool(cfg.workers)?) } else { None };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let fingerprint = cfg.fingerprint();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let step = |&i: &usize| {
                let s = &train.sentences[i];
                train_step_sentence(&tagger, s, cfg, epoch, sentence_rng(cfg.seed, epoch, i))
                    .map_err(|e| with_sentence_id(e, &s.id))
            };
            // Workers compute chunks in parallel; sums run in batch order.
            let chunk = cfg.workers.max(1);
            let mut total = Gradients::empty(tagger.model.store.len());
            for part in batch.chunks(chunk) {
                let results: Vec<Result<(Gradients, f64)>> = match &workers {
                    Some(p) => p.install(|| part.par_iter().map(step).collect()),
                    None => part.iter().map(step).collect(),
                };
                for r in results {
                    let (g, l) = r?;
                    total.add_scaled(&g, scale);
                    loss_sum += l;
                }
            }
            tagger.model.store.accumulate(&total);
            let norm = clip_global_norm(&mut tagger.model.store, cfg.clip_norm)?;
            debug!("epoch {} batch of {}: grad norm {norm:.4}", epoch + 1, batch.len());
            adam_step(&mut adam, &mut tagger.model.store)?;
        }

        let report = evaluate(&tagger, dev, cfg.workers)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            dev: DevScores::from(&report),
        };
        info!("{}", entry.line());
        let improved = best.as_ref().is_none_or(|b| entry.dev.f_all > b.dev.f_all);
        if improved {
            best = Some(Checkpoint {
                tagger: tagger.clone(),
                epoch: epoch + 1,
                dev: entry.dev,
                fingerprint: fingerprint.clone(),
                config: cfg.clone(),
            });
        }
        log.push(entry);
    }
    Ok(FitResult {
        best: best.expect("at least one epoch"),
        log,
    })
}

/// Sentence used by [`end_to_end_gradcheck`]: one two-token aspect.
pub const GRADCHECK_SENTENCE: &str = "1\tgreat\t2\tamod\tO\tNONE\n2\tpizza\t0\troot\tB\tPOS\n3\tcrust\t2\tdep\tI\tPOS\n";

/// Compares analytic and central-difference gradients of the full joint
/// loss on a 3-token sentence: eval-mode edges, no dropout, two DHG
/// iterations. Biases and aggregation offsets are randomised first so no
/// parameter sits at a gradient-free zero point.
pub fn end_to_end_gradcheck(hidden: usize, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let corpus = crate::corpus::parse_str(GRADCHECK_SENTENCE, "gradcheck")?;
    let cfg = TrainConfig {
        hidden,
        embed_dim: 4,
        seed,
        dhg: DhgConfig { times: 2, ..DhgConfig::default() },
        ..TrainConfig::default()
    };
    let mut tagger = init_tagger(&corpus, &cfg, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for p in tagger.model.store.iter_mut() {
        if p.value.shape().len() == 1 {
            p.value = Tensor::uniform(p.value.shape(), 0.1, &mut rng);
        }
    }
    let sentence = &corpus.sentences[0];
    let ids = tagger.token_ids(sentence);
    let graph0 = tagger.initial_graph(sentence);
    let model = &tagger.model;
    grad_check(&model.store, eps, |tape| {
        let out = forward_sentence(tape, model, &ids, &graph0, &tagger.dhg, &tagger.train_dist, DhgMode::Eval)?;
        Ok(sentence_loss(tape, &out, sentence, cfg.lambda)?.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_str;

    #[test]
    fn loss_arithmetic() {
        assert_eq!(total_loss(0.3, 0.5, 2.0), 1.3);
        assert_eq!(total_loss(0.3, 0.5, 0.0), 0.3);
        assert_eq!(loss_ae(&[2.0, 3.0], &[2, 1]), (1.0 + 3.0) / 2.0);
        assert_eq!(loss_ae(&[3.0 * 3f64.ln()], &[3]), 3f64.ln());
    }

    #[test]
    fn loss_as_closed_forms() {
        let c = parse_str("1\tok\t0\troot\tO\tNONE\n2\tthen\t1\tdep\tO\tNONE\n", "t").unwrap();
        let s = &c.sentences[0];
        let uniform = vec![vec![[0.25; 4]; 2]];
        let sim = vec![vec![[1.0 / 3.0; 3]; 2]];
        let l = loss_as(&uniform, &sim, &[s]);
        assert!((l - 0.5 * 4f64.ln()).abs() < 1e-15);

        let a = parse_str("1\tfood\t0\troot\tB\tPOS\n", "t").unwrap();
        let s = &a.sentences[0];
        let perfect = loss_as(&[vec![[1.0, 0.0, 0.0, 0.0]]], &[vec![[1.0, 0.0, 0.0]]], &[s]);
        assert_eq!(perfect, 0.0);
        let base = loss_as(&[vec![[1.0, 0.0, 0.0, 0.0]]], &[vec![[0.5, 0.25, 0.25]]], &[s]);
        let doubled = loss_as(&[vec![[1.0, 0.0, 0.0, 0.0]]], &[vec![[0.25, 0.5, 0.25]]], &[s]);
        // sim loss ln2 -> ln4: total rises by half of that increase
        assert!((doubled - base - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip() {
        let mut c = TrainConfig::default();
        c.set("hidden", "32").unwrap();
        c.set("epsilon", "0.5").unwrap();
        c.set("graph", "pmi").unwrap();
        let mut d = TrainConfig::default();
        for line in c.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            d.set(k, v).unwrap();
        }
        assert_eq!(c, d);
        assert_eq!(c.fingerprint(), d.fingerprint());
        assert_ne!(c.fingerprint(), TrainConfig::default().fingerprint());
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("hidden", "x").is_err());
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (200, 32));
        assert_eq!((c.learning_rate, c.clip_norm, c.dropout_rate, c.lambda), (1e-4, 1.0, 0.5, 1.0));
        assert!(c.validate().is_ok());
    }
}
