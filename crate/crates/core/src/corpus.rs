//! Column-format corpus ingestion.
//!
//! One token per line, six TAB-separated columns:
//!
//! ```text
//! INDEX  TOKEN  HEAD  DEPREL  ASPECT  SENTIMENT
//! 1      great  2     amod    O       NONE
//! 2      service 0    root    B       POS
//! ```
//!
//! Sentences are separated by blank lines. A line `# id = <name>` before a
//! sentence names it; unnamed sentences get `s<ordinal>`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AspectTag {
    O = 0,
    B = 1,
    I = 2,
}

impl AspectTag {
    pub const ALL: [AspectTag; 3] = [AspectTag::O, AspectTag::B, AspectTag::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl FromStr for AspectTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "O" => Ok(AspectTag::O),
            "B" => Ok(AspectTag::B),
            "I" => Ok(AspectTag::I),
            other => Err(format!("unknown aspect tag {other:?}")),
        }
    }
}

impl fmt::Display for AspectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AspectTag::O => "O",
            AspectTag::B => "B",
            AspectTag::I => "I",
        })
    }
}

/// Aspect polarity. The index order POS < NEG < NEU is used for tie-breaking
/// and as the sentiment-node order in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Pos = 0,
    Neg = 1,
    Neu = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Pos, Polarity::Neg, Polarity::Neu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Pos => "POS",
            Polarity::Neg => "NEG",
            Polarity::Neu => "NEU",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "POS" => Ok(Polarity::Pos),
            "NEG" => Ok(Polarity::Neg),
            "NEU" => Ok(Polarity::Neu),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

fn parse_sentiment(s: &str) -> std::result::Result<Option<Polarity>, String> {
    if s == "NONE" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn sentiment_str(s: Option<Polarity>) -> &'static str {
    s.map_or("NONE", Polarity::as_str)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    /// 1-based position.
    pub index: usize,
    pub surface: String,
    /// Head position, 0 for the syntactic root.
    pub head: usize,
    pub deprel: String,
    pub aspect: AspectTag,
    /// `None` exactly when `aspect` is `O`.
    pub sentiment: Option<Polarity>,
}

/// Inclusive 1-based token span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    pub fn aspect_tags(&self) -> Vec<AspectTag> {
        self.tokens.iter().map(|t| t.aspect).collect()
    }

    /// Gold aspect spans with their polarity.
    pub fn gold_aspects(&self) -> Vec<(Span, Polarity)> {
        let mut out: Vec<(Span, Polarity)> = Vec::new();
        for t in &self.tokens {
            match (t.aspect, t.sentiment) {
                (AspectTag::B, Some(p)) => out.push((Span::new(t.index, t.index), p)),
                (AspectTag::I, Some(_)) => {
                    if let Some(last) = out.last_mut() {
                        last.0.end = t.index;
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn surface_of(&self, span: Span) -> String {
        self.tokens[span.start - 1..span.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks positional, head, and tag invariants.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Validation {
            sentence: self.id.clone(),
            msg,
        };
        if self.tokens.is_empty() {
            return Err(err("empty sentence".into()));
        }
        let n = self.tokens.len();
        let mut open_span: Option<Polarity> = None;
        for (k, t) in self.tokens.iter().enumerate() {
            if t.index != k + 1 {
                return Err(err(format!("token {} has index {}", k + 1, t.index)));
            }
            if t.head > n {
                return Err(err(format!(
                    "token {} head {} out of range (length {n})",
                    t.index, t.head
                )));
            }
            if t.head == t.index {
                return Err(err(format!("token {} is its own head", t.index)));
            }
            match (t.aspect, t.sentiment) {
                (AspectTag::O, None) => open_span = None,
                (AspectTag::O, Some(p)) => {
                    return Err(err(format!("token {} tagged O with sentiment {p}", t.index)))
                }
                (_, None) => {
                    return Err(err(format!(
                        "token {} tagged {} without sentiment",
                        t.index, t.aspect
                    )))
                }
                (AspectTag::B, Some(p)) => open_span = Some(p),
                (AspectTag::I, Some(p)) => match open_span {
                    None => {
                        return Err(err(format!("token {} has I without preceding B", t.index)))
                    }
                    Some(q) if q != p => {
                        return Err(err(format!(
                            "token {} sentiment {p} differs from its span's {q}",
                            t.index
                        )))
                    }
                    Some(_) => {}
                },
            }
        }
        Ok(())
    }
}

/// Surface-to-id map with dense ids in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut v = Vocabulary::new();
        for w in words {
            v.insert(&w);
        }
        v
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub vocabulary: Vocabulary,
    /// Aspect-token counts indexed by [`Polarity::index`].
    pub sentiment_counts: [usize; 3],
}

impl Corpus {
    pub fn from_sentences(sentences: Vec<Sentence>) -> Self {
        let mut vocabulary = Vocabulary::new();
        let mut sentiment_counts = [0; 3];
        for s in &sentences {
            for t in &s.tokens {
                vocabulary.insert(&t.surface);
                if let Some(p) = t.sentiment {
                    sentiment_counts[p.index()] += 1;
                }
            }
        }
        Corpus {
            sentences,
            vocabulary,
            sentiment_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, s) in self.sentences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            out.push_str(&format!("# id = {}\n", s.id));
            for t in &s.tokens {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    t.index,
                    t.surface,
                    t.head,
                    t.deprel,
                    t.aspect,
                    sentiment_str(t.sentiment)
                ));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Counts in the layout of the usual dataset statistics table: aspect
    /// spans in total and per polarity.
    pub fn span_stats(&self) -> SpanStats {
        let mut stats = SpanStats {
            sentences: self.sentences.len(),
            tokens: self.sentences.iter().map(Sentence::len).sum(),
            ..SpanStats::default()
        };
        for s in &self.sentences {
            let gold = s.gold_aspects();
            stats.aspects += gold.len();
            for (_, p) in &gold {
                stats.per_polarity[p.index()] += 1;
            }
            match gold.len() {
                0 => stats.no_aspect_sentences += 1,
                1 => {}
                _ => stats.multi_aspect_sentences += 1,
            }
        }
        stats
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanStats {
    pub sentences: usize,
    pub tokens: usize,
    pub aspects: usize,
    pub per_polarity: [usize; 3],
    pub multi_aspect_sentences: usize,
    pub no_aspect_sentences: usize,
}

pub fn parse_dataset(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, &path.display().to_string())
}

/// Parses TSV text; `origin` names the source in error messages.
pub fn parse_str(text: &str, origin: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut pending_id: Option<String> = None;

    let flush = |tokens: &mut Vec<Token>, id: &mut Option<String>, sentences: &mut Vec<Sentence>| {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = id.take().unwrap_or_else(|| format!("s{}", sentences.len() + 1));
        let s = Sentence {
            id,
            tokens: std::mem::take(tokens),
        };
        s.validate()?;
        sentences.push(s);
        Ok::<(), Error>(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            msg,
        };
        if line.trim().is_empty() {
            flush(&mut tokens, &mut pending_id, &mut sentences)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(id) = rest.trim().strip_prefix("id =") {
                if !tokens.is_empty() {
                    flush(&mut tokens, &mut pending_id, &mut sentences)?;
                }
                pending_id = Some(id.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", cols.len())));
        }
        let index = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("bad index {:?}", cols[0])))?;
        let head = cols[2]
            .parse()
            .map_err(|_| parse_err(format!("bad head {:?}", cols[2])))?;
        let aspect = cols[4].parse().map_err(parse_err)?;
        let sentiment = parse_sentiment(cols[5]).map_err(parse_err)?;
        if cols[1].is_empty() {
            return Err(parse_err("empty token".into()));
        }
        tokens.push(Token {
            index,
            surface: cols[1].to_string(),
            head,
            deprel: cols[3].to_string(),
            aspect,
            sentiment,
        });
    }
    flush(&mut tokens, &mut pending_id, &mut sentences)?;
    Ok(Corpus::from_sentences(sentences))
}

/// Word vectors aligned with a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dimension: usize,
    /// Row `i` belongs to vocabulary id `i`.
    pub vectors: Vec<Vec<f64>>,
    pub default_init: f64,
    /// How many rows were read from a file rather than randomly initialised.
    pub from_file: usize,
}

pub const OOV_SPREAD: f64 = 0.1;

impl EmbeddingTable {
    /// Uniform random vectors in `[-OOV_SPREAD, OOV_SPREAD]` for every word.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..vocab.len())
            .map(|_| {
                (0..dim)
                    .map(|_| rng.gen_range(-OOV_SPREAD..=OOV_SPREAD))
                    .collect()
            })
            .collect();
        Ok(EmbeddingTable {
            dimension: dim,
            vectors,
            default_init: OOV_SPREAD,
            from_file: 0,
        })
    }

    /// Row-wise concatenation, e.g. general-purpose + domain vectors.
    pub fn concat(&self, other: &EmbeddingTable) -> Result<Self> {
        if self.vectors.len() != other.vectors.len() {
            return Err(Error::invalid("embedding tables cover different vocabularies"));
        }
        Ok(EmbeddingTable {
            dimension: self.dimension + other.dimension,
            vectors: self
                .vectors
                .iter()
                .zip(&other.vectors)
                .map(|(a, b)| [a.as_slice(), b.as_slice()].concat())
                .collect(),
            default_init: self.default_init,
            from_file: self.from_file.min(other.from_file),
        })
    }
}

/// Reads `word v1 ... v_dim` rows. Vocabulary words missing from the file
/// keep seeded random vectors, so two loads with one seed agree exactly.
/// A leading `count dim` header line (word2vec/fastText text format) is
/// skipped.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_embeddings_str(&text, vocab, dim, seed)
}

pub fn load_embeddings_str(text: &str, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, dim, seed)?;
    let mut seen = vec![false; vocab.len()];
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0
            && fields.len() == 2
            && dim != 1
            && fields.iter().all(|f| f.parse::<u64>().is_ok())
        {
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::Load(format!(
                "line {}: expected {dim} values for {:?}, found {}",
                lineno + 1,
                fields[0],
                fields.len() - 1
            )));
        }
        let Some(id) = vocab.id(fields[0]) else { continue };
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Load(format!("line {}: {e}", lineno + 1)))?;
        table.vectors[id] = values;
        if !seen[id] {
            seen[id] = true;
            table.from_file += 1;
        }
    }
    Ok(table)
}

/// Seeded partition into (train, dev) with `round(dev_fraction * N)` dev
/// sentences, clamped so neither side is empty. Sentence order is kept
/// within each side.
pub fn split_train_dev(corpus: &Corpus, dev_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::invalid(format!("dev fraction {dev_fraction} outside (0, 1)")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 sentences to split"));
    }
    let n_dev = ((dev_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..n_dev] {
        is_dev[i] = true;
    }
    let (dev, train): (Vec<_>, Vec<_>) = corpus
        .sentences
        .iter()
        .cloned()
        .zip(is_dev)
        .partition(|(_, d)| *d);
    Ok((
        Corpus::from_sentences(train.into_iter().map(|(s, _)| s).collect()),
        Corpus::from_sentences(dev.into_iter().map(|(s, _)| s).collect()),
    ))
}

/// Proportions of POS/NEG/NEU over aspect tokens.
pub fn sentiment_distribution(corpus: &Corpus) -> Result<[f64; 3]> {
    distribution_from_counts(corpus.sentiment_counts)
}

pub fn distribution_from_counts(counts: [usize; 3]) -> Result<[f64; 3]> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("corpus has no aspect tokens"));
    }
    let t = total as f64;
    Ok(counts.map(|c| c as f64 / t))
}
