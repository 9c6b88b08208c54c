//! Heterogeneous sentence graph: word nodes, three sentiment nodes, and four
//! typed edge sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::corpus::{Corpus, Polarity, Sentence};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const DEFAULT_WINDOW: usize = 3;

/// Graph node. Words are 1-based positions; words order before sentiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Word(usize),
    Sentiment(Polarity),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Word(i) => write!(f, "w{i}"),
            NodeId::Sentiment(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    To = 0,
    From = 1,
    Position = 2,
    Sentiment = 3,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::To, EdgeType::From, EdgeType::Position, EdgeType::Sentiment];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::To => "to",
            EdgeType::From => "from",
            EdgeType::Position => "position",
            EdgeType::Sentiment => "sentiment",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GraphMode {
    /// Dependency to/from edges plus the positional window.
    #[default]
    Syntax,
    /// Positive-PMI co-occurrence edges in place of the dependency edges.
    Pmi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    n_words: usize,
    edges: [BTreeSet<(NodeId, NodeId)>; 4],
    /// Confidence of each logical sentiment edge, keyed by (word, polarity).
    sentiment_conf: BTreeMap<(usize, Polarity), f64>,
}

impl HeteroGraph {
    pub fn empty(n_words: usize) -> Self {
        HeteroGraph {
            n_words,
            edges: Default::default(),
            sentiment_conf: BTreeMap::new(),
        }
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    /// Word nodes followed by the three sentiment nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_words + 3
    }

    /// Hidden-state row of a node: words at `0..n`, sentiments at `n..n+3`.
    pub fn row(&self, node: NodeId) -> usize {
        match node {
            NodeId::Word(i) => i - 1,
            NodeId::Sentiment(p) => self.n_words + p.index(),
        }
    }

    pub fn edges(&self, ty: EdgeType) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges[ty.index()]
    }

    pub fn sentiment_edges(&self) -> &BTreeMap<(usize, Polarity), f64> {
        &self.sentiment_conf
    }

    pub fn has_edge(&self, ty: EdgeType, src: NodeId, dst: NodeId) -> bool {
        self.edges[ty.index()].contains(&(src, dst))
    }

    /// Nodes `j` with an edge `j -> node` of type `ty`.
    pub fn in_neighbors(&self, ty: EdgeType, node: NodeId) -> Vec<NodeId> {
        self.edges[ty.index()]
            .iter()
            .filter(|(_, d)| *d == node)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn sentiment_degree(&self, p: Polarity) -> usize {
        self.sentiment_conf.keys().filter(|(_, q)| *q == p).count()
    }

    fn check_word(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n_words {
            return Err(Error::Graph(format!("word {i} outside 1..={}", self.n_words)));
        }
        Ok(())
    }

    fn insert_word_edge(&mut self, ty: EdgeType, i: usize, j: usize) {
        self.edges[ty.index()].insert((NodeId::Word(i), NodeId::Word(j)));
    }

    /// Adds the symmetric word-sentiment edge, keeping the larger confidence
    /// when it already exists.
    pub fn add_sentiment_edge(&mut self, word: NodeId, senti: NodeId, conf: f64) -> Result<()> {
        let (NodeId::Word(i), NodeId::Sentiment(p)) = (word, senti) else {
            return Err(Error::Graph(format!(
                "sentiment edge needs (word, sentiment), got ({word}, {senti})"
            )));
        };
        self.check_word(i)?;
        if !(conf > 0.0 && conf <= 1.0) {
            return Err(Error::Graph(format!("confidence {conf} outside (0, 1]")));
        }
        let e = &mut self.edges[EdgeType::Sentiment.index()];
        e.insert((word, senti));
        e.insert((senti, word));
        let c = self.sentiment_conf.entry((i, p)).or_insert(conf);
        *c = c.max(conf);
        Ok(())
    }

    pub fn remove_sentiment_edge(&mut self, word: usize, p: Polarity) {
        let (w, s) = (NodeId::Word(word), NodeId::Sentiment(p));
        let e = &mut self.edges[EdgeType::Sentiment.index()];
        e.remove(&(w, s));
        e.remove(&(s, w));
        self.sentiment_conf.remove(&(word, p));
    }

    /// Structural audit: kinds per edge type, to/from transposition,
    /// symmetry of position and sentiment edges, no self-loops.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Graph(m));
        for ty in EdgeType::ALL {
            for &(s, d) in self.edges(ty) {
                if s == d {
                    return fail(format!("self-loop {s} in {}", ty.name()));
                }
                let word_word = matches!((s, d), (NodeId::Word(_), NodeId::Word(_)));
                let mixed = matches!(
                    (s, d),
                    (NodeId::Word(_), NodeId::Sentiment(_)) | (NodeId::Sentiment(_), NodeId::Word(_))
                );
                let ok_kind = if ty == EdgeType::Sentiment { mixed } else { word_word };
                if !ok_kind {
                    return fail(format!("edge {s}->{d} has wrong node kinds for {}", ty.name()));
                }
                for n in [s, d] {
                    if let NodeId::Word(i) = n {
                        if i == 0 || i > self.n_words {
                            return fail(format!("word {i} out of range"));
                        }
                    }
                }
                let mirror = match ty {
                    EdgeType::To => self.has_edge(EdgeType::From, d, s),
                    EdgeType::From => self.has_edge(EdgeType::To, d, s),
                    _ => self.has_edge(ty, d, s),
                };
                if !mirror {
                    return fail(format!("edge {s}->{d} in {} has no mirror", ty.name()));
                }
            }
        }
        let logical = self.edges(EdgeType::Sentiment).len();
        if logical != 2 * self.sentiment_conf.len() {
            return fail("sentiment confidences out of sync with edges".into());
        }
        Ok(())
    }

    /// Row-normalised in-neighbour matrix per edge type over all nodes:
    /// `A[i][j] = 1 / deg(i)` for each edge `j -> i`.
    pub fn mean_adjacency(&self) -> [Tensor; 4] {
        let n = self.n_nodes();
        EdgeType::ALL.map(|ty| {
            let mut a = Tensor::zeros(&[n, n]);
            let mut deg = vec![0usize; n];
            for &(_, d) in self.edges(ty) {
                deg[self.row(d)] += 1;
            }
            for &(s, d) in self.edges(ty) {
                let (i, j) = (self.row(d), self.row(s));
                a.set(i, j, 1.0 / deg[i] as f64);
            }
            a
        })
    }

    /// `EDGE <type> <src> <dst> [conf]` lines ordered by (type, src, dst).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for ty in EdgeType::ALL {
            for &(s, d) in self.edges(ty) {
                out.push_str(&format!("EDGE {} {s} {d}", ty.name()));
                if ty == EdgeType::Sentiment {
                    let key = match (s, d) {
                        (NodeId::Word(i), NodeId::Sentiment(p)) | (NodeId::Sentiment(p), NodeId::Word(i)) => (i, p),
                        _ => unreachable!("audited kinds"),
                    };
                    out.push_str(&format!(" {:.6}", self.sentiment_conf[&key]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Dependency edges (head -> dependent as `To`, its transpose as `From`)
/// and positional edges within `window`. No sentiment edges.
pub fn init_graph(sentence: &Sentence, window: usize) -> HeteroGraph {
    let n = sentence.len();
    let mut g = HeteroGraph::empty(n);
    for t in &sentence.tokens {
        if t.head != 0 {
            g.insert_word_edge(EdgeType::To, t.head, t.index);
            g.insert_word_edge(EdgeType::From, t.index, t.head);
        }
    }
    add_position_edges(&mut g, window);
    g
}

fn add_position_edges(g: &mut HeteroGraph, window: usize) {
    let n = g.n_words;
    for i in 1..=n {
        for j in (i + 1)..=n.min(i + window) {
            g.insert_word_edge(EdgeType::Position, i, j);
            g.insert_word_edge(EdgeType::Position, j, i);
        }
    }
}

/// Sentence-level document frequencies for PMI.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PmiStats {
    pub n_sentences: u64,
    pub df: HashMap<String, u64>,
    /// Unordered pair (lexicographically sorted) -> sentences containing both.
    pub co: HashMap<(String, String), u64>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl PmiStats {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut stats = PmiStats::default();
        for s in &corpus.sentences {
            stats.n_sentences += 1;
            let words: BTreeSet<&str> = s.surfaces().collect();
            for w in &words {
                *stats.df.entry(w.to_string()).or_default() += 1;
            }
            let words: Vec<&str> = words.into_iter().collect();
            for (k, a) in words.iter().enumerate() {
                for b in &words[k + 1..] {
                    *stats.co.entry(pair_key(a, b)).or_default() += 1;
                }
            }
        }
        stats
    }

    fn joint(&self, a: &str, b: &str) -> u64 {
        if a == b {
            return self.df.get(a).copied().unwrap_or(0);
        }
        self.co.get(&pair_key(a, b)).copied().unwrap_or(0)
    }

    /// `log(p(a,b) / (p(a) p(b)))`, or `None` when the pair was never seen.
    pub fn pmi(&self, a: &str, b: &str) -> Option<f64> {
        let joint = self.joint(a, b);
        if joint == 0 {
            return None;
        }
        let n = self.n_sentences as f64;
        let pa = self.df[a] as f64 / n;
        let pb = self.df[b] as f64 / n;
        Some(((joint as f64 / n) / (pa * pb)).ln())
    }

    /// Strict `PMI > 0`, decided in exact integer arithmetic:
    /// `joint * N > df(a) * df(b)`.
    pub fn positive(&self, a: &str, b: &str) -> bool {
        let joint = self.joint(a, b);
        if joint == 0 {
            return false;
        }
        let lhs = joint as u128 * self.n_sentences as u128;
        let rhs = self.df[a] as u128 * self.df[b] as u128;
        lhs > rhs
    }

    /// Compact text form: one `df` line per word and one `co` line per pair,
    /// sorted, for storing inside a checkpoint.
    pub fn to_text(&self) -> String {
        let mut out = format!("n\t{}\n", self.n_sentences);
        let mut df: Vec<_> = self.df.iter().collect();
        df.sort();
        for (w, c) in df {
            out.push_str(&format!("df\t{w}\t{c}\n"));
        }
        let mut co: Vec<_> = self.co.iter().collect();
        co.sort();
        for ((a, b), c) in co {
            out.push_str(&format!("co\t{a}\t{b}\t{c}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |l: &str| Error::Checkpoint(format!("bad PMI line {l:?}"));
        let mut stats = PmiStats::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["n", c] => stats.n_sentences = c.parse().map_err(|_| bad(line))?,
                ["df", w, c] => {
                    stats.df.insert(w.to_string(), c.parse().map_err(|_| bad(line))?);
                }
                ["co", a, b, c] => {
                    stats
                        .co
                        .insert((a.to_string(), b.to_string()), c.parse().map_err(|_| bad(line))?);
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(stats)
    }
}

/// Symmetric word pairs `(i, j)`, `i != j`, whose surfaces have positive PMI.
pub fn pmi_edges(stats: &PmiStats, sentence: &Sentence) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for a in &sentence.tokens {
        for b in &sentence.tokens {
            if a.index != b.index && stats.positive(&a.surface, &b.surface) {
                out.insert((a.index, b.index));
            }
        }
    }
    out
}

/// Ablation graph: PMI edges stored in both `To` and `From` (they are
/// symmetric, so the transposition invariant holds) plus positional edges.
pub fn init_pmi_graph(stats: &PmiStats, sentence: &Sentence, window: usize) -> HeteroGraph {
    let mut g = HeteroGraph::empty(sentence.len());
    for (i, j) in pmi_edges(stats, sentence) {
        g.insert_word_edge(EdgeType::To, i, j);
        g.insert_word_edge(EdgeType::From, i, j);
    }
    add_position_edges(&mut g, window);
    g
}

/// `ceil(x)` that ignores floating noise just above an integer.
fn robust_ceil(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Sentiment-node degree budgets `ceil(dist[s] * E)`, where `E` is the number
/// of distinct words with at least one sentiment edge.
pub fn sentiment_budgets(graph: &HeteroGraph, train_dist: &[f64; 3]) -> [usize; 3] {
    let linked: BTreeSet<usize> = graph.sentiment_conf.keys().map(|(w, _)| *w).collect();
    let e = linked.len() as f64;
    train_dist.map(|d| robust_ceil(d * e))
}

/// Trims each sentiment node to its budget, keeping the most confident
/// edges (lower word index on ties). Returns the dropped (word, polarity)
/// pairs in drop order.
pub fn drop_sentiment_edges(graph: &mut HeteroGraph, train_dist: &[f64; 3]) -> Vec<(usize, Polarity)> {
    let budgets = sentiment_budgets(graph, train_dist);
    let mut dropped = Vec::new();
    for p in Polarity::ALL {
        let mut edges: Vec<(usize, f64)> = graph
            .sentiment_conf
            .iter()
            .filter(|((_, q), _)| *q == p)
            .map(|((w, _), c)| (*w, *c))
            .collect();
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(w, _) in edges.iter().skip(budgets[p.index()]) {
            dropped.push((w, p));
        }
    }
    for &(w, p) in &dropped {
        graph.remove_sentiment_edge(w, p);
    }
    dropped
}
