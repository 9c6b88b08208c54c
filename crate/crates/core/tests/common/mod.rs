#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use dhg_core::corpus::{parse_dataset, parse_str, Corpus, Polarity, Span};
use dhg_core::metrics::EvalItem;
use proptest::prelude::*;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn toy_corpus() -> Corpus {
    parse_dataset(&data_path("toy.tsv")).expect("bundled toy corpus parses")
}

const WORDS: [&str; 12] = [
    "the", "food", "was", "great", "but", "service", "slow", "screen", "is", "bright", "battery", ".",
];
const POLS: [&str; 3] = ["POS", "NEG", "NEU"];

/// One token row before serialisation.
#[derive(Clone, Debug)]
pub struct RowSpec {
    pub word: usize,
    pub head: usize,
    pub tag: u8,
    pub pol: usize,
}

/// TSV text of a valid sentence built from raw random choices: heads are
/// remapped off the diagonal, tags are repaired to legal BIO and spans get
/// one polarity.
pub fn sentence_tsv(rows: &[RowSpec]) -> String {
    let n = rows.len();
    let mut out = String::new();
    let mut prev = 0u8;
    let mut span_pol = 0usize;
    for (k, r) in rows.iter().enumerate() {
        let idx = k + 1;
        let mut head = r.head % (n + 1);
        if head == idx {
            head = 0;
        }
        let mut tag = r.tag % 3;
        if tag == 2 && prev == 0 {
            tag = 1;
        }
        if tag == 1 {
            span_pol = r.pol % 3;
        }
        let (a, s) = match tag {
            0 => ("O", "NONE"),
            1 => ("B", POLS[span_pol]),
            _ => ("I", POLS[span_pol]),
        };
        let word = WORDS[r.word % WORDS.len()];
        out.push_str(&format!("{idx}\t{word}\t{head}\tdep\t{a}\t{s}\n"));
        prev = tag;
    }
    out
}

pub fn arb_rows(max_len: usize) -> impl Strategy<Value = Vec<RowSpec>> {
    prop::collection::vec(
        (0usize..100, 0usize..100, 0u8..3, 0usize..3).prop_map(|(word, head, tag, pol)| RowSpec {
            word,
            head,
            tag,
            pol,
        }),
        1..=max_len,
    )
}

pub fn arb_corpus(max_sentences: usize, max_len: usize) -> impl Strategy<Value = Corpus> {
    prop::collection::vec(arb_rows(max_len), 1..=max_sentences).prop_map(|sents| {
        let text: Vec<String> = sents.iter().map(|s| sentence_tsv(s)).collect();
        parse_str(&text.join("\n"), "generated").expect("generated corpus is valid")
    })
}

/// Reads a metric fixture: `gold|pred <id> <start> <end> <polarity>` and
/// `dist <id> <token> <p_pos> <p_neg> <p_neu>` rows, `#` comments.
pub fn read_metric_fixture(text: &str) -> Vec<EvalItem> {
    let mut items: BTreeMap<String, EvalItem> = BTreeMap::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        let item = items.entry(f[1].to_string()).or_default();
        let num = |i: usize| f[i].parse::<usize>().expect("integer field");
        match f[0] {
            "gold" | "pred" => {
                let pair = (Span::new(num(2), num(3)), f[4].parse::<Polarity>().expect("polarity"));
                if f[0] == "gold" {
                    item.gold.push(pair);
                } else {
                    item.pred.push(pair);
                }
            }
            "dist" => {
                let tok = num(2);
                if item.token_dists.len() < tok {
                    item.token_dists.resize(tok, [1.0 / 3.0; 3]);
                }
                let p = |i: usize| f[i].parse::<f64>().expect("probability");
                item.token_dists[tok - 1] = [p(3), p(4), p(5)];
            }
            other => panic!("unknown fixture row kind {other}"),
        }
    }
    items.into_values().collect()
}
