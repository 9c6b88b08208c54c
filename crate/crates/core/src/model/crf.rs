//! Linear-chain CRF over {O, B, I} with a virtual START state.
//!
//! The log-potential of moving from `prev` to `cur` at token `i` is
//! `scores[i][prev * 3 + cur]`, where `scores = m W + b` is linear in the
//! token's hidden vector. Token 0 only reads the START row (`prev = 3`).

use crate::corpus::AspectTag;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::tensor::log_sum_exp;
use crate::numcore::{CustomOp, Tape, Tensor, Var};

pub const NUM_TAGS: usize = 3;
pub const START: usize = NUM_TAGS;
pub const SCORE_COLS: usize = (NUM_TAGS + 1) * NUM_TAGS;

#[inline]
pub fn score_col(prev: usize, cur: usize) -> usize {
    prev * NUM_TAGS + cur
}

#[inline]
fn psi(scores: &Tensor, i: usize, prev: usize, cur: usize) -> f64 {
    scores.get(i, score_col(prev, cur))
}

/// `n x 12` transition-emission scores from the aspect-stack word rows.
pub fn crf_scores(tape: &mut Tape<'_>, model: &Model, m_words: Var) -> Result<Var> {
    let w = tape.param(model.crf_w);
    let b = tape.param(model.crf_b);
    let s = tape.matmul(m_words, w)?;
    tape.add_row(s, b)
}

/// Unnormalised log score of one tag path.
pub fn sequence_score(scores: &Tensor, tags: &[usize]) -> f64 {
    let mut prev = START;
    let mut s = 0.0;
    for (i, &t) in tags.iter().enumerate() {
        s += psi(scores, i, prev, t);
        prev = t;
    }
    s
}

/// Forward log-messages `alpha[i][c]`.
fn forward(scores: &Tensor) -> Vec<[f64; NUM_TAGS]> {
    let n = scores.rows();
    let mut alpha = vec![[0.0; NUM_TAGS]; n];
    alpha[0] = std::array::from_fn(|c| psi(scores, 0, START, c));
    for i in 1..n {
        for c in 0..NUM_TAGS {
            let terms: [f64; NUM_TAGS] = std::array::from_fn(|p| alpha[i - 1][p] + psi(scores, i, p, c));
            alpha[i][c] = log_sum_exp(&terms);
        }
    }
    alpha
}

/// Backward log-messages `beta[i][c]`: log-sum over suffixes after token i.
fn backward(scores: &Tensor) -> Vec<[f64; NUM_TAGS]> {
    let n = scores.rows();
    let mut beta = vec![[0.0; NUM_TAGS]; n];
    for i in (0..n.saturating_sub(1)).rev() {
        for p in 0..NUM_TAGS {
            let terms: [f64; NUM_TAGS] = std::array::from_fn(|c| psi(scores, i + 1, p, c) + beta[i + 1][c]);
            beta[i][p] = log_sum_exp(&terms);
        }
    }
    beta
}

pub fn log_partition(scores: &Tensor) -> f64 {
    let alpha = forward(scores);
    log_sum_exp(alpha.last().expect("nonempty"))
}

/// `log P(tags | scores)` for any label path, legal BIO or not.
pub fn sequence_log_likelihood(scores: &Tensor, tags: &[usize]) -> f64 {
    sequence_score(scores, tags) - log_partition(scores)
}

/// Expected count of every score cell under the CRF distribution.
fn marginals(scores: &Tensor) -> Vec<f64> {
    let n = scores.rows();
    let alpha = forward(scores);
    let beta = backward(scores);
    let log_z = log_sum_exp(&alpha[n - 1]);
    let mut out = vec![0.0; n * SCORE_COLS];
    for c in 0..NUM_TAGS {
        out[score_col(START, c)] = (psi(scores, 0, START, c) + beta[0][c] - log_z).exp();
    }
    for i in 1..n {
        for p in 0..NUM_TAGS {
            for c in 0..NUM_TAGS {
                out[i * SCORE_COLS + score_col(p, c)] =
                    (alpha[i - 1][p] + psi(scores, i, p, c) + beta[i][c] - log_z).exp();
            }
        }
    }
    out
}

struct CrfLogLikelihood {
    gold: Vec<usize>,
}

impl CustomOp for CrfLogLikelihood {
    fn name(&self) -> &'static str {
        "crf_log_likelihood"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let scores = inputs[0];
        let g = grad[0];
        let mut d: Vec<f64> = marginals(scores).into_iter().map(|m| -g * m).collect();
        let mut prev = START;
        for (i, &t) in self.gold.iter().enumerate() {
            d[i * SCORE_COLS + score_col(prev, t)] += g;
            prev = t;
        }
        vec![d]
    }
}

fn check_bio(tags: &[AspectTag]) -> Result<()> {
    let mut prev = AspectTag::O;
    for (i, &t) in tags.iter().enumerate() {
        if t == AspectTag::I && prev == AspectTag::O {
            return Err(Error::invalid(format!("tag I at position {} follows O or START", i + 1)));
        }
        prev = t;
    }
    Ok(())
}

/// `log P(gold | m)`: gold path score minus the forward-algorithm log
/// partition.
pub fn crf_log_likelihood(tape: &mut Tape<'_>, scores: Var, gold: &[AspectTag]) -> Result<Var> {
    let s = tape.value(scores);
    if s.cols() != SCORE_COLS || s.rows() != gold.len() || gold.is_empty() {
        return Err(Error::Shape {
            op: "crf_log_likelihood",
            detail: format!("scores {:?} for {} tags", s.shape(), gold.len()),
        });
    }
    check_bio(gold)?;
    let gold: Vec<usize> = gold.iter().map(|t| t.index()).collect();
    let value = sequence_log_likelihood(s, &gold);
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite CRF log-likelihood".into()));
    }
    Ok(tape.custom(
        &[scores],
        Tensor::scalar(value),
        Box::new(CrfLogLikelihood { gold }),
    ))
}

/// Highest-scoring tag path. Among equal-scoring paths the one with the
/// lexicographically smallest label indices wins (so O beats B beats I).
pub fn crf_viterbi(scores: &Tensor) -> Vec<AspectTag> {
    let n = scores.rows();
    // best[i][c]: best suffix score from token i+1 on, given tag c at i
    let mut best = vec![[0.0f64; NUM_TAGS]; n];
    for i in (0..n.saturating_sub(1)).rev() {
        for p in 0..NUM_TAGS {
            best[i][p] = (0..NUM_TAGS)
                .map(|c| psi(scores, i + 1, p, c) + best[i + 1][c])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    // Walk forward choosing the smallest label that stays optimal.
    let mut path = Vec::with_capacity(n);
    let mut prev = START;
    for (i, b) in best.iter().enumerate() {
        let vals: [f64; NUM_TAGS] = std::array::from_fn(|c| psi(scores, i, prev, c) + b[c]);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = vals.iter().position(|v| *v == max).unwrap_or(0);
        path.push(AspectTag::from_index(c));
        prev = c;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ParamStore;

    #[test]
    fn uniform_potentials() {
        let n = 5;
        let scores = Tensor::zeros(&[n, SCORE_COLS]);
        assert!((log_partition(&scores) - n as f64 * 3f64.ln()).abs() < 1e-12);
        assert_eq!(crf_viterbi(&scores), vec![AspectTag::O; n]);

        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let s = tape.constant(scores);
        let gold = [AspectTag::B, AspectTag::I, AspectTag::O, AspectTag::O, AspectTag::B];
        let ll = crf_log_likelihood(&mut tape, s, &gold).unwrap();
        assert!((tape.value(ll).item() + n as f64 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_base_case() {
        let mut scores = Tensor::zeros(&[1, SCORE_COLS]);
        scores.set(0, score_col(START, 2), 1.5);
        scores.set(0, score_col(0, 1), 9.0); // not reachable from START
        assert_eq!(crf_viterbi(&scores), vec![AspectTag::I]);
    }

    #[test]
    fn invalid_gold_is_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let s = tape.constant(Tensor::zeros(&[2, SCORE_COLS]));
        assert!(crf_log_likelihood(&mut tape, s, &[AspectTag::O, AspectTag::I]).is_err());
        assert!(crf_log_likelihood(&mut tape, s, &[AspectTag::I, AspectTag::I]).is_err());
        assert!(crf_log_likelihood(&mut tape, s, &[AspectTag::O]).is_err());
    }
}
