use crate::error::Result;
use crate::model::Model;
use crate::numcore::{Tape, Var};

/// POS, NEG, NEU, NONE.
pub const MLP_CLASSES: usize = 4;
pub const NONE_CLASS: usize = 3;

/// `n W + b`, one row of 4 logits per word.
pub fn mlp_logits(tape: &mut Tape<'_>, model: &Model, n_words: Var) -> Result<Var> {
    let w = tape.param(model.mlp_w);
    let b = tape.param(model.mlp_b);
    let s = tape.matmul(n_words, w)?;
    tape.add_row(s, b)
}

pub fn as_mlp_probs(tape: &mut Tape<'_>, model: &Model, n_words: Var) -> Result<Var> {
    let logits = mlp_logits(tape, model, n_words)?;
    Ok(tape.softmax_rows(logits))
}

/// Inner products between each word row and each sentiment-node row.
pub fn sim_logits(tape: &mut Tape<'_>, n_words: Var, senti: Var) -> Result<Var> {
    let st = tape.transpose(senti);
    tape.matmul(n_words, st)
}

/// Softmax over the three word/sentiment-node inner products.
pub fn as_sim_probs(tape: &mut Tape<'_>, n_words: Var, senti: Var) -> Result<Var> {
    let logits = sim_logits(tape, n_words, senti)?;
    Ok(tape.softmax_rows(logits))
}
