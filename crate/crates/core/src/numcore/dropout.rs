use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::tape::dropout_mask;
use crate::numcore::Tensor;

pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout outside a tape. Eval mode is the identity.
pub fn dropout(t: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(t.shape(), rate, &mut rng);
    let data = t.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
    Tensor::new(t.shape().to_vec(), data)
}
