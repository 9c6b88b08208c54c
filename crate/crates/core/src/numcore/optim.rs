use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

/// Adam moments and hyperparameters for every parameter in a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros = |p: &crate::numcore::Parameter| Tensor::zeros(p.value.shape());
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step(state: &mut AdamState, params: &mut ParamStore) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::invalid("optimizer state does not match parameter store"));
    }
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::invalid(format!("parameter {} has no gradient", p.name)));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grad = p.grad.as_mut().expect("checked above");
        let values = p.value.data_mut();
        for (((w, g), m), v) in values
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        grad.fill(0.0);
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut ParamStore, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.scale_assign(s);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(grad: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = grad.len();
        let id = s.add("w", Tensor::vector(vec![1.0; n])).unwrap();
        s.get_mut(id).grad = Some(Tensor::vector(grad));
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store(vec![0.0, 0.0]);
        let mut adam = AdamState::new(&s, DEFAULT_LEARNING_RATE);
        adam_step(&mut adam, &mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, 1.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut s = store(vec![0.5, -2.0]);
        let mut adam = AdamState::new(&s, 0.01);
        for _ in 0..50 {
            s.iter_mut().next().unwrap().grad = Some(Tensor::vector(vec![0.5, -2.0]));
            adam_step(&mut adam, &mut s).unwrap();
        }
        let w = s.iter().next().unwrap();
        assert!(w.value.data()[0] < 1.0);
        assert!(w.value.data()[1] > 1.0);
        assert!(w.grad.as_ref().unwrap().data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0])).unwrap();
        let mut adam = AdamState::new(&s, DEFAULT_LEARNING_RATE);
        assert!(adam_step(&mut adam, &mut s).is_err());
    }

    #[test]
    fn clipping_halves_norm_two() {
        let mut s = store(vec![0.0, 2.0]);
        let before = clip_global_norm(&mut s, DEFAULT_CLIP_NORM).unwrap();
        assert_eq!(before, 2.0);
        assert_eq!(s.iter().next().unwrap().grad.as_ref().unwrap().data(), &[0.0, 1.0]);

        let mut s = store(vec![0.3, 0.4]);
        clip_global_norm(&mut s, 1.0).unwrap();
        assert_eq!(s.iter().next().unwrap().grad.as_ref().unwrap().data(), &[0.3, 0.4]);
        assert!(clip_global_norm(&mut s, 0.0).is_err());
    }
}
