use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

pub const MAX_COORDS_PER_TENSOR: usize = 200;
const SAMPLE_SEED: u64 = 0x5eed;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// `|a - n| / max(1e-8, |a| + |n|)` with Euclidean norms over the
    /// checked coordinates of this tensor.
    pub rel_error: f64,
    /// The same ratio for the single worst coordinate (diagnostic only:
    /// near-zero coordinates are dominated by rounding in the loss).
    pub worst_coord_error: f64,
    pub coords: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error.
    pub max_rel_error: f64,
    pub per_param: Vec<ParamCheck>,
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1e-8)
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` must be deterministic. Up to [`MAX_COORDS_PER_TENSOR`] coordinates per
/// parameter are sampled with a fixed seed. Each tensor is scored by the
/// norm-based relative error of its sampled gradient entries.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
    };
    for id in params.ids() {
        let len = params.value(id).len();
        let coords: Vec<usize> = if len <= MAX_COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, MAX_COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = params.value(id).data()[c];
            work.value_mut(id).data_mut()[c] = orig + eps;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[c] = orig - eps;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[c]);
            worst = worst.max(rel((a - numeric).abs(), a.abs() + numeric.abs()));
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let tensor_err = rel(diff_sq.sqrt(), a_sq.sqrt() + n_sq.sqrt());
        report.max_rel_error = report.max_rel_error.max(tensor_err);
        report.per_param.push(ParamCheck {
            name: params.get(id).name.clone(),
            rel_error: tensor_err,
            worst_coord_error: worst,
            coords: coords.len(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn quadratic_is_exact_to_rounding() {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(vec![0.3, -1.2, 2.5])).unwrap();
        let r = grad_check(&s, 1e-5, |t| {
            let p = t.param(id);
            t.dot(p, p)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        use crate::numcore::CustomOp;
        struct Doubled;
        impl CustomOp for Doubled {
            fn name(&self) -> &'static str {
                "doubled"
            }
            fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
                // true derivative of sum(x^2) is 2x; report 2.02x
                vec![inputs[0].data().iter().map(|x| 2.02 * x * g[0]).collect()]
            }
        }
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(vec![0.3, -1.2])).unwrap();
        let r = grad_check(&s, 1e-5, |t| {
            let p = t.param(id);
            let v = t.value(p).sum_sq();
            Ok(t.custom(&[p], Tensor::scalar(v), Box::new(Doubled)))
        })
        .unwrap();
        assert!((r.max_rel_error - 0.02 / 4.02).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn zero_eps_rejected() {
        let s = ParamStore::new();
        assert!(grad_check(&s, 0.0, |t| Ok(t.constant(Tensor::scalar(0.0)))).is_err());
    }
}
