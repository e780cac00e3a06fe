//! Finite-difference gradient checking.
//!
//! Central differences with the caller's step, compared to analytic
//! gradients coordinate by coordinate:
//! `|analytic - fd| / max(1, |analytic|)`. The returned value is the
//! maximum over the checked coordinates.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::ParamSet;

/// Every coordinate of every tensor in `params`.
pub fn all_coords(params: &ParamSet) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(params.total_coords());
    for p in 0..params.len() {
        for i in 0..params.tensor(p).numel() {
            out.push((p, i));
        }
    }
    out
}

/// `per_tensor` coordinates sampled (with replacement) from each tensor.
/// Large losses over many tensors stay checkable in bounded time while
/// still touching every tensor.
pub fn sample_coords(params: &ParamSet, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(params.len() * per_tensor);
    for p in 0..params.len() {
        let n = params.tensor(p).numel();
        for _ in 0..per_tensor.min(n) {
            out.push((p, rng.gen_range(0..n)));
        }
    }
    out
}

/// Max relative error between `analytic` and central differences of
/// `loss_fn` over `coords`. `analytic` holds one gradient vector per
/// tensor in `params`, in order. `params` is restored on return.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    analytic: &[Vec<f64>],
    loss_fn: &mut F,
    step: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut max_rel = 0.0_f64;
    for &(p, i) in coords {
        let orig = params.tensor(p).data()[i];
        params.tensor_mut(p).data_mut()[i] = orig + step;
        let plus = loss_fn(params)?;
        params.tensor_mut(p).data_mut()[i] = orig - step;
        let minus = loss_fn(params)?;
        params.tensor_mut(p).data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic[p][i];
        let rel = (a - fd).abs() / 1.0_f64.max(a.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Stream};
    use crate::tensor::{Graph, Tensor};
    use alloc::vec;

    /// Build-and-differentiate helper for a two-matrix composite loss.
    fn loss_and_grads(params: &ParamSet) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let a = g.param(params.tensor(0));
        let b = g.param(params.tensor(1));
        let prod = g.matmul(a, b)?;
        let soft = g.softmax_rows(prod)?;
        let gl = g.gelu(prod)?;
        let both = g.mul(soft, gl)?;
        let loss = g.mean(both)?;
        g.backward(loss)?;
        Ok((g.scalar_value(loss)?, vec![g.grad(a), g.grad(b)]))
    }

    #[test]
    fn composite_op_gradient_matches_finite_differences() {
        let mut rng = derive(7, Stream::GradCheck, 0);
        for trial in 0..20 {
            let r = 2 + (trial % 3);
            let k = 2 + (trial % 2);
            let mut params = ParamSet::new();
            let data_a: Vec<f64> = (0..r * k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let data_b: Vec<f64> = (0..k * r).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            params.push("a", Tensor::matrix(r, k, data_a).unwrap()).unwrap();
            params.push("b", Tensor::matrix(k, r, data_b).unwrap()).unwrap();
            let (_, grads) = loss_and_grads(&params).unwrap();
            let coords = all_coords(&params);
            let max_rel = finite_diff_check(
                &mut params,
                &grads,
                &mut |p| loss_and_grads(p).map(|(l, _)| l),
                1e-5,
                &coords,
            )
            .unwrap();
            assert!(max_rel <= 1e-3, "trial {trial}: max rel err {max_rel}");
        }
    }
}
