//! Row-wise layer norm, GELU and small helpers over ndarray views.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::params::{Gradients, ParamId, ParamSet};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn mat(p: &ParamSet, id: ParamId) -> ArrayView2<'_, f64> {
    let t = p.get(id);
    ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("matrix parameter shape")
}

pub(crate) fn row_vec(p: &ParamSet, id: ParamId) -> ArrayView1<'_, f64> {
    ArrayView1::from(p.data(id))
}

pub(crate) fn grad_mat<'a>(g: &'a mut Gradients, p: &ParamSet, id: ParamId) -> ArrayViewMut2<'a, f64> {
    let shape = &p.get(id).shape;
    ArrayViewMut2::from_shape((shape[0], shape[1]), g.get_mut(id)).expect("matrix gradient shape")
}

pub(crate) fn grad_vec<'a>(g: &'a mut Gradients, id: ParamId) -> ArrayViewMut1<'a, f64> {
    ArrayViewMut1::from(g.get_mut(id))
}

/// `x W + b` with `b` broadcast over rows.
pub(crate) fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates the weight and bias gradients of `y = x W + b` and returns
/// the gradient with respect to `x`.
pub(crate) fn affine_backward(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    w: ArrayView2<'_, f64>,
    grads: &mut Gradients,
    params: &ParamSet,
    w_id: ParamId,
    b_id: ParamId,
) -> Array2<f64> {
    {
        let mut dw = grad_mat(grads, params, w_id);
        ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, &mut dw);
    }
    {
        let mut db = grad_vec(grads, b_id);
        db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let mut y = &xhat * &gamma;
    y += &beta;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<'_, f64>,
    grads: &mut Gradients,
    gamma_id: ParamId,
    beta_id: ParamId,
) -> Array2<f64> {
    {
        let mut dg = grad_vec(grads, gamma_id);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = grad_vec(grads, beta_id);
        db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * &gamma;
    for ((mut row, xhat), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_dxhat = row.sum() / d;
        let mean_dxhat_xhat = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for (v, &xh) in row.iter_mut().zip(xhat.iter()) {
            *v = r * (*v - mean_dxhat - xh * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// Numerically stable in-place row softmax.
pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}
