//! Forward kernels. The tape calls these for both recorded and unrecorded
//! evaluation so the two paths produce identical values.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Norm floor below which `l2_normalize` refuses to divide.
pub const NORM_EPS: f64 = 1e-12;

pub fn matmul<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn same_shape<S: Real>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Adds `bias` (length = last axis) to every row of `a`.
pub fn add_row<S: Real>(a: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    if bias.len() != a.cols() || bias.rank() > 1 {
        return Err(Error::dim("add_row", a.shape(), bias.shape()));
    }
    let c = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x + bias.data()[i % c])
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Column sums of a matrix, i.e. the adjoint of `add_row` w.r.t. the bias.
pub fn col_sums<S: Real>(g: &Tensor<S>) -> Vec<S> {
    let c = g.cols();
    let mut out = vec![S::zero(); c];
    for row in g.row_iter() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

pub fn softmax_rows<S: Real>(a: &Tensor<S>) -> Result<Tensor<S>> {
    if a.data().iter().any(|x| x.is_nan()) {
        return Err(Error::numeric("softmax", "NaN input"));
    }
    let mut out = Vec::with_capacity(a.len());
    for row in a.row_iter() {
        let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
        let start = out.len();
        let mut total = S::zero();
        for &x in row {
            let e = (x - max).exp();
            total = total + e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Row-wise Euclidean normalization. Returns the normalized tensor and the
/// per-row norms.
pub fn l2_normalize_rows<S: Real>(a: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
    let eps = S::cast(NORM_EPS);
    let mut out = Vec::with_capacity(a.len());
    let mut norms = Vec::with_capacity(a.rows());
    for (r, row) in a.row_iter().enumerate() {
        let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
        if norm.is_nan() || norm <= eps {
            return Err(Error::Degenerate(format!(
                "row {r} has norm {norm} at or below the floor {NORM_EPS:e}"
            )));
        }
        out.extend(row.iter().map(|&x| x / norm));
        norms.push(norm);
    }
    Ok((Tensor::from_parts(a.shape().to_vec(), out), norms))
}

pub fn sum_rows<S: Real>(a: &Tensor<S>) -> Tensor<S> {
    let data = a.row_iter().map(|r| r.iter().copied().sum()).collect();
    Tensor::from_parts(vec![a.rows()], data)
}

/// Weights `(w_a, w_b)` used to combine `a` and `b` at ratio `lambda`.
///
/// For `lambda < 0.5` the weights are derived from `mu = 1 - lambda` so that
/// `convex(a, b, l)` and `convex(b, a, 1 - l)` are bit-identical.
#[inline]
pub fn convex_weights<S: Real>(lambda: S) -> (S, S) {
    let half = S::cast(0.5);
    if lambda >= half {
        (lambda, S::one() - lambda)
    } else {
        let mu = S::one() - lambda;
        (S::one() - mu, mu)
    }
}

/// Convex combination of two scalars; equal inputs are returned unchanged.
#[inline]
pub fn convex<S: Real>(a: S, b: S, lambda: S) -> S {
    if a == b {
        return a;
    }
    let (wa, wb) = convex_weights(lambda);
    if lambda >= S::cast(0.5) {
        wa * a + wb * b
    } else {
        wb * b + wa * a
    }
}

/// Row-wise convex combination with one ratio per row.
pub fn convex_rows<S: Real>(a: &Tensor<S>, b: &Tensor<S>, lambdas: &[S]) -> Result<Tensor<S>> {
    same_shape("mix", a, b)?;
    if lambdas.len() != a.rows() {
        return Err(Error::dim("mix", a.shape(), &[lambdas.len()]));
    }
    let c = a.cols();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| convex(x, y, lambdas[i / c]))
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}
