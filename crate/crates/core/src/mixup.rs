//! Inter-domain mixing of labeled source/target pairs.
//!
//! Sample-level mixing combines raw inputs, manifold-level mixing combines
//! extractor outputs. Both use the same convex kernel and mix the one-hot
//! labels with the same ratio. Ratios are drawn from a symmetric
//! `Beta(α, α)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::autodiff::kernels::convex;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Draws `λ ~ Beta(α, α)` as `X / (X + Y)` with `X, Y ~ Gamma(α, 1)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "mixup alpha must be positive, got {alpha}"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let x: f64 = gamma.sample(rng);
    let y: f64 = gamma.sample(rng);
    let s = x + y;
    // both draws can underflow to zero for tiny alpha
    Ok(if s > 0.0 { (x / s).clamp(0.0, 1.0) } else { 0.5 })
}

/// `n` independent ratios.
pub fn sample_lambdas<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    (0..n).map(|_| sample_lambda(alpha, rng)).collect()
}

pub fn one_hot<S: Real>(class: usize, classes: usize) -> Vec<S> {
    let mut v = vec![S::zero(); classes];
    v[class] = S::one();
    v
}

/// Mixed input with its soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample<S: Real = f64> {
    pub x: Tensor<S>,
    pub y: Vec<S>,
    pub lambda: S,
}

/// Mixed feature with its soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFeature<S: Real = f64> {
    pub f: Tensor<S>,
    pub y: Vec<S>,
    pub lambda: S,
}

fn check_lambda<S: Real>(lambda: S) -> Result<()> {
    if lambda >= S::zero() && lambda <= S::one() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "mixup ratio must lie in [0, 1], got {lambda}"
        )))
    }
}

fn mix_vectors<S: Real>(
    op: &'static str,
    a: &[S],
    b: &[S],
    lambda: S,
) -> Result<Vec<S>> {
    if a.len() != b.len() {
        return Err(Error::dim(op, &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(&u, &v)| convex(u, v, lambda)).collect())
}

/// `λ·y_s + (1-λ)·y_t` over label vectors.
pub fn mix_labels<S: Real>(ys: &[S], yt: &[S], lambda: S) -> Result<Vec<S>> {
    check_lambda(lambda)?;
    mix_vectors("mix_labels", ys, yt, lambda)
}

/// `x^m = λ·x_s + (1-λ)·x_t` with the matching soft label.
pub fn mix_samples<S: Real>(
    xs: &Tensor<S>,
    ys: &[S],
    xt: &Tensor<S>,
    yt: &[S],
    lambda: S,
) -> Result<MixedSample<S>> {
    check_lambda(lambda)?;
    if xs.shape() != xt.shape() {
        return Err(Error::dim("mix_samples", xs.shape(), xt.shape()));
    }
    let x = mix_vectors("mix_samples", xs.data(), xt.data(), lambda)?;
    Ok(MixedSample {
        x: Tensor::new(xs.shape().to_vec(), x)?,
        y: mix_labels(ys, yt, lambda)?,
        lambda,
    })
}

/// `f^m = λ·f_s + (1-λ)·f_t` with the matching soft label.
pub fn mix_features<S: Real>(
    fs: &Tensor<S>,
    ys: &[S],
    ft: &Tensor<S>,
    yt: &[S],
    lambda: S,
) -> Result<MixedFeature<S>> {
    let m = mix_samples(fs, ys, ft, yt, lambda)?;
    Ok(MixedFeature {
        f: m.x,
        y: m.y,
        lambda: m.lambda,
    })
}

/// Soft-label matrix `[n × K]` for row-wise pairs `(ys[i], yt[i])`.
pub fn mixed_label_matrix<S: Real>(
    ys: &[usize],
    yt: &[usize],
    lambdas: &[S],
    classes: usize,
) -> Result<Tensor<S>> {
    let n = lambdas.len();
    let mut data = Vec::with_capacity(n * classes);
    for i in 0..n {
        data.extend(mix_labels(
            &one_hot::<S>(ys[i], classes),
            &one_hot::<S>(yt[i], classes),
            lambdas[i],
        )?);
    }
    Tensor::matrix(n, classes, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoints() {
        let xs = Tensor::vector(vec![1.0, 2.0]);
        let xt = Tensor::vector(vec![-3.0, 0.5]);
        let (ys, yt) = (one_hot::<f64>(0, 3), one_hot::<f64>(2, 3));
        let m = mix_samples(&xs, &ys, &xt, &yt, 1.0).unwrap();
        assert_eq!(m.x, xs);
        assert_eq!(m.y, ys);
        let m = mix_samples(&xs, &ys, &xt, &yt, 0.0).unwrap();
        assert_eq!(m.x, xt);
        assert_eq!(m.y, yt);
    }

    #[test]
    fn half_between_classes() {
        let x = Tensor::vector(vec![0.0]);
        let m = mix_samples(&x, &one_hot(0, 3), &x, &one_hot(2, 3), 0.5).unwrap();
        assert_eq!(m.y, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn features_equal_points() {
        let f = Tensor::vector(vec![0.1, 0.7, -0.3]);
        for l in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let m = mix_features(&f, &one_hot(1, 2), &f, &one_hot(1, 2), l).unwrap();
            assert_eq!(m.f, f);
            assert_eq!(m.y, one_hot(1, 2));
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::vector(vec![0.0, 1.0]);
        let b = Tensor::vector(vec![0.0]);
        let err = mix_samples(&a, &one_hot(0, 2), &b, &one_hot(0, 2), 0.5).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn lambda_out_of_range() {
        let a = Tensor::vector(vec![0.0]);
        assert!(mix_samples(&a, &one_hot(0, 2), &a, &one_hot(0, 2), 1.5).is_err());
    }

    #[test]
    fn alpha_must_be_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_lambda(0.0, &mut rng), Err(Error::Config(_))));
        assert!(sample_lambda(-1.0, &mut rng).is_err());
        assert!(sample_lambda(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn lambda_deterministic_and_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for alpha in [0.05, 0.5, 1.0, 2.0, 20.0] {
            for _ in 0..1000 {
                let u = sample_lambda(alpha, &mut a).unwrap();
                let v = sample_lambda(alpha, &mut b).unwrap();
                assert_eq!(u.to_bits(), v.to_bits());
                assert!((0.0..=1.0).contains(&u));
            }
        }
    }
}
