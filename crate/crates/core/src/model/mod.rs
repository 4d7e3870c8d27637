//! Feature extractor plus prototypical cosine classifier.
//!
//! The extractor is a small MLP producing an unnormalized feature `f`. The
//! classifier projects `f` onto the unit sphere and scores it against the
//! prototype columns `w_k` of `W`:
//!
//! ```text
//! p(x) = softmax( (1/T) · Wᵀ f / ‖f‖ )
//! ```
//!
//! The classifier has no bias, and `T` is a fixed constant rather than a
//! trainable parameter.

pub mod checkpoint;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::oracle::OracleModel;
use crate::scalar::{argmax, Real};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Widths of the hidden layers; the nonlinearity follows each of them.
    pub hidden: Vec<usize>,
    /// Width of the (linear) output layer of the extractor.
    pub feature_dim: usize,
    pub classes: usize,
    pub temperature: f64,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, feature_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            feature_dim,
            classes,
            temperature: DEFAULT_TEMPERATURE,
            activation: Activation::Relu,
        }
    }

    /// Layer widths from input to feature, e.g. `[d_in, 64, 64, 64]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.feature_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.widths().contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {:?}",
                self.widths()
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Real = f64> {
    /// `[d_in × d_out]`
    pub weight: Tensor<S>,
    /// `[d_out]`
    pub bias: Tensor<S>,
}

/// Trainable parameters `θ` plus the fixed temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Real = f64> {
    pub layers: Vec<Layer<S>>,
    pub activation: Activation,
    /// `W`, `[d_feat × K]`, one prototype per column.
    pub prototypes: Tensor<S>,
    pub temperature: S,
}

/// Model output for a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S: Real = f64> {
    pub probs: Vec<S>,
    pub confidence: S,
    pub argmax_class: usize,
}

impl<S: Real> Prediction<S> {
    pub fn from_probs(probs: Vec<S>) -> Self {
        let argmax_class = argmax(&probs);
        Self {
            confidence: probs[argmax_class],
            argmax_class,
            probs,
        }
    }
}

/// He-uniform extractor weights (bound `√(6/d_in)`), zero biases, and
/// Gaussian prototype columns rescaled to unit length.
pub fn init_params<S: Real>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let (din, dout) = (w[0], w[1]);
        let bound = (6.0 / din as f64).sqrt();
        let data = (0..din * dout)
            .map(|_| S::cast(rng.random_range(-bound..=bound)))
            .collect();
        layers.push(Layer {
            weight: Tensor::matrix(din, dout, data)?,
            bias: Tensor::zeros(&[dout]),
        });
    }
    let (d, k) = (spec.feature_dim, spec.classes);
    let mut protos = vec![0.0f64; d * k];
    for c in 0..k {
        let col: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for (j, v) in col.iter().enumerate() {
            protos[j * k + c] = v / n;
        }
    }
    Ok(ModelParams {
        layers,
        activation: spec.activation,
        prototypes: Tensor::matrix(d, k, protos.into_iter().map(S::cast).collect())?,
        temperature: S::cast(spec.temperature),
    })
}

impl<S: Real> ModelParams<S> {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn classes(&self) -> usize {
        self.prototypes.cols()
    }

    /// Trainable tensors in a fixed order: each layer's weight then bias,
    /// then the prototypes.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.prototypes);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.prototypes);
        out
    }

    /// Names matching [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.layers.len() {
            out.push(format!("layer{i}.weight"));
            out.push(format!("layer{i}.bias"));
        }
        out.push("prototypes".into());
        out
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("extractor has no layers".into()));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::dim(
                    "extractor",
                    w[0].weight.shape(),
                    w[1].weight.shape(),
                ));
            }
            if w[0].bias.len() != w[0].weight.cols() {
                return Err(Error::Validation(format!("layer {i} bias width")));
            }
        }
        let last = self.layers.last().unwrap();
        if last.bias.len() != last.weight.cols() {
            return Err(Error::Validation("last layer bias width".into()));
        }
        if last.weight.cols() != self.prototypes.rows() {
            return Err(Error::dim(
                "classifier",
                last.weight.shape(),
                self.prototypes.shape(),
            ));
        }
        if self.classes() < 2 {
            return Err(Error::Validation("need at least 2 classes".into()));
        }
        if !(self.temperature > S::zero()) {
            return Err(Error::Validation("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Registers every trainable tensor as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> BoundParams<'t, S> {
        BoundParams {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.var(l.weight.clone()), tape.var(l.bias.clone())))
                .collect(),
            prototypes: tape.var(self.prototypes.clone()),
            activation: self.activation,
            temperature: self.temperature,
            input_dim: self.input_dim(),
        }
    }

    /// Unnormalized features for a batch `[n × d_in]`, no gradient tracking.
    pub fn features(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::detached();
        let p = self.bind(&tape);
        Ok(p.extract(tape.constant(x.clone()))?.detach())
    }

    /// Class probabilities for a batch `[n × d_in]`, no gradient tracking.
    pub fn predict_batch(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::detached();
        let p = self.bind(&tape);
        Ok(p.predict(tape.constant(x.clone()))?.detach())
    }

    /// Prediction for one input vector.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Prediction<S>> {
        let probs = self.predict_batch(&x.clone().into_row_matrix())?;
        Ok(Prediction::from_probs(probs.into_data()))
    }

    /// Probabilities for pre-computed features `[n × d_feat]`.
    pub fn classify_features(&self, f: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::detached();
        let p = self.bind(&tape);
        Ok(p.classify(tape.constant(f.clone()))?.detach())
    }

    /// Plain nested copy for the scalar reference implementation.
    pub fn to_oracle(&self) -> OracleModel {
        let nested = |t: &Tensor<S>| -> Vec<Vec<f64>> {
            t.row_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect()
        };
        OracleModel {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        nested(&l.weight),
                        l.bias.data().iter().map(|v| v.as_f64()).collect(),
                    )
                })
                .collect(),
            relu_hidden: self.activation == Activation::Relu,
            prototypes: nested(&self.prototypes),
            temperature: self.temperature.as_f64(),
        }
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            activation: self.activation,
            prototypes: self.prototypes.cast(),
            temperature: T::cast(self.temperature.as_f64()),
        }
    }
}

/// Parameters registered on a tape for one forward/backward pass.
pub struct BoundParams<'t, S: Real = f64> {
    pub layers: Vec<(Var<'t, S>, Var<'t, S>)>,
    pub prototypes: Var<'t, S>,
    pub activation: Activation,
    pub temperature: S,
    input_dim: usize,
}

impl<'t, S: Real> BoundParams<'t, S> {
    /// `F(x)` for a batch `[n × d_in]` (a single vector is treated as one row).
    pub fn extract(&self, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let xv = x.value();
        if xv.cols() != self.input_dim || xv.rank() > 2 {
            return Err(Error::dim("extract", xv.shape(), &[self.input_dim]));
        }
        let mut h = if xv.rank() == 2 {
            x
        } else {
            x.tape().constant((*xv).clone().into_row_matrix())
        };
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if i < last && self.activation == Activation::Relu {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// `σ((1/T)·Wᵀ f/‖f‖)` row-wise.
    pub fn classify(&self, f: Var<'t, S>) -> Result<Var<'t, S>> {
        f.l2_normalize()?
            .matmul(&self.prototypes)?
            .scale(S::one() / self.temperature)
            .softmax()
    }

    pub fn predict(&self, x: Var<'t, S>) -> Result<Var<'t, S>> {
        self.classify(self.extract(x)?)
    }

    /// Gradients for every trainable tensor, in [`ModelParams::tensors`] order.
    pub fn collect(&self, grads: &Gradients<S>) -> Vec<Tensor<S>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for (w, b) in &self.layers {
            out.push(grads.get_or_zeros(*w));
            out.push(grads.get_or_zeros(*b));
        }
        out.push(grads.get_or_zeros(self.prototypes));
        out
    }
}
