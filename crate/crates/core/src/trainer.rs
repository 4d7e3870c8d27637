//! The optimization loop: per-epoch pseudo-labeling followed by a fixed
//! number of SGD steps on the weighted objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor};
use crate::data::{sample_batches, BatchPlan, Perturber, TrainingData};
use crate::error::{Error, Result};
use crate::losses::{loss_total, LabeledBatch, LossBreakdown, LossWeights, StepBatches, Term};
use crate::metrics::{accuracy, calibration, centroid_distances, AccdState, EpochMetrics};
use crate::mixup::sample_lambdas;
use crate::model::checkpoint::{Checkpoint, TrainerSnapshot};
use crate::model::{init_params, Activation, ModelParams, ModelSpec, DEFAULT_TEMPERATURE};
use crate::pseudo::{
    assign_pseudo_labels, audit_rows, expand_labeled, pseudo_label_accuracy, PseudoLabelSet,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub lr_eta0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Whether weight decay also applies to the prototype matrix.
    pub decay_prototypes: bool,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub batch: BatchPlan,
    pub perturb_strength: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub sdm: bool,
    pub mdm: bool,
    pub psr: bool,
    pub nsr: bool,
    pub pa: bool,
    pub pseudo: bool,
    /// Per-term weight factors, see [`LossWeights::scale`].
    pub term_scale: [f64; 6],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            iterations_per_epoch: 25,
            lr_eta0: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_prototypes: true,
            tau: 0.95,
            alpha: 2.0,
            beta: 1.0,
            gamma: 0.1,
            temperature: DEFAULT_TEMPERATURE,
            batch: BatchPlan::default(),
            perturb_strength: 0.1,
            seed: 0,
            hidden: vec![64],
            feature_dim: 32,
            activation: Activation::Relu,
            sdm: true,
            mdm: true,
            psr: true,
            nsr: true,
            pa: true,
            pseudo: true,
            term_scale: [1.0; 6],
        }
    }
}

impl TrainConfig {
    /// Supervised-only training on source and labeled target samples.
    pub fn source_plus_target(mut self) -> Self {
        self.beta = 0.0;
        self.gamma = 0.0;
        self.pseudo = false;
        self
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
            sdm: self.sdm,
            mdm: self.mdm,
            psr: self.psr,
            nsr: self.nsr,
            pa: self.pa,
            scale: self.term_scale,
        }
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            classes,
            temperature: self.temperature,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.lr", self.lr_eta0),
            ("train.alpha", self.alpha),
            ("model.temperature", self.temperature),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("train.weight_decay", self.weight_decay),
            ("train.beta", self.beta),
            ("train.gamma", self.gamma),
            ("train.perturb_strength", self.perturb_strength),
        ];
        let scales = Term::ALL.map(|t| (t, self.term_scale[t as usize]));
        for (t, v) in scales {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("weight factor of {t} must be ≥ 0, got {v}")));
            }
        }
        for (k, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be ≥ 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "train.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("train.tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::Config("train.iterations_per_epoch must be ≥ 1".into()));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.batch.validate()
    }

    /// Short digest identifying the configuration.
    pub fn hash(&self) -> String {
        digest(&format!("{self:?}"))
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `η_t = η₀ / (1 + 0.0001·t)^0.75`
pub fn lr_at(t: u64, eta0: f64) -> f64 {
    eta0 / (1.0 + 0.0001 * t as f64).powf(0.75)
}

/// Heavy-ball SGD with weight decay folded into the gradient:
/// `v ← m·v + (g + wd·θ)`, `θ ← θ − η·v`. `decay[i]` selects which tensors
/// receive weight decay.
pub fn sgd_step<S: Real>(
    params: &mut [&mut Tensor<S>],
    velocity: &mut [Tensor<S>],
    grads: &[Tensor<S>],
    decay: &[bool],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() || params.len() != decay.len() {
        return Err(Error::dim("sgd_step", &[params.len()], &[grads.len()]));
    }
    let (lr, m) = (S::cast(lr), S::cast(momentum));
    for i in 0..params.len() {
        let (p, v, g) = (&mut *params[i], &mut velocity[i], &grads[i]);
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::dim("sgd_step", p.shape(), g.shape()));
        }
        let wd = S::cast(if decay[i] { weight_decay } else { 0.0 });
        for ((theta, vel), &grad) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = m * *vel + (grad + wd * *theta);
            *theta = *theta - lr * *vel;
        }
    }
    Ok(())
}

const STREAMS: [&str; 6] = ["source", "labeled", "labeled_prime", "unlabeled", "perturb", "mixup"];

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Independent random streams. Every stream is advanced identically no
/// matter which loss terms are switched on.
#[derive(Debug, Clone)]
struct Streams {
    batches: [ChaCha8Rng; 4],
    perturb: ChaCha8Rng,
    mixup: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            batches: [stream(seed, 0), stream(seed, 1), stream(seed, 2), stream(seed, 3)],
            perturb: stream(seed, 4),
            mixup: stream(seed, 5),
        }
    }

    fn all(&self) -> [&ChaCha8Rng; 6] {
        [
            &self.batches[0],
            &self.batches[1],
            &self.batches[2],
            &self.batches[3],
            &self.perturb,
            &self.mixup,
        ]
    }

    fn all_mut(&mut self) -> [&mut ChaCha8Rng; 6] {
        let [a, b, c, d] = &mut self.batches;
        [a, b, c, d, &mut self.perturb, &mut self.mixup]
    }

    fn positions(&self) -> Vec<(String, u128)> {
        STREAMS
            .iter()
            .zip(self.all())
            .map(|(n, r)| (n.to_string(), r.get_word_pos()))
            .collect()
    }

    fn restore(&mut self, positions: &[(String, u128)]) -> Result<()> {
        for (name, rng) in STREAMS.iter().zip(self.all_mut()) {
            let pos = positions
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing rng stream `{name}`")))?;
            rng.set_word_pos(pos.1);
        }
        Ok(())
    }
}

/// Training data converted to the working scalar type.
#[derive(Debug, Clone)]
struct Pools<S: Real> {
    source: LabeledBatch<S>,
    labeled: LabeledBatch<S>,
    unlabeled: Tensor<S>,
    eval_x: Tensor<S>,
    target_x: Tensor<S>,
    target_y: Vec<usize>,
}

fn rows<S: Real>(x: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    crate::losses::select_rows(x, idx)
}

fn labeled_rows<S: Real>(b: &LabeledBatch<S>, idx: &[usize]) -> LabeledBatch<S> {
    LabeledBatch {
        x: rows(&b.x, idx),
        y: idx.iter().map(|&i| b.y[i]).collect(),
    }
}

pub struct Trainer<S: Real = f64> {
    pub config: TrainConfig,
    pub params: ModelParams<S>,
    pub iteration: u64,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    /// Pseudo-labels assigned at the start of the latest epoch.
    pub pseudo: PseudoLabelSet,
    /// Accumulated pseudo-label audit rows (without header).
    pub audit: String,
    pub accd: AccdState,
    pub config_hash: String,
    data: TrainingData,
    pools: Pools<S>,
    velocity: Vec<Tensor<S>>,
    streams: Streams,
    perturber: Perturber,
}

impl<S: Real> Trainer<S> {
    pub fn new(config: TrainConfig, data: TrainingData) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec(data.dim(), data.classes);
        let params = init_params::<S>(&spec, config.seed)?;
        let velocity = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let source = LabeledBatch::new(data.source_x.cast(), data.source_y.clone())?;
        let labeled = LabeledBatch::new(data.labeled_x.cast(), data.labeled_y.clone())?;
        let (target_x, target_y) = Self::target_truth(&data)?;
        let pools = Pools {
            source,
            labeled,
            unlabeled: data.unlabeled_x.cast(),
            eval_x: data.eval_x.cast(),
            target_x,
            target_y,
        };
        let accd = AccdState::new(centroid_distances(
            &params,
            (&pools.source.x, &pools.source.y),
            (&pools.target_x, &pools.target_y),
        )?);
        let perturber = Perturber::new(config.perturb_strength, data.feature_std.clone())?;
        Ok(Self {
            config_hash: config.hash(),
            streams: Streams::new(config.seed),
            config,
            params,
            iteration: 0,
            epoch: 0,
            history: Vec::new(),
            pseudo: PseudoLabelSet::default(),
            audit: String::new(),
            accd,
            data,
            pools,
            velocity,
            perturber,
        })
    }

    /// All target samples whose label is known, for the alignment metric.
    fn target_truth(data: &TrainingData) -> Result<(Tensor<S>, Vec<usize>)> {
        let mut x = data.labeled_x.data().to_vec();
        let mut y = data.labeled_y.clone();
        if let Some(t) = &data.unlabeled_truth {
            x.extend_from_slice(data.unlabeled_x.data());
            y.extend_from_slice(t);
        }
        x.extend_from_slice(data.eval_x.data());
        y.extend_from_slice(&data.eval_y);
        Ok((Tensor::matrix(y.len(), data.dim(), x)?.cast(), y))
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    /// ACCD of the initial model; 1 by construction.
    pub fn initial_accd(&self) -> Result<f64> {
        let mut s = AccdState::new(self.accd.initial.clone());
        s.accd(&self.accd.initial, 0)
    }

    fn decay_mask(&self) -> Vec<bool> {
        let n = self.params.tensors().len();
        (0..n).map(|i| i + 1 < n || self.config.decay_prototypes).collect()
    }

    fn step_batches(&mut self, labeled_prime: &LabeledBatch<S>) -> Result<StepBatches<S>> {
        let sizes = [
            self.pools.source.len(),
            self.pools.labeled.len(),
            labeled_prime.len(),
            self.pools.unlabeled.rows(),
        ];
        let [is, il, ilp, iu] = sample_batches(sizes, &self.config.batch, &mut self.streams.batches)?;
        let u64 = rows(&self.data.unlabeled_x, &iu);
        let perturbed = self.perturber.perturb_rows(&u64, &mut self.streams.perturb);
        let pairs = is.len().min(ilp.len());
        let l1 = sample_lambdas(self.config.alpha, pairs, &mut self.streams.mixup)?;
        let l2 = sample_lambdas(self.config.alpha, pairs, &mut self.streams.mixup)?;
        Ok(StepBatches {
            source: labeled_rows(&self.pools.source, &is),
            labeled: labeled_rows(&self.pools.labeled, &il),
            labeled_prime: labeled_rows(labeled_prime, &ilp),
            unlabeled: u64.cast(),
            unlabeled_perturbed: perturbed.cast(),
            lambda_sample: l1.into_iter().map(S::cast).collect(),
            lambda_feature: l2.into_iter().map(S::cast).collect(),
        })
    }

    /// One optimization step; returns the loss breakdown and the rate used.
    fn step(&mut self, labeled_prime: &LabeledBatch<S>) -> Result<(LossBreakdown, f64)> {
        let batches = self.step_batches(labeled_prime)?;
        let weights = self.config.weights();
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let graph = loss_total(&bound, &batches, &weights)?;
        let grads = bound.collect(&tape.backward(graph.total)?);
        if !graph.breakdown.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            for &(term, v) in &graph.terms {
                let g = bound.collect(&tape.backward(v)?);
                if !v.value().is_finite() || g.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        term: term.name().into(),
                    });
                }
            }
            return Err(Error::NonFiniteGradient {
                term: "l_total".into(),
            });
        }
        let lr = lr_at(self.iteration, self.config.lr_eta0);
        let decay = self.decay_mask();
        let mut params = self.params.tensors_mut();
        sgd_step(
            &mut params,
            &mut self.velocity,
            &grads,
            &decay,
            lr,
            self.config.momentum,
            self.config.weight_decay,
        )?;
        self.iteration += 1;
        Ok((graph.breakdown, lr))
    }

    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch + 1;
        self.pseudo = if self.config.pseudo {
            assign_pseudo_labels(&self.pools.unlabeled, &self.params, self.config.tau, epoch)?
        } else {
            PseudoLabelSet::default()
        };
        let truth = self.data.unlabeled_truth.as_deref();
        self.audit
            .push_str(&audit_rows(&self.pseudo, &self.data.unlabeled_ids, truth));
        let stats = truth.map(|t| pseudo_label_accuracy(&self.pseudo, t)).transpose()?;
        let (lx, ly) = expand_labeled(
            &self.pools.labeled.x,
            &self.pools.labeled.y,
            &self.pools.unlabeled,
            &self.pseudo,
        )?;
        let labeled_prime = LabeledBatch::new(lx, ly)?;

        let mut losses = Vec::with_capacity(self.config.iterations_per_epoch);
        let mut lr = lr_at(self.iteration, self.config.lr_eta0);
        for _ in 0..self.config.iterations_per_epoch {
            let (b, used) = self.step(&labeled_prime)?;
            losses.push(b);
            lr = used;
        }
        self.epoch = epoch;

        let (acc_eval, ece) = if self.data.eval_y.is_empty() {
            (None, None)
        } else {
            let acc = accuracy(&self.params, &self.pools.eval_x, &self.data.eval_y)?;
            let cal = calibration(&self.params, &self.pools.eval_x, &self.data.eval_y)?;
            (Some(acc), Some(cal.ece))
        };
        let dist = centroid_distances(
            &self.params,
            (&self.pools.source.x, &self.pools.source.y),
            (&self.pools.target_x, &self.pools.target_y),
        )?;
        let accd = self.accd.accd(&dist, epoch).ok();
        let m = EpochMetrics {
            epoch,
            iter: self.iteration,
            lr,
            losses: LossBreakdown::mean(&losses),
            acc_eval,
            accd,
            ece,
            pl_count: self.pseudo.len(),
            pl_correct: stats.map(|s| s.correct),
            pl_acc: stats.and_then(|s| s.accuracy),
        };
        self.history.push(m.clone());
        Ok(m)
    }

    /// Trains until `config.epochs`, calling `on_epoch` after every epoch.
    pub fn run_with<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Self, &EpochMetrics) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            let m = self.train_epoch()?;
            on_epoch(self, &m)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_, _| Ok(()))
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            params: self.params.clone(),
            seed: self.config.seed,
            config_hash: self.config_hash.clone(),
            state: Some(TrainerSnapshot {
                iteration: self.iteration,
                epoch: self.epoch,
                momentum: self.velocity.clone(),
                rng_positions: self.streams.positions(),
            }),
        }
    }

    /// Continues a run from an epoch-boundary checkpoint written by a trainer
    /// with the same configuration and data.
    pub fn resume(config: TrainConfig, data: TrainingData, ckpt: &Checkpoint<S>) -> Result<Self> {
        let hash = config.hash();
        Self::resume_as(config, data, ckpt, hash)
    }

    /// Like [`Trainer::resume`], for checkpoints stamped with a caller-defined
    /// hash (the CLI hashes the whole experiment, data settings included).
    pub fn resume_as(
        config: TrainConfig,
        data: TrainingData,
        ckpt: &Checkpoint<S>,
        config_hash: String,
    ) -> Result<Self> {
        let mut t = Self::new(config, data)?;
        t.config_hash = config_hash;
        if ckpt.config_hash != t.config_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for config {}, current config is {}",
                ckpt.config_hash, t.config_hash
            )));
        }
        let state = ckpt
            .state
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no trainer state".into()))?;
        if ckpt.params.tensors().len() != t.params.tensors().len() {
            return Err(Error::Checkpoint("architecture differs from config".into()));
        }
        for (a, b) in ckpt.params.tensors().iter().zip(t.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint("architecture differs from config".into()));
            }
        }
        t.params = ckpt.params.clone();
        t.velocity = state.momentum.clone();
        t.iteration = state.iteration;
        t.epoch = state.epoch;
        t.streams.restore(&state.rng_positions)?;
        Ok(t)
    }
}
