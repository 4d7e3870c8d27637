//! Training objective.
//!
//! ```text
//! L = L_sup + β·(L_sdm + L_mdm) + γ·(L_psr + L_nsr + L_pa)
//! ```
//!
//! Every term is built on a caller-supplied tape so that one backward sweep
//! yields the gradient of the weighted total. Confidence masks, pseudo-labels,
//! complementary labels and pairwise labels are read from detached values and
//! enter the graph only as constants.

use std::fmt;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::mixup::{mixed_label_matrix, one_hot};
use crate::model::{BoundParams, ModelParams};
use crate::scalar::{argmax, argmin, Real};

/// Clamp applied to probabilities (and `1 - p`, `p_i·p_j`) before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Inputs with ground-truth (or pseudo) class indices; `x` is `[n × d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<S: Real = f64> {
    pub x: Tensor<S>,
    pub y: Vec<usize>,
}

impl<S: Real> LabeledBatch<S> {
    pub fn new(x: Tensor<S>, y: Vec<usize>) -> Result<Self> {
        if x.rank() != 2 || x.rows() != y.len() {
            return Err(Error::dim("labeled batch", x.shape(), &[y.len()]));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<S>], y: Vec<usize>) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        Self {
            x: select_rows(&self.x, &idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.x.cols() != other.x.cols() {
            return Err(Error::dim("concat", self.x.shape(), other.x.shape()));
        }
        let mut data = self.x.data().to_vec();
        data.extend_from_slice(other.x.data());
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Self::new(Tensor::matrix(y.len(), self.x.cols(), data)?, y)
    }
}

pub fn select_rows<S: Real>(t: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("row selection")
}

fn one_hot_matrix<S: Real>(labels: &[usize], classes: usize) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(labels.len() * classes);
    for &y in labels {
        if y >= classes {
            return Err(Error::Validation(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        data.extend(one_hot::<S>(y, classes));
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// `-(1/n) Σ_i Σ_k t_ik log p_ik` with `p` clamped to `[ε, 1]`.
pub fn soft_cross_entropy<'t, S: Real>(probs: Var<'t, S>, targets: &Tensor<S>) -> Result<Var<'t, S>> {
    let n = probs.value().rows();
    if n == 0 {
        return Err(Error::Precondition("cross-entropy over an empty batch".into()));
    }
    let logp = probs.clamp(S::cast(PROB_EPS), S::one()).log()?;
    Ok(logp
        .mul_const(targets)?
        .sum()
        .scale(-S::one() / S::cast(n as f64)))
}

fn zero<'t, S: Real>(p: &BoundParams<'t, S>) -> Var<'t, S> {
    p.prototypes.tape().constant(Tensor::scalar(S::zero()))
}

fn classes<S: Real>(p: &BoundParams<'_, S>) -> usize {
    p.prototypes.value().cols()
}

/// Supervised cross-entropy over the union of a source and a labeled target
/// batch.
pub fn loss_sup<'t, S: Real>(
    p: &BoundParams<'t, S>,
    source: &LabeledBatch<S>,
    labeled: &LabeledBatch<S>,
) -> Result<Var<'t, S>> {
    let all = source.concat(labeled)?;
    if all.is_empty() {
        return Err(Error::Precondition(
            "supervised loss needs at least one labeled sample".into(),
        ));
    }
    let tape = p.prototypes.tape();
    let probs = p.predict(tape.constant(all.x.clone()))?;
    soft_cross_entropy(probs, &one_hot_matrix(&all.y, classes(p))?)
}

/// Sample-level mixup loss over `min(|source|, |target|)` row-wise pairs.
/// Returns zero when there are no pairs.
pub fn loss_sdm<'t, S: Real>(
    p: &BoundParams<'t, S>,
    source: &LabeledBatch<S>,
    target: &LabeledBatch<S>,
    lambdas: &[S],
) -> Result<Var<'t, S>> {
    let n = source.len().min(target.len());
    if n == 0 {
        return Ok(zero(p));
    }
    check_lambdas(lambdas, n)?;
    let tape = p.prototypes.tape();
    let (s, t) = (source.head(n), target.head(n));
    let xm = crate::autodiff::kernels::convex_rows(&s.x, &t.x, &lambdas[..n])?;
    let ym = mixed_label_matrix(&s.y, &t.y, &lambdas[..n], classes(p))?;
    let probs = p.predict(tape.constant(xm))?;
    soft_cross_entropy(probs, &ym)
}

/// Manifold-level mixup loss: extractor outputs of each pair are mixed
/// before the classifier (which normalizes the mixed feature itself).
pub fn loss_mdm<'t, S: Real>(
    p: &BoundParams<'t, S>,
    source: &LabeledBatch<S>,
    target: &LabeledBatch<S>,
    lambdas: &[S],
) -> Result<Var<'t, S>> {
    let n = source.len().min(target.len());
    if n == 0 {
        return Ok(zero(p));
    }
    check_lambdas(lambdas, n)?;
    let tape = p.prototypes.tape();
    let (s, t) = (source.head(n), target.head(n));
    let fs = p.extract(tape.constant(s.x))?;
    let ft = p.extract(tape.constant(t.x))?;
    let fm = fs.mix_rows(&ft, &lambdas[..n])?;
    let ym = mixed_label_matrix(&s.y, &t.y, &lambdas[..n], classes(p))?;
    soft_cross_entropy(p.classify(fm)?, &ym)
}

fn check_lambdas<S: Real>(lambdas: &[S], n: usize) -> Result<()> {
    if lambdas.len() < n {
        return Err(Error::Precondition(format!(
            "{n} pairs but only {} mixup ratios",
            lambdas.len()
        )));
    }
    Ok(())
}

/// Detached class probabilities of a batch (masks and pseudo-labels).
fn detached_probs<S: Real>(p: &BoundParams<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let tape = p.prototypes.tape();
    Ok(p.predict(tape.constant(x.clone()))?.detach())
}

fn confidence<S: Real>(row: &[S]) -> S {
    row[argmax(row)]
}

/// Consistency for confident samples: `-log p_ŷ(x+δ)` where `ŷ` and the
/// mask `max p(x) ≥ τ` come from the clean input. Mean over the mask.
pub fn loss_psr<'t, S: Real>(
    p: &BoundParams<'t, S>,
    clean: &Tensor<S>,
    perturbed: &Tensor<S>,
    tau: S,
) -> Result<Var<'t, S>> {
    if clean.shape() != perturbed.shape() {
        return Err(Error::dim("psr", clean.shape(), perturbed.shape()));
    }
    if clean.rows() == 0 {
        return Ok(zero(p));
    }
    let probs = detached_probs(p, clean)?;
    let (idx, labels): (Vec<usize>, Vec<usize>) = probs
        .row_iter()
        .enumerate()
        .filter(|(_, r)| confidence(r) >= tau)
        .map(|(i, r)| (i, argmax(r)))
        .unzip();
    if idx.is_empty() {
        return Ok(zero(p));
    }
    let tape = p.prototypes.tape();
    let q = p.predict(tape.constant(select_rows(perturbed, &idx)))?;
    soft_cross_entropy(q, &one_hot_matrix(&labels, classes(p))?)
}

/// Complementary-label loss for unconfident samples (`max p < τ`):
/// `-log(1 - p_ȳ(x))` with `ȳ` the least likely class. Mean over the mask.
pub fn loss_nsr<'t, S: Real>(
    p: &BoundParams<'t, S>,
    unlabeled: &Tensor<S>,
    tau: S,
) -> Result<Var<'t, S>> {
    if unlabeled.rows() == 0 {
        return Ok(zero(p));
    }
    let probs = detached_probs(p, unlabeled)?;
    let (idx, comp): (Vec<usize>, Vec<usize>) = probs
        .row_iter()
        .enumerate()
        .filter(|(_, r)| confidence(r) < tau)
        .map(|(i, r)| (i, argmin(r)))
        .unzip();
    if idx.is_empty() {
        return Ok(zero(p));
    }
    let tape = p.prototypes.tape();
    let q = p.predict(tape.constant(select_rows(unlabeled, &idx)))?;
    let picked = q.mul_const(&one_hot_matrix(&comp, classes(p))?)?.sum_rows();
    let eps = S::cast(PROB_EPS);
    Ok(picked
        .rsub_scalar(S::one())
        .clamp(eps, S::one())
        .log()?
        .sum()
        .scale(-S::one() / S::cast(idx.len() as f64)))
}

/// Pairwise approaching: binary cross-entropy on `p_i·p_j` between every
/// confident unlabeled sample `i` and every labeled target sample `j`, with
/// target `ν_ij = [ŷ_i = y_j]`. Summed over `j`, averaged over confident `i`.
pub fn loss_pa<'t, S: Real>(
    p: &BoundParams<'t, S>,
    unlabeled: &Tensor<S>,
    labeled_prime: &LabeledBatch<S>,
    tau: S,
) -> Result<Var<'t, S>> {
    if unlabeled.rows() == 0 || labeled_prime.is_empty() {
        return Ok(zero(p));
    }
    let probs = detached_probs(p, unlabeled)?;
    let (idx, pseudo): (Vec<usize>, Vec<usize>) = probs
        .row_iter()
        .enumerate()
        .filter(|(_, r)| confidence(r) >= tau)
        .map(|(i, r)| (i, argmax(r)))
        .unzip();
    if idx.is_empty() {
        return Ok(zero(p));
    }
    let tape = p.prototypes.tape();
    let pu = p.predict(tape.constant(select_rows(unlabeled, &idx)))?;
    let pl = p.predict(tape.constant(labeled_prime.x.clone()))?;
    let (m, n) = (idx.len(), labeled_prime.len());
    let mut same = Vec::with_capacity(m * n);
    for &yh in &pseudo {
        for &y in &labeled_prime.y {
            same.push(if yh == y { S::one() } else { S::zero() });
        }
    }
    let nu = Tensor::matrix(m, n, same)?;
    let not_nu = nu.map(|v| S::one() - v);
    let eps = S::cast(PROB_EPS);
    let sim = pu.matmul(&pl.transpose())?.clamp(eps, S::one() - eps);
    let pos = sim.log()?.mul_const(&nu)?;
    let neg = sim.rsub_scalar(S::one()).log()?.mul_const(&not_nu)?;
    Ok(pos
        .add(&neg)?
        .sum()
        .scale(-S::one() / S::cast(m as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Sup,
    Sdm,
    Mdm,
    Psr,
    Nsr,
    Pa,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::Sup, Term::Sdm, Term::Mdm, Term::Psr, Term::Nsr, Term::Pa];

    pub fn name(self) -> &'static str {
        match self {
            Term::Sup => "l_sup",
            Term::Sdm => "l_sdm",
            Term::Mdm => "l_mdm",
            Term::Psr => "l_psr",
            Term::Nsr => "l_nsr",
            Term::Pa => "l_pa",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trade-off weights, threshold and per-term switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sdm: bool,
    pub mdm: bool,
    pub psr: bool,
    pub nsr: bool,
    pub pa: bool,
    /// Extra per-term factor on top of `beta`/`gamma`, indexed by `Term as usize`.
    pub scale: [f64; 6],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.1,
            tau: 0.95,
            sdm: true,
            mdm: true,
            psr: true,
            nsr: true,
            pa: true,
            scale: [1.0; 6],
        }
    }
}

impl LossWeights {
    pub fn enabled(&self, term: Term) -> bool {
        match term {
            Term::Sup => true,
            Term::Sdm => self.sdm,
            Term::Mdm => self.mdm,
            Term::Psr => self.psr,
            Term::Nsr => self.nsr,
            Term::Pa => self.pa,
        }
    }

    /// Coefficient of `term` in the total (0 when switched off).
    pub fn weight(&self, term: Term) -> f64 {
        if !self.enabled(term) {
            return 0.0;
        }
        let group = match term {
            Term::Sup => 1.0,
            Term::Sdm | Term::Mdm => self.beta,
            Term::Psr | Term::Nsr | Term::Pa => self.gamma,
        };
        group * self.scale[term as usize]
    }
}

/// Per-term values of one step plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_sdm: f64,
    pub l_mdm: f64,
    pub l_psr: f64,
    pub l_nsr: f64,
    pub l_pa: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Sup => self.l_sup,
            Term::Sdm => self.l_sdm,
            Term::Mdm => self.l_mdm,
            Term::Psr => self.l_psr,
            Term::Nsr => self.l_nsr,
            Term::Pa => self.l_pa,
        }
    }

    fn set(&mut self, term: Term, v: f64) {
        match term {
            Term::Sup => self.l_sup = v,
            Term::Sdm => self.l_sdm = v,
            Term::Mdm => self.l_mdm = v,
            Term::Psr => self.l_psr = v,
            Term::Nsr => self.l_nsr = v,
            Term::Pa => self.l_pa = v,
        }
    }

    /// `l_sup + β(l_sdm + l_mdm) + γ(l_psr + l_nsr + l_pa)`, switched-off
    /// terms excluded.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        Term::ALL
            .iter()
            .map(|&t| {
                let c = w.weight(t);
                if c == 0.0 {
                    0.0
                } else {
                    c * self.get(t)
                }
            })
            .sum()
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        if items.is_empty() {
            return out;
        }
        let n = items.len() as f64;
        for t in Term::ALL {
            out.set(t, items.iter().map(|b| b.get(t)).sum::<f64>() / n);
        }
        out.total = items.iter().map(|b| b.total).sum::<f64>() / n;
        out
    }
}

/// Everything one optimization step consumes.
#[derive(Debug, Clone)]
pub struct StepBatches<S: Real = f64> {
    pub source: LabeledBatch<S>,
    pub labeled: LabeledBatch<S>,
    pub labeled_prime: LabeledBatch<S>,
    pub unlabeled: Tensor<S>,
    /// `unlabeled` plus the perturbation δ, row for row.
    pub unlabeled_perturbed: Tensor<S>,
    /// Sample-level ratios, one per pair.
    pub lambda_sample: Vec<S>,
    /// Manifold-level ratios, one per pair.
    pub lambda_feature: Vec<S>,
}

impl<S: Real> StepBatches<S> {
    pub fn pair_count(&self) -> usize {
        self.source.len().min(self.labeled_prime.len())
    }
}

/// The weighted objective on a tape with each computed term kept separately.
pub struct LossGraph<'t, S: Real = f64> {
    pub total: Var<'t, S>,
    pub terms: Vec<(Term, Var<'t, S>)>,
    pub breakdown: LossBreakdown,
    /// Set when the step had no source/target pairs for the mixup terms.
    pub no_pairs: bool,
}

/// Builds every enabled term. Terms with weight zero are still evaluated for
/// reporting but are left out of `total`, so they contribute no gradient.
pub fn loss_total<'t, S: Real>(
    p: &BoundParams<'t, S>,
    b: &StepBatches<S>,
    w: &LossWeights,
) -> Result<LossGraph<'t, S>> {
    let tau = S::cast(w.tau);
    let mut terms = Vec::with_capacity(6);
    let mut breakdown = LossBreakdown::default();
    for term in Term::ALL {
        if !w.enabled(term) {
            continue;
        }
        let v = match term {
            Term::Sup => loss_sup(p, &b.source, &b.labeled)?,
            Term::Sdm => loss_sdm(p, &b.source, &b.labeled_prime, &b.lambda_sample)?,
            Term::Mdm => loss_mdm(p, &b.source, &b.labeled_prime, &b.lambda_feature)?,
            Term::Psr => loss_psr(p, &b.unlabeled, &b.unlabeled_perturbed, tau)?,
            Term::Nsr => loss_nsr(p, &b.unlabeled, tau)?,
            Term::Pa => loss_pa(p, &b.unlabeled, &b.labeled_prime, tau)?,
        };
        breakdown.set(term, v.value().item().as_f64());
        terms.push((term, v));
    }
    let mut total = terms[0].1;
    for &(term, v) in &terms[1..] {
        let c = w.weight(term);
        if c != 0.0 {
            total = total.add(&v.scale(S::cast(c)))?;
        }
    }
    breakdown.total = total.value().item().as_f64();
    Ok(LossGraph {
        total,
        terms,
        breakdown,
        no_pairs: b.pair_count() == 0,
    })
}

/// Loss breakdown and gradients (in [`ModelParams::tensors`] order) of the
/// weighted total.
pub fn evaluate<S: Real>(
    params: &ModelParams<S>,
    batches: &StepBatches<S>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Tensor<S>>)> {
    let tape = crate::autodiff::Tape::new();
    let bound = params.bind(&tape);
    let graph = loss_total(&bound, batches, weights)?;
    let grads = tape.backward(graph.total)?;
    Ok((graph.breakdown, bound.collect(&grads)))
}

/// Value and gradients of a single unweighted term.
pub fn evaluate_term<S: Real>(
    params: &ModelParams<S>,
    batches: &StepBatches<S>,
    tau: f64,
    term: Term,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let tape = crate::autodiff::Tape::new();
    let p = params.bind(&tape);
    let t = S::cast(tau);
    let v = match term {
        Term::Sup => loss_sup(&p, &batches.source, &batches.labeled)?,
        Term::Sdm => loss_sdm(&p, &batches.source, &batches.labeled_prime, &batches.lambda_sample)?,
        Term::Mdm => loss_mdm(&p, &batches.source, &batches.labeled_prime, &batches.lambda_feature)?,
        Term::Psr => loss_psr(&p, &batches.unlabeled, &batches.unlabeled_perturbed, t)?,
        Term::Nsr => loss_nsr(&p, &batches.unlabeled, t)?,
        Term::Pa => loss_pa(&p, &batches.unlabeled, &batches.labeled_prime, t)?,
    };
    let grads = tape.backward(v)?;
    Ok((v.value().item().as_f64(), p.collect(&grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::model::{Activation, Layer};

    /// Identity extractor and identity prototypes: the logits are the
    /// normalized input scaled by `1/T`.
    fn identity(k: usize, t: f64) -> ModelParams {
        ModelParams {
            layers: vec![Layer {
                weight: Tensor::eye(k),
                bias: Tensor::zeros(&[k]),
            }],
            activation: Activation::Linear,
            prototypes: Tensor::eye(k),
            temperature: t,
        }
    }

    /// Input whose prediction under `identity(k, T)` equals `probs`.
    fn input_for(probs: &[f64]) -> (Vec<f64>, f64) {
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let norm = logits.iter().map(|v| v * v).sum::<f64>().sqrt();
        (logits, 1.0 / norm)
    }

    fn value<F>(params: &ModelParams, f: F) -> f64
    where
        F: for<'t> Fn(&BoundParams<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let v = f(&p).unwrap().value().item();
        v
    }

    #[test]
    fn sup_zero_for_saturated_correct() {
        let m = identity(2, 1e-3);
        let b = LabeledBatch::from_rows(&[vec![1.0, 0.0]], vec![0]).unwrap();
        let empty = LabeledBatch::new(Tensor::zeros(&[0, 2]), vec![]).unwrap();
        assert_eq!(value(&m, |p| loss_sup(p, &b, &empty)), 0.0);
    }

    #[test]
    fn sup_uniform_is_log_k() {
        let mut m = identity(4, 0.05);
        m.prototypes = Tensor::zeros(&[4, 4]);
        let b = LabeledBatch::from_rows(&[vec![1.0, 2.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]], vec![3, 1])
            .unwrap();
        let v = value(&m, |p| loss_sup(p, &b, &b));
        assert!((v - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sup_empty_union_is_precondition_error() {
        let m = identity(2, 0.05);
        let empty = LabeledBatch::new(Tensor::zeros(&[0, 2]), vec![]).unwrap();
        let tape = Tape::new();
        let p = m.bind(&tape);
        assert!(matches!(loss_sup(&p, &empty, &empty), Err(Error::Precondition(_))));
    }

    #[test]
    fn sdm_endpoint_is_source_cross_entropy() {
        let m = identity(3, 0.5);
        let s = LabeledBatch::from_rows(&[vec![1.0, 0.2, -0.3], vec![0.1, 0.9, 0.4]], vec![0, 2]).unwrap();
        let t = LabeledBatch::from_rows(&[vec![-1.0, 0.5, 0.5], vec![0.3, 0.3, 2.0]], vec![1, 1]).unwrap();
        let empty = LabeledBatch::new(Tensor::zeros(&[0, 3]), vec![]).unwrap();
        let sdm = value(&m, |p| loss_sdm(p, &s, &t, &[1.0, 1.0]));
        let ce = value(&m, |p| loss_sup(p, &s, &empty));
        assert_eq!(sdm, ce);
        let mdm = value(&m, |p| loss_mdm(p, &s, &t, &[1.0, 1.0]));
        assert_eq!(mdm, ce);
    }

    #[test]
    fn mixup_without_pairs_is_zero() {
        let m = identity(2, 0.5);
        let s = LabeledBatch::from_rows(&[vec![1.0, 0.0]], vec![0]).unwrap();
        let none = LabeledBatch::new(Tensor::zeros(&[0, 2]), vec![]).unwrap();
        assert_eq!(value(&m, |p| loss_sdm(p, &s, &none, &[])), 0.0);
        assert_eq!(value(&m, |p| loss_mdm(p, &s, &none, &[])), 0.0);
    }

    #[test]
    fn mdm_equal_features_is_single_sample_ce() {
        let m = identity(3, 0.5);
        let s = LabeledBatch::from_rows(&[vec![0.4, -0.2, 1.0]], vec![2]).unwrap();
        let empty = LabeledBatch::new(Tensor::zeros(&[0, 3]), vec![]).unwrap();
        let mdm = value(&m, |p| loss_mdm(p, &s, &s, &[0.3]));
        let ce = value(&m, |p| loss_sup(p, &s, &empty));
        assert_eq!(mdm, ce);
    }

    #[test]
    fn nsr_hand_value() {
        let (x, t) = input_for(&[0.5, 0.3, 0.2]);
        let m = identity(3, t);
        let u = Tensor::from_rows(&[x]).unwrap();
        let v = value(&m, |p| loss_nsr(p, &u, 0.95));
        assert!((v - (-(0.8f64).ln())).abs() < 1e-12, "{v}");
        assert!((v - 0.22314).abs() < 1e-5);
    }

    #[test]
    fn nsr_confident_masked_out() {
        let (x, t) = input_for(&[0.96, 0.02, 0.02]);
        let m = identity(3, t);
        let u = Tensor::from_rows(&[x]).unwrap();
        assert_eq!(value(&m, |p| loss_nsr(p, &u, 0.95)), 0.0);
    }

    #[test]
    fn nsr_uniform_four_classes() {
        let mut m = identity(4, 0.05);
        m.prototypes = Tensor::zeros(&[4, 4]);
        let u = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 3.0, 1.0, 0.0]]).unwrap();
        let v = value(&m, |p| loss_nsr(p, &u, 0.95));
        assert!((v - (-(0.75f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn psr_empty_mask_and_self_consistency() {
        let m = identity(3, 0.05);
        let u = Tensor::from_rows(&[vec![1.0, 0.9, 0.95]]).unwrap();
        assert_eq!(value(&m, |p| loss_psr(p, &u, &u, 0.99)), 0.0);
        let sharp = identity(3, 1e-3);
        let c = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        assert!(value(&sharp, |p| loss_psr(p, &c, &c, 0.95)).abs() < 1e-12);
    }

    #[test]
    fn pa_trivial_cases() {
        let m = identity(2, 1e-3);
        let u = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let same = LabeledBatch::from_rows(&[vec![2.0, 0.0]], vec![0]).unwrap();
        assert!(value(&m, |p| loss_pa(p, &u, &same, 0.95)) < 1e-6);
        let other = LabeledBatch::from_rows(&[vec![0.0, 2.0]], vec![1]).unwrap();
        assert!(value(&m, |p| loss_pa(p, &u, &other, 0.95)) < 1e-6);
    }

    #[test]
    fn pa_uniform_pair() {
        let mut m = identity(2, 0.05);
        m.prototypes = Tensor::zeros(&[2, 2]);
        let u = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let l = LabeledBatch::from_rows(&[vec![0.0, 1.0]], vec![0]).unwrap();
        // uniform: confidence 0.5 ≥ τ = 0.5, ŷ = 0 = y, p·p = 0.5
        let v = value(&m, |p| loss_pa(p, &u, &l, 0.5));
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_reduces_to_sup_with_zero_weights() {
        let m = identity(2, 0.5);
        let b = StepBatches {
            source: LabeledBatch::from_rows(&[vec![1.0, 0.3]], vec![0]).unwrap(),
            labeled: LabeledBatch::from_rows(&[vec![0.2, 1.0]], vec![1]).unwrap(),
            labeled_prime: LabeledBatch::from_rows(&[vec![0.2, 1.0]], vec![1]).unwrap(),
            unlabeled: Tensor::from_rows(&[vec![0.5, 0.4]]).unwrap(),
            unlabeled_perturbed: Tensor::from_rows(&[vec![0.6, 0.4]]).unwrap(),
            lambda_sample: vec![0.3],
            lambda_feature: vec![0.6],
        };
        let w = LossWeights {
            beta: 0.0,
            gamma: 0.0,
            tau: 0.5,
            ..Default::default()
        };
        let tape = Tape::new();
        let p = m.bind(&tape);
        let g = loss_total(&p, &b, &w).unwrap();
        assert_eq!(g.breakdown.total, g.breakdown.l_sup);
        assert!(g.breakdown.l_sdm > 0.0);

        let w = LossWeights {
            gamma: 0.0,
            tau: 0.5,
            ..Default::default()
        };
        let tape = Tape::new();
        let p = m.bind(&tape);
        let g = loss_total(&p, &b, &w).unwrap();
        let bd = g.breakdown;
        assert!((bd.total - (bd.l_sup + bd.l_sdm + bd.l_mdm)).abs() < 1e-12);
        assert!((bd.total - bd.weighted_total(&w)).abs() < 1e-12);
    }
}
