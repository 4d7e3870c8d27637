//! Epoch-level pseudo-labeling of the unlabeled target pool.
//!
//! The set is rebuilt from scratch at the start of every epoch and frozen for
//! the epoch's updates. Pseudo-labeled samples stay in the unlabeled pool.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::{argmax, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    /// Row index into the unlabeled pool.
    pub index: usize,
    pub class: usize,
    pub confidence: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// Indices (ascending) and argmax classes of rows whose top probability is
/// at least `tau`.
pub fn select_confident<S: Real>(probs: &Tensor<S>, tau: f64) -> Result<Vec<(usize, usize, f64)>> {
    check_tau(tau)?;
    let t = S::cast(tau);
    Ok(probs
        .row_iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let k = argmax(row);
            (row[k] >= t).then(|| (i, k, row[k].as_f64()))
        })
        .collect())
}

/// Assigns `argmax` labels to every unlabeled row with confidence `≥ tau`.
pub fn assign_pseudo_labels<S: Real>(
    unlabeled: &Tensor<S>,
    params: &ModelParams<S>,
    tau: f64,
    epoch: usize,
) -> Result<PseudoLabelSet> {
    check_tau(tau)?;
    if unlabeled.rows() == 0 {
        return Ok(PseudoLabelSet::default());
    }
    let probs = params.predict_batch(unlabeled)?;
    let entries = select_confident(&probs, tau)?
        .into_iter()
        .map(|(index, class, confidence)| PseudoLabel {
            index,
            class,
            confidence,
            epoch,
        })
        .collect();
    Ok(PseudoLabelSet { entries })
}

/// Counts of assigned and correct pseudo-labels; accuracy is `None` when the
/// set is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

/// Scores a set against the hidden labels of the unlabeled pool. Evaluation
/// only: nothing here feeds back into training.
pub fn pseudo_label_accuracy(set: &PseudoLabelSet, truth: &[usize]) -> Result<PseudoLabelStats> {
    let mut correct = 0;
    for e in &set.entries {
        let y = truth.get(e.index).ok_or_else(|| {
            Error::Validation(format!(
                "pseudo-label index {} outside ground truth of length {}",
                e.index,
                truth.len()
            ))
        })?;
        if *y == e.class {
            correct += 1;
        }
    }
    let count = set.len();
    Ok(PseudoLabelStats {
        count,
        correct,
        accuracy: (count > 0).then(|| correct as f64 / count as f64),
    })
}

/// The expanded labeled target pool: all of `D_l` followed by the pseudo-
/// labeled rows of `D_u`.
pub fn expand_labeled<S: Real>(
    labeled_x: &Tensor<S>,
    labeled_y: &[usize],
    unlabeled: &Tensor<S>,
    set: &PseudoLabelSet,
) -> Result<(Tensor<S>, Vec<usize>)> {
    if labeled_x.cols() != unlabeled.cols() && unlabeled.rows() > 0 {
        return Err(Error::dim("expand_labeled", labeled_x.shape(), unlabeled.shape()));
    }
    let d = labeled_x.cols();
    let mut data = labeled_x.data().to_vec();
    let mut y = labeled_y.to_vec();
    for e in &set.entries {
        data.extend_from_slice(unlabeled.row(e.index));
        y.push(e.class);
    }
    Ok((Tensor::matrix(y.len(), d, data)?, y))
}

pub const AUDIT_HEADER: &str = "epoch,sample_id,class,confidence,correct";

/// Audit rows `epoch,sample_id,class,confidence,correct`. `ids` maps pool
/// rows to dataset ids; `truth` (when known) fills the `correct` column.
pub fn audit_rows(set: &PseudoLabelSet, ids: &[u64], truth: Option<&[usize]>) -> String {
    let mut out = String::new();
    for e in &set.entries {
        let correct = match truth.and_then(|t| t.get(e.index)) {
            Some(&y) => u8::from(y == e.class).to_string(),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{:.8e},{}",
            e.epoch, ids[e.index], e.class, e.confidence, correct
        );
    }
    out
}
