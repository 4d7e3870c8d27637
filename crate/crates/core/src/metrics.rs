//! Evaluation: accuracy, cluster-centroid alignment (ACCD), calibration and
//! the per-epoch metrics CSV.

use std::fmt::Write as _;

use crate::autodiff::kernels::l2_normalize_rows;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::ModelParams;
use crate::scalar::{argmax, Real};

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<S: Real>(params: &ModelParams<S>, x: &Tensor<S>, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Precondition("accuracy of an empty set".into()));
    }
    let probs = params.predict_batch(x)?;
    Ok(accuracy_of(&probs, y))
}

pub fn accuracy_of<S: Real>(probs: &Tensor<S>, y: &[usize]) -> f64 {
    let hits = probs
        .row_iter()
        .zip(y)
        .filter(|(r, &t)| argmax(r) == t)
        .count();
    hits as f64 / y.len() as f64
}

/// Sum that does not depend on the order of its inputs.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn centroids(f: &Tensor<f64>, y: &[usize], classes: usize) -> Vec<Option<Vec<f64>>> {
    (0..classes)
        .map(|k| {
            let rows: Vec<&[f64]> = f.row_iter().zip(y).filter(|(_, &t)| t == k).map(|(r, _)| r).collect();
            if rows.is_empty() {
                return None;
            }
            let n = rows.len() as f64;
            Some(
                (0..f.cols())
                    .map(|j| ordered_sum(rows.iter().map(|r| r[j]).collect()) / n)
                    .collect(),
            )
        })
        .collect()
}

/// Per-class distance between source and target centroids of unit-normalized
/// features. `None` for classes missing from either domain.
pub fn centroid_distances<S: Real>(
    params: &ModelParams<S>,
    source: (&Tensor<S>, &[usize]),
    target: (&Tensor<S>, &[usize]),
) -> Result<Vec<Option<f64>>> {
    let k = params.classes();
    let unit = |x: &Tensor<S>| -> Result<Tensor<f64>> {
        if x.rows() == 0 {
            return Ok(Tensor::zeros(&[0, params.feature_dim()]));
        }
        Ok(l2_normalize_rows(&params.features(x)?)?.0.cast())
    };
    let cs = centroids(&unit(source.0)?, source.1, k);
    let ct = centroids(&unit(target.0)?, target.1, k);
    Ok(cs
        .iter()
        .zip(&ct)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt(),
            ),
            _ => None,
        })
        .collect())
}

/// Distances normalized by those of the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct AccdState {
    pub initial: Vec<Option<f64>>,
    /// `(epoch, averaged normalized distance)`.
    pub history: Vec<(usize, f64)>,
    /// Classes left out of the most recent average.
    pub skipped: Vec<usize>,
}

impl AccdState {
    pub fn new(initial: Vec<Option<f64>>) -> Self {
        Self {
            initial,
            history: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Average of `d_k / d_k⁰` over classes present at both times with a
    /// positive initial distance.
    pub fn accd(&mut self, current: &[Option<f64>], epoch: usize) -> Result<f64> {
        if current.len() != self.initial.len() {
            return Err(Error::dim("accd", &[current.len()], &[self.initial.len()]));
        }
        let mut ratios = Vec::new();
        self.skipped.clear();
        for (k, (c, i)) in current.iter().zip(&self.initial).enumerate() {
            match (c, i) {
                (Some(c), Some(i)) if *i > 0.0 => ratios.push(c / i),
                _ => self.skipped.push(k),
            }
        }
        if ratios.is_empty() {
            return Err(Error::Degenerate(
                "no class is present in both domains with a positive initial distance".into(),
            ));
        }
        let v = ratios.iter().sum::<f64>() / ratios.len() as f64;
        self.history.push((epoch, v));
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CalibrationBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub samples: usize,
    pub ece: f64,
}

pub const CALIBRATION_BINS: usize = 100;

/// Bin of a confidence among `bins` equal-width bins; each bin is
/// `[b/B, (b+1)/B)` except the last, which also holds 1.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut i = ((confidence * b).floor().max(0.0) as usize).min(bins - 1);
    if i + 1 < bins && confidence >= (i + 1) as f64 / b {
        i += 1;
    } else if i > 0 && confidence < i as f64 / b {
        i -= 1;
    }
    i
}

/// Reliability histogram over top-class confidences.
pub fn calibration_from(confidence: &[f64], correct: &[bool], bins: usize) -> Result<CalibrationReport> {
    if confidence.len() != correct.len() {
        return Err(Error::dim("calibration", &[confidence.len()], &[correct.len()]));
    }
    if bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut hit = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit[b] += usize::from(ok);
    }
    let n = confidence.len();
    let mut ece = 0.0;
    let bins = (0..bins)
        .map(|b| {
            if count[b] == 0 {
                return CalibrationBin::default();
            }
            let cnt = count[b] as f64;
            let bin = CalibrationBin {
                count: count[b],
                mean_confidence: conf_sum[b] / cnt,
                accuracy: hit[b] as f64 / cnt,
            };
            ece += cnt / n as f64 * (bin.accuracy - bin.mean_confidence).abs();
            bin
        })
        .collect();
    Ok(CalibrationReport {
        bins,
        samples: n,
        ece: ece.clamp(0.0, 1.0),
    })
}

pub fn calibration<S: Real>(params: &ModelParams<S>, x: &Tensor<S>, y: &[usize]) -> Result<CalibrationReport> {
    let probs = params.predict_batch(x)?;
    let (conf, correct): (Vec<f64>, Vec<bool>) = probs
        .row_iter()
        .zip(y)
        .map(|(r, &t)| {
            let k = argmax(r);
            (r[k].as_f64(), k == t)
        })
        .unzip();
    calibration_from(&conf, &correct, CALIBRATION_BINS)
}

impl CalibrationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,count,mean_confidence,accuracy\n");
        let b = self.bins.len() as f64;
        for (i, bin) in self.bins.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                fmt_num(i as f64 / b),
                fmt_num((i + 1) as f64 / b),
                bin.count,
                fmt_num(bin.mean_confidence),
                fmt_num(bin.accuracy)
            );
        }
        out
    }
}

/// Nine significant digits in scientific notation.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub const METRICS_HEADER: &str =
    "epoch,iter,lr,l_sup,l_sdm,l_mdm,l_psr,l_nsr,l_pa,l_total,acc_eval,accd,ece,pl_count,pl_correct,pl_acc";

/// One row of the metrics CSV. Loss values are means over the epoch's steps;
/// `iter` is the global iteration count at the end of the epoch and `lr` the
/// rate used by its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub iter: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub acc_eval: Option<f64>,
    pub accd: Option<f64>,
    pub ece: Option<f64>,
    pub pl_count: usize,
    pub pl_correct: Option<usize>,
    pub pl_acc: Option<f64>,
}

impl EpochMetrics {
    pub fn to_csv_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iter,
            fmt_num(self.lr),
            fmt_num(l.l_sup),
            fmt_num(l.l_sdm),
            fmt_num(l.l_mdm),
            fmt_num(l.l_psr),
            fmt_num(l.l_nsr),
            fmt_num(l.l_pa),
            fmt_num(l.total),
            fmt_opt(self.acc_eval),
            fmt_opt(self.accd),
            fmt_opt(self.ece),
            self.pl_count,
            self.pl_correct.map(|c| c.to_string()).unwrap_or_default(),
            fmt_opt(self.pl_acc),
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = |d: &str| Error::Validation(format!("metrics row: {d}"));
        if f.len() != 16 {
            return Err(bad(&format!("expected 16 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            epoch: f[0].parse().map_err(|_| bad("epoch"))?,
            iter: f[1].parse().map_err(|_| bad("iter"))?,
            lr: num(f[2])?,
            losses: LossBreakdown {
                l_sup: num(f[3])?,
                l_sdm: num(f[4])?,
                l_mdm: num(f[5])?,
                l_psr: num(f[6])?,
                l_nsr: num(f[7])?,
                l_pa: num(f[8])?,
                total: num(f[9])?,
            },
            acc_eval: opt(f[10])?,
            accd: opt(f[11])?,
            ece: opt(f[12])?,
            pl_count: f[13].parse().map_err(|_| bad("pl_count"))?,
            pl_correct: if f[14].is_empty() {
                None
            } else {
                Some(f[14].parse().map_err(|_| bad("pl_correct"))?)
            },
            pl_acc: opt(f[15])?,
        })
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Validation(format!(
                "metrics CSV header must be `{METRICS_HEADER}`"
            )))
        }
    }
    lines.filter(|l| !l.is_empty()).map(EpochMetrics::parse_line).collect()
}
