//! Straight-line scalar reference implementations.
//!
//! Everything here works on plain nested `Vec<f64>` and loops; nothing is
//! shared with the tape, the model or the loss code. The test suites compare
//! the main implementation against these functions on identical inputs.

/// Probability clamp applied before every logarithm.
const EPS: f64 = 1e-7;

/// Plain copy of a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    /// `(weight[d_in][d_out], bias[d_out])` per layer.
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    /// ReLU after every layer except the last.
    pub relu_hidden: bool,
    /// `prototypes[d_feat][K]`.
    pub prototypes: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// A value together with the per-sample terms it was reduced from.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub contributions: Vec<f64>,
}

impl OracleModel {
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (li, (w, b)) in self.layers.iter().enumerate() {
            assert_eq!(w.len(), h.len(), "oracle: layer {li} width mismatch");
            let mut out = b.clone();
            for (i, hi) in h.iter().enumerate() {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += hi * w[i][j];
                }
            }
            if self.relu_hidden && li < last {
                for o in &mut out {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            h = out;
        }
        h
    }

    /// Softmax of temperature-scaled cosine logits for a raw feature.
    pub fn classify_feature(&self, f: &[f64]) -> Vec<f64> {
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "oracle: degenerate feature");
        let k = self.prototypes[0].len();
        let mut logits = vec![0.0; k];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut dot = 0.0;
            for (j, fj) in f.iter().enumerate() {
                dot += self.prototypes[j][c] * fj / norm;
            }
            *logit = dot / self.temperature;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.iter().map(|e| e / s).collect()
    }
}

pub fn oracle_predict(model: &OracleModel, x: &[f64]) -> Vec<f64> {
    model.classify_feature(&model.features(x))
}

fn clog(p: f64) -> f64 {
    p.clamp(EPS, 1.0).ln()
}

fn max_index(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

fn min_index(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] < p[best] {
            best = i;
        }
    }
    best
}

fn max_value(p: &[f64]) -> f64 {
    p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(contributions: Vec<f64>) -> OracleResult {
    let value = if contributions.is_empty() {
        0.0
    } else {
        contributions.iter().sum::<f64>() / contributions.len() as f64
    };
    OracleResult {
        value,
        contributions,
    }
}

/// Mean of `-log p_y(x)` over the union of both labeled batches.
pub fn oracle_loss_sup(
    model: &OracleModel,
    xs: &[Vec<f64>],
    ys: &[usize],
    xl: &[Vec<f64>],
    yl: &[usize],
) -> OracleResult {
    let mut c = Vec::new();
    for (x, &y) in xs.iter().zip(ys).chain(xl.iter().zip(yl)) {
        let p = oracle_predict(model, x);
        c.push(-clog(p[y]));
    }
    mean(c)
}

fn soft_target(ya: usize, yb: usize, lambda: f64, k: usize) -> Vec<f64> {
    let mut t = vec![0.0; k];
    t[ya] += lambda;
    t[yb] += 1.0 - lambda;
    t
}

fn soft_ce(target: &[f64], p: &[f64]) -> f64 {
    -target
        .iter()
        .zip(p)
        .map(|(t, q)| t * clog(*q))
        .sum::<f64>()
}

/// Cross-entropy on mixed inputs `λx_s + (1-λ)x_t`, averaged over pairs.
pub fn oracle_loss_sdm(
    model: &OracleModel,
    xs: &[Vec<f64>],
    ys: &[usize],
    xt: &[Vec<f64>],
    yt: &[usize],
    lambdas: &[f64],
) -> OracleResult {
    let k = model.prototypes[0].len();
    let n = xs.len().min(xt.len());
    let mut c = Vec::new();
    for i in 0..n {
        let l = lambdas[i];
        let xm: Vec<f64> = xs[i]
            .iter()
            .zip(&xt[i])
            .map(|(a, b)| l * a + (1.0 - l) * b)
            .collect();
        let p = oracle_predict(model, &xm);
        c.push(soft_ce(&soft_target(ys[i], yt[i], l, k), &p));
    }
    mean(c)
}

/// Cross-entropy on mixed features `λF(x_s) + (1-λ)F(x_t)`.
pub fn oracle_loss_mdm(
    model: &OracleModel,
    xs: &[Vec<f64>],
    ys: &[usize],
    xt: &[Vec<f64>],
    yt: &[usize],
    lambdas: &[f64],
) -> OracleResult {
    let k = model.prototypes[0].len();
    let n = xs.len().min(xt.len());
    let mut c = Vec::new();
    for i in 0..n {
        let l = lambdas[i];
        let fs = model.features(&xs[i]);
        let ft = model.features(&xt[i]);
        let fm: Vec<f64> = fs
            .iter()
            .zip(&ft)
            .map(|(a, b)| l * a + (1.0 - l) * b)
            .collect();
        let p = model.classify_feature(&fm);
        c.push(soft_ce(&soft_target(ys[i], yt[i], l, k), &p));
    }
    mean(c)
}

/// Confident samples only: `-log p_ŷ(x+δ)` with ŷ from the clean input.
/// Contributions hold one entry per input; masked-out entries are 0.
pub fn oracle_loss_psr(
    model: &OracleModel,
    clean: &[Vec<f64>],
    perturbed: &[Vec<f64>],
    tau: f64,
) -> OracleResult {
    let mut c = Vec::new();
    let mut selected = 0usize;
    let mut total = 0.0;
    for (x, xp) in clean.iter().zip(perturbed) {
        let p = oracle_predict(model, x);
        if max_value(&p) >= tau {
            let q = oracle_predict(model, xp);
            let v = -clog(q[max_index(&p)]);
            total += v;
            selected += 1;
            c.push(v);
        } else {
            c.push(0.0);
        }
    }
    OracleResult {
        value: if selected == 0 { 0.0 } else { total / selected as f64 },
        contributions: c,
    }
}

/// Unconfident samples only: `-log(1 - p_ȳ(x))`, ȳ the least likely class.
pub fn oracle_loss_nsr(model: &OracleModel, xs: &[Vec<f64>], tau: f64) -> OracleResult {
    let mut c = Vec::new();
    let mut selected = 0usize;
    let mut total = 0.0;
    for x in xs {
        let p = oracle_predict(model, x);
        if max_value(&p) < tau {
            let v = -clog(1.0 - p[min_index(&p)]);
            total += v;
            selected += 1;
            c.push(v);
        } else {
            c.push(0.0);
        }
    }
    OracleResult {
        value: if selected == 0 { 0.0 } else { total / selected as f64 },
        contributions: c,
    }
}

/// Binary cross-entropy on `p_i·p_j` between confident unlabeled samples
/// and labeled target samples, normalized by the number of confident
/// samples. Contributions are per unlabeled sample (summed over j).
pub fn oracle_loss_pa(
    model: &OracleModel,
    xu: &[Vec<f64>],
    xl: &[Vec<f64>],
    yl: &[usize],
    tau: f64,
) -> OracleResult {
    let pl: Vec<Vec<f64>> = xl.iter().map(|x| oracle_predict(model, x)).collect();
    let mut c = Vec::new();
    let mut selected = 0usize;
    let mut total = 0.0;
    for x in xu {
        let p = oracle_predict(model, x);
        if max_value(&p) < tau {
            c.push(0.0);
            continue;
        }
        let yhat = max_index(&p);
        let mut v = 0.0;
        for (q, &y) in pl.iter().zip(yl) {
            let s: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            let s = s.clamp(EPS, 1.0 - EPS);
            v -= if yhat == y { s.ln() } else { (1.0 - s).ln() };
        }
        total += v;
        selected += 1;
        c.push(v);
    }
    OracleResult {
        value: if selected == 0 { 0.0 } else { total / selected as f64 },
        contributions: c,
    }
}

/// Per-class centroid distances between two labeled feature sets. Features
/// are normalized to unit length first. `None` where a class is missing on
/// either side.
pub fn oracle_centroid_distances(
    src: &[Vec<f64>],
    ys: &[usize],
    tgt: &[Vec<f64>],
    yt: &[usize],
    k: usize,
) -> Vec<Option<f64>> {
    let centroid = |xs: &[Vec<f64>], ys: &[usize], c: usize| -> Option<Vec<f64>> {
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .zip(ys)
            .filter(|(_, &y)| y == c)
            .map(|(x, _)| {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.iter().map(|v| v / n).collect()
            })
            .collect();
        if rows.is_empty() {
            return None;
        }
        let d = rows[0].len();
        let mut out = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                out[j] += r[j];
            }
        }
        Some(out.iter().map(|v| v / rows.len() as f64).collect())
    };
    (0..k)
        .map(|c| {
            let a = centroid(src, ys, c)?;
            let b = centroid(tgt, yt, c)?;
            Some(
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            )
        })
        .collect()
}

/// Average of `d_k / d_k⁰` over classes present in both `current` and
/// `initial` (with `d_k⁰ > 0`).
pub fn oracle_accd(current: &[Option<f64>], initial: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (c, i) in current.iter().zip(initial) {
        if let (Some(c), Some(i)) = (c, i) {
            if *i > 0.0 {
                sum += c / i;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn oracle_ece(confidences: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = confidences.len();
    let mut ece = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let mut cnt = 0;
        let mut conf = 0.0;
        let mut acc = 0.0;
        for (i, &c) in confidences.iter().enumerate() {
            let inside = if b + 1 == bins {
                c >= lo && c <= hi
            } else {
                c >= lo && c < hi
            };
            if inside {
                cnt += 1;
                conf += c;
                acc += if correct[i] { 1.0 } else { 0.0 };
            }
        }
        if cnt > 0 {
            ece += (cnt as f64 / n as f64) * (acc / cnt as f64 - conf / cnt as f64).abs();
        }
    }
    ece
}
