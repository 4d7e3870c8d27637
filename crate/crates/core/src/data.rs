//! Datasets: synthetic domain-shift generators, CSV ingestion, few-shot
//! splitting, feature jitter and mini-batch index sampling.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub domain: Domain,
    pub split: Split,
    pub label: Option<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.features.len());
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Validation(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if let Some(y) = s.label {
                if y >= classes {
                    return Err(Error::Validation(format!(
                        "sample {} has label {y}, outside [0, {classes})",
                        s.id
                    )));
                }
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {} has non-finite features", s.id)));
            }
        }
        Ok(Self { samples, classes, dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            classes: self.classes,
            dim: self.dim,
        }
    }

    pub fn features(&self) -> Tensor {
        let data = self.samples.iter().flat_map(|s| s.features.iter().copied()).collect();
        Tensor::matrix(self.len(), self.dim, data).expect("validated widths")
    }

    /// Labels of every sample; errors if any is missing.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Validation(format!("sample {} is unlabeled", s.id)))
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for s in &self.samples {
            if let Some(y) = s.label {
                c[y] += 1;
            }
        }
        c
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(samples, self.classes.max(other.classes))
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn labeled(id: u64, domain: Domain, label: usize, features: Vec<f64>) -> Sample {
    Sample {
        id,
        domain,
        split: Split::Train,
        label: Some(label),
        features,
    }
}

/// Interleaving half-circles centred on the origin. The target is drawn from
/// the same generator and rotated counter-clockwise by `rotation_deg`.
pub fn gen_two_moons_shift(
    n_source: usize,
    n_target: usize,
    rotation_deg: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_source < 2 || n_target < 2 {
        return Err(Error::Config(format!(
            "two-moons needs at least 2 samples per domain, got {n_source}/{n_target}"
        )));
    }
    if !(0.0..=90.0).contains(&rotation_deg) {
        return Err(Error::Config(format!(
            "rotation must lie in [0, 90] degrees, got {rotation_deg}"
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Config(format!("noise sigma must be ≥ 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut draw = |n: usize, first_id: u64, domain: Domain, rotate: bool| {
        (0..n)
            .map(|i| {
                let class = i % 2;
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let x = x - 0.5 + noise_sigma * gaussian(&mut rng);
                let y = y - 0.25 + noise_sigma * gaussian(&mut rng);
                let (x, y) = if rotate {
                    (cos * x - sin * y, sin * x + cos * y)
                } else {
                    (x, y)
                };
                labeled(first_id + i as u64, domain, class, vec![x, y])
            })
            .collect::<Vec<_>>()
    };
    let source = draw(n_source, 0, Domain::Source, false);
    let target = draw(n_target, n_source as u64, Domain::Target, true);
    Ok((Dataset::new(source, 2)?, Dataset::new(target, 2)?))
}

/// Gaussian class blobs with a covariate shift between domains.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsSpec {
    pub classes: usize,
    pub dim: usize,
    /// Added to every class mean in the target domain.
    pub shift: Vec<f64>,
    /// Target standard deviation as a multiple of the source one.
    pub scale: f64,
    /// Standard deviation of the class-mean draw.
    pub spread: f64,
    /// Within-class standard deviation in the source domain.
    pub noise: f64,
    pub n_source: usize,
    pub n_target: usize,
}

impl BlobsSpec {
    /// Shift of the given magnitude along a seeded random direction.
    pub fn shift_along_random_direction(dim: usize, magnitude: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_4946_5400_0000);
        let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| magnitude * x / n).collect()
    }
}

pub fn gen_blobs_shift(spec: &BlobsSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 {
        return Err(Error::Config(format!(
            "blobs need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.dim == 0 || spec.shift.len() != spec.dim {
        return Err(Error::Config(format!(
            "shift has {} entries but dim is {}",
            spec.shift.len(),
            spec.dim
        )));
    }
    if spec.n_source < spec.classes || spec.n_target < spec.classes {
        return Err(Error::Config("fewer samples than classes".into()));
    }
    for (name, v) in [("scale", spec.scale), ("spread", spec.spread), ("noise", spec.noise)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("blobs {name} must be ≥ 0, got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| spec.spread * gaussian(&mut rng)).collect())
        .collect();
    let mut draw = |n: usize, first_id: u64, domain: Domain| {
        let (offset, sd): (&[f64], f64) = match domain {
            Domain::Source => (&[], spec.noise),
            Domain::Target => (&spec.shift, spec.noise * spec.scale),
        };
        (0..n)
            .map(|i| {
                let class = i % spec.classes;
                let x = (0..spec.dim)
                    .map(|j| {
                        means[class][j] + offset.get(j).copied().unwrap_or(0.0) + sd * gaussian(&mut rng)
                    })
                    .collect();
                labeled(first_id + i as u64, domain, class, x)
            })
            .collect::<Vec<_>>()
    };
    let source = draw(spec.n_source, 0, Domain::Source);
    let target = draw(spec.n_target, spec.n_source as u64, Domain::Target);
    Ok((
        Dataset::new(source, spec.classes)?,
        Dataset::new(target, spec.classes)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotSpec {
    pub shots_per_class: usize,
    pub seed: u64,
    /// Fraction of each class's non-shot samples held out for evaluation.
    pub eval_fraction: f64,
}

/// Target-domain partition: labeled shots, the unlabeled pool (labels kept
/// only for auditing) and the held-out evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub eval: Dataset,
}

pub fn split_few_shot(target: &Dataset, spec: &ShotSpec) -> Result<FewShotSplit> {
    if spec.shots_per_class == 0 {
        return Err(Error::Config("shots per class must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.eval_fraction) {
        return Err(Error::Config(format!(
            "eval fraction must lie in [0, 1), got {}",
            spec.eval_fraction
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); target.classes];
    for (i, s) in target.samples.iter().enumerate() {
        let y = s.label.ok_or_else(|| {
            Error::Config(format!("target sample {} has no label to split on", s.id))
        })?;
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut l, mut u, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for (k, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < spec.shots_per_class + 1 {
            return Err(Error::Config(format!(
                "class {k} has {} target samples, need at least {}",
                idx.len(),
                spec.shots_per_class + 1
            )));
        }
        idx.shuffle(&mut rng);
        let rest = idx.len() - spec.shots_per_class;
        let n_eval = ((rest as f64) * spec.eval_fraction).round() as usize;
        let n_eval = n_eval.min(rest - 1);
        l.extend_from_slice(&idx[..spec.shots_per_class]);
        e.extend_from_slice(&idx[spec.shots_per_class..spec.shots_per_class + n_eval]);
        u.extend_from_slice(&idx[spec.shots_per_class + n_eval..]);
    }
    let pick = |mut rows: Vec<usize>, split: Split| {
        rows.sort_unstable();
        let samples = rows
            .into_iter()
            .map(|i| Sample {
                split,
                ..target.samples[i].clone()
            })
            .collect();
        Dataset::new(samples, target.classes)
    };
    Ok(FewShotSplit {
        labeled: pick(l, Split::Train)?,
        unlabeled: pick(u, Split::Train)?,
        eval: pick(e, Split::Eval)?,
    })
}

/// Split read from explicit columns: labeled train rows form the labeled
/// pool, unlabeled train rows the unlabeled pool, eval rows the eval set.
pub fn split_from_columns(target: &Dataset) -> Result<FewShotSplit> {
    let labeled = target.filter(|s| s.split == Split::Train && s.label.is_some());
    let unlabeled = target.filter(|s| s.split == Split::Train && s.label.is_none());
    let eval = target.filter(|s| s.split == Split::Eval);
    if labeled.is_empty() {
        return Err(Error::Config("no labeled target training rows".into()));
    }
    if eval.samples.iter().any(|s| s.label.is_none()) {
        return Err(Error::Config("eval rows must be labeled".into()));
    }
    Ok(FewShotSplit {
        labeled,
        unlabeled,
        eval,
    })
}

/// Per-feature standard deviation (population form).
pub fn feature_std(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return vec![0.0; d];
    }
    (0..d)
        .map(|j| {
            let mean = x.row_iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = x.row_iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            var.sqrt()
        })
        .collect()
}

/// Additive Gaussian jitter standing in for input augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturber {
    pub strength: f64,
    pub std: Vec<f64>,
}

impl Perturber {
    pub fn new(strength: f64, std: Vec<f64>) -> Result<Self> {
        if !(strength >= 0.0) || !strength.is_finite() {
            return Err(Error::Config(format!(
                "perturbation strength must be ≥ 0, got {strength}"
            )));
        }
        Ok(Self { strength, std })
    }

    /// `x + ε` with `ε_j ~ N(0, (strength·std_j)²)`. One normal is drawn per
    /// feature even when the strength is zero.
    pub fn perturb<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .zip(&self.std)
            .map(|(&v, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                if self.strength == 0.0 {
                    v
                } else {
                    v + self.strength * s * z
                }
            })
            .collect()
    }

    pub fn perturb_rows<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Tensor {
        let data = x.row_iter().flat_map(|r| self.perturb(r, rng)).collect();
        Tensor::matrix(x.rows(), x.cols(), data).expect("same shape")
    }
}

/// Mini-batch sizes for `B_s`, `B_l`, `B_l′`, `B_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub source: usize,
    pub labeled: usize,
    pub labeled_prime: usize,
    pub unlabeled: usize,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            source: 24,
            labeled: 24,
            labeled_prime: 24,
            unlabeled: 48,
        }
    }
}

impl BatchPlan {
    pub fn sizes(&self) -> [usize; 4] {
        [self.source, self.labeled, self.labeled_prime, self.unlabeled]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes().contains(&0) {
            return Err(Error::Config("every batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `batch` indices into a pool of `pool` items: with replacement when the
/// pool is smaller than the batch, without replacement otherwise.
pub fn sample_indices<R: Rng + ?Sized>(pool: usize, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    if pool == 0 {
        return Err(Error::Precondition("cannot sample a batch from an empty pool".into()));
    }
    if pool < batch {
        Ok((0..batch).map(|_| rng.random_range(0..pool)).collect())
    } else {
        Ok(rand::seq::index::sample(rng, pool, batch).into_vec())
    }
}

/// Index batches for the four pools, each drawn from its own stream.
pub fn sample_batches<R: Rng>(
    pool_sizes: [usize; 4],
    plan: &BatchPlan,
    rngs: &mut [R; 4],
) -> Result<[Vec<usize>; 4]> {
    let sizes = plan.sizes();
    let mut out: [Vec<usize>; 4] = Default::default();
    for i in 0..4 {
        out[i] = sample_indices(pool_sizes[i], sizes[i], &mut rngs[i])?;
    }
    Ok(out)
}

pub fn csv_header(dim: usize) -> String {
    let mut h = String::from("id,domain,split,label");
    for j in 0..dim {
        let _ = write!(h, ",f{j}");
    }
    h
}

pub fn to_csv(datasets: &[&Dataset]) -> Result<String> {
    let dim = datasets.first().map_or(0, |d| d.dim);
    let mut out = csv_header(dim);
    out.push('\n');
    for d in datasets {
        if d.dim != dim && !d.is_empty() {
            return Err(Error::Validation(format!(
                "cannot write datasets of widths {dim} and {} together",
                d.dim
            )));
        }
        for s in &d.samples {
            let label = s.label.map(|y| y.to_string()).unwrap_or_default();
            let _ = write!(out, "{},{},{},{label}", s.id, s.domain.name(), s.split.name());
            for v in &s.features {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_csv(path: &Path, datasets: &[&Dataset]) -> Result<()> {
    std::fs::write(path, to_csv(datasets)?)?;
    Ok(())
}

/// Parses the dataset CSV. `classes` bounds the labels when given; otherwise
/// it is inferred as one past the largest label.
pub fn parse_csv(text: &str, classes: Option<usize>) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        detail: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    let dim = cols.len().saturating_sub(4);
    let expected = csv_header(dim);
    if cols.len() < 5 || header.trim_end_matches('\r') != expected {
        return Err(Error::Parse {
            line: 1,
            detail: format!(
                "header must be `id,domain,split,label,f0,...,f{{d-1}}`, e.g. `{}`",
                csv_header(dim.max(1))
            ),
        });
    }
    let mut samples = Vec::new();
    for (line, raw) in lines {
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Parse { line, detail };
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let id = f[0].parse().map_err(|_| bad(format!("bad id `{}`", f[0])))?;
        let domain = match f[1] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => return Err(bad(format!("domain must be source or target, got `{other}`"))),
        };
        let split = match f[2] {
            "train" => Split::Train,
            "eval" => Split::Eval,
            other => return Err(bad(format!("split must be train or eval, got `{other}`"))),
        };
        let label = if f[3].is_empty() {
            None
        } else {
            Some(f[3].parse().map_err(|_| bad(format!("bad label `{}`", f[3])))?)
        };
        let features = f[4..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad feature value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id,
            domain,
            split,
            label,
            features,
        });
    }
    let k = match classes {
        Some(k) => k,
        None => samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1),
    };
    let mut ds = Dataset::new(samples, k)?;
    ds.dim = dim;
    Ok(ds)
}

pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", path.display())))?;
    parse_csv(&text, classes)
}

/// Everything the trainer consumes, as dense matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub classes: usize,
    pub source_x: Tensor,
    pub source_y: Vec<usize>,
    pub labeled_x: Tensor,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Tensor,
    pub unlabeled_ids: Vec<u64>,
    /// Hidden labels of the unlabeled pool, when known (audit only).
    pub unlabeled_truth: Option<Vec<usize>>,
    pub eval_x: Tensor,
    pub eval_y: Vec<usize>,
    /// Per-feature std of all training inputs, used to scale the jitter.
    pub feature_std: Vec<f64>,
}

impl TrainingData {
    pub fn new(source: &Dataset, split: &FewShotSplit) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::Config("source domain is empty".into()));
        }
        if source.dim != split.labeled.dim {
            return Err(Error::Config(format!(
                "source width {} differs from target width {}",
                source.dim, split.labeled.dim
            )));
        }
        let classes = source.classes.max(split.labeled.classes);
        let unlabeled_truth = split
            .unlabeled
            .samples
            .iter()
            .map(|s| s.label)
            .collect::<Option<Vec<_>>>();
        let all = source.concat(&split.labeled)?.concat(&split.unlabeled)?;
        let mut unlabeled_x = split.unlabeled.features();
        if split.unlabeled.is_empty() {
            unlabeled_x = Tensor::zeros(&[0, source.dim]);
        }
        Ok(Self {
            classes,
            source_x: source.features(),
            source_y: source.labels()?,
            labeled_x: split.labeled.features(),
            labeled_y: split.labeled.labels()?,
            unlabeled_x,
            unlabeled_ids: split.unlabeled.ids(),
            unlabeled_truth,
            eval_x: split.eval.features(),
            eval_y: split.eval.labels()?,
            feature_std: feature_std(&all.features()),
        })
    }

    pub fn dim(&self) -> usize {
        self.source_x.cols()
    }
}

impl fmt::Display for TrainingData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "source {}, labeled target {}, unlabeled target {}, eval {}",
            self.source_y.len(),
            self.labeled_y.len(),
            self.unlabeled_x.rows(),
            self.eval_y.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(shift: f64, scale: f64) -> BlobsSpec {
        BlobsSpec {
            classes: 3,
            dim: 4,
            shift: BlobsSpec::shift_along_random_direction(4, shift, 1),
            scale,
            spread: 3.0,
            noise: 1.0,
            n_source: 300,
            n_target: 300,
        }
    }

    #[test]
    fn blobs_deterministic() {
        let a = gen_blobs_shift(&blobs(2.0, 1.0), 7).unwrap();
        let b = gen_blobs_shift(&blobs(2.0, 1.0), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, gen_blobs_shift(&blobs(2.0, 1.0), 8).unwrap().0);
    }

    #[test]
    fn blobs_shift_vector_has_magnitude() {
        let v = BlobsSpec::shift_along_random_direction(8, 2.0, 3);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 2.0).abs() < 1e-12);
    }

    #[test]
    fn blobs_reject_single_class() {
        let mut s = blobs(1.0, 1.0);
        s.classes = 1;
        assert!(matches!(gen_blobs_shift(&s, 0), Err(Error::Config(_))));
    }

    #[test]
    fn moons_reject_bad_rotation() {
        assert!(gen_two_moons_shift(10, 10, 120.0, 0.1, 0).is_err());
        assert!(gen_two_moons_shift(10, 10, 30.0, -0.1, 0).is_err());
    }

    #[test]
    fn few_shot_sizes_and_disjointness() {
        let (_, t) = gen_two_moons_shift(100, 100, 0.0, 0.1, 3).unwrap();
        let spec = ShotSpec {
            shots_per_class: 3,
            seed: 0,
            eval_fraction: 0.3,
        };
        let s = split_few_shot(&t, &spec).unwrap();
        assert_eq!(s.labeled.len(), 6);
        assert_eq!(s.labeled.class_counts(), vec![3, 3]);
        assert_eq!(s.labeled.len() + s.unlabeled.len() + s.eval.len(), 100);
        let mut ids: Vec<u64> = s.labeled.ids();
        ids.extend(s.unlabeled.ids());
        ids.extend(s.eval.ids());
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn few_shot_names_starved_class() {
        let samples = (0..5)
            .map(|i| labeled(i, Domain::Target, usize::from(i == 4), vec![0.0]))
            .collect();
        let t = Dataset::new(samples, 2).unwrap();
        let spec = ShotSpec {
            shots_per_class: 1,
            seed: 0,
            eval_fraction: 0.0,
        };
        let err = split_few_shot(&t, &spec).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn perturb_zero_strength_identity() {
        let p = Perturber::new(0.0, vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.perturb(&[0.5, -1.5], &mut rng), vec![0.5, -1.5]);
        assert!(Perturber::new(-0.1, vec![]).is_err());
    }

    #[test]
    fn batch_sampling_contract() {
        let mut rngs = [0, 1, 2, 3].map(ChaCha8Rng::seed_from_u64);
        let plan = BatchPlan::default();
        let b = sample_batches([100, 6, 30, 200], &plan, &mut rngs).unwrap();
        for (batch, size) in b.iter().zip(plan.sizes()) {
            assert_eq!(batch.len(), size);
        }
        assert!(b[1].iter().all(|&i| i < 6));
        let mut distinct = b[0].clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 24);
        let mut rngs = [0, 1, 2, 3].map(ChaCha8Rng::seed_from_u64);
        assert_eq!(sample_batches([100, 6, 30, 200], &plan, &mut rngs).unwrap(), b);
        assert!(sample_batches([100, 0, 30, 200], &plan, &mut rngs).is_err());
    }

    #[test]
    fn csv_hand_fixture() {
        let text = "id,domain,split,label,f0,f1\n\
                    0,source,train,1,0.5,-2\n\
                    7,target,train,,1e-3,4.25\n\
                    9,target,eval,0,3,0\n";
        let d = parse_csv(text, Some(2)).unwrap();
        assert_eq!(d.dim, 2);
        assert_eq!(d.samples[0].features, vec![0.5, -2.0]);
        assert_eq!(d.samples[1].label, None);
        assert_eq!(d.samples[1].features, vec![0.001, 4.25]);
        assert_eq!(d.samples[2].split, Split::Eval);
        assert_eq!(d.samples[2].id, 9);
    }

    #[test]
    fn csv_errors() {
        let err = parse_csv("id,domain,label,f0\n", None).unwrap_err();
        assert!(err.to_string().contains("id,domain,split,label"));
        let err = parse_csv("id,domain,split,label,f0\n0,source,train,0,abc\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_csv("id,domain,split,label,f0\n0,source,train,5,1\n", Some(2)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
