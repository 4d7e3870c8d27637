//! Experiment configuration: a flat `key = value` file with dotted section
//! keys. Blank lines and `#` comments are ignored; unknown or repeated keys
//! are errors.
//!
//! ```text
//! train.epochs = 30
//! train.tau = 0.95
//! model.hidden = 64
//! data.generator = blobs
//! data.shift = 2.0
//! experiment.trials = 5
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::data::{
    gen_blobs_shift, gen_two_moons_shift, load_csv, split_few_shot, split_from_columns, BlobsSpec,
    Dataset, Domain, FewShotSplit, ShotSpec, TrainingData,
};
use crate::error::{Error, Result};
use crate::losses::Term;
use crate::model::Activation;
use crate::trainer::{digest, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Blobs,
    Moons,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub generator: Generator,
    pub classes: usize,
    pub dim: usize,
    pub shift: f64,
    pub scale: f64,
    pub spread: f64,
    pub noise: f64,
    pub rotation: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
    pub shots: usize,
    pub eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Blobs,
            classes: 5,
            dim: 8,
            shift: 2.0,
            scale: 1.0,
            spread: 1.0,
            noise: 0.7,
            rotation: 30.0,
            n_source: 2000,
            n_target: 2000,
            seed: 0,
            shots: 3,
            eval_fraction: 0.3,
        }
    }
}

/// Source domain plus the target partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub source: Dataset,
    pub split: FewShotSplit,
}

impl Prepared {
    pub fn training_data(&self) -> Result<TrainingData> {
        TrainingData::new(&self.source, &self.split)
    }

    /// Target samples used in training lose their labels except for the
    /// few-shot set, so the written file reloads into the same partition.
    pub fn to_csv(&self) -> Result<String> {
        let mut unlabeled = self.split.unlabeled.clone();
        for s in &mut unlabeled.samples {
            s.label = None;
        }
        crate::data::to_csv(&[&self.source, &self.split.labeled, &unlabeled, &self.split.eval])
    }
}

impl DataConfig {
    pub fn prepare(&self) -> Result<Prepared> {
        let (source, target) = match &self.generator {
            Generator::Blobs => {
                let spec = BlobsSpec {
                    classes: self.classes,
                    dim: self.dim,
                    shift: BlobsSpec::shift_along_random_direction(self.dim, self.shift, self.seed),
                    scale: self.scale,
                    spread: self.spread,
                    noise: self.noise,
                    n_source: self.n_source,
                    n_target: self.n_target,
                };
                gen_blobs_shift(&spec, self.seed)?
            }
            Generator::Moons => {
                gen_two_moons_shift(self.n_source, self.n_target, self.rotation, self.noise, self.seed)?
            }
            Generator::Csv(path) => {
                let all = load_csv(path, None)?;
                let source = all.filter(|s| s.domain == Domain::Source);
                let target = all.filter(|s| s.domain == Domain::Target);
                if source.samples.iter().any(|s| s.label.is_none()) {
                    return Err(Error::Config("every source row needs a label".into()));
                }
                let split = split_from_columns(&target)?;
                return Ok(Prepared { source, split });
            }
        };
        let split = split_few_shot(
            &target,
            &ShotSpec {
                shots_per_class: self.shots,
                seed: self.seed,
                eval_fraction: self.eval_fraction,
            },
        )?;
        Ok(Prepared { source, split })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out: PathBuf,
    pub trials: usize,
    pub seeds: Option<Vec<u64>>,
    pub tau_list: Vec<f64>,
    /// Write a resumable checkpoint every this many epochs (0: never).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataConfig::default(),
            out: PathBuf::from("out"),
            trials: 5,
            seeds: None,
            tau_list: vec![0.5, 0.7, 0.8, 0.9, 0.95, 0.99],
            checkpoint_every: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Generator::Csv(p) = &cfg.data.generator {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data.generator = Generator::Csv(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut path = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                detail: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("key `{k}` set twice (line {})", n + 1)));
            }
            if k == "data.path" {
                path = Some(PathBuf::from(v));
                continue;
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        match (&cfg.data.generator, path) {
            (Generator::Csv(_), Some(p)) => cfg.data.generator = Generator::Csv(p),
            (Generator::Csv(_), None) => {
                return Err(Error::Config("data.generator = csv requires data.path".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Config("data.path is only valid with data.generator = csv".into()))
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "train.epochs" => t.epochs = parse_num(key, v)?,
            "train.iterations_per_epoch" => t.iterations_per_epoch = parse_num(key, v)?,
            "train.lr" => t.lr_eta0 = parse_num(key, v)?,
            "train.momentum" => t.momentum = parse_num(key, v)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "train.decay_prototypes" => t.decay_prototypes = parse_bool(key, v)?,
            "train.tau" => t.tau = parse_num(key, v)?,
            "train.alpha" => t.alpha = parse_num(key, v)?,
            "train.beta" => t.beta = parse_num(key, v)?,
            "train.gamma" => t.gamma = parse_num(key, v)?,
            "train.perturb_strength" => t.perturb_strength = parse_num(key, v)?,
            "train.seed" => t.seed = parse_num(key, v)?,
            "train.batch_source" => t.batch.source = parse_num(key, v)?,
            "train.batch_labeled" => t.batch.labeled = parse_num(key, v)?,
            "train.batch_labeled_prime" => t.batch.labeled_prime = parse_num(key, v)?,
            "train.batch_unlabeled" => t.batch.unlabeled = parse_num(key, v)?,
            "train.sdm" => t.sdm = parse_bool(key, v)?,
            "train.mdm" => t.mdm = parse_bool(key, v)?,
            "train.psr" => t.psr = parse_bool(key, v)?,
            "train.nsr" => t.nsr = parse_bool(key, v)?,
            "train.pa" => t.pa = parse_bool(key, v)?,
            "train.pseudo" => t.pseudo = parse_bool(key, v)?,
            "train.scale_sdm" => t.term_scale[Term::Sdm as usize] = parse_num(key, v)?,
            "train.scale_mdm" => t.term_scale[Term::Mdm as usize] = parse_num(key, v)?,
            "train.scale_psr" => t.term_scale[Term::Psr as usize] = parse_num(key, v)?,
            "train.scale_nsr" => t.term_scale[Term::Nsr as usize] = parse_num(key, v)?,
            "train.scale_pa" => t.term_scale[Term::Pa as usize] = parse_num(key, v)?,
            "model.hidden" => t.hidden = parse_list(key, v)?,
            "model.feature_dim" => t.feature_dim = parse_num(key, v)?,
            "model.activation" => t.activation = Activation::parse(v)?,
            "model.temperature" => t.temperature = parse_num(key, v)?,
            "data.generator" => {
                d.generator = match v {
                    "blobs" => Generator::Blobs,
                    "moons" => Generator::Moons,
                    "csv" => Generator::Csv(PathBuf::new()),
                    other => {
                        return Err(Error::Config(format!(
                            "data.generator must be blobs, moons or csv, got `{other}`"
                        )))
                    }
                }
            }
            "data.classes" => d.classes = parse_num(key, v)?,
            "data.dim" => d.dim = parse_num(key, v)?,
            "data.shift" => d.shift = parse_num(key, v)?,
            "data.scale" => d.scale = parse_num(key, v)?,
            "data.spread" => d.spread = parse_num(key, v)?,
            "data.noise" => d.noise = parse_num(key, v)?,
            "data.rotation" => d.rotation = parse_num(key, v)?,
            "data.n_source" => d.n_source = parse_num(key, v)?,
            "data.n_target" => d.n_target = parse_num(key, v)?,
            "data.seed" => d.seed = parse_num(key, v)?,
            "data.shots" => d.shots = parse_num(key, v)?,
            "data.eval_fraction" => d.eval_fraction = parse_num(key, v)?,
            "experiment.out" => self.out = PathBuf::from(v),
            "experiment.trials" => self.trials = parse_num(key, v)?,
            "experiment.seeds" => self.seeds = Some(parse_list(key, v)?),
            "experiment.tau_list" => self.tau_list = parse_list(key, v)?,
            "experiment.checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("experiment.trials must be ≥ 1".into()));
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(Error::Config("experiment.seeds is empty".into()));
        }
        validate_taus(&self.tau_list)
    }

    /// Uses `seed` for both model initialization/sampling and data generation.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c.data.seed = seed;
        c
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.trials as u64).map(|i| self.train.seed + i).collect())
    }

    pub fn hash(&self) -> String {
        digest(&format!("{:?}{:?}", self.train, self.data))
    }
}

pub fn validate_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Config("tau list is empty".into()));
    }
    for &t in taus {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("tau values must lie in (0, 1], got {t}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let c = ExperimentConfig::parse(
            "# demo\ntrain.epochs = 3\ntrain.tau=0.9 # inline\nmodel.hidden = 16, 8\n\ntrain.pa = off\n",
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.tau, 0.9);
        assert_eq!(c.train.hidden, vec![16, 8]);
        assert!(!c.train.pa);
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = ExperimentConfig::parse("train.epoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("train.epoch"));
        assert!(ExperimentConfig::parse("train.tau = 0.9\ntrain.tau = 0.8\n").is_err());
        assert!(ExperimentConfig::parse("train.tau = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("train.tau\n").is_err());
        assert!(ExperimentConfig::parse("data.generator = csv\n").is_err());
    }

    #[test]
    fn seeds() {
        let c = ExperimentConfig::parse("train.seed = 10\nexperiment.trials = 3\n").unwrap();
        assert_eq!(c.trial_seeds(), vec![10, 11, 12]);
        let c = ExperimentConfig::parse("experiment.seeds = 4, 9\n").unwrap();
        assert_eq!(c.trial_seeds(), vec![4, 9]);
        let s = c.with_seed(7);
        assert_eq!((s.train.seed, s.data.seed), (7, 7));
    }
}
