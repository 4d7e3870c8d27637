//! Command-line front end: `train`, `ablate`, `sweep-tau` and `eval`.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{load_csv, split_from_columns, Domain};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, calibration, fmt_num, metrics_csv, EpochMetrics, METRICS_HEADER};
use crate::model::checkpoint::Checkpoint;
use crate::pseudo::AUDIT_HEADER;
use crate::trainer::{TrainConfig, Trainer};
use config::{validate_taus, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "idmne", version, about = "Semi-supervised domain adaptation on vector data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args, Clone, Default)]
pub struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `experiment.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics, pseudo-label audit and checkpoint.
    Train(Common),
    /// Run the seven ablation variants over the trial seeds.
    Ablate(Common),
    /// Train once per confidence threshold.
    SweepTau {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds; overrides `experiment.tau_list`.
        #[arg(long, value_delimiter = ',')]
        tau_list: Option<Vec<f64>>,
    },
    /// Evaluate a checkpoint on a dataset CSV; prints `accuracy,ece,samples`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

/// Runs a parsed command and maps errors to the exit-code contract.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Ablate(c) => cmd_ablate(&c),
        Command::SweepTau { common, tau_list } => cmd_sweep_tau(&common, tau_list),
        Command::Eval {
            checkpoint,
            dataset,
            ..
        } => cmd_eval(checkpoint.as_deref(), dataset.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Trains one configuration; if `out` is given, writes its artifacts there.
pub fn train_one(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Trainer> {
    let prepared = cfg.data.prepare()?;
    let data = prepared.training_data()?;
    let mut trainer = Trainer::<f64>::new(cfg.train.clone(), data)?;
    trainer.config_hash = cfg.hash();
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        write(&out.join("dataset.csv"), &prepared.to_csv()?)?;
    }
    finish(trainer, cfg, out)
}

/// Continues a `train_one` run from one of its epoch checkpoints. The
/// returned history (and metrics CSV) covers only the epochs run here.
pub fn resume_one(cfg: &ExperimentConfig, ckpt: &Path, out: Option<&Path>) -> Result<Trainer> {
    let data = cfg.data.prepare()?.training_data()?;
    let ckpt = Checkpoint::<f64>::load(ckpt)?;
    let trainer = Trainer::resume_as(cfg.train.clone(), data, &ckpt, cfg.hash())?;
    finish(trainer, cfg, out)
}

fn finish(mut trainer: Trainer, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Trainer> {
    let every = cfg.checkpoint_every;
    trainer.run_with(|t, m| {
        if let (Some(out), true) = (out, every > 0 && m.epoch % every.max(1) == 0) {
            t.checkpoint().save(&out.join(format!("epoch_{}.ckpt", m.epoch)))?;
        }
        Ok(())
    })?;
    if let Some(out) = out {
        write(&out.join("metrics.csv"), &metrics_csv(&trainer.history))?;
        write(
            &out.join("pseudo_labels.csv"),
            &format!("{AUDIT_HEADER}\n{}", trainer.audit),
        )?;
        trainer.checkpoint().save(&out.join("final.ckpt"))?;
        let data = trainer.data();
        if !data.eval_y.is_empty() {
            let report = calibration(&trainer.params, &data.eval_x, &data.eval_y)?;
            write(&out.join("calibration.csv"), &report.to_csv())?;
        }
    }
    Ok(trainer)
}

pub fn cmd_train(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.data.prepare()?;
    let t = train_one(&cfg, Some(&cfg.out))?;
    if let Some(last) = t.history.last() {
        println!("{METRICS_HEADER}");
        println!("{}", last.to_csv_line());
    }
    Ok(())
}

/// The seven ablation variants in reporting order.
pub fn variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let v = |sdm, mdm, psr, nsr, pa| {
        let mut c = base.clone();
        (c.sdm, c.mdm, c.psr, c.nsr, c.pa) = (sdm, mdm, psr, nsr, pa);
        c.pseudo = sdm || mdm || psr || nsr || pa;
        c
    };
    vec![
        ("baseline1", v(false, false, false, false, false)),
        ("baseline1+sdm", v(true, false, false, false, false)),
        ("baseline1+mdm", v(false, true, false, false, false)),
        ("baseline2", v(true, true, false, false, false)),
        ("baseline2+psr", v(true, true, true, false, false)),
        ("baseline2+psr+nsr", v(true, true, true, true, false)),
        ("baseline2+psr+nsr+pa", v(true, true, true, true, true)),
    ]
}

/// Mean and half-width of the two-sided 95% Student-t interval. The
/// half-width is `None` for fewer than two values.
pub fn mean_ci95(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

pub const TRIALS_HEADER: &str = "variant,seed,acc_eval,accd,ece,pl_count,pl_correct,pl_acc";
pub const SUMMARY_HEADER: &str = "variant,trials,acc_mean,acc_ci95";

pub fn cmd_ablate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let seeds = cfg.trial_seeds();
    for &s in &seeds {
        cfg.with_seed(s).data.prepare()?;
    }
    let jobs: Vec<(&str, TrainConfig, u64)> = variants(&cfg.train)
        .into_iter()
        .flat_map(|(name, t)| seeds.iter().map(move |&s| (name, t.clone(), s)))
        .collect();
    let results: Vec<Result<(String, u64, EpochMetrics)>> = jobs
        .par_iter()
        .map(|(name, t, seed)| {
            let mut run = cfg.with_seed(*seed);
            run.train = TrainConfig {
                seed: *seed,
                ..t.clone()
            };
            let dir = cfg.out.join("ablation").join(name).join(format!("seed_{seed}"));
            let trainer = train_one(&run, Some(&dir))?;
            let last = trainer.history.last().cloned().ok_or_else(|| {
                Error::Config("ablation needs train.epochs ≥ 1".into())
            })?;
            Ok((name.to_string(), *seed, last))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut trials = format!("{TRIALS_HEADER}\n");
    for (name, seed, m) in &results {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            trials,
            "{name},{seed},{},{},{},{},{},{}",
            opt(m.acc_eval),
            opt(m.accd),
            opt(m.ece),
            m.pl_count,
            m.pl_correct.map(|v| v.to_string()).unwrap_or_default(),
            opt(m.pl_acc)
        );
    }
    write(&cfg.out.join("ablation_trials.csv"), &trials)?;

    let mut summary = format!("{SUMMARY_HEADER}\n");
    for (name, _) in variants(&cfg.train) {
        let accs: Vec<f64> = results
            .iter()
            .filter(|r| r.0 == name)
            .filter_map(|r| r.2.acc_eval)
            .collect();
        if accs.is_empty() {
            continue;
        }
        let (mean, hw) = mean_ci95(&accs);
        let _ = writeln!(
            summary,
            "{name},{},{},{}",
            accs.len(),
            fmt_num(mean),
            hw.map(fmt_num).unwrap_or_default()
        );
    }
    write(&cfg.out.join("ablation_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub const SWEEP_HEADER_PREFIX: &str = "tau,";

pub fn cmd_sweep_tau(c: &Common, tau_list: Option<Vec<f64>>) -> Result<()> {
    let cfg = load_config(c)?;
    let taus = tau_list.unwrap_or_else(|| cfg.tau_list.clone());
    validate_taus(&taus)?;
    cfg.data.prepare()?;
    let runs: Vec<Result<(f64, Vec<EpochMetrics>)>> = taus
        .par_iter()
        .map(|&tau| {
            let mut run = cfg.clone();
            run.train.tau = tau;
            let dir = cfg.out.join(format!("tau_{tau}"));
            let t = train_one(&run, Some(&dir))?;
            Ok((tau, t.history))
        })
        .collect();
    let mut combined = format!("{SWEEP_HEADER_PREFIX}{METRICS_HEADER}\n");
    for r in runs {
        let (tau, history) = r?;
        for m in history {
            let _ = writeln!(combined, "{tau},{}", m.to_csv_line());
        }
    }
    write(&cfg.out.join("sweep_tau.csv"), &combined)?;
    Ok(())
}

/// Accuracy and calibration error of a checkpoint on the labeled eval rows
/// of a dataset (all labeled target rows if it has no eval rows).
pub fn evaluate_checkpoint(ckpt: &Path, dataset: &Path) -> Result<(f64, f64, usize)> {
    let ckpt = Checkpoint::<f64>::load(ckpt)?;
    let classes = ckpt.params.classes();
    let all = load_csv(dataset, Some(classes))?;
    let target = all.filter(|s| s.domain == Domain::Target);
    let eval = match split_from_columns(&target) {
        Ok(s) if !s.eval.is_empty() => s.eval,
        _ => target.filter(|s| s.label.is_some()),
    };
    if eval.is_empty() {
        return Err(Error::Config("dataset has no labeled target rows".into()));
    }
    if eval.dim != ckpt.params.input_dim() {
        return Err(Error::Config(format!(
            "dataset width {} does not match checkpoint input width {}",
            eval.dim,
            ckpt.params.input_dim()
        )));
    }
    let (x, y) = (eval.features(), eval.labels()?);
    let acc = accuracy(&ckpt.params, &x, &y)?;
    let ece = calibration(&ckpt.params, &x, &y)?.ece;
    Ok((acc, ece, y.len()))
}

pub fn cmd_eval(checkpoint: Option<&Path>, dataset: Option<&Path>) -> Result<()> {
    let checkpoint = checkpoint.ok_or_else(|| Error::Config("eval requires --checkpoint".into()))?;
    let dataset = dataset.ok_or_else(|| Error::Config("eval requires --dataset".into()))?;
    let (acc, ece, n) = evaluate_checkpoint(checkpoint, dataset)?;
    println!("{},{},{n}", fmt_num(acc), fmt_num(ece));
    Ok(())
}
