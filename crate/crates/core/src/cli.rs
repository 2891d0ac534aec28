//! The `clab` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    knn_purity, local_separation_views, tolerance_with, uniformity, PairBudget, ToleranceForm,
};
use crate::checks::{run_all, CheckConfig};
use crate::error::{Error, Result};
use crate::io::{
    read_dump, sweep_rows, trajectory_rows, write_dump, write_report, EmbeddingDump, ReportFormat,
};
use crate::losses::{LossConfig, Variant};
use crate::synth::{make_dataset, SynthConfig};
use crate::trainer::{sweep_tau, train, PositiveKey, TrainConfig, TOP_NEGATIVES};

pub const SEED_ENV: &str = "CLAB_SEED";
pub const DEFAULT_TAUS: [f64; 12] = [0.05, 0.07, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub const MANIFEST: &str = "manifest.json";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const FINAL_DUMP: &str = "final.clab";
pub const FINAL_KEYS: &str = "final_keys.clab";

#[derive(Debug, Parser)]
#[command(
    name = "clab",
    version,
    about = "Temperature experiments for the softmax contrastive loss"
)]
#[command(propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding table on the synthetic dataset
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Train once per temperature and report the final snapshots
    #[command(allow_negative_numbers = true)]
    Sweep(SweepArgs),
    /// Diagnostics of an embedding dump
    #[command(allow_negative_numbers = true)]
    Metrics(MetricsArgs),
    /// Randomized limit and gradient checks
    #[command(allow_negative_numbers = true)]
    LimitsCheck(LimitsArgs),
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && !v.is_nan() => Ok(v),
        Ok(v) => Err(format!("must be non-negative, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        Ok(v) => Err(format!("must lie in (0, 1], got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn momentum(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("must lie in [0, 1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn schedule_point(s: &str) -> std::result::Result<(usize, f64), String> {
    let (step, mult) = s
        .split_once(':')
        .ok_or_else(|| format!("expected STEP:MULTIPLIER, got {s:?}"))?;
    let step = step
        .trim()
        .parse()
        .map_err(|e| format!("step {step:?}: {e}"))?;
    let mult = non_negative_f64(mult.trim())?;
    Ok((step, mult))
}

/// Experiment settings; unset fields take the library defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Loss variant [default: contrastive]
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Temperature [default: 0.2]
    #[arg(long, value_parser = positive_f64)]
    pub tau: Option<f64>,
    /// Fraction of negatives kept by hard variants [default: 0.0819]
    #[arg(long, value_parser = unit_interval)]
    pub alpha: Option<f64>,
    /// Negative weight of the linear variants [default: balanced for the batch size]
    #[arg(long, value_parser = non_negative_f64)]
    pub lambda: Option<f64>,
    /// Optimization steps [default: 2000]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    /// Anchors per step [default: 128]
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub batch_size: Option<u64>,
    /// Learning rate [default: 0.03]
    #[arg(long, value_parser = non_negative_f64)]
    pub lr: Option<f64>,
    /// Learning-rate multipliers as STEP:FACTOR, applied cumulatively
    #[arg(long, value_delimiter = ',', value_parser = schedule_point)]
    pub lr_schedule: Option<Vec<(usize, f64)>>,
    /// EMA momentum of the memory bank [default: 0.97]
    #[arg(long, value_parser = momentum, conflicts_with = "no_bank")]
    pub bank_momentum: Option<f64>,
    /// Use fresh key views instead of a memory bank
    #[arg(long)]
    pub no_bank: bool,
    /// Positive key while a bank is active: bank or fresh-view [default: bank]
    #[arg(long)]
    pub positive_key: Option<PositiveKey>,
    /// Augmentation concentration [default: 40]
    #[arg(long, value_parser = non_negative_f64)]
    pub kappa_aug: Option<f64>,
    /// Steps between snapshots [default: 100]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub metric_every: Option<u64>,
    /// Training seed [default: $CLAB_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding dimension [default: 32]
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub dim: Option<u64>,
    /// Number of classes [default: 10]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub classes: Option<u64>,
    /// Instances per class [default: 500]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub points_per_class: Option<u64>,
    /// Concentration of each class cluster [default: 20]
    #[arg(long, value_parser = non_negative_f64)]
    pub kappa_class: Option<f64>,
    /// Dataset seed [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Uniformity kernel scale [default: 2]
    #[arg(long, value_parser = positive_f64)]
    pub uniformity_t: Option<f64>,
    /// Neighbours for kNN purity [default: 10]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub knn_k: Option<u64>,
    /// same-class-mean or masked-mean-all-pairs [default: same-class-mean]
    #[arg(long)]
    pub tolerance_form: Option<ToleranceForm>,
}

impl ExperimentArgs {
    fn any_set(&self) -> bool {
        let ExperimentArgs {
            variant,
            tau,
            alpha,
            lambda,
            steps,
            batch_size,
            lr,
            lr_schedule,
            bank_momentum,
            no_bank,
            positive_key,
            kappa_aug,
            metric_every,
            seed,
            dim,
            classes,
            points_per_class,
            kappa_class,
            data_seed,
            uniformity_t,
            knn_k,
            tolerance_form,
        } = self;
        variant.is_some()
            || tau.is_some()
            || alpha.is_some()
            || lambda.is_some()
            || steps.is_some()
            || batch_size.is_some()
            || lr.is_some()
            || lr_schedule.is_some()
            || bank_momentum.is_some()
            || *no_bank
            || positive_key.is_some()
            || kappa_aug.is_some()
            || metric_every.is_some()
            || seed.is_some()
            || dim.is_some()
            || classes.is_some()
            || points_per_class.is_some()
            || kappa_class.is_some()
            || data_seed.is_some()
            || uniformity_t.is_some()
            || knn_k.is_some()
            || tolerance_form.is_some()
    }

    /// Resolves every setting, including the balanced lambda.
    pub fn resolve(&self) -> std::result::Result<(SynthConfig, TrainConfig), String> {
        let mut synth = SynthConfig::default();
        let mut cfg = TrainConfig::default();
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|e| format!("{SEED_ENV}={v:?} is not a seed: {e}"))?,
                Err(_) => cfg.seed,
            },
        };
        cfg.seed = seed;
        let mut loss = LossConfig::new(
            self.variant.unwrap_or(cfg.loss.variant),
            self.tau.unwrap_or(cfg.loss.tau),
        );
        loss.alpha = self.alpha.unwrap_or(loss.alpha);
        loss.lambda = self.lambda;
        cfg.loss = loss;
        if let Some(v) = self.steps {
            cfg.steps = v as usize;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v as usize;
        }
        cfg.learning_rate = self.lr.unwrap_or(cfg.learning_rate);
        if let Some(v) = &self.lr_schedule {
            cfg.lr_schedule = v.clone();
        }
        if self.no_bank {
            cfg.memory_bank_momentum = None;
        } else if let Some(m) = self.bank_momentum {
            cfg.memory_bank_momentum = Some(m);
        }
        cfg.positive_key = self.positive_key.unwrap_or(cfg.positive_key);
        cfg.kappa_aug = self.kappa_aug.unwrap_or(cfg.kappa_aug);
        if let Some(v) = self.metric_every {
            cfg.metric_every = v as usize;
        }
        cfg.metrics.uniformity_t = self.uniformity_t.unwrap_or(cfg.metrics.uniformity_t);
        if let Some(k) = self.knn_k {
            cfg.metrics.knn_k = k as usize;
        }
        cfg.metrics.tolerance_form = self.tolerance_form.unwrap_or(cfg.metrics.tolerance_form);

        if let Some(v) = self.dim {
            synth.dim = v as usize;
        }
        if let Some(v) = self.classes {
            synth.num_classes = v as usize;
        }
        if let Some(v) = self.points_per_class {
            synth.points_per_class = v as usize;
        }
        synth.kappa_class = self.kappa_class.unwrap_or(synth.kappa_class);
        synth.kappa_aug = cfg.kappa_aug;
        synth.seed = self.data_seed.unwrap_or(synth.seed);

        if cfg.loss.variant.uses_lambda() && cfg.loss.lambda.is_none() {
            cfg.loss.lambda = Some(cfg.loss.resolved_lambda(cfg.batch_size));
        }
        synth.validate().map_err(|e| e.to_string())?;
        cfg.validate(synth.len()).map_err(|e| e.to_string())?;
        Ok((synth, cfg))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Output directory [default: the manifest's when rerunning, else required]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rerun the experiment recorded in a manifest
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated temperatures [default: 0.05,0.07,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0]
    #[arg(long, value_delimiter = ',', value_parser = positive_f64, num_args = 1..)]
    pub taus: Option<Vec<f64>>,
    /// Worker threads; omitted, temperatures run one after another
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Report format: csv or json [default: csv]
    #[arg(long)]
    pub format: Option<ReportFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Embedding dump to analyse
    #[arg(long)]
    pub input: PathBuf,
    /// Key dump for the local-separation statistics [default: the input itself]
    #[arg(long)]
    pub keys: Option<PathBuf>,
    #[arg(long, value_parser = positive_f64, default_value_t = crate::analysis::DEFAULT_UNIFORMITY_T)]
    pub uniformity_t: f64,
    /// Neighbours for kNN purity [default: min(10, N-1)]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub knn_k: Option<u64>,
    /// Require the tolerance metric (fails without labels)
    #[arg(long)]
    pub tolerance: bool,
    /// Require kNN purity (fails without labels)
    #[arg(long)]
    pub purity: bool,
    /// Write the JSON here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LimitsArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-3)]
    pub tau_small: f64,
    #[arg(long, value_parser = positive_f64, default_value_t = 100.0)]
    pub tau_large: f64,
    /// Random matrices per gradient suite
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
    /// Offset added to analytic gradients; a negative control for tests
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub perturb_gradients: f64,
}

/// Everything needed to rerun a `train` or `sweep` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    pub out: PathBuf,
    /// Output name to path, relative to `out`.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn output_dir(
    out: &Option<PathBuf>,
    manifest: Option<&RunManifest>,
) -> std::result::Result<PathBuf, Failure> {
    match (out, manifest) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(m)) => Ok(m.out.clone()),
        (None, None) => Err(Failure::Usage("--out is required".into())),
    }
}

fn load_manifest(
    path: &Path,
    experiment: &ExperimentArgs,
    command: &str,
) -> std::result::Result<RunManifest, Failure> {
    if experiment.any_set() {
        return Err(Failure::Usage(
            "--from-manifest cannot be combined with experiment flags".into(),
        ));
    }
    let m = RunManifest::load(path)?;
    if m.command != command {
        return Err(Failure::Usage(format!(
            "{} records a {} run, not {command}",
            path.display(),
            m.command
        )));
    }
    Ok(m)
}

fn labelled_dump(embeddings: crate::sphere::Matrix, labels: &[u32]) -> Result<EmbeddingDump> {
    EmbeddingDump::new(embeddings, Some(labels.to_vec()))
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let previous = match &args.from_manifest {
        Some(p) => Some(load_manifest(p, &args.experiment, "train")?),
        None => None,
    };
    let (synth, cfg) = match &previous {
        Some(m) => (m.synth, m.train.clone()),
        None => args.experiment.resolve().map_err(Failure::Usage)?,
    };
    let out = output_dir(&args.out, previous.as_ref())?;
    make_dir(&out)?;
    let outputs: BTreeMap<String, String> = [
        ("trajectory", TRAJECTORY),
        ("final", FINAL_DUMP),
        ("final_keys", FINAL_KEYS),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let manifest = RunManifest {
        command: "train".into(),
        version: crate::VERSION.into(),
        seed: cfg.seed,
        synth,
        train: cfg.clone(),
        taus: None,
        format: None,
        out: out.clone(),
        outputs,
    };
    manifest.save(&out.join(MANIFEST))?;

    let dataset = make_dataset(&synth)?;
    let outcome = train(&dataset, &cfg)?;
    let rows = trajectory_rows(
        cfg.loss.tau,
        cfg.loss.variant,
        cfg.loss.alpha,
        &outcome.trajectory,
    );
    write_report(&rows, out.join(TRAJECTORY), ReportFormat::Csv)?;
    write_dump(
        out.join(FINAL_DUMP),
        &labelled_dump(outcome.embeddings, &dataset.labels)?,
    )?;
    write_dump(
        out.join(FINAL_KEYS),
        &labelled_dump(outcome.keys, &dataset.labels)?,
    )?;
    if let Some(last) = outcome.trajectory.last() {
        println!(
            "step {} loss {:.6} uniformity {:.6} tolerance {:.6} knn_purity {:.4}",
            last.step, last.mean_loss, last.uniformity, last.tolerance, last.knn_purity
        );
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let previous = match &args.from_manifest {
        Some(p) => {
            if args.taus.is_some() || args.format.is_some() {
                return Err(Failure::Usage(
                    "--from-manifest cannot be combined with --taus or --format".into(),
                ));
            }
            Some(load_manifest(p, &args.experiment, "sweep")?)
        }
        None => None,
    };
    let (synth, cfg, taus, format) = match &previous {
        Some(m) => {
            let format = m
                .format
                .as_deref()
                .unwrap_or("csv")
                .parse::<ReportFormat>()
                .map_err(Failure::Usage)?;
            let taus = m
                .taus
                .clone()
                .ok_or_else(|| Failure::Usage("manifest lists no temperatures".into()))?;
            (m.synth, m.train.clone(), taus, format)
        }
        None => {
            let (synth, cfg) = args.experiment.resolve().map_err(Failure::Usage)?;
            let taus = args.taus.clone().unwrap_or_else(|| DEFAULT_TAUS.to_vec());
            (synth, cfg, taus, args.format.unwrap_or_default())
        }
    };
    if taus.is_empty() {
        return Err(Failure::Usage(
            "--taus needs at least one temperature".into(),
        ));
    }
    let out = output_dir(&args.out, previous.as_ref())?;
    make_dir(&out)?;
    let (name, format_name) = match format {
        ReportFormat::Csv => ("sweep.csv", "csv"),
        ReportFormat::Json => ("sweep.json", "json"),
    };
    let manifest = RunManifest {
        command: "sweep".into(),
        version: crate::VERSION.into(),
        seed: cfg.seed,
        synth,
        train: cfg.clone(),
        taus: Some(taus.clone()),
        format: Some(format_name.into()),
        out: out.clone(),
        outputs: [("sweep".to_string(), name.to_string())]
            .into_iter()
            .collect(),
    };
    manifest.save(&out.join(MANIFEST))?;

    let dataset = make_dataset(&synth)?;
    let jobs = args.jobs.map(|j| j as usize).or(Some(1));
    let report = sweep_tau(&dataset, &cfg, &taus, jobs)?;
    write_report(&sweep_rows(&report), out.join(name), format)?;
    for e in &report.entries {
        println!(
            "tau {:<6} uniformity {:.6} tolerance {:.6} knn_purity {:.4}",
            e.tau, e.snapshot.uniformity, e.snapshot.tolerance, e.snapshot.knn_purity
        );
    }
    Ok(())
}

/// Output of `clab metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub dim: usize,
    pub uniformity_t: f64,
    pub uniformity: f64,
    pub neg_uniformity: f64,
    pub tolerance_same_class_mean: Option<f64>,
    pub tolerance_masked_mean_all_pairs: Option<f64>,
    pub knn_k: Option<usize>,
    pub knn_purity: Option<f64>,
    pub mean_pos_sim: f64,
    pub top_neg_sim: Vec<f64>,
}

pub fn compute_metrics(
    dump: &EmbeddingDump,
    keys: Option<&EmbeddingDump>,
    uniformity_t: f64,
    knn_k: Option<usize>,
    require_tolerance: bool,
    require_purity: bool,
) -> Result<MetricsReport> {
    let x = &dump.embeddings;
    let n = x.rows();
    let labels = dump.labels.as_deref();
    if labels.is_none() {
        if require_tolerance {
            return Err(Error::MissingLabels("tolerance"));
        }
        if require_purity {
            return Err(Error::MissingLabels("knn purity"));
        }
    }
    let u = uniformity(x, uniformity_t, PairBudget::All)?;
    let (t_mean, t_masked) = match labels {
        Some(l) => (
            Some(tolerance_with(x, l, ToleranceForm::SameClassMean)?),
            Some(tolerance_with(x, l, ToleranceForm::MaskedMeanAllPairs)?),
        ),
        None => (None, None),
    };
    let k = knn_k.unwrap_or_else(|| 10.min(n.saturating_sub(1)));
    let purity = match labels {
        Some(l) => Some(knn_purity(x, l, k)?),
        None => None,
    };
    let key_matrix = keys.map(|k| &k.embeddings).unwrap_or(x);
    let local = local_separation_views(x, key_matrix, TOP_NEGATIVES.min(n.saturating_sub(1)))?;
    Ok(MetricsReport {
        n,
        dim: x.cols(),
        uniformity_t,
        uniformity: u,
        neg_uniformity: -u,
        tolerance_same_class_mean: t_mean,
        tolerance_masked_mean_all_pairs: t_masked,
        knn_k: labels.map(|_| k),
        knn_purity: purity,
        mean_pos_sim: local.mean_positive,
        top_neg_sim: local.mean_top_negatives,
    })
}

pub fn cmd_metrics(args: &MetricsArgs) -> CmdResult {
    let dump = read_dump(&args.input)?;
    let keys = args.keys.as_ref().map(read_dump).transpose()?;
    let report = compute_metrics(
        &dump,
        keys.as_ref(),
        args.uniformity_t,
        args.knn_k.map(|k| k as usize),
        args.tolerance,
        args.purity,
    )?;
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    match &args.out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_limits_check(args: &LimitsArgs) -> CmdResult {
    let seed = match args.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| Failure::Usage(format!("{SEED_ENV}={v:?} is not a seed: {e}")))?,
            Err(_) => 0,
        },
    };
    let cfg = CheckConfig {
        seed,
        tau_small: args.tau_small,
        tau_large: args.tau_large,
        gradient_instances: args.instances as usize,
        perturb_gradients: args.perturb_gradients,
    };
    let outcomes = run_all(&cfg)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::InvalidConfig(format!(
            "failed checks: {}",
            failed.join(", ")
        ))))
    }
}

pub fn execute(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::LimitsCheck(a) => cmd_limits_check(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            if let Failure::Usage(_) = f {
                eprintln!("\nFor more information, try '--help'.");
            }
            f.exit_code()
        }
    }
}
