//! Direct optimization of an embedding table on the unit sphere.
//!
//! The parameters are the table rows themselves. Each step draws a minibatch,
//! generates two augmented views of the current rows, evaluates the configured
//! loss on `anchors · keysᵀ` (keys come from the memory bank when one is
//! enabled) and takes a projected gradient step followed by renormalization.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    knn_purity, local_separation_views, tolerance_with, uniformity, PairBudget, ToleranceForm,
    DEFAULT_UNIFORMITY_T,
};
use crate::error::{Error, Result};
use crate::losses::{evaluate, loss_gradients, LossConfig, Variant};
use crate::sphere::{axpy, dot, normalize_in_place, project_tangent, Matrix, SimilarityMatrix};
use crate::synth::{draw_views, stream_rng, Dataset, Stream};

/// Number of ranked negatives tracked in every snapshot.
pub const TOP_NEGATIVES: usize = 10;

/// Which key the positive similarity uses while a memory bank is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveKey {
    /// The bank row of the anchor's own instance.
    #[default]
    Bank,
    /// The freshly drawn key view; negatives still come from the bank.
    FreshView,
}

impl std::str::FromStr for PositiveKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bank" => Ok(PositiveKey::Bank),
            "fresh-view" => Ok(PositiveKey::FreshView),
            _ => Err(format!(
                "unknown positive key {s:?}, expected bank or fresh-view"
            )),
        }
    }
}

/// Settings of the per-snapshot diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub uniformity_t: f64,
    pub knn_k: usize,
    pub tolerance_form: ToleranceForm,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            uniformity_t: DEFAULT_UNIFORMITY_T,
            knn_k: 10,
            tolerance_form: ToleranceForm::SameClassMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `(step, multiplier)` pairs; from `step` on the rate is multiplied by every
    /// multiplier whose step has been reached.
    pub lr_schedule: Vec<(usize, f64)>,
    /// EMA momentum of the memory bank, or `None` to use fresh key views.
    pub memory_bank_momentum: Option<f64>,
    pub positive_key: PositiveKey,
    pub kappa_aug: f64,
    pub metric_every: usize,
    pub seed: u64,
    pub metrics: MetricConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            steps: 2000,
            batch_size: 128,
            learning_rate: 0.03,
            lr_schedule: Vec::new(),
            memory_bank_momentum: Some(0.97),
            positive_key: PositiveKey::Bank,
            kappa_aug: 40.0,
            metric_every: 100,
            seed: 0,
            metrics: MetricConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if self.batch_size < 2 || self.batch_size > n {
            return Err(Error::InvalidConfig(format!(
                "batch size must lie in [2, {n}], got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidConfig("lr schedule steps must ascend".into()));
        }
        if let Some(m) = self.memory_bank_momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!(
                    "bank momentum must lie in [0, 1), got {m}"
                )));
            }
        }
        if !(self.kappa_aug >= 0.0) {
            return Err(Error::InvalidConcentration(self.kappa_aug));
        }
        if self.metric_every == 0 {
            return Err(Error::InvalidConfig("metric_every must be positive".into()));
        }
        if self.metrics.knn_k == 0 || self.metrics.knn_k >= n {
            return Err(Error::KTooLarge {
                k: self.metrics.knn_k,
                max: n - 1,
            });
        }
        if n <= TOP_NEGATIVES {
            return Err(Error::KTooLarge {
                k: TOP_NEGATIVES,
                max: n - 1,
            });
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|(s, _)| *s <= step)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

/// Diagnostics of the embedding table at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    /// Loss on a fixed evaluation minibatch with fixed augmentation draws.
    pub mean_loss: f64,
    /// Raw uniformity value (not negated).
    pub uniformity: f64,
    pub tolerance: f64,
    pub knn_purity: f64,
    pub mean_pos_sim: f64,
    /// Mean of the 1st..10th largest negative similarity.
    pub top_neg_sim: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

/// What a training run leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embeddings: Matrix,
    /// Keys the local-separation statistics were measured against: the memory
    /// bank when enabled, otherwise a fixed augmented view of the table.
    pub keys: Matrix,
    pub trajectory: Trajectory,
}

/// Computes every snapshot metric for an embedding table against a key table.
pub fn snapshot_metrics(
    embeddings: &Matrix,
    keys: &Matrix,
    labels: &[u32],
    metrics: &MetricConfig,
) -> Result<(f64, f64, f64, f64, Vec<f64>)> {
    let u = uniformity(embeddings, metrics.uniformity_t, PairBudget::All)?;
    let t = tolerance_with(embeddings, labels, metrics.tolerance_form)?;
    let p = knn_purity(embeddings, labels, metrics.knn_k)?;
    let local = local_separation_views(embeddings, keys, TOP_NEGATIVES)?;
    Ok((u, t, p, local.mean_positive, local.mean_top_negatives))
}

struct EvalSet {
    indices: Vec<usize>,
}

impl EvalSet {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Eval, 0);
        Self {
            indices: index::sample(&mut rng, n, size).into_vec(),
        }
    }

    fn loss(&self, table: &Matrix, config: &TrainConfig) -> Result<f64> {
        let mut rng = stream_rng(config.seed, Stream::Eval, 1);
        let (a, k) = draw_views(
            &mut rng,
            &table.select_rows(&self.indices),
            config.kappa_aug,
        )?;
        let s = SimilarityMatrix::new(a.mul_transpose(&k)?)?;
        Ok(evaluate(&s, &config.loss)?.mean)
    }
}

fn eval_keys(table: &Matrix, bank: Option<&Matrix>, config: &TrainConfig) -> Result<Matrix> {
    match bank {
        Some(b) => Ok(b.clone()),
        None => {
            let mut rng = stream_rng(config.seed, Stream::Eval, 2);
            Ok(draw_views(&mut rng, table, config.kappa_aug)?.1)
        }
    }
}

/// Trains the table initialized from `dataset.directions`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run(dataset, config, false)
}

/// With `final_only`, only the last step is measured. Snapshots draw from their
/// own stream, so the final snapshot is the same either way.
fn run(dataset: &Dataset, config: &TrainConfig, final_only: bool) -> Result<TrainOutcome> {
    let n = dataset.len();
    config.validate(n)?;
    if dataset.labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            dataset.labels.len()
        )));
    }
    let mut table = dataset.directions.clone();
    let mut bank = config.memory_bank_momentum.map(|_| table.clone());
    let eval = EvalSet::new(n, config.batch_size, config.seed);
    let mut trajectory = Trajectory::default();

    let record =
        |step: usize, table: &Matrix, bank: Option<&Matrix>, traj: &mut Trajectory| -> Result<()> {
            let mean_loss = eval.loss(table, config)?;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let keys = eval_keys(table, bank, config)?;
            let (u, t, p, pos, top) =
                snapshot_metrics(table, &keys, &dataset.labels, &config.metrics)?;
            traj.snapshots.push(Snapshot {
                step,
                mean_loss,
                uniformity: u,
                tolerance: t,
                knn_purity: p,
                mean_pos_sim: pos,
                top_neg_sim: top,
            });
            Ok(())
        };

    if !final_only {
        record(0, &table, bank.as_ref(), &mut trajectory)?;
    }
    for step in 0..config.steps {
        train_step(step, &mut table, bank.as_mut(), config)?;
        let done = step + 1;
        if done == config.steps || (!final_only && done % config.metric_every == 0) {
            record(done, &table, bank.as_ref(), &mut trajectory)?;
        }
    }
    let keys = eval_keys(&table, bank.as_ref(), config)?;
    Ok(TrainOutcome {
        embeddings: table,
        keys,
        trajectory,
    })
}

fn train_step(
    step: usize,
    table: &mut Matrix,
    bank: Option<&mut Matrix>,
    config: &TrainConfig,
) -> Result<()> {
    let n = table.rows();
    let b = config.batch_size;
    let mut rng = stream_rng(config.seed, Stream::Optimizer, step as u64);
    let idx = index::sample(&mut rng, n, b).into_vec();

    let current = table.select_rows(&idx);
    let mut aug_rng = stream_rng(config.seed, Stream::Augment, step as u64);
    let (anchors, views) = draw_views(&mut aug_rng, &current, config.kappa_aug)?;
    let keys = match &bank {
        Some(bank) => bank.select_rows(&idx),
        None => views.clone(),
    };
    let fresh_positive = bank.is_some() && config.positive_key == PositiveKey::FreshView;

    let mut s = anchors.mul_transpose(&keys)?;
    if fresh_positive {
        for i in 0..b {
            s.set(i, i, dot(anchors.row(i), views.row(i)));
        }
    }
    let s = SimilarityMatrix::new(s)?;
    let grad = loss_gradients(&s, &config.loss)?;
    let loss = evaluate(&s, &config.loss)?;
    if !loss.mean.is_finite() || grad.dl_ds.as_slice().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { step });
    }

    // chain rule through s = anchors · keysᵀ, straight through the view to its row
    let g = &grad.dl_ds;
    let mut param_grad = Matrix::zeros(b, table.cols());
    for i in 0..b {
        let out = param_grad.row_mut(i);
        for j in 0..b {
            let w = g.get(i, j);
            if w == 0.0 {
                continue;
            }
            let key = if i == j && fresh_positive {
                views.row(j)
            } else {
                keys.row(j)
            };
            axpy(w, key, out);
        }
    }
    if bank.is_none() {
        for i in 0..b {
            for j in 0..b {
                let w = g.get(i, j);
                if w != 0.0 {
                    let a = anchors.row(i).to_vec();
                    axpy(w, &a, param_grad.row_mut(j));
                }
            }
        }
    }

    let lr = config.learning_rate_at(step);
    for (bi, &row) in idx.iter().enumerate() {
        let mut delta = param_grad.row(bi).to_vec();
        project_tangent(&mut delta, table.row(row));
        delta.iter_mut().for_each(|x| *x *= -lr);
        if delta.iter().all(|&x| x == 0.0) {
            continue;
        }
        let r = table.row_mut(row);
        r.iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
        if !normalize_in_place(r) {
            return Err(Error::NonFiniteLoss { step });
        }
    }

    if let (Some(bank), Some(m)) = (bank, config.memory_bank_momentum) {
        for (bi, &row) in idx.iter().enumerate() {
            let r = bank.row_mut(row);
            r.iter_mut()
                .zip(views.row(bi))
                .for_each(|(x, v)| *x = m * *x + (1.0 - m) * v);
            if !normalize_in_place(r) {
                r.copy_from_slice(views.row(bi));
            }
        }
    }
    Ok(())
}

/// Final snapshot of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub tau: f64,
    pub variant: Variant,
    pub alpha: f64,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

/// One full training run per temperature, same data and seeds, results in `taus` order.
///
/// `jobs` bounds the worker threads; `None` uses the global pool.
pub fn sweep_tau(
    dataset: &Dataset,
    base: &TrainConfig,
    taus: &[f64],
    jobs: Option<usize>,
) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one temperature is required".into(),
        ));
    }
    for &t in taus {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidTemperature(t));
        }
    }
    let run = |&tau: &f64| -> Result<SweepEntry> {
        let mut cfg = base.clone();
        cfg.loss.tau = tau;
        let out = run(dataset, &cfg, true)?;
        let snapshot = out
            .trajectory
            .snapshots
            .last()
            .cloned()
            .expect("training always records a snapshot");
        Ok(SweepEntry {
            tau,
            variant: cfg.loss.variant,
            alpha: cfg.loss.alpha,
            snapshot,
        })
    };
    let entries: Result<Vec<SweepEntry>> = match jobs {
        Some(1) => taus.iter().map(run).collect(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| taus.par_iter().map(run).collect()),
        None => taus.par_iter().map(run).collect(),
    };
    Ok(SweepReport { entries: entries? })
}
