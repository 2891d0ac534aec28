//! The softmax contrastive loss family and its hand-derived gradients.
//!
//! Every loss is evaluated row by row: anchor `i` only sees row `i` of the
//! similarity matrix, with `s[i][i]` the positive and the rest negatives.
//! Softmax rows are stabilized by subtracting the row maximum of `s / tau`,
//! and every reduction runs in ascending column order so results never depend
//! on how rows are scheduled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{
    axpy, project_tangent, similarity_matrix, FeatureBatch, Matrix, SimilarityMatrix,
};

/// Upper-quantile fraction used for the hard losses when none is given.
pub const DEFAULT_ALPHA: f64 = 0.0819;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Contrastive,
    Simple,
    Hard,
    HardSimple,
    TripletLimit,
    TaylorLimit,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Contrastive,
        Variant::Simple,
        Variant::Hard,
        Variant::HardSimple,
        Variant::TripletLimit,
        Variant::TaylorLimit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Contrastive => "contrastive",
            Variant::Simple => "simple",
            Variant::Hard => "hard",
            Variant::HardSimple => "hard-simple",
            Variant::TripletLimit => "triplet-limit",
            Variant::TaylorLimit => "taylor-limit",
        }
    }

    /// Whether the variant truncates negatives to the upper alpha quantile.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Variant::Hard | Variant::HardSimple)
    }

    /// Whether the variant is linear in the similarities and takes a lambda weight.
    pub fn uses_lambda(self) -> bool {
        matches!(self, Variant::Simple | Variant::HardSimple)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                format!(
                    "unknown variant {s:?}, expected one of {}",
                    names.join(", ")
                )
            })
    }
}

/// Loss selection and hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: Variant,
    /// Temperature.
    pub tau: f64,
    /// Fraction of negatives kept by the hard variants.
    pub alpha: f64,
    /// Weight of the negative sum in the linear variants. `None` picks the
    /// balanced weight from [`LossConfig::resolved_lambda`].
    pub lambda: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Contrastive,
            tau: 0.2,
            alpha: DEFAULT_ALPHA,
            lambda: None,
        }
    }
}

impl LossConfig {
    pub fn new(variant: Variant, tau: f64) -> Self {
        Self {
            variant,
            tau,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_alpha(self.alpha)?;
        if let Some(l) = self.lambda {
            check_lambda(l)?;
        }
        Ok(())
    }

    /// Lambda for a batch of `n` anchors.
    ///
    /// Unset, it balances the total negative weight against the positive:
    /// `1/(n-1)` for `Simple` (the direction of the large-temperature limit)
    /// and `1/K` for `HardSimple`, where `K` is the number of kept negatives.
    pub fn resolved_lambda(&self, n: usize) -> f64 {
        if let Some(l) = self.lambda {
            return l;
        }
        let m = n.saturating_sub(1).max(1);
        match self.variant {
            Variant::HardSimple => 1.0 / hard_count(self.alpha, m) as f64,
            _ => 1.0 / m as f64,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// Per-anchor loss values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub per_anchor: Vec<f64>,
    pub mean: f64,
}

impl LossResult {
    fn from_values(per_anchor: Vec<f64>) -> Self {
        let mean = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
        Self { per_anchor, mean }
    }
}

/// `dL(x_i)/ds[i][j]` for every entry of the similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    pub dl_ds: Matrix,
}

impl GradientMatrix {
    pub fn n(&self) -> usize {
        self.dl_ds.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dl_ds.get(i, j)
    }
}

/// Number of negatives kept at quantile `alpha` out of `m`: `ceil(alpha·m)`, at least 1.
///
/// Products that land within rounding distance of an integer are snapped to it,
/// so `0.1 · 30` keeps 3 rather than 4.
pub fn hard_count(alpha: f64, m: usize) -> usize {
    let x = alpha * m as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, m.max(1))
}

/// Upper-`alpha` quantile of a row of negatives: the K-th largest value with
/// `K = hard_count(alpha, len)`. Every negative `>=` the threshold is kept, so
/// ties at the threshold are all included.
pub fn hard_quantile_threshold(negatives: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let k = hard_count(alpha, negatives.len());
    let mut sorted = negatives.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

fn row_threshold(row: &[f64], i: usize, alpha: f64) -> Result<f64> {
    let negs: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    hard_quantile_threshold(&negs, alpha)
}

/// Softmax pieces of one row over the positive plus every negative `>= floor`.
struct RowSoftmax {
    /// Shift-stabilized log partition, `max + ln Σ exp(x - max)`.
    log_z: f64,
    scaled_positive: f64,
}

impl RowSoftmax {
    fn loss(&self) -> f64 {
        self.log_z - self.scaled_positive
    }

    fn prob(&self, s: f64, tau: f64) -> f64 {
        (s / tau - self.log_z).exp()
    }
}

fn row_softmax(row: &[f64], i: usize, tau: f64, floor: Option<f64>) -> RowSoftmax {
    let kept = |j: usize, v: f64| j == i || floor.is_none_or(|f| v >= f);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if kept(j, v) {
            max = max.max(v / tau);
        }
    }
    let mut z = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if kept(j, v) {
            z += (v / tau - max).exp();
        }
    }
    RowSoftmax {
        log_z: max + z.ln(),
        scaled_positive: row[i] / tau,
    }
}

fn per_row<F>(s: &SimilarityMatrix, f: F) -> Result<LossResult>
where
    F: Fn(&[f64], usize) -> Result<f64>,
{
    let values = (0..s.n())
        .map(|i| f(s.row(i), i))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossResult::from_values(values))
}

/// Loss of anchor `i` given its similarity row, for any variant.
///
/// `row.len()` is the batch size N; the balanced lambda is resolved against it.
pub fn anchor_loss(row: &[f64], i: usize, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    if row.len() < 2 {
        return Err(Error::TooFewRows(row.len()));
    }
    let n = row.len();
    let tau = config.tau;
    Ok(match config.variant {
        Variant::Contrastive => row_softmax(row, i, tau, None).loss(),
        Variant::Hard => {
            let thr = row_threshold(row, i, config.alpha)?;
            row_softmax(row, i, tau, Some(thr)).loss()
        }
        Variant::Simple => simple_row(row, i, config.resolved_lambda(n), None),
        Variant::HardSimple => {
            let thr = row_threshold(row, i, config.alpha)?;
            simple_row(row, i, config.resolved_lambda(n), Some(thr))
        }
        Variant::TripletLimit => triplet_row(row, i, tau),
        Variant::TaylorLimit => taylor_row(row, i, tau),
    })
}

fn simple_row(row: &[f64], i: usize, lambda: f64, floor: Option<f64>) -> f64 {
    let neg: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| j != i && floor.is_none_or(|f| v >= f))
        .map(|(_, &v)| v)
        .sum();
    -row[i] + lambda * neg
}

fn hardest_negative(row: &[f64], i: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, &v) in row.iter().enumerate() {
        if j != i && v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn triplet_row(row: &[f64], i: usize, tau: f64) -> f64 {
    let (_, s_max) = hardest_negative(row, i);
    (s_max - row[i]).max(0.0) / tau
}

fn taylor_row(row: &[f64], i: usize, tau: f64) -> f64 {
    let n = row.len() as f64;
    let neg: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .sum();
    -((n - 1.0) / (n * tau)) * row[i] + neg / (n * tau) + n.ln()
}

/// `L(x_i) = -log( exp(s_ii/τ) / Σ_k exp(s_ik/τ) )`.
pub fn contrastive_loss(s: &SimilarityMatrix, tau: f64) -> Result<LossResult> {
    check_tau(tau)?;
    per_row(s, |row, i| Ok(row_softmax(row, i, tau, None).loss()))
}

/// Row-stochastic matrix of `P[i][j]`, the probability that anchor `i` is recognized as `j`.
pub fn recognition_probabilities(s: &SimilarityMatrix, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    let n = s.n();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let row = s.row(i);
        let sm = row_softmax(row, i, tau, None);
        for (j, &v) in row.iter().enumerate() {
            p.set(i, j, sm.prob(v, tau));
        }
    }
    Ok(p)
}

/// `L(x_i) = -s_ii + λ Σ_{j≠i} s_ij`.
pub fn simple_loss(s: &SimilarityMatrix, lambda: f64) -> Result<LossResult> {
    check_lambda(lambda)?;
    per_row(s, |row, i| Ok(simple_row(row, i, lambda, None)))
}

/// Contrastive loss whose denominator keeps the positive and only the negatives
/// at or above the anchor's upper-`alpha` quantile.
pub fn hard_contrastive_loss(s: &SimilarityMatrix, tau: f64, alpha: f64) -> Result<LossResult> {
    check_tau(tau)?;
    check_alpha(alpha)?;
    per_row(s, |row, i| {
        let thr = row_threshold(row, i, alpha)?;
        Ok(row_softmax(row, i, tau, Some(thr)).loss())
    })
}

/// Simple loss restricted to the `ceil(alpha·(N-1))` most similar negatives.
pub fn hard_simple_loss(s: &SimilarityMatrix, alpha: f64, lambda: f64) -> Result<LossResult> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    per_row(s, |row, i| {
        let thr = row_threshold(row, i, alpha)?;
        Ok(simple_row(row, i, lambda, Some(thr)))
    })
}

/// `(1/τ)·max(s_max - s_ii, 0)`: the contrastive loss as τ → 0⁺.
pub fn limit_triplet(s: &SimilarityMatrix, tau: f64) -> Result<LossResult> {
    check_tau(tau)?;
    per_row(s, |row, i| Ok(triplet_row(row, i, tau)))
}

/// First-order expansion of the contrastive loss as τ → ∞:
/// `-((N-1)/(Nτ))·s_ii + (1/(Nτ))·Σ_{k≠i} s_ik + log N`.
pub fn limit_taylor(s: &SimilarityMatrix, tau: f64) -> Result<LossResult> {
    check_tau(tau)?;
    per_row(s, |row, i| Ok(taylor_row(row, i, tau)))
}

/// Evaluates whichever variant `config` selects.
pub fn evaluate(s: &SimilarityMatrix, config: &LossConfig) -> Result<LossResult> {
    config.validate()?;
    let lambda = config.resolved_lambda(s.n());
    match config.variant {
        Variant::Contrastive => contrastive_loss(s, config.tau),
        Variant::Simple => simple_loss(s, lambda),
        Variant::Hard => hard_contrastive_loss(s, config.tau, config.alpha),
        Variant::HardSimple => hard_simple_loss(s, config.alpha, lambda),
        Variant::TripletLimit => limit_triplet(s, config.tau),
        Variant::TaylorLimit => limit_taylor(s, config.tau),
    }
}

/// Writes `dL(x_i)/ds[i][·]` for one anchor into `out`.
pub fn anchor_gradient(row: &[f64], i: usize, config: &LossConfig, out: &mut [f64]) -> Result<()> {
    config.validate()?;
    let n = row.len();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    debug_assert_eq!(out.len(), n);
    out.iter_mut().for_each(|g| *g = 0.0);
    let tau = config.tau;
    match config.variant {
        Variant::Contrastive | Variant::Hard => {
            let floor = if config.variant == Variant::Hard {
                Some(row_threshold(row, i, config.alpha)?)
            } else {
                None
            };
            let sm = row_softmax(row, i, tau, floor);
            let mut negative_mass = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if j != i && floor.is_none_or(|f| v >= f) {
                    let p = sm.prob(v, tau);
                    negative_mass += p;
                    out[j] = p / tau;
                }
            }
            out[i] = -negative_mass / tau;
        }
        Variant::Simple | Variant::HardSimple => {
            let lambda = config.resolved_lambda(n);
            let floor = if config.variant == Variant::HardSimple {
                Some(row_threshold(row, i, config.alpha)?)
            } else {
                None
            };
            for (j, &v) in row.iter().enumerate() {
                if j != i && floor.is_none_or(|f| v >= f) {
                    out[j] = lambda;
                }
            }
            out[i] = -1.0;
        }
        Variant::TripletLimit => {
            let (j, s_max) = hardest_negative(row, i);
            if s_max > row[i] {
                out[i] = -1.0 / tau;
                out[j] = 1.0 / tau;
            }
        }
        Variant::TaylorLimit => {
            let nf = n as f64;
            for (j, g) in out.iter_mut().enumerate() {
                *g = if j == i {
                    -(nf - 1.0) / (nf * tau)
                } else {
                    1.0 / (nf * tau)
                };
            }
        }
    }
    Ok(())
}

/// Closed-form gradients of every anchor loss with respect to the similarities.
///
/// Entries for negatives outside a variant's denominator are exactly zero.
pub fn loss_gradients(s: &SimilarityMatrix, config: &LossConfig) -> Result<GradientMatrix> {
    config.validate()?;
    let n = s.n();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        anchor_gradient(s.row(i), i, config, g.row_mut(i))?;
    }
    Ok(GradientMatrix { dl_ds: g })
}

/// Chains similarity gradients through `s = anchors · keysᵀ` without any projection:
/// returns `(G · keys, Gᵀ · anchors)`.
pub fn chain_to_features(
    grad: &GradientMatrix,
    anchors: &Matrix,
    keys: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let g = &grad.dl_ds;
    let da = g.matmul(keys)?;
    let mut dk = Matrix::zeros(keys.rows(), keys.cols());
    for i in 0..g.rows() {
        let a = anchors.row(i);
        for j in 0..g.cols() {
            let w = g.get(i, j);
            if w != 0.0 {
                axpy(w, a, dk.row_mut(j));
            }
        }
    }
    Ok((da, dk))
}

/// Gradients of the summed loss with respect to both views, each row projected
/// onto the tangent space of the sphere at its own feature row.
pub fn feature_gradients(batch: &FeatureBatch, config: &LossConfig) -> Result<(Matrix, Matrix)> {
    let s = similarity_matrix(batch)?;
    let grad = loss_gradients(&s, config)?;
    let (mut da, mut dk) = chain_to_features(&grad, batch.anchors(), batch.keys())?;
    for i in 0..batch.len() {
        project_tangent(da.row_mut(i), batch.anchors().row(i));
        project_tangent(dk.row_mut(i), batch.keys().row(i));
    }
    Ok((da, dk))
}
