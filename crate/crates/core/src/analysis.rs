//! Diagnostics: relative penalty distribution, uniformity, tolerance,
//! local separation and kNN label purity.
//!
//! Pairwise metrics split rows into fixed-size chunks, reduce each chunk in
//! ascending order and combine the partial results in chunk order, so values do
//! not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dot, Matrix, SimilarityMatrix};

const CHUNK_ROWS: usize = 64;

/// Default kernel scale of the uniformity metric.
pub const DEFAULT_UNIFORMITY_T: f64 = 2.0;

/// Share of the total negative gradient each negative receives, with its entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyDistribution {
    pub r: Vec<f64>,
    /// Natural-log entropy of `r`.
    pub entropy: f64,
}

/// Softmax of the negatives at temperature `tau`.
///
/// The entropy is assembled as `ln(1 + Σ_{j≠max} e^{y_j}) + Σ r_j·|y_j|` with
/// `y = s/τ - max`, which keeps full relative precision even when all mass sits
/// on one negative.
pub fn penalty_distribution(negatives: &[f64], tau: f64) -> Result<PenaltyDistribution> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let (top, max) =
        negatives
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, &v)| {
                if v / tau > bv {
                    (j, v / tau)
                } else {
                    (bi, bv)
                }
            });
    let shifted: Vec<f64> = negatives.iter().map(|&v| v / tau - max).collect();
    let rest: f64 = shifted
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &y)| y.exp())
        .sum();
    let z = 1.0 + rest;
    let r: Vec<f64> = shifted.iter().map(|&y| y.exp() / z).collect();
    let spread: f64 = r.iter().zip(&shifted).map(|(p, y)| p * -y).sum();
    Ok(PenaltyDistribution {
        entropy: rest.ln_1p() + spread,
        r,
    })
}

/// Entropy of the penalty distribution at each temperature of a strictly ascending grid.
pub fn entropy_vs_tau(negatives: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
    if taus.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::NotAscending);
    }
    taus.iter()
        .map(|&t| penalty_distribution(negatives, t).map(|p| p.entropy))
        .collect()
}

/// Which pairs the uniformity expectation runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairBudget {
    /// Every ordered pair of distinct rows.
    All,
    /// `pairs` ordered pairs of distinct rows drawn uniformly with a seeded generator.
    Sampled { pairs: usize, seed: u64 },
}

/// Streaming log-sum-exp.
#[derive(Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    const EMPTY: Self = Self {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    fn push(&mut self, v: f64) {
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    fn merge(self, other: Self) -> Self {
        if other.sum == 0.0 {
            return self;
        }
        if self.sum == 0.0 {
            return other;
        }
        let max = self.max.max(other.max);
        Self {
            max,
            sum: self.sum * (self.max - max).exp() + other.sum * (other.max - max).exp(),
        }
    }

    fn value(self) -> f64 {
        self.max + self.sum.ln()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log E_{x≠y}[exp(-t·‖f(x) - f(y)‖²)]`.
///
/// This is the raw (non-positive) value; more uniform embeddings give more
/// negative numbers. Reports usually plot its negation.
pub fn uniformity(features: &Matrix, t: f64, budget: PairBudget) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!(
            "uniformity needs at least 2 points, got {n}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "uniformity t must be positive, got {t}"
        )));
    }
    match budget {
        PairBudget::All => {
            // each unordered pair stands for both orders
            let chunks: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
            let partial: Vec<LogSumExp> = chunks
                .par_iter()
                .map(|&start| {
                    let mut acc = LogSumExp::EMPTY;
                    for i in start..(start + CHUNK_ROWS).min(n) {
                        let a = features.row(i);
                        for j in (i + 1)..n {
                            acc.push(-t * squared_distance(a, features.row(j)));
                        }
                    }
                    acc
                })
                .collect();
            let total = partial.into_iter().fold(LogSumExp::EMPTY, LogSumExp::merge);
            let pairs = (n * (n - 1) / 2) as f64;
            Ok(total.value() - pairs.ln())
        }
        PairBudget::Sampled { pairs, seed } => {
            if pairs == 0 {
                return Err(Error::InvalidConfig("pair budget must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = LogSumExp::EMPTY;
            for _ in 0..pairs {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                acc.push(-t * squared_distance(features.row(i), features.row(j)));
            }
            Ok(acc.value() - (pairs as f64).ln())
        }
    }
}

/// How same-label similarities are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToleranceForm {
    /// Mean similarity over distinct pairs that share a label.
    #[default]
    SameClassMean,
    /// Sum of same-label similarities divided by the number of all distinct pairs.
    MaskedMeanAllPairs,
}

impl ToleranceForm {
    pub fn as_str(self) -> &'static str {
        match self {
            ToleranceForm::SameClassMean => "same-class-mean",
            ToleranceForm::MaskedMeanAllPairs => "masked-mean-all-pairs",
        }
    }
}

impl std::str::FromStr for ToleranceForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "same-class-mean" => Ok(ToleranceForm::SameClassMean),
            "masked-mean-all-pairs" => Ok(ToleranceForm::MaskedMeanAllPairs),
            _ => Err(format!(
                "unknown tolerance form {s:?}, expected same-class-mean or masked-mean-all-pairs"
            )),
        }
    }
}

/// Mean similarity of distinct same-label pairs.
pub fn tolerance(features: &Matrix, labels: &[u32]) -> Result<f64> {
    tolerance_with(features, labels, ToleranceForm::SameClassMean)
}

pub fn tolerance_with(features: &Matrix, labels: &[u32], form: ToleranceForm) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    // per class: Σ_{i≠j} f_i·f_j = ‖Σ f_i‖² - Σ ‖f_i‖²
    let mut classes: std::collections::BTreeMap<u32, (Vec<f64>, f64, usize)> = Default::default();
    for (row, &l) in features.iter_rows().zip(labels) {
        let entry = classes
            .entry(l)
            .or_insert_with(|| (vec![0.0; features.cols()], 0.0, 0));
        entry.0.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        entry.1 += dot(row, row);
        entry.2 += 1;
    }
    let mut pair_sum = 0.0;
    let mut pair_count = 0usize;
    for (sum, sq, count) in classes.values() {
        if *count >= 2 {
            pair_sum += dot(sum, sum) - sq;
            pair_count += count * (count - 1);
        }
    }
    if pair_count == 0 {
        return Err(Error::NoPositivePairs);
    }
    Ok(match form {
        ToleranceForm::SameClassMean => pair_sum / pair_count as f64,
        ToleranceForm::MaskedMeanAllPairs => pair_sum / (n * (n - 1)) as f64,
    })
}

/// Mean positive similarity and the mean of each rank among the largest negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSeparationStats {
    pub mean_positive: f64,
    /// Entry `j` averages every anchor's `(j+1)`-th largest negative similarity.
    pub mean_top_negatives: Vec<f64>,
}

fn top_k_desc(mut values: Vec<f64>, k: usize) -> Vec<f64> {
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        values.truncate(k);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

fn combine_local(positives: &[f64], tops: &[Vec<f64>], k: usize) -> LocalSeparationStats {
    let n = positives.len() as f64;
    let mut mean_top = vec![0.0; k];
    for t in tops {
        mean_top.iter_mut().zip(t).for_each(|(m, v)| *m += v);
    }
    mean_top.iter_mut().for_each(|m| *m /= n);
    LocalSeparationStats {
        mean_positive: positives.iter().sum::<f64>() / n,
        mean_top_negatives: mean_top,
    }
}

/// Local separation statistics of a similarity matrix.
pub fn local_separation(s: &SimilarityMatrix, k: usize) -> Result<LocalSeparationStats> {
    let n = s.n();
    check_k(k, n - 1)?;
    let tops: Vec<Vec<f64>> = (0..n).map(|i| top_k_desc(s.negatives(i), k)).collect();
    let positives: Vec<f64> = (0..n).map(|i| s.positive(i)).collect();
    Ok(combine_local(&positives, &tops, k))
}

/// Same as [`local_separation`] on `anchors · keysᵀ`, without materializing the N×N matrix.
pub fn local_separation_views(
    anchors: &Matrix,
    keys: &Matrix,
    k: usize,
) -> Result<LocalSeparationStats> {
    if anchors.shape() != keys.shape() {
        return Err(Error::ShapeMismatch(format!(
            "anchors are {:?}, keys are {:?}",
            anchors.shape(),
            keys.shape()
        )));
    }
    let n = anchors.rows();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    check_k(k, n - 1)?;
    let tops: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = anchors.row(i);
            let negs = (0..n)
                .filter(|&j| j != i)
                .map(|j| dot(a, keys.row(j)))
                .collect();
            top_k_desc(negs, k)
        })
        .collect();
    let positives: Vec<f64> = (0..n).map(|i| dot(anchors.row(i), keys.row(i))).collect();
    Ok(combine_local(&positives, &tops, k))
}

fn check_k(k: usize, max: usize) -> Result<()> {
    if k == 0 || k > max {
        Err(Error::KTooLarge { k, max })
    } else {
        Ok(())
    }
}

/// Fraction of points whose k nearest neighbours (cosine, self excluded) vote for their own label.
///
/// Neighbour ties go to the lower row index; vote ties go to the smaller label.
pub fn knn_purity(features: &Matrix, labels: &[u32], k: usize) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    check_k(k, n - 1)?;
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = features.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(a, features.row(j)), j))
                .collect();
            let order =
                |x: &(f64, usize), y: &(f64, usize)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, order);
                cand.truncate(k);
            }
            let mut votes: Vec<u32> = cand.iter().map(|&(_, j)| labels[j]).collect();
            votes.sort_unstable();
            let mut best = (0usize, u32::MAX);
            let mut run = 0usize;
            for (idx, &l) in votes.iter().enumerate() {
                run += 1;
                if idx + 1 == votes.len() || votes[idx + 1] != l {
                    if run > best.0 {
                        best = (run, l);
                    }
                    run = 0;
                }
            }
            usize::from(best.1 == labels[i])
        })
        .sum();
    Ok(hits as f64 / n as f64)
}
