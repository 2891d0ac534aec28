//! Randomized numerical suites: finite-difference gradients, the gradient
//! ratio identity, penalty-entropy monotonicity, both temperature limits and
//! the degenerate hard loss.
//!
//! Every suite draws its instances from a seeded generator and reports the
//! worst observed value next to the tolerance it was held to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::penalty_distribution;
use crate::error::Result;
use crate::losses::{
    anchor_loss, contrastive_loss, hard_contrastive_loss, limit_taylor, loss_gradients, LossConfig,
    Variant,
};
use crate::sphere::{Matrix, SimilarityMatrix};

/// Temperatures of the gradient suites.
pub const GRADIENT_TAUS: [f64; 5] = [0.05, 0.07, 0.2, 0.5, 1.0];
/// Ascending grid of the entropy suite.
pub const ENTROPY_TAUS: [f64; 8] = [0.05, 0.07, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
pub const GRADIENT_VARIANTS: [Variant; 4] = [
    Variant::Contrastive,
    Variant::Simple,
    Variant::Hard,
    Variant::TaylorLimit,
];
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckConfig {
    pub seed: u64,
    pub tau_small: f64,
    pub tau_large: f64,
    /// Random matrices per gradient suite.
    pub gradient_instances: usize,
    /// Added to every analytic gradient entry before comparison; a negative control.
    pub perturb_gradients: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau_small: 1e-3,
            tau_large: 100.0,
            gradient_instances: 200,
            perturb_gradients: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Worst value observed across all instances.
    pub observed: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub passed: bool,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<22} worst {:.3e} (tolerance {:.1e}, {} instances)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.tolerance,
            self.instances
        )
    }
}

/// Random square matrix with entries uniform in [-1, 1].
pub fn random_similarity(n: usize, rng: &mut impl Rng) -> SimilarityMatrix {
    let data = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    SimilarityMatrix::new(Matrix::new(n, n, data).expect("square")).expect("entries in range")
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn gradient_instances(config: &CheckConfig) -> Vec<SimilarityMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.gradient_instances)
        .map(|_| {
            let n = rng.random_range(4..=64);
            random_similarity(n, &mut rng)
        })
        .collect()
}

fn central_difference(row: &mut [f64], i: usize, j: usize, cfg: &LossConfig) -> Result<f64> {
    let orig = row[j];
    row[j] = orig + FD_STEP;
    let up = anchor_loss(row, i, cfg)?;
    row[j] = orig - FD_STEP;
    let down = anchor_loss(row, i, cfg)?;
    row[j] = orig;
    Ok((up - down) / (2.0 * FD_STEP))
}

/// Analytic similarity gradients against central differences.
pub fn finite_difference(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for s in gradient_instances(config) {
        let n = s.n();
        for &tau in &GRADIENT_TAUS {
            for variant in GRADIENT_VARIANTS {
                let cfg = LossConfig::new(variant, tau);
                let g = loss_gradients(&s, &cfg)?;
                for i in 0..n {
                    let mut row = s.row(i).to_vec();
                    for j in 0..n {
                        let fd = central_difference(&mut row, i, j, &cfg)?;
                        let a = g.get(i, j) + config.perturb_gradients;
                        worst = worst.max(relative_error(a, fd));
                    }
                }
                count += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: "finite-difference",
        observed: worst,
        tolerance: 1e-6,
        instances: count,
        passed: worst < 1e-6,
    })
}

/// Per row, the positive gradient magnitude equals the summed negative magnitudes.
pub fn ratio_identity(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for s in gradient_instances(config) {
        let n = s.n();
        for &tau in &GRADIENT_TAUS {
            for variant in GRADIENT_VARIANTS {
                let g = loss_gradients(&s, &LossConfig::new(variant, tau))?;
                for i in 0..n {
                    let pos = (g.get(i, i) + config.perturb_gradients).abs();
                    let neg: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (g.get(i, j) + config.perturb_gradients).abs())
                        .sum();
                    worst = worst.max((pos - neg).abs());
                }
                count += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: "ratio-identity",
        observed: worst,
        tolerance: 1e-10,
        instances: count,
        passed: worst < 1e-10,
    })
}

/// Penalty entropy strictly increases along an ascending temperature grid and
/// equals `ln M` on constant rows. `observed` counts violations plus the worst
/// constant-row error.
pub fn entropy_monotonicity(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut violations = 0usize;
    let mut worst_flat = 0.0f64;
    let rows = 1000;
    for _ in 0..rows {
        let m = rng.random_range(2..=64);
        let neg: Vec<f64> = loop {
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if v.iter().any(|&x| x != v[0]) {
                break v;
            }
        };
        let h: Vec<f64> = ENTROPY_TAUS
            .iter()
            .map(|&t| penalty_distribution(&neg, t).map(|p| p.entropy))
            .collect::<Result<_>>()?;
        violations += h.windows(2).filter(|w| !(w[1] > w[0])).count();

        let flat = vec![rng.random_range(-1.0..=1.0); m];
        for &t in &ENTROPY_TAUS {
            let e = penalty_distribution(&flat, t)?.entropy;
            worst_flat = worst_flat.max((e - (m as f64).ln()).abs());
        }
    }
    Ok(CheckOutcome {
        name: "entropy-monotonicity",
        observed: violations as f64 + worst_flat,
        tolerance: 1e-12,
        instances: rows,
        passed: violations == 0 && worst_flat <= 1e-12,
    })
}

/// `|τ·L_contrastive − max(s_max − s_ii, 0)|` at a small temperature, on rows
/// whose largest entry leads the runner-up by at least 0.05.
pub fn small_tau_limit(config: &CheckConfig) -> Result<CheckOutcome> {
    let tau = config.tau_small;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11);
    let mut worst = 0.0f64;
    let mut rows = 0;
    while rows < 1000 {
        let n = rng.random_range(4..=64);
        let s = random_similarity(n, &mut rng);
        let c = contrastive_loss(&s, tau)?;
        for i in 0..n {
            let mut sorted = s.row(i).to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[0] - sorted[1] < 0.05 {
                continue;
            }
            let hardest = s.negatives(i).into_iter().fold(f64::NEG_INFINITY, f64::max);
            let triplet = (hardest - s.positive(i)).max(0.0);
            worst = worst.max((tau * c.per_anchor[i] - triplet).abs());
            rows += 1;
        }
    }
    Ok(CheckOutcome {
        name: "small-tau-limit",
        observed: worst,
        tolerance: 1e-4,
        instances: rows,
        passed: worst < 1e-4,
    })
}

/// Contrastive minus Taylor loss shrinks at least threefold when τ doubles, and
/// is below 1e-3 at the base temperature. `observed` is the worst of
/// `err(τ)` and `3·err(2τ) − err(τ)`, both of which must stay below the
/// absolute bound and zero respectively.
pub fn large_tau_limit(config: &CheckConfig) -> Result<CheckOutcome> {
    let tau = config.tau_large;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1a46e);
    let mut worst_abs = 0.0f64;
    let mut worst_decay = f64::NEG_INFINITY;
    let instances = 200;
    for _ in 0..instances {
        let n = rng.random_range(4..=64);
        let s = random_similarity(n, &mut rng);
        let err = |t: f64| -> Result<Vec<f64>> {
            let c = contrastive_loss(&s, t)?;
            let l = limit_taylor(&s, t)?;
            Ok(c.per_anchor
                .iter()
                .zip(&l.per_anchor)
                .map(|(a, b)| (a - b).abs())
                .collect())
        };
        let (e1, e2) = (err(tau)?, err(2.0 * tau)?);
        for (a, b) in e1.iter().zip(&e2) {
            worst_abs = worst_abs.max(*a);
            worst_decay = worst_decay.max(3.0 * b - a);
        }
    }
    Ok(CheckOutcome {
        name: "large-tau-limit",
        observed: worst_abs,
        tolerance: 1e-3,
        instances,
        passed: worst_abs < 1e-3 && worst_decay <= 0.0,
    })
}

/// With α = 1 the hard loss keeps every negative and equals the contrastive loss.
pub fn hard_degeneracy(config: &CheckConfig) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4a2d);
    let mut worst = 0.0f64;
    let instances = 100;
    for _ in 0..instances {
        let n = rng.random_range(4..=64);
        let tau = rng.random_range(0.05..=1.0);
        let s = random_similarity(n, &mut rng);
        let c = contrastive_loss(&s, tau)?;
        let h = hard_contrastive_loss(&s, tau, 1.0)?;
        for (a, b) in c.per_anchor.iter().zip(&h.per_anchor) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckOutcome {
        name: "hard-degeneracy",
        observed: worst,
        tolerance: 1e-12,
        instances,
        passed: worst <= 1e-12,
    })
}

pub fn run_all(config: &CheckConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        finite_difference(config)?,
        ratio_identity(config)?,
        entropy_monotonicity(config)?,
        small_tau_limit(config)?,
        large_tau_limit(config)?,
        hard_degeneracy(config)?,
    ])
}
