//! Synthetic labeled data on the hypersphere.
//!
//! Classes are von Mises–Fisher clusters around uniformly drawn centers, and
//! augmentation is simulated by drawing fresh vMF views around each instance.
//!
//! Randomness comes from ChaCha8 generators keyed by `(seed, purpose)`, where the
//! purpose is one of the fixed [`Stream`] ids, and positioned on the ChaCha
//! stream given by an index (class id, training step, ...). The same
//! `(seed, purpose, index)` always yields the same sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{axpy, dot, norm, normalize_in_place, FeatureBatch, Matrix};

/// Proposals allowed per sample before the rejection step gives up.
pub const MAX_REJECTIONS: usize = 1000;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Augment = 2,
    Optimizer = 3,
    Eval = 4,
}

/// ChaCha8 generator keyed by the seed and stream purpose, on ChaCha stream `index`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Von Mises–Fisher distribution on the unit sphere in `mu.len()` dimensions.
#[derive(Debug, Clone)]
pub struct VonMisesFisher {
    mu: Vec<f64>,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Option<Beta<f64>>,
}

impl VonMisesFisher {
    pub fn new(mu: &[f64], kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "vMF needs dimension >= 2, got {}",
                mu.len()
            )));
        }
        let n = norm(mu);
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidDirection(n));
        }
        if !(kappa >= 0.0) {
            return Err(Error::InvalidConcentration(kappa));
        }
        let dm1 = (mu.len() - 1) as f64;
        let (b, x0, c, beta) = if kappa.is_infinite() {
            (0.0, 1.0, f64::INFINITY, None)
        } else {
            // rationalized form avoids cancellation at large kappa
            let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
            let x0 = (1.0 - b) / (1.0 + b);
            let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
            let beta = Beta::new(dm1 / 2.0, dm1 / 2.0)
                .map_err(|e| Error::InvalidConfig(format!("beta proposal: {e}")))?;
            (b, x0, c, Some(beta))
        };
        Ok(Self {
            mu: mu.to_vec(),
            kappa,
            b,
            x0,
            c,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Wood's rejection step for the component along `mu`.
    fn sample_w<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let Some(beta) = &self.beta else {
            return Ok(1.0);
        };
        let dm1 = (self.dim() - 1) as f64;
        for _ in 0..MAX_REJECTIONS {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if self.kappa * w + dm1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                return Ok(w);
            }
        }
        Err(Error::SamplerStall(MAX_REJECTIONS))
    }

    /// Draws one unit vector.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.kappa.is_infinite() {
            return Ok(self.mu.clone());
        }
        let w = self.sample_w(rng)?;
        // uniform direction on the subsphere orthogonal to mu
        let mut v = vec![0.0; self.dim()];
        for _ in 0..MAX_REJECTIONS {
            v.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
            let along = dot(&v, &self.mu);
            axpy(-along, &self.mu, &mut v);
            if normalize_in_place(&mut v) {
                let scale = (1.0 - w * w).max(0.0).sqrt();
                v.iter_mut().for_each(|x| *x *= scale);
                axpy(w, &self.mu, &mut v);
                normalize_in_place(&mut v);
                return Ok(v);
            }
        }
        Err(Error::SamplerStall(MAX_REJECTIONS))
    }
}

/// `n` vMF draws around `mu` from a generator seeded with `seed`.
pub fn sample_vmf(mu: &[f64], kappa: f64, n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = stream_rng(seed, Stream::Data, 0);
    sample_vmf_with(&mut rng, mu, kappa, n)
}

pub fn sample_vmf_with<R: rand::Rng + ?Sized>(
    rng: &mut R,
    mu: &[f64],
    kappa: f64,
    n: usize,
) -> Result<Matrix> {
    let dist = VonMisesFisher::new(mu, kappa)?;
    let mut data = Vec::with_capacity(n * mu.len());
    for _ in 0..n {
        data.extend(dist.sample(rng)?);
    }
    Matrix::new(n, mu.len(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub points_per_class: usize,
    /// Concentration of each class cluster around its center.
    pub kappa_class: f64,
    /// Concentration of the augmentation channel around each instance.
    pub kappa_aug: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            num_classes: 10,
            points_per_class: 500,
            kappa_class: 20.0,
            kappa_aug: 40.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn len(&self) -> usize {
        self.num_classes * self.points_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "dim must be >= 2, got {}",
                self.dim
            )));
        }
        if self.num_classes == 0 || self.points_per_class == 0 || self.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 points, got {} classes × {}",
                self.num_classes, self.points_per_class
            )));
        }
        if !(self.kappa_class >= 0.0) {
            return Err(Error::InvalidConcentration(self.kappa_class));
        }
        if !(self.kappa_aug >= 0.0) {
            return Err(Error::InvalidConcentration(self.kappa_aug));
        }
        Ok(())
    }
}

/// Labeled instance directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub directions: Matrix,
    pub labels: Vec<u32>,
    pub centers: Matrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }
}

/// Class centers uniform on the sphere, then `points_per_class` vMF draws per class,
/// stored class by class.
pub fn make_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let d = config.dim;
    let mut pole = vec![0.0; d];
    pole[0] = 1.0;
    let mut rng = stream_rng(config.seed, Stream::Data, 0);
    let centers = sample_vmf_with(&mut rng, &pole, 0.0, config.num_classes)?;
    let mut data = Vec::with_capacity(config.len() * d);
    let mut labels = Vec::with_capacity(config.len());
    for c in 0..config.num_classes {
        let mut rng = stream_rng(config.seed, Stream::Data, 1 + c as u64);
        let pts = sample_vmf_with(
            &mut rng,
            centers.row(c),
            config.kappa_class,
            config.points_per_class,
        )?;
        data.extend_from_slice(pts.as_slice());
        labels.extend(std::iter::repeat_n(c as u32, config.points_per_class));
    }
    Ok(Dataset {
        directions: Matrix::new(config.len(), d, data)?,
        labels,
        centers,
    })
}

/// Two independent vMF views of every row of `directions`.
///
/// `kappa_aug = +inf` copies the rows unchanged. The draws come from the
/// augmentation stream positioned at `step`, so each step sees fresh views.
pub fn augment(directions: &Matrix, kappa_aug: f64, seed: u64, step: u64) -> Result<FeatureBatch> {
    let mut rng = stream_rng(seed, Stream::Augment, step);
    let (anchors, keys) = draw_views(&mut rng, directions, kappa_aug)?;
    FeatureBatch::new(anchors, keys, None)
}

/// Pair of views drawn row by row (anchor, then key) from `rng`.
pub(crate) fn draw_views<R: rand::Rng + ?Sized>(
    rng: &mut R,
    directions: &Matrix,
    kappa_aug: f64,
) -> Result<(Matrix, Matrix)> {
    let (n, d) = directions.shape();
    if !(kappa_aug >= 0.0) {
        return Err(Error::InvalidConcentration(kappa_aug));
    }
    if kappa_aug.is_infinite() {
        return Ok((directions.clone(), directions.clone()));
    }
    let mut anchors = Vec::with_capacity(n * d);
    let mut keys = Vec::with_capacity(n * d);
    for row in directions.iter_rows() {
        let dist = VonMisesFisher::new(row, kappa_aug)?;
        anchors.extend(dist.sample(rng)?);
        keys.extend(dist.sample(rng)?);
    }
    Ok((Matrix::new(n, d, anchors)?, Matrix::new(n, d, keys)?))
}
