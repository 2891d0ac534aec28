//! Dense row-major matrices, unit-sphere vector algebra and the similarity kernel.
//!
//! Features live on the unit hypersphere. A [`FeatureBatch`] pairs an anchor view
//! and a key view row by row, and [`similarity_matrix`] produces the N×N matrix of
//! anchor/key dot products whose diagonal holds the positive pairs.

use crate::error::{Error, Result};

/// Tolerance on unit norm accepted by [`FeatureBatch::new`].
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Slack allowed on similarity entries beyond [-1, 1].
pub const SIMILARITY_TOL: f64 = 1e-9;

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-column matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · otherᵀ`; entry (i, j) is the dot product of row i of `self` and row j of `other`.
    pub fn mul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}×{} times transpose of {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self · other` for an `n×n` `self` and `n×d` `other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}×{} times {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let w = self.data[i * self.cols + k];
                if w == 0.0 {
                    continue;
                }
                axpy(w, other.row(k), dst);
            }
        }
        Ok(out)
    }
}

/// Dot product with ascending-index summation.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Scales `v` to unit length in place. Returns `false` (leaving `v` untouched) for a zero vector.
pub fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Removes the component of `v` along the unit vector `point`, leaving the tangent part.
#[inline]
pub fn project_tangent(v: &mut [f64], point: &[f64]) {
    let c = dot(v, point);
    axpy(-c, point, v);
}

/// Scales every row of `m` to unit L2 norm.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows {
        if !normalize_in_place(out.row_mut(i)) {
            return Err(Error::ZeroRow(i));
        }
    }
    Ok(out)
}

fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NotUnitNorm { row: i, norm: n });
        }
    }
    Ok(())
}

/// Two aligned views of N instances on the unit sphere, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    anchors: Matrix,
    keys: Matrix,
    labels: Option<Vec<u32>>,
}

impl FeatureBatch {
    pub fn new(anchors: Matrix, keys: Matrix, labels: Option<Vec<u32>>) -> Result<Self> {
        if anchors.shape() != keys.shape() {
            return Err(Error::ShapeMismatch(format!(
                "anchors are {}×{}, keys are {}×{}",
                anchors.rows, anchors.cols, keys.rows, keys.cols
            )));
        }
        if anchors.rows < 2 {
            return Err(Error::TooFewRows(anchors.rows));
        }
        if let Some(l) = &labels {
            if l.len() != anchors.rows {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    anchors.rows
                )));
            }
        }
        check_unit_rows(&anchors)?;
        check_unit_rows(&keys)?;
        Ok(Self {
            anchors,
            keys,
            labels,
        })
    }

    /// A batch whose key view is the anchor view itself.
    pub fn self_paired(features: Matrix, labels: Option<Vec<u32>>) -> Result<Self> {
        let keys = features.clone();
        Self::new(features, keys, labels)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.anchors.rows
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols
    }
}

/// N×N matrix of anchor/key similarities; the diagonal holds the positive pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    /// Wraps a square matrix whose entries lie in [-1, 1] (up to [`SIMILARITY_TOL`]).
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows != values.cols {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix must be square, got {}×{}",
                values.rows, values.cols
            )));
        }
        if values.rows < 2 {
            return Err(Error::TooFewRows(values.rows));
        }
        for i in 0..values.rows {
            for (j, &v) in values.row(i).iter().enumerate() {
                if !(v.abs() <= 1.0 + SIMILARITY_TOL) {
                    return Err(Error::SimilarityOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.rows
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn positive(&self, i: usize) -> f64 {
        self.values.get(i, i)
    }

    /// Off-diagonal entries of row `i`, in ascending column order.
    pub fn negatives(&self, i: usize) -> Vec<f64> {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect()
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }
}

/// `s[i][j] = anchors[i] · keys[j]`.
pub fn similarity_matrix(batch: &FeatureBatch) -> Result<SimilarityMatrix> {
    let values = batch.anchors.mul_transpose(&batch.keys)?;
    // unit rows guarantee the Cauchy–Schwarz bound, so skip the range scan
    Ok(SimilarityMatrix { values })
}
