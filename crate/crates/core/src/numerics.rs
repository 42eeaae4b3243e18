//! Dense numeric kernels shared by every other module: matrix products, row
//! softmax, KL divergence, mean-variance normalization, pooling and
//! nearest-neighbor resampling.
//!
//! All operations are pure functions over `f64` buffers and guarantee that no
//! NaN or infinity escapes a public call. Sizes here are tiny (desk-scale
//! models), so clarity wins over BLAS-grade tricks.

use crate::error::{Error, Result};

/// Additive smoothing applied to both distributions before a KL sum, so that
/// perturbed distributions containing zeros keep the divergence finite.
pub const KL_EPSILON: f64 = 1e-9;

/// Variance below this threshold is treated as zero: mean-variance
/// normalization maps such vectors to all zeros instead of dividing by ~0.
pub const VARIANCE_EPSILON: f64 = 1e-12;

/// Tolerance on probability-row sums.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix of `f64`.
///
/// Invariant: `data.len() == rows * cols` and every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix construction",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows in matrix construction".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of range");
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of range");
        assert!(v.is_finite(), "attempted to store non-finite value");
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        assert!(r < self.rows, "row {r} out of range");
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        assert!(r < self.rows, "row {r} out of range");
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the given rows (in the given order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix::from_vec_unchecked(indices.len(), self.cols, data))
    }

    /// Copies the rectangle `[r0, r1) x [c0, c1)` into a new matrix.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Matrix> {
        if r1 > self.rows || c1 > self.cols || r0 > r1 || c0 > c1 {
            return Err(Error::Invalid(format!(
                "block [{r0}, {r1}) x [{c0}, {c1}) out of range for {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            data.extend_from_slice(&self.row(r)[c0..c1]);
        }
        Ok(Matrix::from_vec_unchecked(r1 - r0, c1 - c0, data))
    }

    pub fn transposed(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix::from_vec_unchecked(self.cols, self.rows, data)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Probability rows
// ---------------------------------------------------------------------------

/// A discrete distribution over a vocabulary: non-negative entries summing to
/// one within [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    values: Vec<f64>,
}

impl ProbabilityRow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty probability row".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probability row".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid("negative probability".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Invalid(format!(
                "probability row sums to {sum}, expected 1"
            )));
        }
        Ok(ProbabilityRow { values })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        ProbabilityRow {
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest entry; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Standard matrix product. Fails when the inner dimensions disagree, naming
/// both shapes.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for (k, &a_ik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (j, &b_kj) in b_row.iter().enumerate() {
                out_row[j] += a_ik * b_kj;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matmul result".into()));
    }
    Ok(Matrix::from_vec_unchecked(a.rows, b.cols, out))
}

/// Numerically stable softmax of one slice of logits, after dividing by
/// `scale` (callers pass `sqrt(d_k)` for attention rows).
pub(crate) fn stable_softmax(values: &[f64], scale: f64) -> Vec<f64> {
    let max = values
        .iter()
        .map(|v| v / scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v / scale - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Applies a scaled softmax to every row of `m`. Each output row is a valid
/// probability row; the map is monotone within a row.
pub fn softmax_rows(m: &Matrix, scale: f64) -> Result<Matrix> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::Invalid(format!("softmax scale must be positive, got {scale}")));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    if m.cols == 0 {
        return Err(Error::Degenerate("softmax over empty rows".into()));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let soft = stable_softmax(m.row(r), scale);
        out.row_mut(r).copy_from_slice(&soft);
    }
    Ok(out)
}

/// KL divergence `sum p ln(p/q)` in nats. Both arguments are smoothed by
/// [`KL_EPSILON`] and renormalized first, so zeros in `q` stay finite. The
/// result is clamped at 0 to absorb rounding on near-identical inputs.
pub fn kl_divergence(p: &ProbabilityRow, q: &ProbabilityRow) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_divergence", p.len(), q.len()));
    }
    let n = p.len() as f64;
    let norm = 1.0 + n * KL_EPSILON;
    let mut sum = 0.0;
    for (&pv, &qv) in p.as_slice().iter().zip(q.as_slice()) {
        let ps = (pv + KL_EPSILON) / norm;
        let qs = (qv + KL_EPSILON) / norm;
        sum += ps * (ps / qs).ln();
    }
    Ok(sum.max(0.0))
}

/// Z-scores a vector using the population standard deviation. Vectors with
/// variance below [`VARIANCE_EPSILON`] map to all zeros, so constant rows do
/// not abort batch runs.
pub fn mean_var_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Invalid(format!(
            "mean-variance normalization needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < VARIANCE_EPSILON {
        return Ok(vec![0.0; values.len()]);
    }
    let std = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Reduces an entire block to a single value: its maximum or its mean.
pub fn pool2d(block: &Matrix, mode: PoolMode) -> Result<f64> {
    if block.data.is_empty() {
        return Err(Error::Degenerate("pooling over an empty block".into()));
    }
    Ok(match mode {
        PoolMode::Max => block.max_value(),
        PoolMode::Avg => block.data.iter().sum::<f64>() / block.data.len() as f64,
    })
}

/// Two-step pooling over a (time x frequency) block: max along the frequency
/// axis of each time step, then the mean of those maxima over time.
pub fn pool_2step(block: &Matrix) -> Result<f64> {
    if block.data.is_empty() {
        return Err(Error::Degenerate("pooling over an empty block".into()));
    }
    let sum: f64 = (0..block.rows)
        .map(|r| block.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(sum / block.rows as f64)
}

/// Nearest-neighbor upsampling of a vector of length `T'` to length
/// `target >= T'`: `out[t] = v[floor(t * T' / target)]`. No new values are
/// created.
pub fn nn_upsample(values: &[f64], target: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot upsample an empty vector".into()));
    }
    if target < values.len() {
        return Err(Error::Invalid(format!(
            "upsample target {target} is shorter than the source length {}",
            values.len()
        )));
    }
    let src = values.len();
    Ok((0..target)
        .map(|t| values[(t * src / target).min(src - 1)])
        .collect())
}

// ---------------------------------------------------------------------------
