//! Cross-attention tensors: per-layer/per-head recording, subset
//! aggregation, sentinel stripping, and frame-wise normalization.
//!
//! An [`AttentionTensor`] stores one probability row per (layer, head,
//! output row). Output rows follow the decoder's query positions: row `j`
//! holds the attention computed while the decoder input at position `j` was
//! `tokens[j]`, i.e. the step that predicts `tokens[j + 1]`. Row 0 is the
//! beginning-of-sequence row and, when generation terminated, the last row is
//! the end-of-sequence row; both are dropped by [`strip_sentinels`].

use crate::error::{Error, Result};
use crate::model::DecodeTrace;
use crate::numerics::{self, Matrix, PROB_SUM_TOLERANCE};

/// 4-D array of cross-attention scores, `layers x heads x out_len x enc_len`.
///
/// Every (layer, head, row) slice is a probability distribution over encoder
/// steps: entries in [0, 1] summing to 1 within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    out_len: usize,
    enc_len: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn zeros(layers: usize, heads: usize, out_len: usize, enc_len: usize) -> Self {
        AttentionTensor {
            layers,
            heads,
            out_len,
            enc_len,
            data: vec![0.0; layers * heads * out_len * enc_len],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn enc_len(&self) -> usize {
        self.enc_len
    }

    fn offset(&self, layer: usize, head: usize, row: usize) -> usize {
        ((layer * self.heads + head) * self.out_len + row) * self.enc_len
    }

    pub fn row(&self, layer: usize, head: usize, row: usize) -> &[f64] {
        assert!(layer < self.layers && head < self.heads && row < self.out_len);
        let o = self.offset(layer, head, row);
        &self.data[o..o + self.enc_len]
    }

    /// Stores one attention row, validating that it is a probability row.
    pub fn set_row(&mut self, layer: usize, head: usize, row: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.enc_len {
            return Err(Error::shape("attention row", self.enc_len, values.len()));
        }
        let sum: f64 = values.iter().sum();
        if values.iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return Err(Error::Invalid("attention row entries must lie in [0, 1]".into()));
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Invalid(format!(
                "attention row sums to {sum}, expected 1"
            )));
        }
        let o = self.offset(layer, head, row);
        self.data[o..o + self.enc_len].copy_from_slice(values);
        Ok(())
    }
}

/// A subset of (layer, head) pairs to average over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationSpec {
    pairs: Vec<(usize, usize)>,
}

impl AggregationSpec {
    /// Builds a subset from explicit pairs. Duplicates are collapsed; an
    /// empty subset is rejected.
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        pairs.dedup();
        if pairs.is_empty() {
            return Err(Error::Invalid("empty aggregation subset".into()));
        }
        Ok(AggregationSpec { pairs })
    }

    pub fn single(layer: usize, head: usize) -> Self {
        AggregationSpec {
            pairs: vec![(layer, head)],
        }
    }

    /// All heads of one layer.
    pub fn layer(layer: usize, heads: usize) -> Result<Self> {
        Self::new((0..heads).map(|h| (layer, h)).collect())
    }

    /// One head across all layers.
    pub fn head(head: usize, layers: usize) -> Result<Self> {
        Self::new((0..layers).map(|l| (l, head)).collect())
    }

    /// Every (layer, head) pair.
    pub fn full(layers: usize, heads: usize) -> Result<Self> {
        let mut pairs = Vec::with_capacity(layers * heads);
        for l in 0..layers {
            for h in 0..heads {
                pairs.push((l, h));
            }
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// An `out_len x enc_len` attention (or attention-derived) map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    values: Matrix,
}

impl AttentionMap {
    pub fn new(values: Matrix) -> Self {
        AttentionMap { values }
    }

    pub fn out_len(&self) -> usize {
        self.values.rows()
    }

    pub fn enc_len(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }
}

/// Entrywise mean of the attention matrices over the subset. Singleton
/// subsets select one head's matrix; the full subset gives the global mean.
pub fn aggregate(tensor: &AttentionTensor, subset: &AggregationSpec) -> Result<AttentionMap> {
    for &(l, h) in subset.pairs() {
        if l >= tensor.layers || h >= tensor.heads {
            return Err(Error::Invalid(format!(
                "subset entry ({l}, {h}) out of range for {}x{} tensor",
                tensor.layers, tensor.heads
            )));
        }
    }
    let mut out = Matrix::zeros(tensor.out_len, tensor.enc_len);
    let weight = 1.0 / subset.pairs().len() as f64;
    for &(l, h) in subset.pairs() {
        for i in 0..tensor.out_len {
            let src = tensor.row(l, h, i);
            let dst = out.row_mut(i);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * weight;
            }
        }
    }
    Ok(AttentionMap::new(out))
}

/// Indices of rows whose token is neither the beginning nor the end
/// sentinel.
pub fn content_row_indices(tokens: &[u32], bos_id: u32, eos_id: u32) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != bos_id && t != eos_id)
        .map(|(i, _)| i)
        .collect()
}

/// Drops the rows of `map` whose query token is a sentinel, identified by
/// token id from the trace. Traces that hit the length cutoff have no
/// end-of-sequence row, so only the first row is dropped.
pub fn strip_sentinels(map: &AttentionMap, trace: &DecodeTrace) -> Result<AttentionMap> {
    if map.out_len() != trace.tokens.len() {
        return Err(Error::shape(
            "strip_sentinels",
            format!("{} map rows", map.out_len()),
            format!("{} trace tokens", trace.tokens.len()),
        ));
    }
    let keep = trace.content_rows();
    if keep.is_empty() {
        return Err(Error::Degenerate(
            "stripping sentinels would leave an empty map".into(),
        ));
    }
    Ok(AttentionMap::new(map.values().select_rows(&keep)?))
}

/// Axis choice for attention-map normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationAxis {
    /// Normalize each encoder-frame column across output tokens. This is the
    /// default: it removes per-frame offsets such as attention sinks parked
    /// on particular encoder steps.
    #[default]
    PerFrame,
    /// Normalize each output-token row across encoder frames instead.
    PerToken,
}

/// Mean-variance normalization of each encoder-frame column (the token axis),
/// using the degenerate-to-zero rule for constant or length-1 columns.
pub fn normalize_framewise(map: &AttentionMap) -> Result<AttentionMap> {
    normalize_with_axis(map, NormalizationAxis::PerFrame)
}

pub fn normalize_with_axis(map: &AttentionMap, axis: NormalizationAxis) -> Result<AttentionMap> {
    let m = map.values();
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(rows, cols);
    match axis {
        NormalizationAxis::PerFrame => {
            for c in 0..cols {
                let col: Vec<f64> = (0..rows).map(|r| m.get(r, c)).collect();
                let normed = if col.len() < 2 {
                    vec![0.0; col.len()]
                } else {
                    numerics::mean_var_normalize(&col)?
                };
                for (r, v) in normed.into_iter().enumerate() {
                    out.set(r, c, v);
                }
            }
        }
        NormalizationAxis::PerToken => {
            for r in 0..rows {
                let normed = if cols < 2 {
                    vec![0.0; cols]
                } else {
                    numerics::mean_var_normalize(m.row(r))?
                };
                out.row_mut(r).copy_from_slice(&normed);
            }
        }
    }
    Ok(AttentionMap::new(out))
}

// ---------------------------------------------------------------------------
// Text exports
// ---------------------------------------------------------------------------

/// Serializes a tensor in the `XATT1` text layout: a header line with the
/// four dimensions, then one line per (layer, head, row) in lexicographic
/// order.
pub fn tensor_to_string(t: &AttentionTensor) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "XATT1 {} {} {} {}\n",
        t.layers, t.heads, t.out_len, t.enc_len
    ));
    for l in 0..t.layers {
        for h in 0..t.heads {
            for i in 0..t.out_len {
                let row = t.row(l, h, i);
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
    }
    out
}

pub fn tensor_from_string(text: &str, source: &str) -> Result<AttentionTensor> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(source, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "XATT1" {
        return Err(Error::parse(source, "expected header 'XATT1 L H I T'"));
    }
    let dims: Vec<usize> = fields[1..]
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::parse(source, format!("bad dimension '{f}'")))
        })
        .collect::<Result<_>>()?;
    let (layers, heads, out_len, enc_len) = (dims[0], dims[1], dims[2], dims[3]);
    let mut tensor = AttentionTensor::zeros(layers, heads, out_len, enc_len);
    for l in 0..layers {
        for h in 0..heads {
            for i in 0..out_len {
                let line = lines.next().ok_or_else(|| {
                    Error::parse(source, format!("missing row (layer {l}, head {h}, row {i})"))
                })?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|f| {
                        f.parse::<f64>()
                            .map_err(|_| Error::parse(source, format!("bad float '{f}'")))
                    })
                    .collect::<Result<_>>()?;
                tensor.set_row(l, h, i, &row)?;
            }
        }
    }
    Ok(tensor)
}

/// Attention-map CSV: plain numeric rows, one per output token.
pub fn map_to_csv(map: &AttentionMap) -> String {
    let m = map.values();
    let mut out = String::new();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn map_from_csv(text: &str, source: &str) -> Result<AttentionMap> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(source, format!("bad float on line {}", idx + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(source, "no rows"));
    }
    Ok(AttentionMap::new(Matrix::from_rows(&rows)?))
}

// ---------------------------------------------------------------------------
