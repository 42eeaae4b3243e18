//! The comparison layer: reduction of input saliency onto the encoder-step
//! grid, flattened Pearson correlation against attention maps, layer/head
//! correlation tables, and the deletion faithfulness metric with a
//! token-error-rate scorer.

use crate::attention::{aggregate, normalize_framewise, strip_sentinels, AggregationSpec, AttentionTensor};
use crate::attribution::InputSaliency;
use crate::error::{Error, Result};
use crate::model::{decode, encode, DecodeTrace, EncoderStates, ModelWeights, Spectrogram};
use crate::numerics::{nn_upsample, pool2d, pool_2step, Matrix, PoolMode};

// ---------------------------------------------------------------------------
// Saliency-to-grid aggregation
// ---------------------------------------------------------------------------

/// Reduction applied to each (time-window x frequency) block when compressing
/// input saliency to the encoder-step grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    /// Mean over the whole block.
    Avg2d,
    /// Frequency max per frame, then mean over the window.
    Max1dAvg1d,
    /// Max over the whole block. Pipeline default: smoothing reductions blur
    /// the well-localized frequency bands that carry most of the relevance.
    #[default]
    Max2d,
}

impl AggregationMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "avg2d" => Ok(AggregationMode::Avg2d),
            "2step" | "max1d_avg1d" => Ok(AggregationMode::Max1dAvg1d),
            "max2d" => Ok(AggregationMode::Max2d),
            other => Err(Error::Invalid(format!(
                "unknown aggregation mode '{other}' (expected avg2d, 2step or max2d)"
            ))),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationMode::Avg2d => "avg2d",
            AggregationMode::Max1dAvg1d => "2step",
            AggregationMode::Max2d => "max2d",
        })
    }
}

/// Compresses an `out_len x frames x bins` saliency volume to
/// `out_len x enc_steps` by reducing each time-window x frequency block with
/// the selected mode. Windows have width `ceil(frames / enc_steps)`; the last
/// may be ragged.
pub fn aggregate_saliency_to_grid(
    sm: &InputSaliency,
    enc_steps: usize,
    mode: AggregationMode,
) -> Result<Matrix> {
    let frames = sm.frames();
    if enc_steps == 0 || enc_steps > frames {
        return Err(Error::Invalid(format!(
            "cannot aggregate {frames} frames into {enc_steps} windows"
        )));
    }
    let window = frames.div_ceil(enc_steps);
    let bins = sm.bins();
    let mut grid = Matrix::zeros(sm.out_len(), enc_steps);
    for pos in 0..sm.out_len() {
        let slice = sm.token_slice(pos);
        for u in 0..enc_steps {
            let t0 = u * window;
            let t1 = ((u + 1) * window).min(frames);
            if t0 >= t1 {
                return Err(Error::Invalid(format!(
                    "window {u} is empty: {frames} frames cannot fill {enc_steps} windows of {window}"
                )));
            }
            let block = Matrix::from_vec_unchecked(
                t1 - t0,
                bins,
                slice[t0 * bins..t1 * bins].to_vec(),
            );
            let value = match mode {
                AggregationMode::Avg2d => pool2d(&block, PoolMode::Avg)?,
                AggregationMode::Max2d => pool2d(&block, PoolMode::Max)?,
                AggregationMode::Max1dAvg1d => pool_2step(&block)?,
            };
            grid.set(pos, u, value);
        }
    }
    Ok(grid)
}

/// Min-max rescaling of each row to [0, 1]; constant rows map to zero.
pub fn minmax_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        crate::attribution::normalize_slice_minmax(out.row_mut(r));
    }
    out
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

/// Flattened Pearson correlation of two equally-shaped matrices: both are
/// vectorized, centered, and the normalized dot product is returned.
/// Constant inputs are a degenerate-result error.
pub fn pearson(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "pearson",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    pearson_slices(a.data(), b.data())
}

pub fn pearson_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("pearson", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least 2 values".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Degenerate(
            "pearson is undefined for constant inputs".into(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

// ---------------------------------------------------------------------------
// Correlation report
// ---------------------------------------------------------------------------

/// Layer/head correlation table: one cell per single (layer, head) pair,
/// margins for head-averaged attention per layer and layer-averaged
/// attention per head, and the global-average cell. Degenerate correlations
/// are absent rather than zero so that sample averaging is not biased.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub layers: usize,
    pub heads: usize,
    /// Row-major `layers x heads` singleton-subset correlations.
    pub cells: Vec<Option<f64>>,
    /// Per layer: correlation of the attention averaged over that layer's heads.
    pub per_layer: Vec<Option<f64>>,
    /// Per head: correlation of the attention averaged over layers at that head.
    pub per_head: Vec<Option<f64>>,
    /// Correlation of the attention averaged over every layer and head.
    pub global: Option<f64>,
    /// Number of samples averaged into this table.
    pub samples: usize,
}

impl CorrelationReport {
    pub fn cell(&self, layer: usize, head: usize) -> Option<f64> {
        self.cells[layer * self.heads + head]
    }
}

fn map_correlation(
    att: &AttentionTensor,
    spec: &AggregationSpec,
    sm_grid: &Matrix,
    trace: &DecodeTrace,
) -> Result<Option<f64>> {
    let map = aggregate(att, spec)?;
    let stripped = strip_sentinels(&map, trace)?;
    let normalized = normalize_framewise(&stripped)?;
    match pearson(normalized.values(), sm_grid) {
        Ok(rho) => Ok(Some(rho)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Single-sample correlation table of an attention tensor against a saliency
/// grid. The grid must already be sentinel-stripped (and normalized along the
/// token dimension); the attention side is aggregated, stripped and
/// frame-wise normalized per cell here.
pub fn correlation_report(
    att: &AttentionTensor,
    sm_grid: &Matrix,
    trace: &DecodeTrace,
) -> Result<CorrelationReport> {
    let layers = att.layers();
    let heads = att.heads();
    let mut cells = Vec::with_capacity(layers * heads);
    for l in 0..layers {
        for h in 0..heads {
            cells.push(map_correlation(att, &AggregationSpec::single(l, h), sm_grid, trace)?);
        }
    }
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        per_layer.push(map_correlation(
            att,
            &AggregationSpec::layer(l, heads)?,
            sm_grid,
            trace,
        )?);
    }
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        per_head.push(map_correlation(
            att,
            &AggregationSpec::head(h, layers)?,
            sm_grid,
            trace,
        )?);
    }
    let global = map_correlation(att, &AggregationSpec::full(layers, heads)?, sm_grid, trace)?;
    Ok(CorrelationReport {
        layers,
        heads,
        cells,
        per_layer,
        per_head,
        global,
        samples: 1,
    })
}

/// Cellwise mean of single-sample reports; absent cells are skipped per cell.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    layers: usize,
    heads: usize,
    cell_sums: Vec<(f64, usize)>,
    layer_sums: Vec<(f64, usize)>,
    head_sums: Vec<(f64, usize)>,
    global_sum: (f64, usize),
    samples: usize,
}

impl CorrelationAccumulator {
    pub fn new(layers: usize, heads: usize) -> Self {
        CorrelationAccumulator {
            layers,
            heads,
            cell_sums: vec![(0.0, 0); layers * heads],
            layer_sums: vec![(0.0, 0); layers],
            head_sums: vec![(0.0, 0); heads],
            global_sum: (0.0, 0),
            samples: 0,
        }
    }

    pub fn add(&mut self, report: &CorrelationReport) -> Result<()> {
        if report.layers != self.layers || report.heads != self.heads {
            return Err(Error::shape(
                "correlation accumulator",
                format!("{}x{}", self.layers, self.heads),
                format!("{}x{}", report.layers, report.heads),
            ));
        }
        let fold = |slot: &mut (f64, usize), value: Option<f64>| {
            if let Some(v) = value {
                slot.0 += v;
                slot.1 += 1;
            }
        };
        for (slot, &v) in self.cell_sums.iter_mut().zip(&report.cells) {
            fold(slot, v);
        }
        for (slot, &v) in self.layer_sums.iter_mut().zip(&report.per_layer) {
            fold(slot, v);
        }
        for (slot, &v) in self.head_sums.iter_mut().zip(&report.per_head) {
            fold(slot, v);
        }
        fold(&mut self.global_sum, report.global);
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self) -> CorrelationReport {
        let mean = |&(sum, count): &(f64, usize)| {
            if count > 0 {
                Some(sum / count as f64)
            } else {
                None
            }
        };
        CorrelationReport {
            layers: self.layers,
            heads: self.heads,
            cells: self.cell_sums.iter().map(mean).collect(),
            per_layer: self.layer_sums.iter().map(mean).collect(),
            per_head: self.head_sums.iter().map(mean).collect(),
            global: mean(&self.global_sum),
            samples: self.samples,
        }
    }
}

// ---------------------------------------------------------------------------
// Token error rate
// ---------------------------------------------------------------------------

/// Word error rate over token sequences, in percent: Levenshtein edit
/// distance (unit costs) divided by the reference length, capped at 100.
pub fn wer(hyp: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Invalid("reference for WER must not be empty".into()));
    }
    let distance = levenshtein(hyp, reference);
    Ok((100.0 * distance as f64 / reference.len() as f64).min(100.0))
}

fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut previous: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, &ta) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let substitution = previous[j] + usize::from(ta != tb);
            current[j + 1] = substitution.min(previous[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

// ---------------------------------------------------------------------------
// Deletion faithfulness
// ---------------------------------------------------------------------------

/// How token rows of a saliency grid are collapsed into one sentence-level
/// relevance vector before ranking frames for deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SentenceAggregation {
    /// Column max over tokens: any token's critical frames stay top-ranked.
    #[default]
    Max,
    Mean,
}

/// Collapses the token rows of an `out_len x steps` grid into one relevance
/// value per step.
pub fn sentence_level_saliency(grid: &Matrix, mode: SentenceAggregation) -> Result<Vec<f64>> {
    if grid.rows() == 0 || grid.cols() == 0 {
        return Err(Error::Degenerate("empty saliency grid".into()));
    }
    let mut out = Vec::with_capacity(grid.cols());
    for c in 0..grid.cols() {
        let column = (0..grid.rows()).map(|r| grid.get(r, c));
        out.push(match mode {
            SentenceAggregation::Max => column.fold(f64::NEG_INFINITY, f64::max),
            SentenceAggregation::Mean => column.sum::<f64>() / grid.rows() as f64,
        });
    }
    Ok(out)
}

/// Quality scores under progressive deletion of the highest-ranked units,
/// in 5% increments from 0% to 100%, plus the trapezoid area under the
/// curve over the fraction axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionCurve {
    /// `(fraction deleted, score)` pairs with strictly increasing fractions.
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

impl DeletionCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid("a deletion curve needs at least 2 points".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Invalid("deletion fractions must be strictly increasing".into()));
        }
        let area = points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum();
        Ok(DeletionCurve { points, area })
    }
}

fn deletion_fractions() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Unit indices ranked by descending relevance; ties break toward the lower
/// index so rankings are reproducible across platforms.
fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

fn top_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).min(total)
}

/// Deletion curve on the input: the sentence-level saliency (one value per
/// encoder step) is upsampled to the frame axis with nearest-neighbor
/// interpolation, frames are ranked, and the top 0%, 5%, ..., 100% are
/// replaced by zero vectors before re-decoding and scoring against the
/// reference.
pub fn deletion_curve_input(
    x: &Spectrogram,
    step_saliency: &[f64],
    w: &ModelWeights,
    reference: &[u32],
) -> Result<DeletionCurve> {
    let frame_saliency = nn_upsample(step_saliency, x.frames())?;
    let order = rank_descending(&frame_saliency);
    let mut points = Vec::new();
    for fraction in deletion_fractions() {
        let k = top_count(fraction, x.frames());
        let perturbed = x.with_frames_zeroed(&order[..k]);
        let enc = encode(&perturbed, w)?;
        let trace = decode(&enc, w, w.config.default_max_len(enc.steps()))?;
        let score = wer(&trace.content_tokens(), reference)?;
        points.push((fraction, score));
    }
    DeletionCurve::new(points)
}

/// Deletion curve on the encoder output: ranks encoder steps directly (no
/// upsampling) and zeroes whole state vectors.
pub fn deletion_curve_encoder(
    enc: &EncoderStates,
    step_saliency: &[f64],
    w: &ModelWeights,
    reference: &[u32],
) -> Result<DeletionCurve> {
    if step_saliency.len() != enc.steps() {
        return Err(Error::shape(
            "deletion_curve_encoder",
            format!("{} steps", enc.steps()),
            format!("{} saliency values", step_saliency.len()),
        ));
    }
    let order = rank_descending(step_saliency);
    let mut points = Vec::new();
    for fraction in deletion_fractions() {
        let k = top_count(fraction, enc.steps());
        let perturbed = enc.with_steps_zeroed(&order[..k]);
        let trace = decode(&perturbed, w, w.config.default_max_len(perturbed.steps()))?;
        let score = wer(&trace.content_tokens(), reference)?;
        points.push((fraction, score));
    }
    DeletionCurve::new(points)
}

// ---------------------------------------------------------------------------
// CSV formats
// ---------------------------------------------------------------------------

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Correlation-table CSV mirroring the layer/head layout: a header of head
/// columns plus `h-AVG`, one row per layer, and a final `l-AVG` row whose
/// corner is the global average. Absent (degenerate) cells are empty.
pub fn report_to_csv(report: &CorrelationReport) -> String {
    let mut out = String::from("layer/head");
    for h in 0..report.heads {
        out.push_str(&format!(",h={}", h + 1));
    }
    out.push_str(",h-AVG\n");
    for l in 0..report.layers {
        out.push_str(&format!("l={}", l + 1));
        for h in 0..report.heads {
            out.push(',');
            out.push_str(&cell_text(report.cell(l, h)));
        }
        out.push(',');
        out.push_str(&cell_text(report.per_layer[l]));
        out.push('\n');
    }
    out.push_str("l-AVG");
    for h in 0..report.heads {
        out.push(',');
        out.push_str(&cell_text(report.per_head[h]));
    }
    out.push(',');
    out.push_str(&cell_text(report.global));
    out.push('\n');
    out
}

fn parse_cell(text: &str, source: &str) -> Result<Option<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    text.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parse(source, format!("bad correlation value '{text}'")))
}

/// Parses [`report_to_csv`] output. The sample count is not part of the
/// table and comes back as zero.
pub fn report_from_csv(text: &str, source: &str) -> Result<CorrelationReport> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(source, "empty file"))?;
    let head_fields: Vec<&str> = header.split(',').collect();
    if head_fields.len() < 3 || head_fields[0] != "layer/head" {
        return Err(Error::parse(source, "expected 'layer/head,h=1,...,h-AVG' header"));
    }
    let heads = head_fields.len() - 2;
    let mut cells = Vec::new();
    let mut per_layer = Vec::new();
    let mut per_head = Vec::new();
    let mut global = None;
    let mut layers = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != heads + 2 {
            return Err(Error::parse(
                source,
                format!("row '{}' has {} fields, expected {}", fields[0], fields.len(), heads + 2),
            ));
        }
        if fields[0] == "l-AVG" {
            for &f in &fields[1..=heads] {
                per_head.push(parse_cell(f, source)?);
            }
            global = parse_cell(fields[heads + 1], source)?;
        } else {
            layers += 1;
            for &f in &fields[1..=heads] {
                cells.push(parse_cell(f, source)?);
            }
            per_layer.push(parse_cell(fields[heads + 1], source)?);
        }
    }
    if per_head.len() != heads {
        return Err(Error::parse(source, "missing l-AVG row"));
    }
    Ok(CorrelationReport {
        layers,
        heads,
        cells,
        per_layer,
        per_head,
        global,
        samples: 0,
    })
}

pub fn curve_to_csv(curve: &DeletionCurve) -> String {
    let mut out = String::from("fraction,score\n");
    for &(fraction, score) in &curve.points {
        out.push_str(&format!("{fraction},{score:.6}\n"));
    }
    out
}

pub fn curve_from_csv(text: &str, source: &str) -> Result<DeletionCurve> {
    let mut lines = text.lines();
    match lines.next() {
        Some("fraction,score") => {}
        _ => return Err(Error::parse(source, "expected 'fraction,score' header")),
    }
    let mut points = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (f, s) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(source, format!("bad row '{line}'")))?;
        let fraction: f64 = f
            .parse()
            .map_err(|_| Error::parse(source, format!("bad fraction '{f}'")))?;
        let score: f64 = s
            .parse()
            .map_err(|_| Error::parse(source, format!("bad score '{s}'")))?;
        points.push((fraction, score));
    }
    DeletionCurve::new(points)
}

// ---------------------------------------------------------------------------
