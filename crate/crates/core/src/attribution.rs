//! Perturbation-based saliency. Input relevance comes from multi-scale
//! occlusion of spectrogram clusters; encoder-output relevance from zeroing
//! whole encoder state vectors. Every trial re-scores the original hypothesis
//! prefix (teacher forcing) and measures the KL divergence between the
//! unperturbed and perturbed output distributions at each query position.
//!
//! Trials are embarrassingly parallel: each draws its mask from an RNG
//! stream derived from `(seed, trial index)` alone, and the reduction walks
//! the per-trial records in index order, so saliency maps are bit-identical
//! for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{encode, forward_given_prefix, DecodeTrace, EncoderStates, ModelWeights, Spectrogram};
use crate::numerics::{kl_divergence, Matrix, ProbabilityRow};

/// Frames per pseudo-second: cluster densities are expressed as clusters per
/// time unit of this many frames.
pub const FRAMES_PER_TIME_UNIT: f64 = 40.0;

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// One tiling scale: full-band time strips whose boundaries sit where the
/// cumulative frame energy crosses uniform quantiles, so strips hug the
/// energetic regions of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTiling {
    pub density: f64,
    /// Global cluster id of each frame at this scale.
    frame_cluster: Vec<usize>,
    /// Number of strips at this scale.
    count: usize,
}

/// Multi-scale partition of the time-frequency plane. Every cell belongs to
/// exactly one cluster per scale; ids are contiguous from 0 and disjoint
/// across scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    frames: usize,
    bins: usize,
    pub seed: u64,
    scales: Vec<ScaleTiling>,
    total: usize,
}

impl ClusterMap {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn total_clusters(&self) -> usize {
        self.total
    }

    pub fn clusters_at_scale(&self, scale: usize) -> usize {
        self.scales[scale].count
    }

    /// Global cluster id covering cell `(t, f)` at the given scale. Strips
    /// span all frequency bins, so the id depends on `t` only.
    pub fn cluster_of(&self, scale: usize, t: usize, _f: usize) -> usize {
        self.scales[scale].frame_cluster[t]
    }

    /// Marks which frames are covered by at least one occluded cluster.
    pub fn occluded_frames(&self, occluded: &[bool]) -> Vec<bool> {
        let mut frames = vec![false; self.frames];
        for scale in &self.scales {
            for (t, &id) in scale.frame_cluster.iter().enumerate() {
                if occluded[id] {
                    frames[t] = true;
                }
            }
        }
        frames
    }
}

fn quantile_cuts(energy: &[f64], strips: usize) -> Vec<usize> {
    let frames = energy.len();
    let total: f64 = energy.iter().sum();
    let mut cuts = Vec::with_capacity(strips.saturating_sub(1));
    if total <= 0.0 {
        // no energy profile: fall back to equal-width strips
        for j in 1..strips {
            let cut = j * frames / strips;
            if cut > *cuts.last().unwrap_or(&0) && cut < frames {
                cuts.push(cut);
            }
        }
        return cuts;
    }
    let mut cumulative = Vec::with_capacity(frames);
    let mut acc = 0.0;
    for &e in energy {
        acc += e;
        cumulative.push(acc);
    }
    let mut previous = 0usize;
    for j in 1..strips {
        let threshold = total * j as f64 / strips as f64;
        let mut cut = previous + 1;
        while cut < frames && cumulative[cut - 1] < threshold {
            cut += 1;
        }
        if cut >= frames {
            break;
        }
        cuts.push(cut);
        previous = cut;
    }
    cuts
}

/// Partitions the plane into roughly `density x duration` clusters per
/// scale, with strip boundaries at cumulative-energy quantiles. Deterministic
/// for a fixed input; the seed is recorded for provenance.
pub fn build_clusters(x: &Spectrogram, scales: &[f64], seed: u64) -> Result<ClusterMap> {
    if scales.is_empty() {
        return Err(Error::Invalid("at least one cluster scale is required".into()));
    }
    let frames = x.frames();
    let energy: Vec<f64> = (0..frames)
        .map(|t| x.values().row(t).iter().map(|v| v * v).sum())
        .collect();
    let duration = frames as f64 / FRAMES_PER_TIME_UNIT;
    let mut tilings = Vec::with_capacity(scales.len());
    let mut next_id = 0usize;
    for &density in scales {
        let target = (density * duration).round() as usize;
        if target == 0 || density <= 0.0 {
            return Err(Error::Invalid(format!(
                "density {density} yields no clusters for {frames} frames"
            )));
        }
        let target = target.min(frames);
        let cuts = quantile_cuts(&energy, target);
        let mut frame_cluster = Vec::with_capacity(frames);
        let mut strip = 0usize;
        for t in 0..frames {
            while strip < cuts.len() && t >= cuts[strip] {
                strip += 1;
            }
            frame_cluster.push(next_id + strip);
        }
        let count = cuts.len() + 1;
        next_id += count;
        tilings.push(ScaleTiling {
            density,
            frame_cluster,
            count,
        });
    }
    Ok(ClusterMap {
        frames,
        bins: x.bins(),
        seed,
        scales: tilings,
        total: next_id,
    })
}

// ---------------------------------------------------------------------------
// Occlusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationTarget {
    Input,
    Encoder,
}

/// Occlusion settings for one saliency run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    /// Independent occlusion probability per cluster (input) or per encoder
    /// step (encoder), strictly inside (0, 1).
    pub occlusion_prob: f64,
    pub trials: usize,
    pub seed: u64,
    pub target: PerturbationTarget,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.occlusion_prob > 0.0 && self.occlusion_prob < 1.0) {
            return Err(Error::Invalid(format!(
                "occlusion probability must lie in (0, 1), got {}",
                self.occlusion_prob
            )));
        }
        if self.trials == 0 {
            return Err(Error::Invalid("at least one perturbation trial is required".into()));
        }
        Ok(())
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn draw_mask(rng: &mut ChaCha8Rng, count: usize, p: f64) -> Vec<bool> {
    (0..count).map(|_| rng.gen::<f64>() < p).collect()
}

fn mask_ids(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

/// Zeroes every cell covered by one of the given clusters.
pub fn apply_input_mask(x: &Spectrogram, cm: &ClusterMap, occluded_ids: &[usize]) -> Spectrogram {
    let mut occluded = vec![false; cm.total_clusters()];
    for &id in occluded_ids {
        if id < occluded.len() {
            occluded[id] = true;
        }
    }
    let frames = cm.occluded_frames(&occluded);
    let zeroed: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, &z)| z)
        .map(|(t, _)| t)
        .collect();
    x.with_frames_zeroed(&zeroed)
}

/// Draws the trial's cluster mask and returns the occluded copy of the
/// input, with each cluster flipped independently with the configured
/// probability. The RNG stream depends only on `(seed, trial)`.
pub fn occlude_input(
    x: &Spectrogram,
    cm: &ClusterMap,
    cfg: &PerturbationConfig,
    trial: usize,
) -> Result<(Spectrogram, Vec<usize>)> {
    if cfg.target != PerturbationTarget::Input {
        return Err(Error::Invalid("perturbation config does not target the input".into()));
    }
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, trial);
    let mask = draw_mask(&mut rng, cm.total_clusters(), cfg.occlusion_prob);
    let ids = mask_ids(&mask);
    Ok((apply_input_mask(x, cm, &ids), ids))
}

/// Zeroes whole encoder state vectors, each step drawn independently.
pub fn occlude_encoder(
    enc: &EncoderStates,
    cfg: &PerturbationConfig,
    trial: usize,
) -> Result<(EncoderStates, Vec<usize>)> {
    if cfg.target != PerturbationTarget::Encoder {
        return Err(Error::Invalid(
            "perturbation config does not target the encoder output".into(),
        ));
    }
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, trial);
    let mask = draw_mask(&mut rng, enc.steps(), cfg.occlusion_prob);
    let ids = mask_ids(&mask);
    Ok((enc.with_steps_zeroed(&ids), ids))
}

// ---------------------------------------------------------------------------
// Saliency types
// ---------------------------------------------------------------------------

/// One perturbation trial: the occluded cluster ids (or encoder steps) and
/// the per-position KL divergences it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub mask: Vec<usize>,
    pub kl: Vec<f64>,
}

/// How the per-token saliency slices are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenNormalization {
    /// Min-max to [0, 1] per token slice; constant slices map to zero.
    #[default]
    MinMax,
    /// Divide by the largest absolute value per token slice.
    MaxAbs,
}

/// Min-max rescaling of one slice in place; constant slices become zero.
pub(crate) fn normalize_slice_minmax(slice: &mut [f64]) {
    normalize_slice(slice, TokenNormalization::MinMax);
}

fn normalize_slice(slice: &mut [f64], mode: TokenNormalization) {
    match mode {
        TokenNormalization::MinMax => {
            let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
            let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            if range <= 0.0 {
                slice.iter_mut().for_each(|v| *v = 0.0);
            } else {
                slice.iter_mut().for_each(|v| *v = (*v - min) / range);
            }
        }
        TokenNormalization::MaxAbs => {
            let max = slice.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max > 0.0 {
                slice.iter_mut().for_each(|v| *v /= max);
            }
        }
    }
}

/// Token-level input relevance, `out_len x frames x bins`, in nats before
/// normalization. Row `i` attributes the prediction made at query position
/// `i` of the decoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSaliency {
    out_len: usize,
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl InputSaliency {
    pub fn new(out_len: usize, frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_len * frames * bins {
            return Err(Error::shape(
                "input saliency",
                format!("{out_len}x{frames}x{bins}"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input saliency".into()));
        }
        Ok(InputSaliency {
            out_len,
            frames,
            bins,
            data,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn value(&self, position: usize, t: usize, f: usize) -> f64 {
        self.data[(position * self.frames + t) * self.bins + f]
    }

    /// The `frames x bins` slice of one query position, row-major.
    pub fn token_slice(&self, position: usize) -> &[f64] {
        let len = self.frames * self.bins;
        &self.data[position * len..(position + 1) * len]
    }

    /// Rescales each token slice to [0, 1] (or by max-abs); all-zero slices
    /// stay zero. Per-slice argmax is preserved.
    pub fn normalize_token_dim(&self) -> InputSaliency {
        self.normalize_token_dim_with(TokenNormalization::MinMax)
    }

    pub fn normalize_token_dim_with(&self, mode: TokenNormalization) -> InputSaliency {
        let mut out = self.clone();
        let len = self.frames * self.bins;
        for i in 0..self.out_len {
            normalize_slice(&mut out.data[i * len..(i + 1) * len], mode);
        }
        out
    }
}

/// Step-level encoder-output relevance, `out_len x steps`, in nats before
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSaliency {
    values: Matrix,
}

impl EncoderSaliency {
    pub fn new(values: Matrix) -> Self {
        EncoderSaliency { values }
    }

    pub fn out_len(&self) -> usize {
        self.values.rows()
    }

    pub fn steps(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn normalize_token_dim(&self) -> EncoderSaliency {
        self.normalize_token_dim_with(TokenNormalization::MinMax)
    }

    pub fn normalize_token_dim_with(&self, mode: TokenNormalization) -> EncoderSaliency {
        let mut values = self.values.clone();
        for r in 0..values.rows() {
            normalize_slice(values.row_mut(r), mode);
        }
        EncoderSaliency { values }
    }
}

// ---------------------------------------------------------------------------
// Saliency estimation
// ---------------------------------------------------------------------------

/// How per-trial KL scores are folded into cell scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaliencyEstimator {
    /// Mean KL over the trials in which the cell was occluded (by any
    /// scale's cluster). Cells never occluded stay at zero.
    #[default]
    OcclusionMean,
    /// Occlusion-conditional mean per scale, averaged over scales with equal
    /// weight.
    ScaleAveraged,
}

fn baseline_distributions(
    enc: &EncoderStates,
    w: &ModelWeights,
    tokens: &[u32],
) -> Result<Vec<ProbabilityRow>> {
    forward_given_prefix(enc, w, tokens)
}

fn trial_kl(
    baseline: &[ProbabilityRow],
    perturbed: &[ProbabilityRow],
) -> Result<Vec<f64>> {
    baseline
        .iter()
        .zip(perturbed)
        .map(|(p, q)| kl_divergence(p, q))
        .collect()
}

fn check_trace_matches(x: &Spectrogram, trace: &DecodeTrace, w: &ModelWeights) -> Result<()> {
    let expected_steps = w.config.enc_steps(x.frames());
    if trace.encoder_states.steps() != expected_steps {
        return Err(Error::Invalid(format!(
            "trace has {} encoder steps but the input implies {expected_steps}",
            trace.encoder_states.steps()
        )));
    }
    Ok(())
}

/// Runs the input-occlusion trials in parallel and returns them in trial
/// order.
pub fn collect_input_trials(
    x: &Spectrogram,
    trace: &DecodeTrace,
    w: &ModelWeights,
    cm: &ClusterMap,
    cfg: &PerturbationConfig,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    if cfg.target != PerturbationTarget::Input {
        return Err(Error::Invalid("perturbation config does not target the input".into()));
    }
    check_trace_matches(x, trace, w)?;
    let baseline = baseline_distributions(&trace.encoder_states, w, &trace.tokens)?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let (perturbed, mask) = occlude_input(x, cm, cfg, trial)?;
            let enc = encode(&perturbed, w)?;
            let dists = forward_given_prefix(&enc, w, &trace.tokens)?;
            let kl = trial_kl(&baseline, &dists)?;
            Ok(TrialRecord { trial, mask, kl })
        })
        .collect()
}

/// Input saliency with the default occlusion-conditional-mean estimator.
pub fn compute_input_saliency(
    x: &Spectrogram,
    trace: &DecodeTrace,
    w: &ModelWeights,
    cm: &ClusterMap,
    cfg: &PerturbationConfig,
) -> Result<InputSaliency> {
    compute_input_saliency_with(x, trace, w, cm, cfg, SaliencyEstimator::default())
}

pub fn compute_input_saliency_with(
    x: &Spectrogram,
    trace: &DecodeTrace,
    w: &ModelWeights,
    cm: &ClusterMap,
    cfg: &PerturbationConfig,
    estimator: SaliencyEstimator,
) -> Result<InputSaliency> {
    let trials = collect_input_trials(x, trace, w, cm, cfg)?;
    let positions = trace.tokens.len();
    let frames = x.frames();
    let bins = x.bins();
    // per-frame scores; strips cover all bins, so cells inherit their
    // frame's score
    let frame_scores: Vec<Vec<f64>> = match estimator {
        SaliencyEstimator::OcclusionMean => {
            let mut sums = vec![vec![0.0; frames]; positions];
            let mut counts = vec![0usize; frames];
            for record in &trials {
                let mut occluded = vec![false; cm.total_clusters()];
                for &id in &record.mask {
                    occluded[id] = true;
                }
                let frame_mask = cm.occluded_frames(&occluded);
                for (t, &hit) in frame_mask.iter().enumerate() {
                    if hit {
                        counts[t] += 1;
                        for (pos, sum) in sums.iter_mut().enumerate() {
                            sum[t] += record.kl[pos];
                        }
                    }
                }
            }
            sums.iter()
                .map(|sum| {
                    sum.iter()
                        .zip(&counts)
                        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                        .collect()
                })
                .collect()
        }
        SaliencyEstimator::ScaleAveraged => {
            let n_scales = cm.num_scales();
            let mut sums = vec![vec![vec![0.0; frames]; positions]; n_scales];
            let mut counts = vec![vec![0usize; frames]; n_scales];
            for record in &trials {
                let mut occluded = vec![false; cm.total_clusters()];
                for &id in &record.mask {
                    occluded[id] = true;
                }
                for scale in 0..n_scales {
                    for t in 0..frames {
                        if occluded[cm.cluster_of(scale, t, 0)] {
                            counts[scale][t] += 1;
                            for (pos, sum) in sums[scale].iter_mut().enumerate() {
                                sum[t] += record.kl[pos];
                            }
                        }
                    }
                }
            }
            (0..positions)
                .map(|pos| {
                    (0..frames)
                        .map(|t| {
                            let mut acc = 0.0;
                            for scale in 0..n_scales {
                                if counts[scale][t] > 0 {
                                    acc += sums[scale][pos][t] / counts[scale][t] as f64;
                                }
                            }
                            acc / n_scales as f64
                        })
                        .collect()
                })
                .collect()
        }
    };
    let mut data = Vec::with_capacity(positions * frames * bins);
    for scores in &frame_scores {
        for &score in scores {
            data.extend(std::iter::repeat_n(score, bins));
        }
    }
    InputSaliency::new(positions, frames, bins, data)
}

/// Runs the encoder-occlusion trials in parallel, in trial order.
pub fn collect_encoder_trials(
    enc: &EncoderStates,
    trace: &DecodeTrace,
    w: &ModelWeights,
    cfg: &PerturbationConfig,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    if cfg.target != PerturbationTarget::Encoder {
        return Err(Error::Invalid(
            "perturbation config does not target the encoder output".into(),
        ));
    }
    let baseline = baseline_distributions(enc, w, &trace.tokens)?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let (perturbed, mask) = occlude_encoder(enc, cfg, trial)?;
            let dists = forward_given_prefix(&perturbed, w, &trace.tokens)?;
            let kl = trial_kl(&baseline, &dists)?;
            Ok(TrialRecord { trial, mask, kl })
        })
        .collect()
}

/// Encoder-output saliency: mean KL over the trials in which each step was
/// zeroed.
pub fn compute_encoder_saliency(
    enc: &EncoderStates,
    trace: &DecodeTrace,
    w: &ModelWeights,
    cfg: &PerturbationConfig,
) -> Result<EncoderSaliency> {
    let trials = collect_encoder_trials(enc, trace, w, cfg)?;
    let positions = trace.tokens.len();
    let steps = enc.steps();
    let mut sums = vec![vec![0.0; steps]; positions];
    let mut counts = vec![0usize; steps];
    for record in &trials {
        for &u in &record.mask {
            counts[u] += 1;
            for (pos, sum) in sums.iter_mut().enumerate() {
                sum[u] += record.kl[pos];
            }
        }
    }
    let mut values = Matrix::zeros(positions, steps);
    for (pos, sum) in sums.iter().enumerate() {
        for (u, &s) in sum.iter().enumerate() {
            if counts[u] > 0 {
                values.set(pos, u, s / counts[u] as f64);
            }
        }
    }
    Ok(EncoderSaliency::new(values))
}

// ---------------------------------------------------------------------------
// Text exports
// ---------------------------------------------------------------------------

/// `XSAL1 <I> <T> <F>` header, then `I x T` lines of `F` floats in
/// (position, frame) order.
pub fn input_saliency_to_string(sm: &InputSaliency) -> String {
    let mut out = format!("XSAL1 {} {} {}\n", sm.out_len, sm.frames, sm.bins);
    for i in 0..sm.out_len {
        let slice = sm.token_slice(i);
        for t in 0..sm.frames {
            let row = &slice[t * sm.bins..(t + 1) * sm.bins];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn input_saliency_from_string(text: &str, source: &str) -> Result<InputSaliency> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(source, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "XSAL1" {
        return Err(Error::parse(source, "expected header 'XSAL1 I T F'"));
    }
    let dims: Vec<usize> = fields[1..]
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::parse(source, format!("bad dimension '{f}'")))
        })
        .collect::<Result<_>>()?;
    let (out_len, frames, bins) = (dims[0], dims[1], dims[2]);
    let mut data = Vec::with_capacity(out_len * frames * bins);
    for row_idx in 0..out_len * frames {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(source, format!("missing row {row_idx}")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(source, format!("bad float '{f}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != bins {
            return Err(Error::parse(
                source,
                format!("row {row_idx} has {} values, header says {bins}", values.len()),
            ));
        }
        data.extend(values);
    }
    InputSaliency::new(out_len, frames, bins, data)
}

/// `XSALH1 <I> <T'>` header, then one line per query position.
pub fn encoder_saliency_to_string(sm: &EncoderSaliency) -> String {
    let mut out = format!("XSALH1 {} {}\n", sm.out_len(), sm.steps());
    for r in 0..sm.out_len() {
        let line: Vec<String> = sm.values.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn encoder_saliency_from_string(text: &str, source: &str) -> Result<EncoderSaliency> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(source, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "XSALH1" {
        return Err(Error::parse(source, "expected header 'XSALH1 I T'"));
    }
    let out_len: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(source, "bad row count"))?;
    let steps: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(source, "bad step count"))?;
    let mut data = Vec::with_capacity(out_len * steps);
    for r in 0..out_len {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(source, format!("missing row {r}")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(source, format!("bad float '{f}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != steps {
            return Err(Error::parse(
                source,
                format!("row {r} has {} values, header says {steps}", values.len()),
            ));
        }
        data.extend(values);
    }
    Ok(EncoderSaliency::new(Matrix::from_vec(out_len, steps, data)?))
}

/// CSV of one token slice, `frames` rows by `bins` columns.
pub fn token_slice_to_csv(sm: &InputSaliency, position: usize) -> String {
    let slice = sm.token_slice(position);
    let mut out = String::new();
    for t in 0..sm.frames() {
        let row = &slice[t * sm.bins()..(t + 1) * sm.bins()];
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
