//! A miniature deterministic encoder-decoder sequence model: temporal
//! subsampling by strided frame stacking, multi-head cross-attention
//! decoding with full score recording, and teacher-forced re-scoring.
//!
//! Decoder blocks contain cross-attention only (per-head query/key/value
//! projections plus an output projection and a residual connection). Each
//! query position therefore depends on its own input token and the encoder
//! states, which keeps decoding, teacher forcing and perturbation re-scoring
//! bit-for-bit consistent with each other.

use crate::attention::{self, AttentionTensor};
use crate::error::{Error, Result};
use crate::numerics::{stable_softmax, Matrix, ProbabilityRow};

pub mod io;
pub mod planted;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Time-frequency feature matrix, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Matrix,
}

impl Spectrogram {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Invalid(
                "spectrogram needs at least one frame and one bin".into(),
            ));
        }
        Ok(Spectrogram { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bins(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Copy with the given time frames zeroed out (all bins).
    pub fn with_frames_zeroed(&self, frames: &[usize]) -> Spectrogram {
        let mut values = self.values.clone();
        for &t in frames {
            if t < values.rows() {
                for c in 0..values.cols() {
                    values.set(t, c, 0.0);
                }
            }
        }
        Spectrogram { values }
    }
}

/// Static model shape and vocabulary layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Decoder layers.
    pub layers: usize,
    /// Attention heads per decoder layer.
    pub heads: usize,
    /// Hidden dimensionality; must equal `heads * head_dim`.
    pub embed_dim: usize,
    /// Per-head projection width.
    pub head_dim: usize,
    /// Temporal subsampling factor between input frames and encoder steps.
    pub subsample: usize,
    /// Vocabulary size.
    pub vocab: usize,
    pub bos_id: u32,
    pub eos_id: u32,
    /// Expected number of frequency bins in the input.
    pub bins: usize,
    /// Number of encoder mixing layers (feed-forward + local averaging).
    pub enc_layers: usize,
    /// Local-averaging window of each mixing layer; 1 disables averaging.
    pub mix_width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim != self.heads * self.head_dim {
            return Err(Error::Invalid(format!(
                "embed_dim {} must equal heads {} x head_dim {}",
                self.embed_dim, self.heads, self.head_dim
            )));
        }
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Invalid("layers, heads and head_dim must be positive".into()));
        }
        if self.subsample == 0 {
            return Err(Error::Invalid("subsample factor must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::Invalid("bins must be positive".into()));
        }
        if self.mix_width == 0 {
            return Err(Error::Invalid("mix_width must be at least 1".into()));
        }
        if self.bos_id == self.eos_id {
            return Err(Error::Invalid("bos and eos ids must differ".into()));
        }
        if self.bos_id as usize >= self.vocab || self.eos_id as usize >= self.vocab {
            return Err(Error::Invalid("sentinel ids must be inside the vocabulary".into()));
        }
        Ok(())
    }

    /// Encoder steps produced for an input of `frames` time frames.
    pub fn enc_steps(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsample)
    }

    /// Softmax scale for attention logits.
    pub fn attention_scale(&self) -> f64 {
        (self.head_dim as f64).sqrt()
    }

    /// Default generation cutoff for an input with `enc_steps` encoder steps.
    pub fn default_max_len(&self, enc_steps: usize) -> usize {
        (4 * enc_steps).max(1)
    }
}

/// Per-decoder-layer projections: one query/key/value matrix per head
/// (`embed_dim x head_dim` each) and a shared output projection
/// (`heads * head_dim x embed_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerWeights {
    pub queries: Vec<Matrix>,
    pub keys: Vec<Matrix>,
    pub values: Vec<Matrix>,
    pub output: Matrix,
}

/// Encoder mixing layer: position-wise feed-forward, `embed_dim x embed_dim`
/// both legs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerWeights {
    pub ff1: Matrix,
    pub ff2: Matrix,
}

/// All learned parameters plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Maps a stack of `subsample` frames (`subsample * bins` values) to the
    /// hidden space.
    pub frame_embed: Matrix,
    /// Token embedding table, `vocab x embed_dim`.
    pub token_embed: Matrix,
    /// Readout projection, `embed_dim x vocab`.
    pub readout: Matrix,
    pub encoder_layers: Vec<EncoderLayerWeights>,
    pub decoder_layers: Vec<DecoderLayerWeights>,
}

impl ModelWeights {
    /// Allocates correctly-shaped all-zero weights for a configuration.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let stacked = config.subsample * config.bins;
        let decoder_layers = (0..config.layers)
            .map(|_| DecoderLayerWeights {
                queries: (0..config.heads).map(|_| Matrix::zeros(d, config.head_dim)).collect(),
                keys: (0..config.heads).map(|_| Matrix::zeros(d, config.head_dim)).collect(),
                values: (0..config.heads).map(|_| Matrix::zeros(d, config.head_dim)).collect(),
                output: Matrix::zeros(config.heads * config.head_dim, d),
            })
            .collect();
        let encoder_layers = (0..config.enc_layers)
            .map(|_| EncoderLayerWeights {
                ff1: Matrix::zeros(d, d),
                ff2: Matrix::zeros(d, d),
            })
            .collect();
        Ok(ModelWeights {
            frame_embed: Matrix::zeros(stacked, d),
            token_embed: Matrix::zeros(config.vocab, d),
            readout: Matrix::zeros(d, config.vocab),
            encoder_layers,
            decoder_layers,
            config,
        })
    }

    /// Checks every matrix against the shapes implied by the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let d = c.embed_dim;
        let check = |name: String, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::shape(
                    &name,
                    format!("{rows}x{cols}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            Ok(())
        };
        check("frame_embed".into(), &self.frame_embed, c.subsample * c.bins, d)?;
        check("token_embed".into(), &self.token_embed, c.vocab, d)?;
        check("readout".into(), &self.readout, d, c.vocab)?;
        if self.encoder_layers.len() != c.enc_layers {
            return Err(Error::Invalid(format!(
                "expected {} encoder layers, found {}",
                c.enc_layers,
                self.encoder_layers.len()
            )));
        }
        for (i, layer) in self.encoder_layers.iter().enumerate() {
            check(format!("enc{i}_ff1"), &layer.ff1, d, d)?;
            check(format!("enc{i}_ff2"), &layer.ff2, d, d)?;
        }
        if self.decoder_layers.len() != c.layers {
            return Err(Error::Invalid(format!(
                "expected {} decoder layers, found {}",
                c.layers,
                self.decoder_layers.len()
            )));
        }
        for (l, layer) in self.decoder_layers.iter().enumerate() {
            if layer.queries.len() != c.heads
                || layer.keys.len() != c.heads
                || layer.values.len() != c.heads
            {
                return Err(Error::Invalid(format!(
                    "decoder layer {l} must have {} heads",
                    c.heads
                )));
            }
            for h in 0..c.heads {
                check(format!("dec{l}_h{h}_wq"), &layer.queries[h], d, c.head_dim)?;
                check(format!("dec{l}_h{h}_wk"), &layer.keys[h], d, c.head_dim)?;
                check(format!("dec{l}_h{h}_wv"), &layer.values[h], d, c.head_dim)?;
            }
            check(format!("dec{l}_wo"), &layer.output, c.heads * c.head_dim, d)?;
        }
        Ok(())
    }
}

/// Encoder output sequence, `steps x embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    values: Matrix,
}

impl EncoderStates {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Invalid("encoder states need at least one step".into()));
        }
        Ok(EncoderStates { values })
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Copy with entire state vectors zeroed at the given steps.
    pub fn with_steps_zeroed(&self, steps: &[usize]) -> EncoderStates {
        let mut values = self.values.clone();
        for &u in steps {
            if u < values.rows() {
                for c in 0..values.cols() {
                    values.set(u, c, 0.0);
                }
            }
        }
        EncoderStates { values }
    }
}

/// Everything recorded while decoding one input: the token sequence
/// (sentinels included), the distribution behind each generated token, the
/// full cross-attention tensor (one row per query position, so
/// `out_len == tokens.len()`), and the encoder states the decoder saw.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub tokens: Vec<u32>,
    pub bos_id: u32,
    pub eos_id: u32,
    pub distributions: Vec<ProbabilityRow>,
    pub attention: AttentionTensor,
    pub encoder_states: EncoderStates,
}

impl DecodeTrace {
    /// Query positions whose token is not a sentinel.
    pub fn content_rows(&self) -> Vec<usize> {
        attention::content_row_indices(&self.tokens, self.bos_id, self.eos_id)
    }

    /// Generated tokens with sentinels removed.
    pub fn content_tokens(&self) -> Vec<u32> {
        self.tokens
            .iter()
            .copied()
            .filter(|&t| t != self.bos_id && t != self.eos_id)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

fn local_average(m: &Matrix, width: usize) -> Matrix {
    if width <= 1 || m.rows() <= 1 {
        return m.clone();
    }
    let radius = width / 2;
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for t in 0..m.rows() {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(m.rows() - 1);
        let n = (hi - lo + 1) as f64;
        for c in 0..m.cols() {
            let mut acc = 0.0;
            for r in lo..=hi {
                acc += m.get(r, c);
            }
            out.set(t, c, acc / n);
        }
    }
    out
}

/// Encodes a spectrogram: stride-`s` frame stacking (zero-padded last
/// window), a linear frame embedding, then the configured mixing layers.
/// Deterministic for fixed inputs; `enc_steps = ceil(frames / subsample)`.
pub fn encode(x: &Spectrogram, w: &ModelWeights) -> Result<EncoderStates> {
    let c = &w.config;
    if x.bins() != c.bins {
        return Err(Error::shape(
            "encode",
            format!("{} configured bins", c.bins),
            format!("{} input bins", x.bins()),
        ));
    }
    let frames = x.frames();
    let steps = c.enc_steps(frames);
    let stacked_width = c.subsample * c.bins;
    let mut stacked = Matrix::zeros(steps, stacked_width);
    for u in 0..steps {
        for k in 0..c.subsample {
            let t = u * c.subsample + k;
            if t >= frames {
                break;
            }
            let src = x.values().row(t);
            let dst = stacked.row_mut(u);
            dst[k * c.bins..(k + 1) * c.bins].copy_from_slice(src);
        }
    }
    let mut states = crate::numerics::matmul(&stacked, &w.frame_embed)?;
    for layer in &w.encoder_layers {
        let hidden = crate::numerics::matmul(&states, &layer.ff1)?;
        let mut activated = hidden;
        for r in 0..activated.rows() {
            for v in activated.row_mut(r) {
                *v = v.max(0.0);
            }
        }
        let update = crate::numerics::matmul(&activated, &layer.ff2)?;
        for r in 0..states.rows() {
            let dst = states.row_mut(r);
            for (d, u) in dst.iter_mut().zip(update.row(r)) {
                *d += u;
            }
        }
        states = local_average(&states, c.mix_width);
    }
    EncoderStates::new(states)
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Per-layer, per-head key/value projections of a fixed encoder output.
struct ProjectedEncoder {
    /// Indexed `layer * heads + head`; each entry is (keys, values), both
    /// `steps x head_dim`.
    per_head: Vec<(Matrix, Matrix)>,
    steps: usize,
}

fn project_encoder(enc: &EncoderStates, w: &ModelWeights) -> Result<ProjectedEncoder> {
    let c = &w.config;
    let mut per_head = Vec::with_capacity(c.layers * c.heads);
    for layer in &w.decoder_layers {
        for h in 0..c.heads {
            let k = crate::numerics::matmul(enc.values(), &layer.keys[h])?;
            let v = crate::numerics::matmul(enc.values(), &layer.values[h])?;
            per_head.push((k, v));
        }
    }
    Ok(ProjectedEncoder {
        per_head,
        steps: enc.steps(),
    })
}

/// One query position: returns the output distribution and the attention
/// row per (layer, head), flattened `layer * heads + head`.
fn position_forward(
    proj: &ProjectedEncoder,
    w: &ModelWeights,
    token: u32,
    position: usize,
) -> Result<(ProbabilityRow, Vec<Vec<f64>>)> {
    let c = &w.config;
    if token as usize >= c.vocab {
        return Err(Error::Invalid(format!(
            "token id {token} outside vocabulary of size {}",
            c.vocab
        )));
    }
    let d = c.embed_dim;
    let scale = c.attention_scale();
    let mut state: Vec<f64> = w.token_embed.row(token as usize).to_vec();
    let mut attn_rows = Vec::with_capacity(c.layers * c.heads);
    for (l, layer) in w.decoder_layers.iter().enumerate() {
        let mut concat = vec![0.0; c.heads * c.head_dim];
        for h in 0..c.heads {
            let wq = &layer.queries[h];
            let mut q = vec![0.0; c.head_dim];
            for (dim, &s) in state.iter().enumerate() {
                if s != 0.0 {
                    for (j, qv) in q.iter_mut().enumerate() {
                        *qv += s * wq.get(dim, j);
                    }
                }
            }
            let (keys, values) = &proj.per_head[l * c.heads + h];
            let logits: Vec<f64> = (0..proj.steps)
                .map(|u| {
                    keys.row(u)
                        .iter()
                        .zip(&q)
                        .map(|(k, qv)| k * qv)
                        .sum::<f64>()
                })
                .collect();
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "attention logits at step {position}, layer {l}"
                )));
            }
            let row = stable_softmax(&logits, scale);
            let head_out = &mut concat[h * c.head_dim..(h + 1) * c.head_dim];
            for (u, weight) in row.iter().enumerate() {
                for (o, v) in head_out.iter_mut().zip(values.row(u)) {
                    *o += weight * v;
                }
            }
            attn_rows.push(row);
        }
        // output projection + residual
        for (dim, s) in state.iter_mut().enumerate().take(d) {
            let mut acc = 0.0;
            for (k, &cv) in concat.iter().enumerate() {
                if cv != 0.0 {
                    acc += cv * layer.output.get(k, dim);
                }
            }
            *s += acc;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "decoder state at step {position}, layer {l}"
            )));
        }
    }
    let mut logits = vec![0.0; c.vocab];
    for (dim, &s) in state.iter().enumerate() {
        if s != 0.0 {
            for (v, lv) in logits.iter_mut().enumerate() {
                *lv += s * w.readout.get(dim, v);
            }
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "readout logits at step {position}"
        )));
    }
    let dist = ProbabilityRow::new(stable_softmax(&logits, 1.0))?;
    Ok((dist, attn_rows))
}

/// Greedy autoregressive decoding. Records the full per-layer, per-head
/// cross-attention row and the output distribution at every step; stops at
/// the end sentinel or after `max_len` generated tokens.
pub fn decode(enc: &EncoderStates, w: &ModelWeights, max_len: usize) -> Result<DecodeTrace> {
    let c = &w.config;
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let proj = project_encoder(enc, w)?;
    let mut tokens: Vec<u32> = vec![c.bos_id];
    let mut distributions: Vec<ProbabilityRow> = Vec::new();
    let mut recorded: Vec<Vec<Vec<f64>>> = Vec::new();
    loop {
        let position = tokens.len() - 1;
        let (dist, attn) = position_forward(&proj, w, tokens[position], position)?;
        recorded.push(attn);
        if distributions.len() == max_len || *tokens.last().unwrap() == c.eos_id {
            // final position reached the cutoff or the end sentinel: its
            // attention row is recorded, no further token is generated
            break;
        }
        let next = dist.argmax() as u32;
        distributions.push(dist);
        tokens.push(next);
    }
    let mut attention = AttentionTensor::zeros(c.layers, c.heads, tokens.len(), proj.steps);
    for (pos, rows) in recorded.iter().enumerate() {
        for l in 0..c.layers {
            for h in 0..c.heads {
                attention.set_row(l, h, pos, &rows[l * c.heads + h])?;
            }
        }
    }
    Ok(DecodeTrace {
        tokens,
        bos_id: c.bos_id,
        eos_id: c.eos_id,
        distributions,
        attention,
        encoder_states: enc.clone(),
    })
}

/// Teacher-forced re-scoring: the output distribution at every position of a
/// fixed prefix. On the unperturbed encoder states with the decoded token
/// sequence this reproduces the trace's distributions exactly.
pub fn forward_given_prefix(
    enc: &EncoderStates,
    w: &ModelWeights,
    prefix: &[u32],
) -> Result<Vec<ProbabilityRow>> {
    if prefix.is_empty() {
        return Err(Error::Invalid("prefix must not be empty".into()));
    }
    let proj = project_encoder(enc, w)?;
    prefix
        .iter()
        .enumerate()
        .map(|(pos, &tok)| position_forward(&proj, w, tok, pos).map(|(d, _)| d))
        .collect()
}

// ---------------------------------------------------------------------------
