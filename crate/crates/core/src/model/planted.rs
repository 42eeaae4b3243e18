//! Planted-alignment models: constructed weights and inputs whose true
//! token-to-frame dependencies are known, used as ground truth when
//! validating the attribution pipeline.
//!
//! The construction assigns each output position `i` a frequency bin and a
//! time span. The input carries unit energy in that bin across the span; the
//! final decoder layer's query for position `i` matches only keys derived
//! from that bin, so its cross-attention peaks on the span's encoder steps,
//! and the attended value routes through dedicated hidden dimensions to the
//! readout row of the planted token. A terminator span after the last
//! content span triggers the end sentinel the same way. Token `i` is
//! therefore recoverable only from its own span, and zeroing the span
//! flattens the output distribution at that position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seed;

use super::{ModelConfig, ModelWeights, Spectrogram};

/// Attention-logit gain of the planted query rows, relative to `sqrt(d_k)`.
/// Off-span attention mass scales like `exp(-gain)`; 14 keeps the variance
/// of off-span columns below the normalization degeneracy threshold, so
/// they drop out instead of being amplified into noise.
const QUERY_GAIN_PER_SCALE: f64 = 14.0;
/// Readout logit for a fully attended planted token (gives P around 0.95
/// for small vocabularies, so occlusion produces a strong KL signal).
const READOUT_GAIN: f64 = 6.0;
/// Std of the per-head jitter on final-layer query projections.
const QUERY_JITTER_STD: f64 = 0.2;
/// Std of the random projections in non-final decoder layers.
const BACKGROUND_STD: f64 = 0.05;

const SALT_WEIGHTS: u64 = 0x57;
const SALT_NOISE: u64 = 0x4E;

/// Ground-truth alignment request: one `[start, end)` frame span per output
/// position, plus input noise and a seed for jitter and noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    /// Total input frames.
    pub frames: usize,
    /// Span of output position `i` at `alignment[i - 1]`, ascending and
    /// non-overlapping, each at least `subsample` frames long.
    pub alignment: Vec<(usize, usize)>,
    /// Std of the additive Gaussian noise on the spectrogram.
    pub noise_level: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// Frame span that triggers the end sentinel, directly after the last
    /// content span.
    pub fn terminator_span(&self, subsample: usize) -> (usize, usize) {
        let end = self.alignment.last().map_or(0, |&(_, b)| b);
        (end, end + subsample)
    }
}

/// Encoder-step image of a frame span under subsampling: the half-open step
/// range whose windows overlap `[start, end)`.
pub fn encoder_step_image(span: (usize, usize), subsample: usize) -> (usize, usize) {
    (span.0 / subsample, (span.1 - 1) / subsample + 1)
}

/// Content token ids in planted order: the lowest vocabulary ids that are
/// not sentinels.
pub fn planted_token_ids(config: &ModelConfig, positions: usize) -> Vec<u32> {
    (0..config.vocab as u32)
        .filter(|&t| t != config.bos_id && t != config.eos_id)
        .take(positions)
        .collect()
}

fn check_capacity(config: &ModelConfig, positions: usize) -> Result<()> {
    config.validate()?;
    if positions == 0 {
        return Err(Error::Invalid("planted alignment must cover at least one position".into()));
    }
    let slots = positions + 1; // content positions plus the terminator
    if slots > config.head_dim {
        return Err(Error::Invalid(format!(
            "planted construction needs head_dim >= {slots}, got {}",
            config.head_dim
        )));
    }
    if slots > config.bins {
        return Err(Error::Invalid(format!(
            "planted construction needs bins >= {slots}, got {}",
            config.bins
        )));
    }
    if config.vocab < positions + 2 {
        return Err(Error::Invalid(format!(
            "vocabulary of {} cannot hold {positions} content tokens plus sentinels",
            config.vocab
        )));
    }
    if config.vocab + slots > config.embed_dim {
        return Err(Error::Invalid(format!(
            "planted construction needs embed_dim >= vocab + {slots} = {}, got {}",
            config.vocab + slots,
            config.embed_dim
        )));
    }
    if config.bins > config.embed_dim {
        return Err(Error::Invalid(format!(
            "planted construction needs embed_dim >= bins, got {} < {}",
            config.embed_dim, config.bins
        )));
    }
    Ok(())
}

/// Builds weights that decode any input produced by [`planted_input`] with
/// the same configuration and position count. The weights do not depend on
/// span placement, so one model serves many planted inputs.
pub fn planted_weights(config: &ModelConfig, positions: usize, seed: u64) -> Result<ModelWeights> {
    check_capacity(config, positions)?;
    let mut w = ModelWeights::zeroed(config.clone())?;
    let d = config.embed_dim;
    let slots = positions + 1;
    let content = planted_token_ids(config, positions);
    let code_base = d - slots;

    // one-hot token embeddings
    for t in 0..config.vocab {
        w.token_embed.set(t, t, 1.0);
    }
    // window-mean frame embedding: stacked bin f of each of the s frames
    // accumulates into hidden dim f
    for k in 0..config.subsample {
        for f in 0..config.bins {
            w.frame_embed.set(k * config.bins + f, f, 1.0 / config.subsample as f64);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, SALT_WEIGHTS));
    let background = Normal::new(0.0, BACKGROUND_STD).expect("valid std");
    let jitter = Normal::new(0.0, QUERY_JITTER_STD).expect("valid std");

    let final_layer = config.layers - 1;
    let gain = QUERY_GAIN_PER_SCALE * config.attention_scale();
    for l in 0..config.layers {
        let layer = &mut w.decoder_layers[l];
        if l < final_layer {
            // weak random attention, no value contribution: these layers
            // leave the residual stream untouched
            for h in 0..config.heads {
                for r in 0..d {
                    for c in 0..config.head_dim {
                        layer.queries[h].set(r, c, background.sample(&mut rng));
                        layer.keys[h].set(r, c, background.sample(&mut rng));
                    }
                }
            }
            continue;
        }
        for h in 0..config.heads {
            // slot i (1-based) uses match code = head dim i-1, source bin
            // i-1 and hidden code dim code_base + i - 1
            for i in 1..=slots {
                let code = i - 1;
                let query_token = if i == 1 {
                    config.bos_id
                } else {
                    content[i - 2]
                } as usize;
                layer.queries[h].set(query_token, code, gain);
                layer.keys[h].set(code, code, 1.0);
                layer.values[h].set(code, code, 1.0);
            }
            for r in 0..d {
                for c in 0..config.head_dim {
                    let v = layer.queries[h].get(r, c) + jitter.sample(&mut rng);
                    layer.queries[h].set(r, c, v);
                }
            }
        }
        for i in 1..=slots {
            let code = i - 1;
            for h in 0..config.heads {
                layer
                    .output
                    .set(h * config.head_dim + code, code_base + code, 1.0 / config.heads as f64);
            }
        }
    }
    for i in 1..=slots {
        let target = if i <= positions {
            content[i - 1]
        } else {
            config.eos_id
        } as usize;
        w.readout.set(code_base + i - 1, target, READOUT_GAIN);
    }
    w.validate()?;
    Ok(w)
}

fn check_spans(spec: &PlantedSpec, config: &ModelConfig) -> Result<()> {
    let s = config.subsample;
    let mut previous_end = 0usize;
    for (idx, &(a, b)) in spec.alignment.iter().enumerate() {
        if b <= a || b > spec.frames {
            return Err(Error::Invalid(format!(
                "span {idx} = [{a}, {b}) must lie inside [0, {})",
                spec.frames
            )));
        }
        if b - a < s {
            return Err(Error::Invalid(format!(
                "span {idx} = [{a}, {b}) is shorter than the subsampling factor {s}"
            )));
        }
        if a < previous_end {
            return Err(Error::Invalid(format!(
                "span {idx} = [{a}, {b}) overlaps or precedes the previous span"
            )));
        }
        previous_end = b;
    }
    let (t0, t1) = spec.terminator_span(s);
    if t1 > spec.frames {
        return Err(Error::Invalid(format!(
            "no room for the terminator span [{t0}, {t1}): input has {} frames",
            spec.frames
        )));
    }
    Ok(())
}

/// Builds the spectrogram for a planted spec and the token sequence (with
/// sentinels) the matching weights will decode from it.
pub fn planted_input(spec: &PlantedSpec, config: &ModelConfig) -> Result<(Spectrogram, Vec<u32>)> {
    check_capacity(config, spec.alignment.len())?;
    check_spans(spec, config)?;
    if spec.noise_level < 0.0 || !spec.noise_level.is_finite() {
        return Err(Error::Invalid("noise level must be finite and non-negative".into()));
    }
    let positions = spec.alignment.len();
    let mut values = Matrix::zeros(spec.frames, config.bins);
    for (idx, &(a, b)) in spec.alignment.iter().enumerate() {
        for t in a..b {
            values.set(t, idx, 1.0);
        }
    }
    let (t0, t1) = spec.terminator_span(config.subsample);
    for t in t0..t1 {
        values.set(t, positions, 1.0);
    }
    if spec.noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, SALT_NOISE));
        let noise = Normal::new(0.0, spec.noise_level).expect("valid std");
        for t in 0..spec.frames {
            for f in 0..config.bins {
                let v = values.get(t, f) + noise.sample(&mut rng);
                values.set(t, f, v);
            }
        }
    }
    let mut tokens = Vec::with_capacity(positions + 2);
    tokens.push(config.bos_id);
    tokens.extend(planted_token_ids(config, positions));
    tokens.push(config.eos_id);
    Ok((Spectrogram::new(values)?, tokens))
}

/// Complete planted model: weights, input and the expected token sequence
/// (sentinels included). Decoding the input with the weights at noise level
/// zero reproduces the expected tokens exactly.
pub fn build_planted_model(
    spec: &PlantedSpec,
    config: &ModelConfig,
) -> Result<(ModelWeights, Spectrogram, Vec<u32>)> {
    let weights = planted_weights(config, spec.alignment.len(), spec.seed)?;
    let (input, expected) = planted_input(spec, config)?;
    Ok((weights, input, expected))
}

// ---------------------------------------------------------------------------
