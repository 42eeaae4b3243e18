//! `xattn gen`: builds one planted-alignment model plus a set of inputs with
//! per-sample span layouts, and writes weights, spectrograms, references and
//! a manifest. Everything is constructed in memory first, so an infeasible
//! request fails before any file is written.

use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xattn_core::model::io::{spectrogram_to_string, weights_to_string};
use xattn_core::model::planted::{planted_input, planted_weights, PlantedSpec};
use xattn_core::model::ModelConfig;
use xattn_core::seed::derive;

use crate::config::{resolve, resolve_required, FileConfig};
use crate::{CliError, SALT_MODEL, SALT_SAMPLE_BASE};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Flat key=value configuration file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the dataset
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of input samples to generate
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub frames_min: Option<usize>,
    #[arg(long)]
    pub frames_max: Option<usize>,
    /// Frequency bins of the generated inputs
    #[arg(long)]
    pub bins: Option<usize>,
    /// Content tokens per sample
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Std of the additive input noise
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
}

pub(crate) struct GenParams {
    pub out: PathBuf,
    pub seed: u64,
    pub count: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub tokens: usize,
    pub noise: f64,
    pub model: ModelConfig,
}

pub(crate) fn resolve_params(args: GenArgs) -> Result<GenParams, CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let heads = resolve(args.heads, &file, "heads", 2)?;
    let head_dim = resolve(args.head_dim, &file, "head_dim", 16)?;
    let params = GenParams {
        out: resolve_required(args.out, &file, "out")?,
        seed: resolve(args.seed, &file, "seed", 7)?,
        count: resolve(args.count, &file, "count", 4)?,
        frames_min: resolve(args.frames_min, &file, "frames_min", 144)?,
        frames_max: resolve(args.frames_max, &file, "frames_max", 176)?,
        tokens: resolve(args.tokens, &file, "tokens", 8)?,
        noise: resolve(args.noise, &file, "noise", 0.02)?,
        model: ModelConfig {
            layers: resolve(args.layers, &file, "layers", 2)?,
            heads,
            embed_dim: heads * head_dim,
            head_dim,
            subsample: resolve(args.subsample, &file, "subsample", 4)?,
            vocab: resolve(args.vocab, &file, "vocab", 16)?,
            bos_id: 0,
            eos_id: 1,
            bins: resolve(args.bins, &file, "bins", 16)?,
            enc_layers: 0,
            mix_width: 1,
        },
    };
    if params.count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    if params.frames_min > params.frames_max || params.frames_min == 0 {
        return Err(CliError::Config("need 0 < frames_min <= frames_max".into()));
    }
    Ok(params)
}

/// Draws ascending non-overlapping spans, one per content token, leaving
/// room for the terminator span at the end. Spans are aligned to encoder-step
/// boundaries so that every span covers whole steps; partially covered edge
/// steps would receive only a fraction of the planted attention mass.
pub fn draw_spans(
    frames: usize,
    tokens: usize,
    subsample: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>, CliError> {
    let total_steps = frames / subsample;
    let segment_steps = total_steps.saturating_sub(1) / tokens.max(1);
    if segment_steps < 2 {
        return Err(CliError::Config(format!(
            "{frames} frames cannot host {tokens} spans of at least {} frames each",
            2 * subsample
        )));
    }
    let max_width = segment_steps.min(3);
    Ok((0..tokens)
        .map(|k| {
            let width = rng.gen_range(2..=max_width);
            let offset = rng.gen_range(0..=segment_steps - width);
            let start = (k * segment_steps + offset) * subsample;
            (start, start + width * subsample)
        })
        .collect())
}

struct SampleFiles {
    spectrogram: String,
    reference: String,
    frames: usize,
    seed: u64,
    spans: Vec<(usize, usize)>,
}

pub fn execute(args: GenArgs) -> Result<(), CliError> {
    let params = resolve_params(args)?;
    // planning failures are configuration errors; nothing is written yet
    let weights = planted_weights(&params.model, params.tokens, derive(params.seed, SALT_MODEL))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let weights_text = weights_to_string(&weights);

    // build every sample before touching the filesystem
    let mut samples = Vec::with_capacity(params.count);
    for k in 0..params.count {
        let sample_seed = derive(params.seed, SALT_SAMPLE_BASE + k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let frames = rng.gen_range(params.frames_min..=params.frames_max);
        let spans = draw_spans(frames, params.tokens, params.model.subsample, &mut rng)?;
        let spec = PlantedSpec {
            frames,
            alignment: spans.clone(),
            noise_level: params.noise,
            seed: sample_seed,
        };
        let (input, expected) =
            planted_input(&spec, &params.model).map_err(|e| CliError::Config(e.to_string()))?;
        let reference: Vec<String> = expected
            .iter()
            .filter(|&&t| t != params.model.bos_id && t != params.model.eos_id)
            .map(|t| t.to_string())
            .collect();
        samples.push(SampleFiles {
            spectrogram: spectrogram_to_string(&input),
            reference: reference.join(" ") + "\n",
            frames,
            seed: sample_seed,
            spans,
        });
    }

    let mut manifest = String::new();
    manifest.push_str(&format!("seed = {}\n", params.seed));
    manifest.push_str(&format!("count = {}\n", params.count));
    manifest.push_str(&format!("tokens = {}\n", params.tokens));
    manifest.push_str(&format!("noise = {}\n", params.noise));
    manifest.push_str("model = model.xapw\n");
    for (k, sample) in samples.iter().enumerate() {
        let spans: Vec<String> = sample.spans.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        manifest.push_str(&format!(
            "sample_{k} = sample_{k}.spg sample_{k}.ref seed={} frames={} spans={}\n",
            sample.seed,
            sample.frames,
            spans.join(";")
        ));
    }

    std::fs::create_dir_all(&params.out)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", params.out.display())))?;
    let write = |name: String, text: &str| -> Result<(), CliError> {
        std::fs::write(params.out.join(&name), text)
            .map_err(|e| CliError::Run(format!("cannot write {name}: {e}")))
    };
    write("model.xapw".into(), &weights_text)?;
    for (k, sample) in samples.iter().enumerate() {
        write(format!("sample_{k}.spg"), &sample.spectrogram)?;
        write(format!("sample_{k}.ref"), &sample.reference)?;
    }
    write("manifest.txt".into(), &manifest)?;
    println!(
        "wrote {} sample(s) and model weights to {}",
        params.count,
        params.out.display()
    );
    Ok(())
}
