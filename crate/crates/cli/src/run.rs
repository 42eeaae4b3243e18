//! `xattn run`: the full per-sample pipeline. Decode and record
//! cross-attention, estimate input and encoder-output saliency, aggregate
//! and normalize, then emit correlation tables, deletion curves, map exports
//! and optional heatmaps. Samples are isolated: one failure is logged and
//! the run continues.

use std::path::{Path, PathBuf};

use clap::Args;

use xattn_core::attention::{aggregate, map_to_csv, AggregationSpec};
use xattn_core::attribution::{
    build_clusters, compute_encoder_saliency, compute_input_saliency, encoder_saliency_to_string,
    input_saliency_to_string, EncoderSaliency, InputSaliency, PerturbationConfig,
    PerturbationTarget,
};
use xattn_core::error::Result as CoreResult;
use xattn_core::heatmap;
use xattn_core::metrics::{
    aggregate_saliency_to_grid, correlation_report, curve_to_csv, deletion_curve_encoder,
    deletion_curve_input, minmax_normalize_rows, report_to_csv, sentence_level_saliency,
    AggregationMode, CorrelationAccumulator, CorrelationReport, DeletionCurve,
    SentenceAggregation,
};
use xattn_core::model::io::{load_spectrogram, load_weights};
use xattn_core::model::{decode, encode, DecodeTrace, ModelWeights, Spectrogram};
use xattn_core::numerics::Matrix;
use xattn_core::seed::derive;

use crate::config::{parse_float_list, resolve, resolve_required, FileConfig};
use crate::{
    with_pool, CliError, SALT_CLUSTERS, SALT_ENCODER, SALT_INPUT, SALT_SAMPLE_BASE,
};

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Flat key=value configuration file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory produced by `xattn gen`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for reports, curves and exports
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input-occlusion trials per sample
    #[arg(long)]
    pub trials_input: Option<usize>,
    /// Encoder-occlusion trials per sample
    #[arg(long)]
    pub trials_encoder: Option<usize>,
    /// Occlusion probability per input cluster
    #[arg(long)]
    pub p_input: Option<f64>,
    /// Occlusion probability per encoder step
    #[arg(long)]
    pub p_encoder: Option<f64>,
    /// Saliency-to-grid reduction: avg2d, 2step or max2d
    #[arg(long)]
    pub agg: Option<String>,
    /// Worker threads for perturbation trials (0 = library default)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Cluster densities per time unit, comma-separated
    #[arg(long)]
    pub scales: Option<String>,
    /// Also write PGM heatmaps per sample
    #[arg(long)]
    pub heatmaps: bool,
    /// Sentence-level reduction for deletion ranking: max or mean
    #[arg(long)]
    pub sentence_agg: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct RunParams {
    pub data: PathBuf,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub trials_input: usize,
    pub trials_encoder: usize,
    pub p_input: f64,
    pub p_encoder: f64,
    pub agg: AggregationMode,
    pub workers: usize,
    pub scales: Vec<f64>,
    pub heatmaps: bool,
    pub sentence_agg: SentenceAggregation,
}

pub(crate) fn resolve_params(
    config: Option<&Path>,
    args: RunArgs,
) -> Result<RunParams, CliError> {
    let file = FileConfig::load(config)?;
    let agg_text: String = resolve(args.agg, &file, "agg", "max2d".to_string())?;
    let agg = AggregationMode::parse(&agg_text).map_err(|e| CliError::Config(e.to_string()))?;
    let scales_text: String = resolve(args.scales, &file, "scales", "2,3,4".to_string())?;
    let scales = parse_float_list(&scales_text, "scales")?;
    let sentence_text: String =
        resolve(args.sentence_agg, &file, "sentence_agg", "max".to_string())?;
    let sentence_agg = match sentence_text.as_str() {
        "max" => SentenceAggregation::Max,
        "mean" => SentenceAggregation::Mean,
        other => {
            return Err(CliError::Config(format!(
                "unknown sentence aggregation '{other}' (expected max or mean)"
            )))
        }
    };
    let params = RunParams {
        data: resolve_required(args.data, &file, "data")?,
        model: file.get("model").map(PathBuf::from),
        out: resolve_required(args.out, &file, "out")?,
        seed: resolve(args.seed, &file, "seed", 7)?,
        trials_input: resolve(args.trials_input, &file, "trials_input", 2000)?,
        trials_encoder: resolve(args.trials_encoder, &file, "trials_encoder", 2000)?,
        p_input: resolve(args.p_input, &file, "p_input", 0.5)?,
        p_encoder: resolve(args.p_encoder, &file, "p_encoder", 0.7)?,
        agg,
        workers: resolve(args.workers, &file, "workers", 0)?,
        scales,
        heatmaps: args.heatmaps || file.get("heatmaps") == Some("true"),
        sentence_agg,
    };
    for (name, p) in [("p_input", params.p_input), ("p_encoder", params.p_encoder)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Config(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    Ok(params)
}

pub(crate) struct Sample {
    pub index: usize,
    pub input: Spectrogram,
    pub reference: Vec<u32>,
}

pub(crate) struct Dataset {
    pub weights: ModelWeights,
    pub samples: Vec<Sample>,
}

pub(crate) fn load_dataset(data: &Path, model: Option<&Path>) -> Result<Dataset, CliError> {
    let model_path = model
        .map(PathBuf::from)
        .unwrap_or_else(|| data.join("model.xapw"));
    let weights = load_weights(&model_path)
        .map_err(|e| CliError::Config(format!("cannot load model: {e}")))?;
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(data)
        .map_err(|e| CliError::Config(format!("cannot read dataset {}: {e}", data.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Run(e.to_string()))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(index) = name
            .strip_prefix("sample_")
            .and_then(|s| s.strip_suffix(".spg"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indexed.push((index, entry.path()));
        }
    }
    indexed.sort_by_key(|(k, _)| *k);
    if indexed.is_empty() {
        return Err(CliError::Config(format!(
            "no sample_<k>.spg files in {}",
            data.display()
        )));
    }
    let mut samples = Vec::with_capacity(indexed.len());
    for (index, path) in indexed {
        let input = load_spectrogram(&path).map_err(|e| CliError::Run(e.to_string()))?;
        let ref_path = data.join(format!("sample_{index}.ref"));
        let text = std::fs::read_to_string(&ref_path).map_err(|e| {
            CliError::Config(format!("cannot read reference {}: {e}", ref_path.display()))
        })?;
        let reference: Vec<u32> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|_| {
                    CliError::Config(format!("bad token id '{t}' in {}", ref_path.display()))
                })
            })
            .collect::<Result<_, _>>()?;
        samples.push(Sample {
            index,
            input,
            reference,
        });
    }
    Ok(Dataset { weights, samples })
}

/// Everything the pipeline derives from one sample.
pub(crate) struct SampleAnalysis {
    pub trace: DecodeTrace,
    pub smx: InputSaliency,
    pub smh: EncoderSaliency,
    pub report_x: CorrelationReport,
    pub report_h: CorrelationReport,
    pub curve_x: DeletionCurve,
    pub curve_h: DeletionCurve,
}

/// Sentinel-stripped, token-normalized form of a saliency grid, ready for
/// correlation against attention maps.
pub(crate) fn correlation_grid(grid: &Matrix, trace: &DecodeTrace) -> CoreResult<Matrix> {
    let stripped = grid.select_rows(&trace.content_rows())?;
    Ok(minmax_normalize_rows(&stripped))
}

/// Encoder-saliency leg shared by `run` and the probability sweep.
pub(crate) fn encoder_leg(
    trace: &DecodeTrace,
    weights: &ModelWeights,
    reference: &[u32],
    p_encoder: f64,
    trials: usize,
    seed: u64,
    sentence_agg: SentenceAggregation,
) -> CoreResult<(EncoderSaliency, CorrelationReport, DeletionCurve)> {
    let cfg = PerturbationConfig {
        occlusion_prob: p_encoder,
        trials,
        seed,
        target: PerturbationTarget::Encoder,
    };
    let smh = compute_encoder_saliency(&trace.encoder_states, trace, weights, &cfg)?;
    let grid = correlation_grid(smh.values(), trace)?;
    let report = correlation_report(&trace.attention, &grid, trace)?;
    let sentence = sentence_level_saliency(&minmax_normalize_rows(smh.values()), sentence_agg)?;
    let curve = deletion_curve_encoder(&trace.encoder_states, &sentence, weights, reference)?;
    Ok((smh, report, curve))
}

pub(crate) fn analyze_sample(
    sample: &Sample,
    weights: &ModelWeights,
    params: &RunParams,
) -> CoreResult<SampleAnalysis> {
    let sample_seed = derive(params.seed, SALT_SAMPLE_BASE + sample.index as u64);
    let enc = encode(&sample.input, weights)?;
    let trace = decode(&enc, weights, weights.config.default_max_len(enc.steps()))?;

    // input leg
    let clusters = build_clusters(&sample.input, &params.scales, derive(sample_seed, SALT_CLUSTERS))?;
    let cfg_input = PerturbationConfig {
        occlusion_prob: params.p_input,
        trials: params.trials_input,
        seed: derive(sample_seed, SALT_INPUT),
        target: PerturbationTarget::Input,
    };
    let smx = compute_input_saliency(&sample.input, &trace, weights, &clusters, &cfg_input)?;
    let grid_x = aggregate_saliency_to_grid(&smx, enc.steps(), params.agg)?;
    let corr_x = correlation_grid(&grid_x, &trace)?;
    let report_x = correlation_report(&trace.attention, &corr_x, &trace)?;
    let sentence_x =
        sentence_level_saliency(&minmax_normalize_rows(&grid_x), params.sentence_agg)?;
    let curve_x = deletion_curve_input(&sample.input, &sentence_x, weights, &sample.reference)?;

    // encoder leg
    let (smh, report_h, curve_h) = encoder_leg(
        &trace,
        weights,
        &sample.reference,
        params.p_encoder,
        params.trials_encoder,
        derive(sample_seed, SALT_ENCODER),
        params.sentence_agg,
    )?;

    Ok(SampleAnalysis {
        trace,
        smx,
        smh,
        report_x,
        report_h,
        curve_x,
        curve_h,
    })
}

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Max over query rows of the raw input saliency, as a `frames x bins`
/// picture for rendering.
fn saliency_picture(smx: &InputSaliency) -> Matrix {
    let mut out = Matrix::zeros(smx.frames(), smx.bins());
    for pos in 0..smx.out_len() {
        for t in 0..smx.frames() {
            for f in 0..smx.bins() {
                let v = smx.value(pos, t, f);
                if v > out.get(t, f) {
                    out.set(t, f, v);
                }
            }
        }
    }
    out
}

pub fn execute(args: RunArgs) -> Result<(), CliError> {
    let config = args.config.clone();
    let params = resolve_params(config.as_deref(), args)?;
    let dataset = load_dataset(&params.data, params.model.as_deref())?;
    std::fs::create_dir_all(&params.out)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", params.out.display())))?;

    let results: Vec<(usize, CoreResult<SampleAnalysis>)> = with_pool(params.workers, || {
        dataset
            .samples
            .iter()
            .map(|sample| (sample.index, analyze_sample(sample, &dataset.weights, &params)))
            .collect()
    });

    let layers = dataset.weights.config.layers;
    let heads = dataset.weights.config.heads;
    let mut acc_x = CorrelationAccumulator::new(layers, heads);
    let mut acc_h = CorrelationAccumulator::new(layers, heads);
    let mut summary = String::from(
        "sample,rho_input_global,rho_encoder_global,deletion_input_area,deletion_encoder_area\n",
    );
    let mut errors = String::new();
    let mut succeeded = 0usize;

    let write = |name: String, text: &str| -> Result<(), CliError> {
        std::fs::write(params.out.join(&name), text)
            .map_err(|e| CliError::Run(format!("cannot write {name}: {e}")))
    };

    for (index, result) in &results {
        match result {
            Err(e) => {
                errors.push_str(&format!("sample_{index}: {e}\n"));
            }
            Ok(analysis) => {
                succeeded += 1;
                acc_x
                    .add(&analysis.report_x)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                acc_h
                    .add(&analysis.report_h)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                summary.push_str(&format!(
                    "{index},{},{},{:.6},{:.6}\n",
                    cell_text(analysis.report_x.global),
                    cell_text(analysis.report_h.global),
                    analysis.curve_x.area,
                    analysis.curve_h.area,
                ));
                write(format!("deletion_input_{index}.csv"), &curve_to_csv(&analysis.curve_x))?;
                write(
                    format!("deletion_encoder_{index}.csv"),
                    &curve_to_csv(&analysis.curve_h),
                )?;
                let full = AggregationSpec::full(layers, heads)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                let ca_map = aggregate(&analysis.trace.attention, &full)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                write(format!("sample_{index}_ca.csv"), &map_to_csv(&ca_map))?;
                write(
                    format!("sample_{index}_smx.xsal"),
                    &input_saliency_to_string(&analysis.smx),
                )?;
                write(
                    format!("sample_{index}_smh.xsalh"),
                    &encoder_saliency_to_string(&analysis.smh),
                )?;
                if params.heatmaps {
                    let dir = params.out.join("heatmaps");
                    std::fs::create_dir_all(&dir).map_err(|e| CliError::Run(e.to_string()))?;
                    let emit = |name: String, m: &Matrix| -> Result<(), CliError> {
                        std::fs::write(dir.join(&name), heatmap::to_pgm(m))
                            .map_err(|e| CliError::Run(format!("cannot write {name}: {e}")))
                    };
                    emit(format!("sample_{index}_ca.pgm"), ca_map.values())?;
                    emit(
                        format!("sample_{index}_smx.pgm"),
                        &saliency_picture(&analysis.smx).transposed(),
                    )?;
                    emit(format!("sample_{index}_smh.pgm"), analysis.smh.values())?;
                }
            }
        }
    }

    write("report_input.csv".into(), &report_to_csv(&acc_x.finish()))?;
    write("report_encoder.csv".into(), &report_to_csv(&acc_h.finish()))?;
    write("summary.csv".into(), &summary)?;
    if !errors.is_empty() {
        write("errors.txt".into(), &errors)?;
    }
    println!(
        "analyzed {succeeded}/{} sample(s); reports in {}",
        results.len(),
        params.out.display()
    );
    if succeeded == 0 {
        return Err(CliError::Run("all samples failed; see errors.txt".into()));
    }
    Ok(())
}
