//! `xattn sweep-ph`: recomputes the encoder-output saliency for a list of
//! occlusion probabilities and tabulates, per probability, the layer-wise
//! correlations with cross-attention and the deletion area.

use clap::Args;

use xattn_core::metrics::{CorrelationAccumulator, SentenceAggregation};
use xattn_core::model::{decode, encode};
use xattn_core::seed::derive;

use crate::config::{parse_float_list, resolve, FileConfig};
use crate::run::{encoder_leg, load_dataset, resolve_params, RunArgs};
use crate::{with_pool, CliError, SALT_SAMPLE_BASE, SALT_SWEEP_BASE};

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Occlusion probabilities to sweep, comma-separated
    #[arg(long)]
    pub probs: Option<String>,
}

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn execute(args: SweepArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.run.config.as_deref())?;
    let probs_text: String =
        resolve(args.probs, &file, "probs", "0.1,0.3,0.5,0.7,0.9".to_string())?;
    let mut probs = parse_float_list(&probs_text, "probs")?;
    // duplicates collapse to one row, first occurrence wins
    let mut seen = Vec::new();
    probs.retain(|p| {
        if seen.iter().any(|s: &f64| s == p) {
            false
        } else {
            seen.push(*p);
            true
        }
    });
    for &p in &probs {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Config(format!(
                "sweep probability must lie in (0, 1), got {p}"
            )));
        }
    }

    let config = args.run.config.clone();
    let params = resolve_params(config.as_deref(), args.run)?;
    let dataset = load_dataset(&params.data, params.model.as_deref())?;
    std::fs::create_dir_all(&params.out)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", params.out.display())))?;

    let layers = dataset.weights.config.layers;
    let heads = dataset.weights.config.heads;
    let mut table = String::from("p");
    for l in 0..layers {
        table.push_str(&format!(",l={}", l + 1));
    }
    table.push_str(",l-AVG,deletion\n");

    with_pool(params.workers, || -> Result<(), CliError> {
        for (row, &p) in probs.iter().enumerate() {
            let mut acc = CorrelationAccumulator::new(layers, heads);
            let mut area_sum = 0.0;
            let mut area_count = 0usize;
            for sample in &dataset.samples {
                let enc = encode(&sample.input, &dataset.weights)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                let trace = decode(
                    &enc,
                    &dataset.weights,
                    dataset.weights.config.default_max_len(enc.steps()),
                )
                .map_err(|e| CliError::Run(e.to_string()))?;
                let sample_seed = derive(params.seed, SALT_SAMPLE_BASE + sample.index as u64);
                let (_, report, curve) = encoder_leg(
                    &trace,
                    &dataset.weights,
                    &sample.reference,
                    p,
                    params.trials_encoder,
                    derive(sample_seed, SALT_SWEEP_BASE + row as u64),
                    SentenceAggregation::Max,
                )
                .map_err(|e| CliError::Run(e.to_string()))?;
                acc.add(&report).map_err(|e| CliError::Run(e.to_string()))?;
                area_sum += curve.area;
                area_count += 1;
            }
            let report = acc.finish();
            table.push_str(&format!("{p}"));
            for l in 0..layers {
                table.push(',');
                table.push_str(&cell_text(report.per_layer[l]));
            }
            table.push(',');
            table.push_str(&cell_text(report.global));
            table.push_str(&format!(",{:.6}\n", area_sum / area_count.max(1) as f64));
        }
        Ok(())
    })?;

    std::fs::write(params.out.join("sweep_ph.csv"), &table)
        .map_err(|e| CliError::Run(format!("cannot write sweep_ph.csv: {e}")))?;
    print!("{table}");
    Ok(())
}
