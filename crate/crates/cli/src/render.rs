//! `xattn render`: reads any exported artifact (attention tensor, attention
//! map CSV, saliency export, or spectrogram) and writes a grayscale PGM or a
//! labelled SVG heatmap. Time runs horizontally for spectrogram-shaped data.

use std::path::PathBuf;

use clap::Args;

use xattn_core::attention::{aggregate, map_from_csv, tensor_from_string, AggregationSpec};
use xattn_core::attribution::{encoder_saliency_from_string, input_saliency_from_string};
use xattn_core::heatmap;
use xattn_core::model::io::spectrogram_from_string;
use xattn_core::numerics::Matrix;

use crate::CliError;

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Exported file: XATT1, XSAL1, XSALH1, SPG1 or attention-map CSV
    pub input: PathBuf,
    /// Output path; defaults to the input path plus .pgm / .svg
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit a labelled SVG grid instead of a PGM
    #[arg(long)]
    pub svg: bool,
}

struct Picture {
    matrix: Matrix,
    x_label: &'static str,
    y_label: &'static str,
}

fn load_picture(text: &str, source: &str) -> Result<Picture, CliError> {
    let magic = text.split_whitespace().next().unwrap_or("");
    let picture = match magic {
        "XATT1" => {
            let tensor =
                tensor_from_string(text, source).map_err(|e| CliError::Run(e.to_string()))?;
            let spec = AggregationSpec::full(tensor.layers(), tensor.heads())
                .map_err(|e| CliError::Run(e.to_string()))?;
            let map = aggregate(&tensor, &spec).map_err(|e| CliError::Run(e.to_string()))?;
            Picture {
                matrix: map.into_matrix(),
                x_label: "encoder step",
                y_label: "token",
            }
        }
        "XSAL1" => {
            let sal = input_saliency_from_string(text, source)
                .map_err(|e| CliError::Run(e.to_string()))?;
            // collapse tokens by max, then put time on the horizontal axis
            let mut picture = Matrix::zeros(sal.frames(), sal.bins());
            for pos in 0..sal.out_len() {
                for t in 0..sal.frames() {
                    for f in 0..sal.bins() {
                        let v = sal.value(pos, t, f);
                        if v > picture.get(t, f) {
                            picture.set(t, f, v);
                        }
                    }
                }
            }
            Picture {
                matrix: picture.transposed(),
                x_label: "time frame",
                y_label: "frequency bin",
            }
        }
        "XSALH1" => {
            let sal = encoder_saliency_from_string(text, source)
                .map_err(|e| CliError::Run(e.to_string()))?;
            Picture {
                matrix: sal.values().clone(),
                x_label: "encoder step",
                y_label: "token",
            }
        }
        "SPG1" => {
            let x = spectrogram_from_string(text, source)
                .map_err(|e| CliError::Run(e.to_string()))?;
            Picture {
                matrix: x.values().transposed(),
                x_label: "time frame",
                y_label: "frequency bin",
            }
        }
        _ => {
            let map = map_from_csv(text, source).map_err(|e| {
                CliError::Run(format!("unrecognized export format in {source}: {e}"))
            })?;
            Picture {
                matrix: map.into_matrix(),
                x_label: "encoder step",
                y_label: "token",
            }
        }
    };
    Ok(picture)
}

pub fn execute(args: RenderArgs) -> Result<(), CliError> {
    let source = args.input.display().to_string();
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Config(format!("cannot read {source}: {e}")))?;
    let picture = load_picture(&text, &source)?;
    let extension = if args.svg { "svg" } else { "pgm" };
    let out = args.out.unwrap_or_else(|| {
        let mut name = args.input.as_os_str().to_owned();
        name.push(format!(".{extension}"));
        PathBuf::from(name)
    });
    let rendered = if args.svg {
        heatmap::to_svg(&picture.matrix, picture.x_label, picture.y_label)
    } else {
        heatmap::to_pgm(&picture.matrix)
    };
    std::fs::write(&out, rendered)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", out.display())))?;
    println!("rendered {} -> {}", source, out.display());
    Ok(())
}
