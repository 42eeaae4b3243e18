//! Text formats for model weights (`XAPW1`) and spectrograms (`SPG1`).
//!
//! Weight files start with the line `XAPW1`, followed by named sections
//! `@<name> <rows> <cols>` each holding `rows` lines of space-separated
//! decimal floats. Floats are written with Rust's shortest round-trip
//! formatting, so save/load is bit-exact. The configuration travels in a
//! `@config` section as a single row of integral values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{
    DecoderLayerWeights, EncoderLayerWeights, ModelConfig, ModelWeights, Spectrogram,
};

const WEIGHTS_MAGIC: &str = "XAPW1";
const SPECTROGRAM_MAGIC: &str = "SPG1";
const CONFIG_FIELDS: usize = 11;

fn write_floats(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

fn push_section(out: &mut String, name: &str, m: &Matrix) {
    out.push_str(&format!("@{name} {} {}\n", m.rows(), m.cols()));
    for r in 0..m.rows() {
        write_floats(out, m.row(r));
    }
}

fn config_row(c: &ModelConfig) -> Vec<f64> {
    vec![
        c.layers as f64,
        c.heads as f64,
        c.embed_dim as f64,
        c.head_dim as f64,
        c.subsample as f64,
        c.vocab as f64,
        c.bos_id as f64,
        c.eos_id as f64,
        c.bins as f64,
        c.enc_layers as f64,
        c.mix_width as f64,
    ]
}

fn config_from_row(row: &[f64], source: &str) -> Result<ModelConfig> {
    if row.len() != CONFIG_FIELDS {
        return Err(Error::parse(
            source,
            format!("@config must hold {CONFIG_FIELDS} values, found {}", row.len()),
        ));
    }
    let as_usize = |v: f64, name: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(Error::parse(source, format!("config field {name} is not a count: {v}")));
        }
        Ok(v as usize)
    };
    let config = ModelConfig {
        layers: as_usize(row[0], "layers")?,
        heads: as_usize(row[1], "heads")?,
        embed_dim: as_usize(row[2], "embed_dim")?,
        head_dim: as_usize(row[3], "head_dim")?,
        subsample: as_usize(row[4], "subsample")?,
        vocab: as_usize(row[5], "vocab")?,
        bos_id: as_usize(row[6], "bos_id")? as u32,
        eos_id: as_usize(row[7], "eos_id")? as u32,
        bins: as_usize(row[8], "bins")?,
        enc_layers: as_usize(row[9], "enc_layers")?,
        mix_width: as_usize(row[10], "mix_width")?,
    };
    config.validate()?;
    Ok(config)
}

/// Serializes weights to the `XAPW1` text format.
pub fn weights_to_string(w: &ModelWeights) -> String {
    let mut out = String::new();
    out.push_str(WEIGHTS_MAGIC);
    out.push('\n');
    let config = Matrix::from_vec_unchecked(1, CONFIG_FIELDS, config_row(&w.config));
    push_section(&mut out, "config", &config);
    push_section(&mut out, "token_embed", &w.token_embed);
    push_section(&mut out, "readout", &w.readout);
    push_section(&mut out, "frame_embed", &w.frame_embed);
    for (i, layer) in w.encoder_layers.iter().enumerate() {
        push_section(&mut out, &format!("enc{i}_ff1"), &layer.ff1);
        push_section(&mut out, &format!("enc{i}_ff2"), &layer.ff2);
    }
    for (l, layer) in w.decoder_layers.iter().enumerate() {
        for h in 0..layer.queries.len() {
            push_section(&mut out, &format!("dec{l}_h{h}_wq"), &layer.queries[h]);
            push_section(&mut out, &format!("dec{l}_h{h}_wk"), &layer.keys[h]);
            push_section(&mut out, &format!("dec{l}_h{h}_wv"), &layer.values[h]);
        }
        push_section(&mut out, &format!("dec{l}_wo"), &layer.output);
    }
    out
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    std::fs::write(path, weights_to_string(w))?;
    Ok(())
}

fn parse_sections(text: &str, source: &str) -> Result<BTreeMap<String, Matrix>> {
    let mut lines = text.lines().peekable();
    match lines.next() {
        Some(line) if line.trim() == WEIGHTS_MAGIC => {}
        _ => return Err(Error::parse(source, format!("missing {WEIGHTS_MAGIC} magic line"))),
    }
    let mut sections = BTreeMap::new();
    while let Some(header) = lines.next() {
        let header = header.trim();
        if header.is_empty() {
            continue;
        }
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || !fields[0].starts_with('@') {
            return Err(Error::parse(
                source,
                format!("expected a section header '@name rows cols', found '{header}'"),
            ));
        }
        let name = fields[0][1..].to_string();
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(source, format!("bad row count in section @{name}")))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(source, format!("bad column count in section @{name}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| {
                Error::parse(source, format!("unexpected end of file in section @{name} (row {r})"))
            })?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::parse(source, format!("bad float '{f}' in section @{name}"))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != cols {
                return Err(Error::parse(
                    source,
                    format!(
                        "section @{name} row {r} has {} values, header says {cols}",
                        values.len()
                    ),
                ));
            }
            data.extend(values);
        }
        if sections.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(Error::parse(source, format!("duplicate section @{name}")));
        }
    }
    Ok(sections)
}

/// Parses the `XAPW1` text format back into validated weights. Missing
/// sections, leftover sections, and shape mismatches are all rejected with
/// the offending section named.
pub fn weights_from_string(text: &str, source: &str) -> Result<ModelWeights> {
    let mut sections = parse_sections(text, source)?;
    let mut take = |name: String| -> Result<Matrix> {
        sections
            .remove(&name)
            .ok_or_else(|| Error::parse(source, format!("missing section @{name}")))
    };
    let config_m = take("config".into())?;
    let config = config_from_row(config_m.data(), source)?;
    let token_embed = take("token_embed".into())?;
    let readout = take("readout".into())?;
    let frame_embed = take("frame_embed".into())?;
    let mut encoder_layers = Vec::with_capacity(config.enc_layers);
    for i in 0..config.enc_layers {
        encoder_layers.push(EncoderLayerWeights {
            ff1: take(format!("enc{i}_ff1"))?,
            ff2: take(format!("enc{i}_ff2"))?,
        });
    }
    let mut decoder_layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let mut queries = Vec::with_capacity(config.heads);
        let mut keys = Vec::with_capacity(config.heads);
        let mut values = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            queries.push(take(format!("dec{l}_h{h}_wq"))?);
            keys.push(take(format!("dec{l}_h{h}_wk"))?);
            values.push(take(format!("dec{l}_h{h}_wv"))?);
        }
        decoder_layers.push(DecoderLayerWeights {
            queries,
            keys,
            values,
            output: take(format!("dec{l}_wo"))?,
        });
    }
    if let Some(name) = sections.keys().next() {
        return Err(Error::parse(source, format!("unexpected section @{name}")));
    }
    let weights = ModelWeights {
        config,
        frame_embed,
        token_embed,
        readout,
        encoder_layers,
        decoder_layers,
    };
    weights.validate()?;
    Ok(weights)
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let text = std::fs::read_to_string(path)?;
    weights_from_string(&text, &path.display().to_string())
}

/// Serializes a spectrogram: `SPG1 <frames> <bins>` then one line per frame.
pub fn spectrogram_to_string(x: &Spectrogram) -> String {
    let mut out = String::new();
    out.push_str(&format!("{SPECTROGRAM_MAGIC} {} {}\n", x.frames(), x.bins()));
    for t in 0..x.frames() {
        write_floats(&mut out, x.values().row(t));
    }
    out
}

pub fn save_spectrogram(x: &Spectrogram, path: &Path) -> Result<()> {
    std::fs::write(path, spectrogram_to_string(x))?;
    Ok(())
}

pub fn spectrogram_from_string(text: &str, source: &str) -> Result<Spectrogram> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(source, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != SPECTROGRAM_MAGIC {
        return Err(Error::parse(
            source,
            format!("expected header '{SPECTROGRAM_MAGIC} <frames> <bins>'"),
        ));
    }
    let frames: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(source, "bad frame count"))?;
    let bins: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(source, "bad bin count"))?;
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(source, format!("missing frame {t}")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(source, format!("bad float '{f}' in frame {t}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != bins {
            return Err(Error::parse(
                source,
                format!("frame {t} has {} bins, header says {bins}", values.len()),
            ));
        }
        data.extend(values);
    }
    Spectrogram::new(Matrix::from_vec(frames, bins, data)?)
}

pub fn load_spectrogram(path: &Path) -> Result<Spectrogram> {
    let text = std::fs::read_to_string(path)?;
    spectrogram_from_string(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
