//! Grayscale heatmap rendering: 8-bit PGM (P2) and a minimal labelled SVG
//! grid. Values are min-max scaled to [0, 255]; a constant map renders as
//! uniform mid-gray.

use crate::numerics::Matrix;

fn scaled_levels(m: &Matrix) -> Vec<u8> {
    let min = m.min_value();
    let max = m.max_value();
    let range = max - min;
    m.data()
        .iter()
        .map(|&v| {
            if range <= 0.0 {
                128
            } else {
                ((v - min) / range * 255.0).round() as u8
            }
        })
        .collect()
}

/// Plain-text PGM (P2), row-major, one matrix row per image row.
pub fn to_pgm(m: &Matrix) -> String {
    let levels = scaled_levels(m);
    let mut out = format!("P2\n{} {}\n255\n", m.cols(), m.rows());
    for r in 0..m.rows() {
        let row: Vec<String> = levels[r * m.cols()..(r + 1) * m.cols()]
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Minimal SVG grid with axis labels: one gray rectangle per cell.
pub fn to_svg(m: &Matrix, x_label: &str, y_label: &str) -> String {
    const CELL: usize = 12;
    const MARGIN: usize = 30;
    let levels = scaled_levels(m);
    let width = m.cols() * CELL + MARGIN;
    let height = m.rows() * CELL + MARGIN;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    );
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let level = levels[r * m.cols() + c];
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"rgb({level},{level},{level})\"/>\n",
                MARGIN + c * CELL,
                r * CELL,
            ));
        }
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
        MARGIN + m.cols() * CELL / 2,
        m.rows() * CELL + 20,
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"10\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\" \
         transform=\"rotate(-90 10 {})\">{}</text>\n",
        m.rows() * CELL / 2,
        m.rows() * CELL / 2,
        y_label
    ));
    out.push_str("</svg>\n");
    out
}
