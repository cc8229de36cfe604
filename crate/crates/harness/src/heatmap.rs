//! SVG heatmaps of score grids on a diverging scale.
//!
//! Values below the midpoint shade towards red and reach full red at the
//! minimum; values above shade towards blue and reach full blue at the
//! maximum. Missing cells are grey.

use std::fmt::Write;

use crate::error::{HarnessError, Result};
use crate::matrix::LabeledMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Midpoint {
    Value(f64),
    /// Mean of all present cells.
    Mean,
    /// Each cell is centred on the mean of its own column.
    ColumnMean,
}

impl std::str::FromStr for Midpoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => return Ok(Midpoint::Mean),
            "column-mean" => return Ok(Midpoint::ColumnMean),
            _ => {}
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Midpoint::Value)
            .ok_or_else(|| format!("midpoint must be a number, `mean` or `column-mean`, got `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStyle {
    pub midpoint: Midpoint,
    pub cell: u32,
    pub decimals: usize,
    pub title: Option<String>,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        Self {
            midpoint: Midpoint::Value(0.0),
            cell: 40,
            decimals: 2,
            title: None,
        }
    }
}

const LOW: [f64; 3] = [178.0, 24.0, 43.0];
const MID: [f64; 3] = [247.0, 247.0, 247.0];
const HIGH: [f64; 3] = [33.0, 102.0, 172.0];
const MISSING: &str = "#cccccc";

fn hex(c: [f64; 3]) -> String {
    format!(
        "#{:02x}{:02x}{:02x}",
        c[0].round() as u8,
        c[1].round() as u8,
        c[2].round() as u8
    )
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Position on the scale in [-1, 1]: -1 at `lo`, 0 at `mid`, 1 at `hi`.
pub fn scale_position(v: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    let t = if v >= mid {
        if hi > mid {
            (v - mid) / (hi - mid)
        } else {
            0.0
        }
    } else if mid > lo {
        (v - mid) / (mid - lo)
    } else {
        0.0
    };
    t.clamp(-1.0, 1.0)
}

pub fn fill(t: f64) -> String {
    if t >= 0.0 {
        hex(lerp(MID, HIGH, t))
    } else {
        hex(lerp(MID, LOW, -t))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_heatmap(m: &LabeledMatrix, style: &HeatmapStyle) -> Result<String> {
    let present: Vec<f64> = m.present().collect();
    if present.is_empty() {
        return Err(HarnessError::data("heatmap", "matrix has no values"));
    }
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let col_mid: Vec<f64> = (0..m.cols.len())
        .map(|j| match style.midpoint {
            Midpoint::Value(v) => v,
            Midpoint::Mean => mean(&present),
            Midpoint::ColumnMean => {
                let col: Vec<f64> = m.values.iter().filter_map(|r| r[j]).collect();
                if col.is_empty() {
                    mean(&present)
                } else {
                    mean(&col)
                }
            }
        })
        .collect();
    // The legend shows the overall midpoint; per-column midpoints are averaged.
    let mid = mean(&col_mid);
    let c = style.cell as usize;
    let label_w = 12 + 7 * m.rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
    let top = if style.title.is_some() { 48 } else { 28 };
    let grid_w = c * m.cols.len();
    let grid_h = c * m.rows.len();
    let legend_x = label_w + grid_w + 24;
    let width = legend_x + 90;
    let height = (top + grid_h + 12).max(top + 160);
    let d = style.decimals;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    if let Some(t) = &style.title {
        let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14">{}</text>"#, label_w, escape(t));
    }
    for (j, col) in m.cols.iter().enumerate() {
        let x = label_w + j * c + c / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            top - 8,
            escape(col)
        );
    }
    for (i, (label, row)) in m.rows.iter().zip(&m.values).enumerate() {
        let y = top + i * c;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            label_w - 6,
            y + c / 2 + 4,
            escape(label)
        );
        for (j, v) in row.iter().enumerate() {
            let x = label_w + j * c;
            let (color, text) = match v {
                Some(v) => (fill(scale_position(*v, lo, col_mid[j], hi)), format!("{v:.d$}")),
                None => (MISSING.to_string(), String::new()),
            };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{c}" height="{c}" fill="{color}"/>"#
            );
            if !text.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{text}</text>"#,
                    x + c / 2,
                    y + c / 2 + 3
                );
            }
        }
    }
    // Legend: top is the maximum, bottom the minimum.
    let lh = 120;
    let mid_off = if hi > lo { (hi - mid) / (hi - lo) * 100.0 } else { 50.0 };
    let mid_off = mid_off.clamp(0.0, 100.0);
    let _ = writeln!(s, r#"<defs><linearGradient id="scale" x1="0" y1="0" x2="0" y2="1">"#);
    let _ = writeln!(s, r#"<stop offset="0%" stop-color="{}"/>"#, fill(1.0));
    let _ = writeln!(s, r#"<stop offset="{mid_off:.1}%" stop-color="{}"/>"#, fill(0.0));
    let _ = writeln!(s, r#"<stop offset="100%" stop-color="{}"/>"#, fill(-1.0));
    let _ = writeln!(s, "</linearGradient></defs>");
    let _ = writeln!(
        s,
        r#"<rect class="legend" x="{legend_x}" y="{top}" width="16" height="{lh}" fill="url(#scale)" stroke="gray"/>"#
    );
    let lx = legend_x + 22;
    let _ = writeln!(s, r#"<text x="{lx}" y="{}">{hi:.d$}</text>"#, top + 8);
    let _ = writeln!(
        s,
        r#"<text x="{lx}" y="{}">{mid:.d$}</text>"#,
        top as f64 + mid_off / 100.0 * lh as f64 + 4.0
    );
    let _ = writeln!(s, r#"<text x="{lx}" y="{}">{lo:.d$}</text>"#, top + lh);
    s.push_str("</svg>\n");
    Ok(s)
}
