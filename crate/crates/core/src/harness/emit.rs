//! Report, field, and checkpoint output: CSV tables, SVG heatmaps, and the
//! binary parameter dump. All writers are deterministic given identical
//! inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::harness::{Landscape, Report};

/// Writes `report.csv` with one row per cell:
/// `cell-id,mean_rel_l2,std_rel_l2,n_converged,wall_mean_s`.
/// Cells whose seeds all diverged carry `-` in the statistics columns.
pub fn write_report_csv(path: &Path, report: &Report) -> Result<()> {
    let mut out = String::from("cell-id,mean_rel_l2,std_rel_l2,n_converged,wall_mean_s\n");
    for cell in &report.cells {
        let mean = cell
            .mean_rel_l2
            .map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
        let std = cell
            .std_rel_l2
            .map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            cell.id, mean, std, cell.n_converged, cell.wall_mean_s
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes `landscape.csv` with one row per grid point:
/// `alpha,beta,loss,rel_l2` (`rel_l2` empty without an exact solution).
pub fn write_landscape_csv(path: &Path, landscape: &Landscape) -> Result<()> {
    let mut out = String::from("alpha,beta,loss,rel_l2\n");
    for (i, a) in landscape.alphas.iter().enumerate() {
        for (j, b) in landscape.betas.iter().enumerate() {
            let rel = landscape
                .rel_l2
                .as_ref()
                .map_or(String::new(), |r| format!("{:e}", r[[i, j]]));
            out.push_str(&format!("{a:e},{b:e},{:e},{rel}\n", landscape.loss[[i, j]]));
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Five-stop diverging-free colormap for magnitude heatmaps.
fn colormap(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            return (
                (c0[0] + f * (c1[0] - c0[0])) as u8,
                (c0[1] + f * (c1[1] - c0[1])) as u8,
                (c0[2] + f * (c1[2] - c0[2])) as u8,
            );
        }
    }
    (253, 231, 37)
}

/// Renders a matrix as an SVG heatmap with a caption and min/max labels.
/// Rows map to the vertical axis (first row at the bottom).
pub fn write_heatmap_svg(path: &Path, values: &Array2<f64>, title: &str) -> Result<()> {
    let (rows, cols) = values.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::config("empty heatmap"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = 6.0_f64;
    let margin = 24.0;
    let width = cols as f64 * cell + 2.0 * margin;
    let height = rows as f64 * cell + 2.0 * margin + 18.0;
    let mut svg = String::with_capacity(rows * cols * 64);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{margin}\" y=\"16\" font-family=\"monospace\" font-size=\"12\">{title}</text>\n"
    ));
    for i in 0..rows {
        for j in 0..cols {
            let v = values[[i, j]];
            let t = if v.is_finite() { (v - lo) / span } else { 1.0 };
            let (r, g, b) = colormap(t);
            let x = margin + j as f64 * cell;
            let y = margin + (rows - 1 - i) as f64 * cell;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({r},{g},{b})\"/>\n"
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{margin}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">min {lo:.3e}  max {hi:.3e}</text>\n",
        height - 8.0
    ));
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"PDLB";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a parameter checkpoint: a 16-byte header (4-byte magic, u32
/// version, u64 count, all little-endian) followed by the parameters as
/// little-endian f64.
pub fn write_checkpoint(path: &Path, params: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * params.len());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::config("not a parameter checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sized"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("sized")) as usize;
    if bytes.len() != 16 + 8 * count {
        return Err(Error::config("checkpoint is truncated"));
    }
    Ok(bytes[16..]
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("sized")))
        .collect())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}
