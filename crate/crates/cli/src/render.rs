//! Rendering helpers: preview image grids (PNG) and score histograms (SVG).

use image::{Rgb, RgbImage};
use ndarray::Array3;

use oodkit::error::{Error, Result};

/// Upscaling factor for preview cells.
const SCALE: u32 = 4;
/// Gap between grid cells in output pixels.
const GAP: u32 = 2;

/// One preview row: input, saliency-magnitude heatmap, outlier.
pub struct PreviewRow {
    pub input: Array3<f32>,
    pub saliency_mag: ndarray::Array2<f32>,
    pub outlier: Array3<f32>,
}

fn put_cell_rgb(img: &mut RgbImage, x0: u32, y0: u32, cell: &Array3<f32>) {
    let (c, h, w) = (cell.shape()[0], cell.shape()[1], cell.shape()[2]);
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| -> u8 {
                let v = if c == 1 { cell[[0, y, x]] } else { cell[[ch.min(c - 1), y, x]] };
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            let color = Rgb([px(0), px(1), px(2)]);
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    img.put_pixel(
                        x0 + x as u32 * SCALE + dx,
                        y0 + y as u32 * SCALE + dy,
                        color,
                    );
                }
            }
        }
    }
}

fn heat_cell(mag: &ndarray::Array2<f32>) -> Array3<f32> {
    let (h, w) = (mag.shape()[0], mag.shape()[1]);
    let max = mag.iter().cloned().fold(0.0f32, f32::max).max(1e-12);
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let t = mag[[y, x]] / max;
            // Black → orange → white ramp.
            out[[0, y, x]] = (t * 1.6).min(1.0);
            out[[1, y, x]] = (t * 1.1).min(1.0) * t;
            out[[2, y, x]] = t * t * t;
        }
    }
    out
}

/// Renders rows of (input, |saliency| heatmap, outlier) triplets to a PNG.
pub fn write_preview_grid(path: &std::path::Path, rows: &[PreviewRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::ConfigParse("no preview rows to render".into()));
    }
    let (_, h, w) = (
        rows[0].input.shape()[0],
        rows[0].input.shape()[1],
        rows[0].input.shape()[2],
    );
    let cell_w = w as u32 * SCALE;
    let cell_h = h as u32 * SCALE;
    let img_w = 3 * cell_w + 4 * GAP;
    let img_h = rows.len() as u32 * (cell_h + GAP) + GAP;
    let mut img = RgbImage::from_pixel(img_w, img_h, Rgb([24, 24, 24]));
    for (i, row) in rows.iter().enumerate() {
        let y0 = GAP + i as u32 * (cell_h + GAP);
        put_cell_rgb(&mut img, GAP, y0, &row.input);
        put_cell_rgb(&mut img, 2 * GAP + cell_w, y0, &heat_cell(&row.saliency_mag));
        put_cell_rgb(&mut img, 3 * GAP + 2 * cell_w, y0, &row.outlier);
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(|e| Error::UnreadableImage {
        path: path.into(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// One histogram panel: a postprocessor's ID and OOD scores.
pub struct HistPanel {
    pub postprocessor: String,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

/// Renders overlaid ID/OOD histograms, one panel per postprocessor, as SVG.
pub fn write_score_histogram(path: &std::path::Path, panels: &[HistPanel], bins: usize) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::ConfigParse("no score panels to render".into()));
    }
    let bins = bins.max(2);
    let panel_w = 640.0;
    let panel_h = 180.0;
    let margin = 40.0;
    let width = panel_w + 2.0 * margin;
    let height = panels.len() as f64 * (panel_h + 60.0) + margin;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for (pi, panel) in panels.iter().enumerate() {
        let top = margin / 2.0 + pi as f64 * (panel_h + 60.0);
        let lo = panel
            .id_scores
            .iter()
            .chain(&panel.ood_scores)
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = panel
            .id_scores
            .iter()
            .chain(&panel.ood_scores)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let count = |scores: &[f64]| -> Vec<usize> {
            let mut c = vec![0usize; bins];
            for s in scores {
                let t = ((s - lo) / span * bins as f64).floor() as usize;
                c[t.min(bins - 1)] += 1;
            }
            c
        };
        let id_counts = count(&panel.id_scores);
        let ood_counts = count(&panel.ood_scores);
        let id_n = panel.id_scores.len().max(1) as f64;
        let ood_n = panel.ood_scores.len().max(1) as f64;
        // Normalize to fractions so differently sized sets overlay sensibly.
        let max_frac = id_counts
            .iter()
            .map(|&c| c as f64 / id_n)
            .chain(ood_counts.iter().map(|&c| c as f64 / ood_n))
            .fold(1e-9, f64::max);

        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">{} (blue = ID, red = OOD)</text>\n",
            margin,
            top + 14.0,
            xml_escape(&panel.postprocessor)
        ));
        let plot_top = top + 24.0;
        let bar_w = panel_w / bins as f64;
        for (color, counts, n) in [
            ("#3b6fd4", &id_counts, id_n),
            ("#d43b3b", &ood_counts, ood_n),
        ] {
            for (b, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let frac = c as f64 / n;
                let bh = frac / max_frac * panel_h;
                svg.push_str(&format!(
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.45\"/>\n",
                    margin + b as f64 * bar_w,
                    plot_top + panel_h - bh,
                    bar_w.max(1.0),
                    bh,
                ));
            }
        }
        // Axis line and range labels.
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            margin,
            plot_top + panel_h,
            margin + panel_w,
            plot_top + panel_h
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.4}</text>\n",
            margin,
            plot_top + panel_h + 16.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{hi:.4}</text>\n",
            margin + panel_w,
            plot_top + panel_h + 16.0
        ));
    }
    svg.push_str("</svg>\n");

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
