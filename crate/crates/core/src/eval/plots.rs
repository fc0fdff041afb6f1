//! Dependency-free SVG rendering. Coordinates are printed with two decimals so
//! output is byte-stable for identical inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::correlation::PresenceCorrelation;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;
const IH_COLOR: &str = "#d62728";
const OTHER_COLOR: &str = "#1f77b4";

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram of `values` over `[lo, hi]` in `bins` equal bins.
pub fn histogram_svg(values: &[f64], bins: usize, lo: f64, hi: f64, title: &str) -> String {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as isize;
        counts[k.clamp(0, bins as isize - 1) as usize] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    let mut s = header(title);
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN:.2}\" y1=\"{base:.2}\" x2=\"{:.2}\" y2=\"{base:.2}\" stroke=\"black\"/>",
        WIDTH - MARGIN
    );
    for (k, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let h = c as f64 / max * plot_h;
        let _ = writeln!(
            s,
            "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{OTHER_COLOR}\"/>",
            MARGIN + k as f64 * bar_w,
            base - h,
            bar_w,
            h
        );
    }
    for (x, label) in [(MARGIN, lo), (WIDTH - MARGIN, hi)] {
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>",
            base + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of 2-D `points`, IH samples (`+1`) in red, others in blue.
pub fn scatter_svg(points: &Matrix, labels: &[i8], title: &str) -> Result<String> {
    if points.cols() != 2 || points.rows() != labels.len() {
        return Err(Error::dim(
            "scatter_svg",
            format!("{:?} points with {} labels", points.shape(), labels.len()),
        ));
    }
    let range = |c: usize| {
        let col = points.column(c);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi - lo) } else { (lo - 0.5, 1.0) }
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let mut s = header(title);
    for (r, &y) in labels.iter().enumerate() {
        let px = MARGIN + (points.get(r, 0) - x0) / xs * plot_w;
        let py = HEIGHT - MARGIN - (points.get(r, 1) - y0) / ys * plot_h;
        let color = if y == 1 { IH_COLOR } else { OTHER_COLOR };
        let _ = writeln!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"{color}\"/>");
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{IH_COLOR}\">IH</text>",
        WIDTH - MARGIN - 60.0,
        MARGIN
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{OTHER_COLOR}\">non-IH</text>",
        WIDTH - MARGIN - 60.0,
        MARGIN + 14.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// A named 2-D projection with per-point labels.
pub struct Projection<'a> {
    pub name: &'a str,
    pub points: &'a Matrix,
    pub labels: &'a [i8],
}

/// Writes `correlation_hist.svg` and one `tsne_<name>.svg` per projection.
pub fn render_plots(
    correlations: &[PresenceCorrelation],
    projections: &[Projection<'_>],
    outdir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    let values: Vec<f64> = correlations.iter().filter_map(|c| c.r).collect();
    let path = outdir.join("correlation_hist.svg");
    fs::write(
        &path,
        histogram_svg(&values, 20, -1.0, 1.0, "Correlation of training-set presence with mean AP"),
    )?;
    written.push(path);
    for p in projections {
        let path = outdir.join(format!("tsne_{}.svg", p.name));
        fs::write(&path, scatter_svg(p.points, p.labels, &format!("t-SNE: {}", p.name))?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_histogram_is_valid_svg_without_bars() {
        let svg = histogram_svg(&[], 10, -1.0, 1.0, "empty");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"bar\"").count(), 0);
    }

    #[test]
    fn histogram_counts_and_edges() {
        let svg = histogram_svg(&[-1.0, 1.0, 0.05, 0.06, f64::NAN], 2, -1.0, 1.0, "h");
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
    }

    #[test]
    fn two_point_scatter() {
        let pts = Matrix::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let svg = scatter_svg(&pts, &[1, -1], "two").unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(scatter_svg(&pts, &[1], "bad").is_err());
        let same = Matrix::new(2, 2, vec![3.0, 3.0, 3.0, 3.0]).unwrap();
        assert!(!scatter_svg(&same, &[1, 1], "same").unwrap().contains("NaN"));
    }
}
