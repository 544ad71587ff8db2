use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::ProjectionResult;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const LEGEND_WIDTH: f64 = 140.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Sidecar path next to the plot: `fig.svg` gives `fig.tsv`.
pub fn sidecar_path(plot: &Path) -> PathBuf {
    plot.with_extension("tsv")
}

pub fn render_svg(result: &ProjectionResult) -> String {
    let groups: BTreeMap<&str, &str> = {
        let mut names: Vec<&str> = result.labels.iter().map(|l| l.group.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g, PALETTE[i % PALETTE.len()]))
            .collect()
    };
    let xs = result.coords.column(0);
    let ys = result.coords.column(1);
    let range = |v: ndarray::ArrayView1<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let (ax, ay) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<g stroke="black"><line x1="{ax}" y1="{ay}" x2="{:.2}" y2="{ay}"/><line x1="{ax}" y1="{ay}" x2="{ax}" y2="{MARGIN}"/></g>"#,
        MARGIN + plot_w
    );
    let _ = writeln!(s, r#"<text x="{ax}" y="{:.2}">{x0:.2}</text>"#, ay + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{x1:.2}</text>"#,
        MARGIN + plot_w,
        ay + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{ay}" text-anchor="end">{y0:.2}</text>"#,
        ax - 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{MARGIN}" text-anchor="end">{y1:.2}</text>"#,
        ax - 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t-SNE 1</text>"#,
        MARGIN + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">t-SNE 2</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (row, label) in result.coords.rows().into_iter().zip(&result.labels) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}"><title>{}</title></circle>"#,
            px(row[0]),
            py(row[1]),
            groups[label.group.as_str()],
            escape(&label.id)
        );
    }
    let lx = WIDTH - MARGIN - LEGEND_WIDTH + 20.0;
    for (i, (group, colour)) in groups.iter().enumerate() {
        let ly = MARGIN + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 9.0,
            lx + 16.0,
            ly,
            escape(group)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_tsv(result: &ProjectionResult) -> String {
    let mut s = String::from("speaker_id\tx\ty\tgroup\n");
    for (row, label) in result.coords.rows().into_iter().zip(&result.labels) {
        let _ = writeln!(s, "{}\t{:?}\t{:?}\t{}", label.id, row[0], row[1], label.group);
    }
    s
}

/// Writes the SVG scatter plot to `path` and the coordinate table beside
/// it. Returns the sidecar path.
pub fn emit_plot(result: &ProjectionResult, path: &Path) -> Result<PathBuf> {
    if result.labels.len() != result.coords.nrows() || result.coords.ncols() != 2 {
        return Err(Error::Argument("projection labels do not match its coordinates".into()));
    }
    if result.coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("projection has non-finite coordinates".into()));
    }
    fs::write(path, render_svg(result)).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, render_tsv(result)).map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}
