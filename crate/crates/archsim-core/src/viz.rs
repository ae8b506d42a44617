//! Self-contained SVG charts for reports: similarity heatmaps, importance
//! bars, and similarity-vs-outcome scatters. Pure string builders — no
//! randomness, no timestamps — so outputs are byte-stable for identical
//! inputs.

use crate::error::{Error, Result};

/// Escapes the five XML-special characters for text nodes and attributes.
fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Formats a coordinate with enough precision for crisp layout and stable
/// output.
fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

const FONT: &str = "font-family=\"Menlo, Consolas, monospace\"";

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         width=\"{}\" height=\"{}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    )
}

/// Linear white→deep-blue ramp; NaN renders as neutral gray.
fn ramp(value: f64, lo: f64, hi: f64) -> String {
    if value.is_nan() {
        return "#cccccc".to_string();
    }
    let t = if hi > lo { ((value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let from = (0xf7, 0xfb, 0xff);
    let to = (0x08, 0x30, 0x6b);
    let lerp = |a: i32, b: i32| (a as f64 + t * (b - a) as f64).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(from.0, to.0), lerp(from.1, to.1), lerp(from.2, to.2))
}

/// Readable text color against a ramp cell.
fn cell_text_color(value: f64, lo: f64, hi: f64) -> &'static str {
    if value.is_nan() {
        return "#555555";
    }
    let t = if hi > lo { ((value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    if t > 0.55 {
        "#ffffff"
    } else {
        "#1a1a2e"
    }
}

/// Square heatmap of a named matrix (e.g. a similarity matrix). NaN cells
/// are gray with an em-dash. Values print at two decimals inside cells.
pub fn heatmap(names: &[String], values: &[Vec<f64>], title: &str) -> Result<String> {
    let n = names.len();
    if n == 0 {
        return Err(Error::Config("heatmap needs at least one row".into()));
    }
    if values.len() != n || values.iter().any(|row| row.len() != n) {
        return Err(Error::Config(format!("heatmap needs a {n}×{n} matrix to match the names")));
    }
    let finite: Vec<f64> =
        values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Degenerate("heatmap of entirely non-finite values".into()));
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let cell = 46.0;
    let label_w = 10.0 + 7.0 * names.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
    let top = 54.0;
    let label_h = 12.0 + 5.2 * names.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
    let width = label_w + n as f64 * cell + 20.0;
    let height = top + n as f64 * cell + label_h + 34.0;

    let mut s = svg_open(width, height);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" {FONT} font-size=\"15\" font-weight=\"bold\" \
         text-anchor=\"middle\" fill=\"#1a1a2e\">{}</text>\n",
        fmt(width / 2.0),
        esc(title)
    ));
    for (i, row) in values.iter().enumerate() {
        let y = top + i as f64 * cell;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"end\" \
             fill=\"#1a1a2e\">{}</text>\n",
            fmt(label_w - 6.0),
            fmt(y + cell / 2.0 + 3.5),
            esc(&names[i])
        ));
        for (j, &v) in row.iter().enumerate() {
            let x = label_w + j as f64 * cell;
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" \
                 stroke=\"#ffffff\" stroke-width=\"1\"/>\n",
                fmt(x),
                fmt(y),
                fmt(cell),
                fmt(cell),
                ramp(v, lo, hi)
            ));
            let text = if v.is_nan() { "—".to_string() } else { format!("{v:.2}") };
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"middle\" \
                 fill=\"{}\">{}</text>\n",
                fmt(x + cell / 2.0),
                fmt(y + cell / 2.0 + 3.5),
                cell_text_color(v, lo, hi),
                text
            ));
        }
    }
    // Column labels, rotated to fit.
    for (j, name) in names.iter().enumerate() {
        let x = label_w + j as f64 * cell + cell / 2.0;
        let y = top + n as f64 * cell + 10.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"end\" \
             fill=\"#1a1a2e\" transform=\"rotate(-45 {} {})\">{}</text>\n",
            fmt(x),
            fmt(y),
            fmt(x),
            fmt(y),
            esc(name)
        ));
    }
    // Range legend.
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" fill=\"#555555\">range \
         [{lo:.2}, {hi:.2}]</text>\n",
        fmt(label_w),
        fmt(height - 10.0)
    ));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Horizontal bar chart (e.g. permutation importances). Bars sort by the
/// caller's order; negative values extend left of the zero axis.
pub fn bar_chart(labels: &[String], values: &[f64], title: &str) -> Result<String> {
    if labels.is_empty() || labels.len() != values.len() {
        return Err(Error::Config(format!(
            "bar chart needs matching non-empty labels and values, got {} and {}",
            labels.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("bar chart values must be finite".into()));
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);

    let bar_h = 22.0;
    let gap = 8.0;
    let label_w = 16.0 + 7.0 * labels.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
    let plot_w = 360.0;
    let top = 48.0;
    let width = label_w + plot_w + 90.0;
    let height = top + labels.len() as f64 * (bar_h + gap) + 16.0;
    let zero_x = if values.iter().any(|&v| v < 0.0) { label_w + plot_w / 2.0 } else { label_w };
    let unit = if values.iter().any(|&v| v < 0.0) { plot_w / 2.0 } else { plot_w };

    let mut s = svg_open(width, height);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" {FONT} font-size=\"15\" font-weight=\"bold\" \
         text-anchor=\"middle\" fill=\"#1a1a2e\">{}</text>\n",
        fmt(width / 2.0),
        esc(title)
    ));
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888888\" \
         stroke-width=\"1\"/>\n",
        fmt(zero_x),
        fmt(top - 8.0),
        fmt(zero_x),
        fmt(height - 12.0)
    ));
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let w = unit * v.abs() / max_abs;
        let x = if v < 0.0 { zero_x - w } else { zero_x };
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"end\" \
             fill=\"#1a1a2e\">{}</text>\n",
            fmt(label_w - 8.0),
            fmt(y + bar_h / 2.0 + 4.0),
            esc(label)
        ));
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            fmt(x),
            fmt(y),
            fmt(w.max(0.5)),
            fmt(bar_h),
            if v < 0.0 { "#b2462e" } else { "#2e6db2" }
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" fill=\"#555555\">{v:.4}</text>\n",
            fmt(zero_x + unit * v.abs() / max_abs * if v < 0.0 { -1.0 } else { 1.0 }
                + if v < 0.0 { -58.0 } else { 6.0 }),
            fmt(y + bar_h / 2.0 + 4.0)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter plot with axis labels; non-finite points are skipped and counted
/// in a footnote.
pub fn scatter(
    xs: &[f64],
    ys: &[f64],
    x_label: &str,
    y_label: &str,
    title: &str,
) -> Result<String> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "scatter needs matching non-empty coordinate slices, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    if points.is_empty() {
        return Err(Error::Degenerate("scatter of entirely non-finite points".into()));
    }
    let skipped = xs.len() - points.len();

    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    // Degenerate spans get a symmetric pad so points sit mid-axis.
    if x_hi - x_lo < 1e-12 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad_x = 0.06 * (x_hi - x_lo);
    let pad_y = 0.06 * (y_hi - y_lo);
    x_lo -= pad_x;
    x_hi += pad_x;
    y_lo -= pad_y;
    y_hi += pad_y;

    let (left, top, plot_w, plot_h) = (72.0, 48.0, 420.0, 300.0);
    let width = left + plot_w + 24.0;
    let height = top + plot_h + 64.0;
    let px = |x: f64| left + plot_w * (x - x_lo) / (x_hi - x_lo);
    let py = |y: f64| top + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let mut s = svg_open(width, height);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" {FONT} font-size=\"15\" font-weight=\"bold\" \
         text-anchor=\"middle\" fill=\"#1a1a2e\">{}</text>\n",
        fmt(width / 2.0),
        esc(title)
    ));
    s.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#888888\" stroke-width=\"1\"/>\n",
        fmt(left),
        fmt(top),
        fmt(plot_w),
        fmt(plot_h)
    ));
    // Four ticks per axis.
    for k in 0..=3 {
        let xv = x_lo + (x_hi - x_lo) * k as f64 / 3.0;
        let yv = y_lo + (y_hi - y_lo) * k as f64 / 3.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"middle\" \
             fill=\"#555555\">{xv:.2}</text>\n",
            fmt(px(xv)),
            fmt(top + plot_h + 16.0)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"end\" \
             fill=\"#555555\">{yv:.2}</text>\n",
            fmt(left - 6.0),
            fmt(py(yv) + 3.5)
        ));
    }
    for &(x, y) in &points {
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#2e6db2\" fill-opacity=\"0.75\"/>\n",
            fmt(px(x)),
            fmt(py(y))
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"middle\" \
         fill=\"#1a1a2e\">{}</text>\n",
        fmt(left + plot_w / 2.0),
        fmt(top + plot_h + 36.0),
        esc(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"middle\" \
         fill=\"#1a1a2e\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt(top + plot_h / 2.0),
        fmt(top + plot_h / 2.0),
        esc(y_label)
    ));
    if skipped > 0 {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" fill=\"#555555\">{skipped} \
             non-finite point(s) omitted</text>\n",
            fmt(left),
            fmt(height - 8.0)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
