//! Minimal SVG charts for SHAP exports.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const MARGIN_LEFT: f64 = 220.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const ROW_HEIGHT: f64 = 22.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Linear map of `[lo, hi]` onto `[a, b]`; a degenerate range maps to the middle.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Horizontal bars, one per item, in the given order.
pub fn bar_chart(title: &str, items: &[(String, f64)]) -> String {
    let height = MARGIN_TOP + ROW_HEIGHT * items.len() as f64 + 30.0;
    let max = items.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, height, title);
    for (i, (name, value)) in items.iter().enumerate() {
        let y = MARGIN_TOP + ROW_HEIGHT * i as f64;
        let w = scale(*value, 0.0, max, 0.0, WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text><rect x="{MARGIN_LEFT}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4"/><text x="{:.1}" y="{:.1}">{:.4}</text>"##,
            MARGIN_LEFT - 6.0,
            y + 14.0,
            escape(name),
            y + 3.0,
            w.max(0.0),
            ROW_HEIGHT - 6.0,
            MARGIN_LEFT + w + 4.0,
            y + 14.0,
            value
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of `(x, y)` points with a zero line for `y`.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (w, h) = (WIDTH, 420.0);
    let (left, right, top, bottom) = (70.0, w - 20.0, MARGIN_TOP, h - 50.0);
    let (x_lo, x_hi) = bounds(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = bounds(points.iter().map(|p| p.1).chain([0.0]));
    let mut out = String::new();
    header(&mut out, h, title);
    let zero = scale(0.0, y_lo, y_hi, bottom, top);
    let _ = write!(
        out,
        r##"<line x1="{left}" y1="{zero:.1}" x2="{right}" y2="{zero:.1}" stroke="#999" stroke-dasharray="4 3"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#000"/><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="#000"/>"##
    );
    for &(x, y) in points {
        let _ = write!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#d62728" fill-opacity="0.6"/>"##,
            scale(x, x_lo, x_hi, left, right),
            scale(y, y_lo, y_hi, bottom, top)
        );
    }
    if points.is_empty() {
        let _ = write!(out, r#"<text x="{}" y="{}">no points</text>"#, w / 2.0, h / 2.0);
    } else {
        let _ = write!(
            out,
            r#"<text x="{left}" y="{:.1}">{x_lo:.3}</text><text x="{right}" y="{:.1}" text-anchor="end">{x_hi:.3}</text><text x="{:.1}" y="{top}" text-anchor="end">{y_hi:.3}</text><text x="{:.1}" y="{bottom}" text-anchor="end">{y_lo:.3}</text>"#,
            bottom + 16.0,
            bottom + 16.0,
            left - 4.0,
            left - 4.0
        );
    }
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        h - 12.0,
        escape(x_label),
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

/// One row of points per feature: φ on the horizontal axis, colour from
/// low (blue) to high (red) feature value within the feature.
pub fn beeswarm(title: &str, groups: &[(String, Vec<(f64, f64)>)]) -> String {
    let height = MARGIN_TOP + ROW_HEIGHT * groups.len() as f64 + 40.0;
    let (lo, hi) = bounds(groups.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).chain([0.0]));
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let mut out = String::new();
    header(&mut out, height, title);
    let zero = scale(0.0, lo, hi, left, right);
    let _ = write!(
        out,
        r##"<line x1="{zero:.1}" y1="{MARGIN_TOP}" x2="{zero:.1}" y2="{:.1}" stroke="#999"/>"##,
        height - 40.0
    );
    for (i, (name, points)) in groups.iter().enumerate() {
        let y = MARGIN_TOP + ROW_HEIGHT * i as f64 + ROW_HEIGHT / 2.0;
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + 4.0,
            escape(name)
        );
        let (v_lo, v_hi) = bounds(points.iter().map(|p| p.0));
        for (k, &(value, phi)) in points.iter().enumerate() {
            let t = scale(value, v_lo, v_hi, 0.0, 1.0);
            let (r, b) = ((255.0 * t) as u8, (255.0 * (1.0 - t)) as u8);
            // Deterministic vertical jitter so overlapping points stay visible.
            let jitter = ((k * 37) % 13) as f64 - 6.0;
            let _ = write!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="rgb({r},64,{b})" fill-opacity="0.7"/>"#,
                scale(phi, lo, hi, left, right),
                y + jitter
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">SHAP value</text>"#,
        (left + right) / 2.0,
        height - 12.0
    );
    out.push_str("</svg>\n");
    out
}
