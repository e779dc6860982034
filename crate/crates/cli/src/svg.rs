//! Static line charts: one panel per grid point, one polyline per series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::summary::{McSummary, SummaryRow};

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 44.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Panel label and series label of a row. Teacher runs put `alpha` in the
/// panel and the subject count in the series.
fn keys(row: &SummaryRow) -> (String, String) {
    match row.point.split_once(';') {
        Some((panel, rest)) => (panel.to_string(), format!("{} {rest}", row.estimator)),
        None => (row.point.clone(), row.estimator.clone()),
    }
}

fn marker(out: &mut String, kind: usize, x: f64, y: f64, color: &str) {
    let r = 3.5;
    match kind % 4 {
        0 => {
            let _ = write!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="none" stroke="{color}"/>"#
            );
        }
        1 => {
            let _ = write!(
                out,
                r#"<path d="M{:.2},{y:.2}H{:.2}M{x:.2},{:.2}V{:.2}" stroke="{color}"/>"#,
                x - r,
                x + r,
                y - r,
                y + r
            );
        }
        2 => {
            let _ = write!(
                out,
                r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}"/>"#,
                x - r,
                y - r,
                x + r,
                y + r,
                x - r,
                y + r,
                x + r,
                y - r
            );
        }
        _ => {
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="none" stroke="{color}"/>"#,
                x - r,
                y - r,
                2.0 * r,
                2.0 * r
            );
        }
    }
    out.push('\n');
}

fn panel_title(panel: &str) -> String {
    if panel.parse::<u32>().is_ok() {
        format!("scenario {panel}")
    } else {
        panel.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG 1.1 document for all rows of `metric`, or `None` if there are none.
pub fn render_metric(summary: &McSummary, metric: &str, x_label: &str) -> Option<String> {
    let rows: Vec<&SummaryRow> = summary.rows.iter().filter(|r| r.metric == metric).collect();
    if rows.is_empty() {
        return None;
    }
    let mut panels: Vec<String> = Vec::new();
    let mut series_names: Vec<String> = Vec::new();
    let mut data: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in &rows {
        let (p, s) = keys(r);
        if !panels.contains(&p) {
            panels.push(p.clone());
        }
        if !series_names.contains(&s) {
            series_names.push(s.clone());
        }
        data.entry((p, s)).or_default().push((r.x, r.value));
    }
    let mut estimators: Vec<&str> = Vec::new();
    for r in &rows {
        if !estimators.contains(&r.estimator.as_str()) {
            estimators.push(&r.estimator);
        }
    }

    let n = panels.len();
    let ncols = if n == 4 { 2 } else { n.min(3) };
    let nrows = n.div_ceil(ncols);
    let legend_h = 18.0 * series_names.len() as f64 + 10.0;
    let width = ncols as f64 * PANEL_W;
    let height = nrows as f64 * PANEL_H + legend_h;

    let (x_min, x_max) = rows
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r.x), hi.max(r.x)));
    let y_max = rows
        .iter()
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let y_min = rows
        .iter()
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::min);
    let x_span = (x_max.saturating_sub(x_min)).max(1) as f64;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (pi, panel) in panels.iter().enumerate() {
        let ox = (pi % ncols) as f64 * PANEL_W;
        let oy = (pi / ncols) as f64 * PANEL_H;
        let (left, right) = (ox + MARGIN, ox + PANEL_W - 12.0);
        let (top, bottom) = (oy + 22.0, oy + PANEL_H - 32.0);
        let sx = |x: usize| left + (x - x_min) as f64 / x_span * (right - left);
        let sy = |y: f64| bottom - (y - y_min) / (y_max - y_min) * (bottom - top);
        let _ = writeln!(
            out,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            oy + 15.0,
            escape(&panel_title(panel))
        );
        for i in 0..=4 {
            let v = y_min + (y_max - y_min) * i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
                left - 4.0,
                sy(v) + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{left:.2}" y="{:.2}">{x_min}</text><text x="{right:.2}" y="{:.2}" text-anchor="end">{x_max}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 14.0,
            bottom + 14.0,
            (left + right) / 2.0,
            bottom + 26.0,
            escape(x_label)
        );
        for (si, s) in series_names.iter().enumerate() {
            let Some(pts) = data.get(&(panel.clone(), s.clone())) else {
                continue;
            };
            let mut pts = pts.clone();
            pts.sort_by_key(|p| p.0);
            let color = COLORS[si % COLORS.len()];
            let est = s.split(' ').next().unwrap_or("");
            let kind = estimators.iter().position(|e| *e == est).unwrap_or(0);
            let coords: Vec<String> = pts
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}"/>"#,
                coords.join(" ")
            );
            for &(x, y) in pts.iter().filter(|p| p.1.is_finite()) {
                marker(&mut out, kind, sx(x), sy(y), color);
            }
        }
    }
    let ly = nrows as f64 * PANEL_H;
    for (si, s) in series_names.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let y = ly + 14.0 + 18.0 * si as f64;
        let est = s.split(' ').next().unwrap_or("");
        let kind = estimators.iter().position(|e| *e == est).unwrap_or(0);
        let _ = writeln!(
            out,
            r#"<line x1="12" y1="{y:.2}" x2="40" y2="{y:.2}" stroke="{color}"/>"#
        );
        marker(&mut out, kind, 26.0, y, color);
        let _ = writeln!(out, r#"<text x="48" y="{:.2}">{}</text>"#, y + 4.0, escape(s));
    }
    out.push_str("</svg>\n");
    Some(out)
}
