//! Standalone SVG charts. Output depends only on the input fit, so the same
//! artifact always renders to the same bytes.

use std::fmt::Write as _;

use rrglmm::inference::weighted_prevalence_rows;
use rrglmm::{residuals, Fit, RRDesignKind, ResidualKind};

use crate::CliError;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;

const COLORS: [&str; 7] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    ResidualScatter,
    PrevalenceCi,
}

fn style(kind: RRDesignKind) -> (usize, &'static str) {
    let k = RRDesignKind::ALL
        .iter()
        .position(|&d| d == kind)
        .unwrap_or(0);
    (k, COLORS[k % COLORS.len()])
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Marker shapes cycle through circle, square, triangle and diamond.
fn marker(out: &mut String, shape: usize, x: f64, y: f64, color: &str) {
    let r = 3.0;
    let _ = match shape % 4 {
        0 => writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="none" stroke="{color}"/>"#
        ),
        1 => writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="none" stroke="{color}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        2 => writeln!(
            out,
            r#"<path d="M{x:.2} {:.2}L{:.2} {:.2}L{:.2} {:.2}Z" fill="none" stroke="{color}"/>"#,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r
        ),
        _ => writeln!(
            out,
            r#"<path d="M{x:.2} {:.2}L{:.2} {y:.2}L{x:.2} {:.2}L{:.2} {y:.2}Z" fill="none" stroke="{color}"/>"#,
            y - r,
            x + r,
            y + r,
            x - r
        ),
    };
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(raw);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(out, r##"<g class="axes" stroke="#333">"##);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(out, "</g>");
    if x_ticks {
        for t in ticks(frame.x.0, frame.x.1) {
            let x = frame.px(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
                y0 + 5.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 18.0,
                tick_label(t)
            );
        }
    }
    for t in ticks(frame.y.0, frame.y.1) {
        let y = frame.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#333"/>"##,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn legend(out: &mut String, kinds: &[RRDesignKind], markers: bool) {
    let x = WIDTH - RIGHT + 20.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="{}" font-weight="bold">RR model</text>"#,
        TOP + 10.0
    );
    for (k, &kind) in kinds.iter().enumerate() {
        let y = TOP + 30.0 + 20.0 * k as f64;
        let (shape, color) = style(kind);
        if markers {
            marker(out, shape, x + 6.0, y - 4.0, color);
        } else {
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{:.2}" width="12" height="4" fill="{color}"/>"#,
                y - 6.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y:.2}">{}</text>"#,
            x + 18.0,
            kind.name()
        );
    }
    let _ = writeln!(out, "</g>");
}

/// Kinds present in the data, in canonical order.
fn kinds_present(fit: &Fit) -> Vec<RRDesignKind> {
    let assignments = &fit.data().assignments;
    RRDesignKind::ALL
        .into_iter()
        .filter(|k| assignments.iter().any(|a| a.kind == *k))
        .collect()
}

/// Fitted response probabilities against Pearson residuals, one marker
/// class per design.
pub fn residual_scatter(fit: &Fit) -> Result<String, CliError> {
    let pearson = residuals(fit, ResidualKind::Pearson)?;
    let fitted = fit.fitted();
    let frame = Frame {
        x: padded_range(fitted.iter().copied()),
        y: padded_range(pearson.values.iter().copied()),
    };
    let mut out = String::new();
    open(&mut out, &format!("Pearson residuals: {}", fit.formula()));
    axes(&mut out, &frame, "Fitted", "Residual (Pearson)", true);
    if frame.y.0 < 0.0 && frame.y.1 > 0.0 {
        let y = frame.py(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            WIDTH - RIGHT
        );
    }
    let kinds = kinds_present(fit);
    for &kind in &kinds {
        let (shape, color) = style(kind);
        let _ = writeln!(out, r#"<g class="design-{}">"#, kind.name());
        for (i, a) in fit.data().assignments.iter().enumerate() {
            if a.kind == kind {
                marker(
                    &mut out,
                    shape,
                    frame.px(fitted[i]),
                    frame.py(pearson.values[i]),
                    color,
                );
            }
        }
        let _ = writeln!(out, "</g>");
    }
    legend(&mut out, &kinds, true);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Weighted prevalence per item and design with 95% Wald intervals.
pub fn prevalence_ci(fit: &Fit) -> Result<String, CliError> {
    let d = fit.data();
    let cells = weighted_prevalence_rows(&d.y, &d.assignments, d.items.as_deref(), true)?;
    let bounds = |c: &rrglmm::PrevalenceEstimate| {
        (
            c.estimate - 1.96 * c.standard_error,
            c.estimate + 1.96 * c.standard_error,
        )
    };
    let frame = Frame {
        x: (0.0, cells.len() as f64),
        y: padded_range(cells.iter().flat_map(|c| {
            let (lo, hi) = bounds(c);
            [lo, hi, 0.0]
        })),
    };
    let mut out = String::new();
    open(&mut out, "Prevalence estimates (95% intervals)");
    axes(&mut out, &frame, "Item", "Prevalence", false);
    let zero = frame.py(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        WIDTH - RIGHT
    );
    let mut k = 0;
    while k < cells.len() {
        let item = cells[k].item.clone();
        let end = k + cells[k..].iter().take_while(|c| c.item == item).count();
        let centre = frame.px((k + end) as f64 / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{centre:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(item.as_deref().unwrap_or("all rows"))
        );
        if k > 0 {
            let x = frame.px(k as f64);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##,
                HEIGHT - BOTTOM
            );
        }
        k = end;
    }
    for (k, c) in cells.iter().enumerate() {
        let kind = c.rr_model.expect("cells are split by design");
        let (_, color) = style(kind);
        let x = frame.px(k as f64 + 0.5);
        let (lo, hi) = bounds(c);
        let (ylo, yhi, ymid) = (frame.py(lo), frame.py(hi), frame.py(c.estimate));
        let _ = writeln!(
            out,
            r#"<g class="interval design-{}" stroke="{color}"><line x1="{x:.2}" y1="{ylo:.2}" x2="{x:.2}" y2="{yhi:.2}"/><line x1="{:.2}" y1="{ylo:.2}" x2="{:.2}" y2="{ylo:.2}"/><line x1="{:.2}" y1="{yhi:.2}" x2="{:.2}" y2="{yhi:.2}"/><circle cx="{x:.2}" cy="{ymid:.2}" r="3" fill="{color}"/></g>"#,
            kind.name(),
            x - 4.0,
            x + 4.0,
            x - 4.0,
            x + 4.0
        );
    }
    let kinds: Vec<RRDesignKind> = RRDesignKind::ALL
        .into_iter()
        .filter(|k| cells.iter().any(|c| c.rr_model == Some(*k)))
        .collect();
    legend(&mut out, &kinds, false);
    out.push_str("</svg>\n");
    Ok(out)
}
