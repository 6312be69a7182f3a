//! Static SVG figures with a fixed view box and deterministic element order.

use std::fmt::Write;

use xtalkgst_core::rb::RbCellFit;

use crate::report::{ReportFitSection, ReportGate};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn close(out: &mut String) {
    out.push_str("</svg>\n");
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn draw(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, self.px(xv), b + 15.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 4.0, self.py(yv) + 4.0, tick(yv));
        }
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Success against depth with the per-depth spread of circuits and the fitted decay.
pub fn decay_curve(cell: &RbCellFit) -> String {
    let mut out = String::new();
    let context = match cell.context {
        xtalkgst_core::rb::RbContext::SpectatorIdle => "spectator idle",
        xtalkgst_core::rb::RbContext::SpectatorDriven => "spectator driven",
    };
    open(&mut out, &format!("qubit {} RB, {context}: r = {:.3e} ± {:.1e}", cell.qubit, cell.r, cell.r_halfwidth));
    let max_depth = cell.depths.iter().map(|d| d.depth).max().unwrap_or(1).max(1) as f64;
    let lowest = cell.depths.iter().flat_map(|d| d.circuits.iter().map(|c| c.success)).fold(1.0, f64::min);
    let axes = Axes { x0: 0.0, x1: max_depth, y0: (lowest - 0.05).clamp(0.0, 0.5).min(0.5), y1: 1.0 };
    axes.draw(&mut out, "depth", "marginal success");
    let half = 0.015 * (WIDTH - 2.0 * MARGIN);
    for d in &cell.depths {
        let mut values: Vec<f64> = d.circuits.iter().map(|c| c.success).collect();
        values.sort_by(f64::total_cmp);
        if values.is_empty() {
            continue;
        }
        let x = axes.px(d.depth as f64);
        let q = |f: f64| values[((values.len() - 1) as f64 * f).round() as usize];
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#888"/>"##,
            axes.py(values[0]),
            axes.py(values[values.len() - 1])
        );
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#c6dbef" stroke="#6baed6"/>"##,
            x - half,
            axes.py(q(0.75)),
            2.0 * half,
            (axes.py(q(0.25)) - axes.py(q(0.75))).max(0.5)
        );
        let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{:.1}" r="2.5" fill="black"/>"#, axes.py(d.mean()));
    }
    let mut points = String::new();
    for i in 0..=100 {
        let depth = max_depth * i as f64 / 100.0;
        let _ = write!(points, "{:.1},{:.1} ", axes.px(depth), axes.py(cell.decay.eval(depth).clamp(axes.y0, axes.y1)));
    }
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, points.trim_end(), COLORS[1]);
    close(&mut out);
    out
}

/// `(h_X, h_Y)` of one gate in each context as a line from the origin, with an
/// uncertainty ellipse at the tip when half-widths are known.
pub fn hamiltonian_arrows(gate: &str, reports: &[&ReportGate]) -> String {
    let mut out = String::new();
    open(&mut out, &format!("{gate}: Hamiltonian X-Y error (mrad)"));
    let xy = |r: &ReportGate| {
        let find = |label: &str| r.terms.iter().find(|t| t.label == label).map(|t| t.hamiltonian_mrad);
        (find("X"), find("Y"))
    };
    let mut extent: f64 = 1.0;
    for r in reports {
        if let (Some(x), Some(y)) = xy(r) {
            extent = extent.max(x.value.abs() + x.halfwidth.unwrap_or(0.0)).max(y.value.abs() + y.halfwidth.unwrap_or(0.0));
        }
    }
    let extent = extent * 1.15;
    let axes = Axes { x0: -extent, x1: extent, y0: -extent, y1: extent };
    axes.draw(&mut out, "h_X (mrad)", "h_Y (mrad)");
    let (ox, oy) = (axes.px(0.0), axes.py(0.0));
    let _ = writeln!(out, r##"<line x1="{:.1}" y1="{oy:.1}" x2="{:.1}" y2="{oy:.1}" stroke="#ccc"/>"##, axes.px(-extent), axes.px(extent));
    let _ = writeln!(out, r##"<line x1="{ox:.1}" y1="{:.1}" x2="{ox:.1}" y2="{:.1}" stroke="#ccc"/>"##, axes.py(-extent), axes.py(extent));
    for (i, r) in reports.iter().enumerate() {
        let (Some(x), Some(y)) = xy(r) else { continue };
        let color = COLORS[i % COLORS.len()];
        let (tx, ty) = (axes.px(x.value), axes.py(y.value));
        let _ = writeln!(
            out,
            r#"<line class="context" x1="{ox:.1}" y1="{oy:.1}" x2="{tx:.1}" y2="{ty:.1}" stroke="{color}" stroke-width="2"/>"#
        );
        if let (Some(hx), Some(hy)) = (x.halfwidth, y.halfwidth) {
            let rx = (axes.px(hx) - axes.px(0.0)).abs();
            let ry = (axes.py(0.0) - axes.py(hy)).abs();
            let _ = writeln!(
                out,
                r#"<ellipse class="uncertainty" cx="{tx:.1}" cy="{ty:.1}" rx="{rx:.2}" ry="{ry:.2}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0 - 90.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            escape(&format!("context {}", r.context))
        );
    }
    close(&mut out);
    out
}

/// λ, N_σ, γ, W and ε̄⋄ per model, laid out as a table.
pub fn comparison_table(section: &ReportFitSection) -> String {
    let mut out = String::new();
    open(&mut out, "Model comparison");
    let headers = ["model", "N_p", "lambda", "N_sigma", "gamma", "W", "avg diamond"];
    let xs = [20.0, 140.0, 185.0, 260.0, 320.0, 375.0, 425.0];
    let mut y = 50.0;
    for (h, x) in headers.iter().zip(xs) {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" font-weight="bold">{h}</text>"#);
    }
    let _ = writeln!(out, r#"<line x1="15" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, y + 6.0, WIDTH - 15.0, y + 6.0);
    for m in &section.models {
        y += 22.0;
        let gamma = section.gamma.iter().find(|g| g.larger == m.family).map(|g| format!("{:.2}", g.gamma.value)).unwrap_or_else(|| "-".into());
        let opt = |e: Option<crate::report::Estimate>, f: fn(f64) -> String| e.map(|e| f(e.value)).unwrap_or_else(|| "-".into());
        let marker = if m.family == section.selected { " *" } else { "" };
        let cells = [
            format!("{}{marker}", m.family),
            m.n_params.to_string(),
            format!("{:.4e}", m.lambda.value),
            format!("{:.2}", m.n_sigma.value),
            gamma,
            opt(m.wildcard, |v| format!("{v:.2e}")),
            opt(m.avg_diamond, |v| format!("{v:.2e}")),
        ];
        for (c, x) in cells.iter().zip(xs) {
            let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}">{}</text>"#, escape(c));
        }
    }
    let _ = writeln!(out, r#"<text x="20" y="{:.1}" font-size="10">* selected: {}</text>"#, y + 28.0, escape(&section.rule));
    close(&mut out);
    out
}
