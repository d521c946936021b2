//! Minimal SVG line plots for the evaluation reports.

use std::path::Path;

use crate::error::{CliError, CliResult};

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    series: &'a [Series<'a>],
}

fn finite_bounds(series: &[Series<'_>], pick_y: bool) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        let vals = if pick_y { s.y } else { s.x };
        for &v in vals {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn render_panel(svg: &mut String, p: &Panel<'_>, x0: f64, y0: f64, w: f64, h: f64) {
    let margin_l = 55.0;
    let margin_b = 35.0;
    let margin_t = 25.0;
    let plot_w = w - margin_l - 15.0;
    let plot_h = h - margin_t - margin_b;
    let (xmin, xmax) = finite_bounds(p.series, false);
    let (ymin, ymax) = finite_bounds(p.series, true);
    let sx = |x: f64| x0 + margin_l + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| y0 + margin_t + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h;

    svg.push_str(&format!(
        "<rect x='{:.1}' y='{:.1}' width='{plot_w:.1}' height='{plot_h:.1}' \
         fill='none' stroke='#888' stroke-width='1'/>\n",
        x0 + margin_l,
        y0 + margin_t
    ));
    svg.push_str(&format!(
        "<text x='{:.1}' y='{:.1}' font-size='13' font-family='sans-serif'>{}</text>\n",
        x0 + margin_l,
        y0 + margin_t - 8.0,
        p.title
    ));
    // Axis extremes as tick labels.
    for (v, anchor_x) in [(xmin, sx(xmin)), (xmax, sx(xmax))] {
        svg.push_str(&format!(
            "<text x='{anchor_x:.1}' y='{:.1}' font-size='10' text-anchor='middle' \
             font-family='sans-serif'>{v:.3}</text>\n",
            y0 + margin_t + plot_h + 14.0
        ));
    }
    for v in [ymin, ymax] {
        svg.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='10' text-anchor='end' \
             font-family='sans-serif'>{v:.3}</text>\n",
            x0 + margin_l - 4.0,
            sy(v) + 3.0
        ));
    }
    svg.push_str(&format!(
        "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='middle' \
         font-family='sans-serif'>{}</text>\n",
        x0 + margin_l + plot_w / 2.0,
        y0 + h - 6.0,
        p.x_label
    ));
    svg.push_str(&format!(
        "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='middle' \
         font-family='sans-serif' transform='rotate(-90 {:.1} {:.1})'>{}</text>\n",
        x0 + 14.0,
        y0 + margin_t + plot_h / 2.0,
        x0 + 14.0,
        y0 + margin_t + plot_h / 2.0,
        p.y_label
    ));

    for (i, s) in p.series.iter().enumerate() {
        let mut path = String::new();
        let mut pen_down = false;
        for (&x, &y) in s.x.iter().zip(s.y.iter()) {
            if !x.is_finite() || !y.is_finite() {
                pen_down = false;
                continue;
            }
            path.push_str(if pen_down { "L" } else { "M" });
            path.push_str(&format!("{:.2} {:.2} ", sx(x), sy(y)));
            pen_down = true;
        }
        svg.push_str(&format!(
            "<path d='{path}' fill='none' stroke='{}' stroke-width='1.2'/>\n",
            s.color
        ));
        svg.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='11' font-family='sans-serif' \
             fill='{}'>{}</text>\n",
            x0 + margin_l + plot_w - 110.0,
            y0 + margin_t + 14.0 + 14.0 * i as f64,
            s.color,
            s.label
        ));
    }
}

/// Writes a two-panel SVG: simulated outputs over the measurement, and the
/// NRMSE evolution per method.
pub fn write_evaluation_svg(
    path: &Path,
    title: &str,
    traces: &[Series<'_>],
    evolutions: &[Series<'_>],
) -> CliResult<()> {
    let w = 860.0;
    let panel_h = 280.0;
    let mut svg = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{w}' height='{}' \
         viewBox='0 0 {w} {}'>\n<rect width='100%' height='100%' fill='white'/>\n\
         <text x='20' y='20' font-size='15' font-family='sans-serif'>{title}</text>\n",
        2.0 * panel_h + 30.0,
        2.0 * panel_h + 30.0
    );
    render_panel(
        &mut svg,
        &Panel {
            title: "free-run simulation",
            x_label: "time [s]",
            y_label: "yaw rate [rad/s]",
            series: traces,
        },
        0.0,
        30.0,
        w,
        panel_h,
    );
    render_panel(
        &mut svg,
        &Panel {
            title: "NRMSE evolution",
            x_label: "sample",
            y_label: "NRMSE",
            series: evolutions,
        },
        0.0,
        30.0 + panel_h,
        w,
        panel_h,
    );
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
