//! Grouped bar charts with error bars, written as standalone SVG.

use std::fmt::Write;

const COLORS: [&str; 6] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
];
const BAR: f64 = 28.0;
const GAP: f64 = 24.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const PLOT_H: f64 = 240.0;
const BOTTOM: f64 = 70.0;

/// One bar per group; `values[g]` is `(mean, std)` or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<(f64, f64)>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick spacing of 1, 2 or 5 times a power of ten giving about five ticks.
fn tick_step(max: f64) -> f64 {
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

pub fn bar_chart(title: &str, y_label: &str, groups: &[String], series: &[Series]) -> String {
    let group_w = series.len().max(1) as f64 * BAR + GAP;
    let width = (LEFT + groups.len().max(1) as f64 * group_w + 20.0)
        .max(12.0 * title.len() as f64)
        .max(320.0);
    let legend_h = 18.0 * series.len() as f64;
    let height = TOP + PLOT_H + BOTTOM + legend_h;

    let top = series
        .iter()
        .flat_map(|s| s.values.iter().flatten())
        .map(|(m, sd)| m + sd.max(0.0))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let step = if top > 0.0 { tick_step(top) } else { 1.0 };
    let y_max = (top / step).ceil().max(1.0) * step;
    let y = |v: f64| TOP + PLOT_H * (1.0 - v / y_max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + PLOT_H / 2.0,
        escape(y_label)
    );

    let mut t = 0.0;
    while t <= y_max + step * 1e-9 {
        let yy = y(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/>"##,
            width - 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            yy + 4.0,
            format_tick(t, step)
        );
        t += step;
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" x2="{LEFT}" y1="{TOP}" y2="{:.1}" stroke="black"/>"#,
        TOP + PLOT_H
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
        width - 20.0,
        TOP + PLOT_H,
        TOP + PLOT_H
    );

    let slot = (width - LEFT - 20.0) / groups.len().max(1) as f64;
    let bars_w = group_w - GAP;
    for (g, name) in groups.iter().enumerate() {
        let x0 = LEFT + g as f64 * slot + (slot - bars_w) / 2.0;
        for (k, s) in series.iter().enumerate() {
            let Some(Some((mean, sd))) = s.values.get(g) else {
                continue;
            };
            let x = x0 + k as f64 * BAR;
            let color = COLORS[k % COLORS.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"><title>{}: {mean}</title></rect>"#,
                y(*mean),
                BAR - 4.0,
                (y(0.0) - y(*mean)).max(0.0),
                escape(&s.name)
            );
            if *sd > 0.0 {
                let cx = x + (BAR - 4.0) / 2.0;
                let _ = writeln!(
                    svg,
                    r#"<path d="M{:.1},{:.1}H{:.1}M{cx:.1},{:.1}V{:.1}M{:.1},{:.1}H{:.1}" stroke="black"/>"#,
                    cx - 5.0,
                    y(mean + sd),
                    cx + 5.0,
                    y(mean + sd),
                    y((mean - sd).max(0.0)),
                    cx - 5.0,
                    y((mean - sd).max(0.0)),
                    cx + 5.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bars_w / 2.0,
            TOP + PLOT_H + 18.0,
            escape(name)
        );
    }

    for (k, s) in series.iter().enumerate() {
        let ly = TOP + PLOT_H + 40.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{:.1}" width="12" height="12" fill="{}"/>"#,
            ly - 10.0,
            COLORS[k % COLORS.len()]
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#,
            LEFT + 18.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64, step: f64) -> String {
    let digits = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.digits$}")
}
