//! Minimal static SVG charts: line charts with reference lines, and grouped
//! bar charts. Output is plain text and fully deterministic.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Horizontal dashed line with a legend entry.
#[derive(Debug, Clone)]
pub struct RefLine {
    pub name: String,
    pub y: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub ref_lines: Vec<RefLine>,
    /// Fixed y range; values outside are clipped to the frame.
    pub y_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    /// One bar per category for each group, drawn side by side.
    pub groups: Vec<(String, Vec<f64>)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        let y = y.clamp(self.y0, self.y1);
        HEIGHT - BOTTOM - (y - self.y0) / span * (HEIGHT - TOP - BOTTOM)
    }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut out = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)], y_label: &str, x_label: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t);
    for y in ticks(f.y0, f.y1) {
        let py = f.py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{l}\" y1=\"{py:.2}\" x2=\"{r}\" y2=\"{py:.2}\" stroke=\"#e0e0e0\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            l - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for (x, label) in x_ticks {
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            b + 16.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (l + r) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(16,{:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str, bool)]) {
    let x = WIDTH - RIGHT + 12.0;
    // long legends (many bank weights) get truncated rather than overflow
    let max = ((HEIGHT - TOP) / 16.0) as usize - 1;
    for (i, (name, color, dashed)) in entries.iter().take(max).enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let dash = if *dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            x + 22.0,
            x + 28.0,
            y + 4.0,
            escape(name)
        );
    }
}

pub fn line_chart(chart: &LineChart) -> String {
    let all = || chart.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        if y.is_finite() {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    for r in &chart.ref_lines {
        y0 = y0.min(r.y);
        y1 = y1.max(r.y);
    }
    if let Some((lo, hi)) = chart.y_range {
        (y0, y1) = (lo, hi);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let f = Frame { x0, x1, y0, y1 };

    let mut out = String::new();
    header(&mut out, &chart.title);
    let x_ticks: Vec<_> = ticks(x0, x1).into_iter().map(|x| (f.px(x), fmt_tick(x))).collect();
    axes(&mut out, &f, &x_ticks, &chart.y_label, &chart.x_label);

    let mut entries = Vec::new();
    for (i, s) in chart.series.iter().enumerate() {
        let c = color(i);
        let mut d = String::new();
        for (k, &(x, y)) in s.points.iter().filter(|p| p.1.is_finite()).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, f.px(x), f.py(y));
        }
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"1.2\"/>");
        entries.push((s.name.clone(), c, false));
    }
    for r in &chart.ref_lines {
        let py = f.py(r.y);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>",
            WIDTH - RIGHT
        );
        entries.push((r.name.clone(), "black", true));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

pub fn bar_chart(chart: &BarChart) -> String {
    let y1 = chart
        .groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let y1 = if y1 > 0.0 { y1 * 1.05 } else { 1.0 };
    let n = chart.categories.len().max(1) as f64;
    let f = Frame {
        x0: 0.0,
        x1: n,
        y0: 0.0,
        y1,
    };
    let mut out = String::new();
    header(&mut out, &chart.title);
    let x_ticks: Vec<_> = chart
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (f.px(i as f64 + 0.5), c.clone()))
        .collect();
    axes(&mut out, &f, &x_ticks, &chart.y_label, "");

    let g = chart.groups.len().max(1) as f64;
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / g;
    let mut entries = Vec::new();
    for (gi, (name, values)) in chart.groups.iter().enumerate() {
        let c = color(gi);
        for (ci, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let x = f.px(ci as f64) + (f.px(1.0) - f.px(0.0)) * 0.1 + slot * gi as f64;
            let top = f.py(v);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{slot:.2}\" height=\"{:.2}\" fill=\"{c}\"/>",
                f.py(0.0) - top
            );
        }
        entries.push((name.clone(), c, false));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
