//! Bare-bones static plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let widen = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a - 0.05 * (b - a), b + 0.05 * (b - a)) };
        Frame { x: widen(x0, x1), y: widen(y0, y1) }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * PAD, H - 2.0 * PAD).unwrap();
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0).unwrap();
        writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0).unwrap();
        for (v, x) in [(self.x.0, PAD), (self.x.1, W - PAD)] {
            writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.3}</text>"#, H - PAD + 15.0).unwrap();
        }
        for (v, y) in [(self.y.0, H - PAD), (self.y.1, PAD)] {
            writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.4}</text>"#, PAD - 4.0).unwrap();
        }
    }
}

/// One polyline per named series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = String::new();
    frame.axes(&mut s, title, xlabel, ylabel);
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#, W - PAD - 120.0, PAD + 15.0 * (k + 1) as f64).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Points per named series, with the imaginary axis drawn when in view.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = String::new();
    frame.axes(&mut s, title, xlabel, ylabel);
    if frame.x.0 < 0.0 && frame.x.1 > 0.0 {
        let x = frame.px(0.0);
        writeln!(s, r#"<line x1="{x}" y1="{PAD}" x2="{x}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#, H - PAD).unwrap();
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        for &(x, y) in pts {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, frame.px(x), frame.py(y)).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#, W - PAD - 120.0, PAD + 15.0 * (k + 1) as f64).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
