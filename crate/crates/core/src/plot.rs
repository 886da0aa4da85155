//! Self-contained SVG charts and the per-frame averages they show.

use std::fmt::Write as _;

use crate::fem::SimulationRecord;

/// Per-frame means over the mesh: resultant displacement, effective strain
/// and effective stress.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameAverages {
    pub time: Vec<f64>,
    pub displacement: Vec<f64>,
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

impl FrameAverages {
    pub fn of(sim: &SimulationRecord) -> Self {
        let n = sim.topology.n_nodes();
        let dim = sim.topology.dim();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut out = FrameAverages {
            time: Vec::new(),
            displacement: Vec::new(),
            strain: Vec::new(),
            stress: Vec::new(),
        };
        for f in &sim.frames {
            let rd: f64 = (0..n)
                .map(|i| {
                    (0..dim)
                        .map(|a| f.displacements[a * n + i].powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            out.time.push(f.time);
            out.displacement.push(rd / n as f64);
            out.strain.push(mean(&f.strain));
            out.stress.push(mean(&f.stress));
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "time,mean_resultant_displacement,mean_effective_strain,mean_effective_stress";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for i in 0..self.time.len() {
            let _ = writeln!(
                s,
                "{:.6},{:.9e},{:.9e},{:.9e}",
                self.time[i], self.displacement[i], self.strain[i], self.stress[i]
            );
        }
        s
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 400.0, 70.0);
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter().copied()));
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#,
            px(fx),
            h - m + 18.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3e}</text>"#,
            m - 6.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, (&x, &y)) in ser.x.iter().zip(ser.y).enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2} ",
                if j == 0 { "M" } else { "L" },
                px(x),
                py(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * i as f64,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Cell-per-value heatmap of a 2D field stored row-major with row 0 at the
/// bottom.
pub fn heatmap(title: &str, rows: usize, cols: usize, values: &[f64], range: (f64, f64)) -> String {
    let cell = 40.0;
    let (w, h) = (cols as f64 * cell + 40.0, rows as f64 * cell + 60.0);
    let span = if range.1 > range.0 {
        range.1 - range.0
    } else {
        1.0
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = ((values[r * cols + c] - range.0) / span).clamp(0.0, 1.0);
            // white to red
            let g = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb(255,{g},{g})" stroke="gray"/>"#,
                20.0 + c as f64 * cell,
                40.0 + (rows - 1 - r) as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
