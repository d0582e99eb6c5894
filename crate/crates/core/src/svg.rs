//! Static SVG charts rendered from report structs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::archetypes::Category;
use crate::error::{Error, Result};
use crate::report::{AccuracyReport, AdversaryReport, ArchetypeReport, ColorReport, DensityReport, OverlapReport};

const SERIES: [&str; 10] = [
    "#808080", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#17becf", "#bcbd22", "#e377c2",
];

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    buf: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(buf, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            buf,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            esc(title)
        );
        Canvas { buf }
    }

    fn plot_w(&self) -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_h(&self) -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    /// y pixel for a value in `[0, max]`.
    fn y(&self, v: f64, max: f64) -> f64 {
        TOP + self.plot_h() * (1.0 - (v / max).clamp(0.0, 1.0))
    }

    fn axes(&mut self, max: f64, ticks: usize) {
        let bottom = TOP + self.plot_h();
        let _ = writeln!(
            self.buf,
            r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom:.1}" stroke="black"/>"#
        );
        let _ = writeln!(
            self.buf,
            r#"<line x1="{LEFT}" y1="{bottom:.1}" x2="{:.1}" y2="{bottom:.1}" stroke="black"/>"#,
            WIDTH - RIGHT
        );
        for t in 0..=ticks {
            let v = max * t as f64 / ticks as f64;
            let y = self.y(v, max);
            let _ = writeln!(
                self.buf,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                y + 4.0,
                trim(v)
            );
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, title: &str) {
        let _ = writeln!(
            self.buf,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="white" stroke-width="0.5"><title>{}</title></rect>"#,
            esc(title)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    fn x_label(&mut self, x: f64, s: &str) {
        let y = TOP + self.plot_h() + 12.0;
        let _ = writeln!(
            self.buf,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="end" transform="rotate(-40 {x:.2} {y:.2})">{}</text>"#,
            esc(s)
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        let y = HEIGHT - 14.0;
        let mut x = LEFT;
        for (label, color) in entries {
            self.rect(x, y - 9.0, 10.0, 10.0, color, label);
            self.text(x + 14.0, y, "start", label);
            x += 24.0 + 7.0 * label.len() as f64;
        }
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Per-class accuracy bars with the imbalance ratio as a black line.
pub fn accuracy_chart(report: &AccuracyReport) -> String {
    let Some(split) = report.splits.first() else {
        return Canvas::new("class accuracy").finish();
    };
    let mut c = Canvas::new(&format!("class accuracy ({})", split.split));
    c.axes(1.0, 5);
    let n = split.classes.len().max(1) as f64;
    let slot = c.plot_w() / n;
    let mut line = Vec::new();
    for (i, row) in split.classes.iter().enumerate() {
        let x = LEFT + slot * i as f64;
        let acc = row.accuracy.unwrap_or(0.0);
        let y = c.y(acc, 1.0);
        c.rect(
            x + slot * 0.15,
            y,
            slot * 0.7,
            TOP + c.plot_h() - y,
            SERIES[1],
            &format!("{}: {}", row.class, trim(acc)),
        );
        c.x_label(x + slot * 0.5, &row.class);
        if let Some(r) = row.imbalance_ratio {
            line.push(format!("{:.2},{:.2}", x + slot * 0.5, c.y(r, 1.0)));
        }
    }
    let _ = writeln!(
        c.buf,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
        line.join(" ")
    );
    c.legend(&[("accuracy", SERIES[1]), ("imbalance ratio", "black")]);
    c.finish()
}

/// Grouped TP-rate bars per class, one bar per archetype.
pub fn archetype_chart(report: &ArchetypeReport) -> String {
    let mut c = Canvas::new("true-positive rate by archetype");
    c.axes(1.0, 5);
    let mut classes: Vec<&str> = Vec::new();
    for r in &report.rows {
        if classes.last() != Some(&r.class.as_str()) {
            classes.push(&r.class);
        }
    }
    let slot = c.plot_w() / classes.len().max(1) as f64;
    let bar = slot * 0.8 / 4.0;
    for r in &report.rows {
        let ci = classes.iter().position(|n| *n == r.class).unwrap_or(0);
        let k = r.category as usize;
        let x = LEFT + slot * ci as f64 + slot * 0.1 + bar * k as f64;
        if let Some(tp) = r.tp_rate {
            let y = c.y(tp, 1.0);
            c.rect(
                x,
                y,
                bar,
                TOP + c.plot_h() - y,
                SERIES[k + 1],
                &format!("{} {}: {} of {}", r.class, r.category, trim(tp), r.count),
            );
        }
    }
    for (i, name) in classes.iter().enumerate() {
        c.x_label(LEFT + slot * (i as f64 + 0.5), name);
    }
    let legend: Vec<(&str, &str)> = Category::ALL.iter().map(|k| (k.name(), SERIES[*k as usize + 1])).collect();
    c.legend(&legend);
    c.finish()
}

/// Stacked nearest-adversary shares per reference class.
pub fn adversary_chart(report: &AdversaryReport) -> String {
    let mut c = Canvas::new("nearest-adversary share by reference class");
    c.axes(1.0, 5);
    let mut refs: Vec<&str> = Vec::new();
    let mut advs: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !refs.contains(&r.class.as_str()) {
            refs.push(&r.class);
        }
        if !advs.contains(&r.adversary_class.as_str()) {
            advs.push(&r.adversary_class);
        }
    }
    let slot = c.plot_w() / refs.len().max(1) as f64;
    for (i, reference) in refs.iter().enumerate() {
        let x = LEFT + slot * i as f64;
        let mut acc = 0.0;
        for r in report.rows.iter().filter(|r| r.class == *reference) {
            let p = r.proportion.unwrap_or(0.0);
            if p <= 0.0 {
                continue;
            }
            let top = c.y(acc + p, 1.0);
            let bottom = c.y(acc, 1.0);
            let color = SERIES[advs.iter().position(|a| *a == r.adversary_class).unwrap_or(0) % SERIES.len()];
            c.rect(
                x + slot * 0.15,
                top,
                slot * 0.7,
                bottom - top,
                color,
                &format!("{} -> {}: {}", reference, r.adversary_class, trim(p)),
            );
            acc += p;
        }
        c.x_label(x + slot * 0.5, reference);
    }
    let legend: Vec<(&str, &str)> = advs
        .iter()
        .enumerate()
        .map(|(i, a)| (*a, SERIES[i % SERIES.len()]))
        .collect();
    c.legend(&legend);
    c.finish()
}

/// Stacked top-K shares per class, largest mean at the bottom, each segment
/// labelled with its feature index.
pub fn overlap_chart(report: &OverlapReport) -> String {
    let mut c = Canvas::new(&format!("top-{} latent features by class", report.k));
    c.axes(1.0, 5);
    let slot = c.plot_w() / report.classes.len().max(1) as f64;
    for (i, class) in report.classes.iter().enumerate() {
        let x = LEFT + slot * i as f64;
        let mut acc = 0.0;
        for f in &class.features {
            let top = c.y(acc + f.share, 1.0);
            let bottom = c.y(acc, 1.0);
            c.rect(
                x + slot * 0.15,
                top,
                slot * 0.7,
                bottom - top,
                SERIES[f.rank % SERIES.len()],
                &format!("{} FE {}: share {}", class.class, f.fe_index, trim(f.share)),
            );
            if bottom - top >= 10.0 {
                c.text(x + slot * 0.5, (top + bottom) / 2.0 + 4.0, "middle", &f.fe_index.to_string());
            }
            acc += f.share;
        }
        c.x_label(x + slot * 0.5, &class.class);
    }
    c.finish()
}

/// Density ratio bars grouped by reference feature, one bar per adversary class.
pub fn density_chart(report: &DensityReport) -> String {
    let mut c = Canvas::new(&format!("feature density against {}", report.reference_class));
    let max = report
        .rows
        .iter()
        .filter_map(|r| r.ratio)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let nice = if max <= 1.0 { 1.0 } else { max.ceil() };
    c.axes(nice, 5);
    let mut advs: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !advs.contains(&r.adversary_class.as_str()) {
            advs.push(&r.adversary_class);
        }
    }
    let groups = report.reference_top.len().max(1) as f64;
    let slot = c.plot_w() / groups;
    let bar = slot * 0.8 / advs.len().max(1) as f64;
    for (g, fe) in report.reference_top.iter().enumerate() {
        for (ai, adv) in advs.iter().enumerate() {
            let Some(row) = report.rows.iter().find(|r| r.fe_index == *fe && r.adversary_class == *adv) else {
                continue;
            };
            if let Some(ratio) = row.ratio {
                let y = c.y(ratio, nice);
                c.rect(
                    LEFT + slot * g as f64 + slot * 0.1 + bar * ai as f64,
                    y,
                    bar,
                    TOP + c.plot_h() - y,
                    SERIES[ai % SERIES.len()],
                    &format!("FE {fe} {adv}: {}", trim(ratio)),
                );
            }
        }
        c.x_label(LEFT + slot * (g as f64 + 0.5), &format!("FE {fe}"));
    }
    let legend: Vec<(&str, &str)> = advs
        .iter()
        .enumerate()
        .map(|(i, a)| (*a, SERIES[i % SERIES.len()]))
        .collect();
    c.legend(&legend);
    c.finish()
}

/// Stacked color fractions per class, filled with each bin's running mean color.
pub fn color_chart(report: &ColorReport) -> String {
    let mut c = Canvas::new("salient color share by class");
    c.axes(1.0, 5);
    let slot = c.plot_w() / report.classes.len().max(1) as f64;
    for (i, class) in report.classes.iter().enumerate() {
        let x = LEFT + slot * i as f64;
        let mut acc = 0.0;
        for b in class.bins.iter().filter(|b| b.fraction > 0.0) {
            let top = c.y(acc + b.fraction, 1.0);
            let bottom = c.y(acc, 1.0);
            c.rect(
                x + slot * 0.15,
                top,
                slot * 0.7,
                bottom - top,
                &b.mean_hex,
                &format!("{} {}: {}", class.class, b.bin, trim(b.fraction)),
            );
            acc += b.fraction;
        }
        c.x_label(x + slot * 0.5, &class.class);
    }
    c.finish()
}
