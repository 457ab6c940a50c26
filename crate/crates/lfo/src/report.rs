use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One table row; every value in it comes from `stage` run with `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub values: Vec<f64>,
    pub stage: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        label: impl Into<String>,
        values: Vec<f64>,
        stage: &str,
        seeds: Vec<u64>,
    ) {
        self.rows.push(Row {
            label: label.into(),
            values,
            stage: stage.into(),
            seeds,
        });
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows
            .iter()
            .find(|r| r.label == row)
            .and_then(|r| r.values.get(c).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// A chart: named series sharing axes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curves {
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub stage: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub tables: BTreeMap<String, Table>,
    pub curves: BTreeMap<String, Curves>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.curves.is_empty()
    }

    pub fn merge(&mut self, other: Report) {
        self.tables.extend(other.tables);
        self.curves.extend(other.curves);
        self.metadata.extend(other.metadata);
    }
}

/// `x` with six significant digits; scientific outside `[1e-4, 1e15)`.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let a = x.abs();
    if !(1e-4..1e15).contains(&a) {
        return format!("{x:.5e}");
    }
    let mut e = a.log10().floor() as i32;
    // rounding may carry into the next decade
    let s = format!("{:.*}", (5 - e).max(0) as usize, x);
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded.abs() >= 10f64.powi(e + 1) {
        e += 1;
        return format!("{:.*}", (5 - e).max(0) as usize, x);
    }
    s
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Report(e.to_string());
    w.write_record(&header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Report(e.to_string()))
}

fn seeds_cell(seeds: &[u64]) -> String {
    seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Table CSV: value columns first, then row label, stage and seeds.
pub fn table_csv(t: &Table) -> Result<Vec<u8>> {
    let mut header = t.columns.clone();
    header.extend(["row", "stage", "seed"].map(String::from));
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = r.values.iter().map(|&v| sig6(v)).collect();
            cells.push(r.label.clone());
            cells.push(r.stage.clone());
            cells.push(seeds_cell(&r.seeds));
            cells
        })
        .collect();
    csv_bytes(header, rows)
}

/// Long-format curve CSV: `series,x,y,stage,seed`.
pub fn curves_csv(c: &Curves) -> Result<Vec<u8>> {
    let seeds = seeds_cell(&c.seeds);
    let rows = c
        .series
        .iter()
        .flat_map(|s| {
            s.points
                .iter()
                .map(|&(x, y)| {
                    vec![
                        s.name.clone(),
                        sig6(x),
                        sig6(y),
                        c.stage.clone(),
                        seeds.clone(),
                    ]
                })
                .collect::<Vec<_>>()
        })
        .collect();
    csv_bytes(
        ["series", "x", "y", "stage", "seed"]
            .map(String::from)
            .to_vec(),
        rows,
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Standalone line chart with axes, tick labels and a legend.
pub fn curves_svg(title: &str, c: &Curves) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = c
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 16.0,
            escape(&short(xv))
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            escape(&short(yv))
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(&c.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&c.y_label)
    );
    for (i, series) in c.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Writes `<name>.csv` per table and curve set, `<name>.svg` per curve set,
/// and `metadata.json`; returns the written paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(HarnessError::Report(
            "report has no tables or curves".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, t) in &report.tables {
        let p = dir.join(format!("{name}.csv"));
        write(&p, &table_csv(t)?)?;
        written.push(p);
    }
    for (name, c) in &report.curves {
        let p = dir.join(format!("{name}.csv"));
        write(&p, &curves_csv(c)?)?;
        written.push(p);
        let p = dir.join(format!("{name}.svg"));
        write(&p, curves_svg(name, c).as_bytes())?;
        written.push(p);
    }
    let p = dir.join("metadata.json");
    let meta = serde_json::to_vec_pretty(&report.metadata)
        .map_err(|e| HarnessError::Report(e.to_string()))?;
    write(&p, &meta)?;
    written.push(p);
    Ok(written)
}
