//! Data-driven SVG rendering of the CSV artifacts.
//!
//! Output depends only on the input bytes: coordinates are printed with a
//! fixed number of decimals and series keep file order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// A parsed CSV artifact: schema id from the leading comment, header and rows.
#[derive(Clone, Debug)]
pub struct Table {
    pub file: String,
    pub schema: String,
    pub headers: Vec<String>,
    /// `(line number, fields)`.
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(file: &str, text: &str) -> CliResult<Self> {
        let err = |line: u64, message: String| CliError::Csv {
            file: file.to_string(),
            line,
            message,
        };
        let schema = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# schema:"))
            .map(|s| s.trim().to_string())
            .ok_or_else(|| err(1, "missing `# schema:` header line".into()))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(false)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| err(2, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                err(line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            file: file.to_string(),
            schema,
            headers,
            rows,
        })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| CliError::Csv {
            file: self.file.clone(),
            line: 2,
            message: format!("missing column `{name}`"),
        })
    }

    /// Numeric column; blank cells become `None`.
    pub fn numbers(&self, name: &str) -> CliResult<Vec<Option<f64>>> {
        let c = self.col(name)?;
        self.rows
            .iter()
            .map(|(line, r)| {
                let s = r[c].trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| CliError::Csv {
                    file: self.file.clone(),
                    line: *line,
                    message: format!("`{s}` in column `{name}` is not a number"),
                })
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|(_, r)| r[c].clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub color: String,
    /// Lower and upper band edges, same length as `xs`.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    pub show_in_legend: bool,
}

impl Series {
    fn new(name: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>, color: String) -> Self {
        Self {
            name: name.into(),
            xs,
            ys,
            color,
            band: None,
            show_in_legend: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn palette(k: usize) -> String {
    PALETTE[k % PALETTE.len()].to_string()
}

/// Blue for label 0 through red for label 1.
fn label_color(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * u).round() as u8;
    let b = (240.0 - 200.0 * u).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const ML: f64 = 80.0;
const MR: f64 = 160.0;
const MT: f64 = 40.0;
const MB: f64 = 60.0;

fn f(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn transform(&self, v: f64, log: bool) -> Option<f64> {
        if log {
            (v > 0.0).then(|| v.log10())
        } else {
            v.is_finite().then_some(v)
        }
    }

    fn range(&self, axis_x: bool) -> Option<(f64, f64)> {
        let log = if axis_x { self.log_x } else { self.log_y };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.series {
            let mut vals: Vec<f64> = if axis_x { s.xs.clone() } else { s.ys.clone() };
            if !axis_x {
                if let Some((a, b)) = &s.band {
                    vals.extend(a);
                    vals.extend(b);
                }
            }
            for v in vals.into_iter().filter_map(|v| self.transform(v, log)) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { 0.05 * lo.abs() } else { 1.0 };
            return Some((lo - pad, hi + pad));
        }
        let pad = 0.03 * (hi - lo);
        Some((lo - pad, hi + pad))
    }

    pub fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.xs.is_empty())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            f((ML + W - MR) / 2.0),
            escape(&self.title)
        );
        let (px0, px1, py0, py1) = (ML, W - MR, H - MB, MT);
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            f(px0),
            f(py1),
            f(px1 - px0),
            f(py0 - py1)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            f((px0 + px1) / 2.0),
            f(H - 15.0),
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            f((py0 + py1) / 2.0),
            f((py0 + py1) / 2.0),
            escape(&self.y_label)
        );
        let (Some((x0, x1)), Some((y0, y1))) = (self.range(true), self.range(false)) else {
            out.push_str("</svg>\n");
            return out;
        };
        let sx = |v: f64| px0 + (v - x0) / (x1 - x0) * (px1 - px0);
        let sy = |v: f64| py0 - (v - y0) / (y1 - y0) * (py0 - py1);

        for k in 0..=5 {
            let tx = x0 + (x1 - x0) * k as f64 / 5.0;
            let ty = y0 + (y1 - y0) * k as f64 / 5.0;
            let lx = if self.log_x { 10f64.powf(tx) } else { tx };
            let ly = if self.log_y { 10f64.powf(ty) } else { ty };
            let _ = writeln!(
                out,
                r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#ddd"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"##,
                f(sx(tx)),
                f(py0),
                f(py1),
                f(py0 + 16.0),
                tick_label(lx)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{0}" y1="{2}" x2="{1}" y2="{2}" stroke="#ddd"/><text x="{3}" y="{4}" text-anchor="end">{5}</text>"##,
                f(px0),
                f(px1),
                f(sy(ty)),
                f(px0 - 5.0),
                f(sy(ty) + 4.0),
                tick_label(ly)
            );
        }

        let point = |x: f64, y: f64| -> Option<(f64, f64)> {
            Some((sx(self.transform(x, self.log_x)?), sy(self.transform(y, self.log_y)?)))
        };
        for s in &self.series {
            if let Some((lo, hi)) = &s.band {
                let mut pts: Vec<String> = Vec::new();
                for (x, y) in s.xs.iter().zip(hi) {
                    if let Some((a, b)) = point(*x, *y) {
                        pts.push(format!("{},{}", f(a), f(b)));
                    }
                }
                for (x, y) in s.xs.iter().zip(lo).rev() {
                    if let Some((a, b)) = point(*x, *y) {
                        pts.push(format!("{},{}", f(a), f(b)));
                    }
                }
                let _ = writeln!(
                    out,
                    r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" "),
                    s.color
                );
            }
            let pts: Vec<String> = s
                .xs
                .iter()
                .zip(&s.ys)
                .filter_map(|(x, y)| point(*x, *y))
                .map(|(a, b)| format!("{},{}", f(a), f(b)))
                .collect();
            if pts.len() == 1 {
                let (a, b) = pts[0].split_once(',').expect("formatted pair");
                let _ = writeln!(out, r#"<circle cx="{a}" cy="{b}" r="3" fill="{}"/>"#, s.color);
            } else if !pts.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.3"/>"#,
                    pts.join(" "),
                    s.color
                );
            }
        }

        let mut ly = MT + 10.0;
        for s in self.series.iter().filter(|s| s.show_in_legend) {
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                f(px1 + 10.0),
                f(ly),
                f(px1 + 30.0),
                f(ly),
                s.color,
                f(px1 + 35.0),
                f(ly + 4.0),
                escape(&s.name)
            );
            ly += 18.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

fn numbers_required(t: &Table, name: &str) -> CliResult<Vec<f64>> {
    t.numbers(name)?
        .into_iter()
        .zip(&t.rows)
        .map(|(v, (line, _))| {
            v.ok_or_else(|| CliError::Csv {
                file: t.file.clone(),
                line: *line,
                message: format!("empty cell in column `{name}`"),
            })
        })
        .collect()
}

/// One `Y` path per particle, colored by label.
pub fn trajectory_chart(t: &Table) -> CliResult<Chart> {
    let particle = numbers_required(t, "particle")?;
    let label = numbers_required(t, "label")?;
    let time = numbers_required(t, "t")?;
    let y = numbers_required(t, "Y")?;
    let mut series: Vec<Series> = Vec::new();
    let mut current: Option<f64> = None;
    for i in 0..particle.len() {
        if current != Some(particle[i]) {
            current = Some(particle[i]);
            let mut s = Series::new(
                format!("u = {:.3}", label[i]),
                Vec::new(),
                Vec::new(),
                label_color(label[i]),
            );
            s.show_in_legend = false;
            series.push(s);
        }
        let s = series.last_mut().expect("pushed above");
        s.xs.push(time[i]);
        s.ys.push(y[i]);
    }
    Ok(Chart {
        title: "Y paths (blue: u = 0, red: u = 1)".into(),
        x_label: "t".into(),
        y_label: "Y_t".into(),
        log_x: false,
        log_y: false,
        series,
    })
}

/// Mean and 95% band across runs for each iteration, one row per run.
fn band(runs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = runs.iter().map(Vec::len).min().unwrap_or(0);
    let k = runs.len() as f64;
    let mut mean = Vec::with_capacity(n);
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for j in 0..n {
        let m = runs.iter().map(|r| r[j]).sum::<f64>() / k;
        let var = if k > 1.0 {
            runs.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let half = 1.96 * (var / k).sqrt();
        mean.push(m);
        lo.push(m - half);
        hi.push(m + half);
    }
    (mean, lo, hi)
}

/// Loss curves; several histories give mean curves with 95% bands.
pub fn history_chart(tables: &[Table]) -> CliResult<Chart> {
    let mut iters = Vec::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for t in tables {
        iters.push(numbers_required(t, "iteration")?);
        train.push(numbers_required(t, "train_loss")?);
        val.push(numbers_required(t, "val_loss")?);
    }
    let xs = iters.first().cloned().unwrap_or_default();
    let mut series = Vec::new();
    for (k, (name, runs)) in [("train loss", &train), ("validation loss", &val)].into_iter().enumerate() {
        let (mean, lo, hi) = band(runs);
        let mut s = Series::new(name, xs[..mean.len()].to_vec(), mean, palette(k));
        if runs.len() > 1 {
            s.band = Some((lo, hi));
        }
        series.push(s);
    }
    let title = if tables.len() > 1 {
        format!("Losses, mean and 95% band over {} runs", tables.len())
    } else {
        "Losses".into()
    };
    Ok(Chart {
        title,
        x_label: "iteration".into(),
        y_label: "loss".into(),
        log_x: false,
        log_y: true,
        series,
    })
}

pub fn utilities_chart(t: &Table) -> CliResult<Chart> {
    Ok(Chart {
        title: "Equilibrium utility by label".into(),
        x_label: "u".into(),
        y_label: "V".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new(
            "utility",
            numbers_required(t, "label")?,
            numbers_required(t, "utility")?,
            palette(0),
        )],
    })
}

/// Group-mean wealth and benchmarked wealth with 95% bands.
pub fn metrics_chart(t: &Table) -> CliResult<Chart> {
    let group = t.strings("group")?;
    let time = numbers_required(t, "t")?;
    let cols = [
        ("mean_X", "se_X", "E[X]"),
        ("mean_benchmarked_X", "se", "E[X - GX]"),
    ];
    let mut series = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for g in &group {
        if !names.contains(g) {
            names.push(g.clone());
        }
    }
    for (c, (mean_col, se_col, what)) in cols.iter().enumerate() {
        let mean = numbers_required(t, mean_col)?;
        let se = numbers_required(t, se_col)?;
        for (k, name) in names.iter().enumerate() {
            let idx: Vec<usize> = (0..group.len()).filter(|&i| &group[i] == name).collect();
            let mut s = Series::new(
                format!("{what} {name}"),
                idx.iter().map(|&i| time[i]).collect(),
                idx.iter().map(|&i| mean[i]).collect(),
                palette(2 * k + c),
            );
            s.band = Some((
                idx.iter().map(|&i| mean[i] - 1.96 * se[i]).collect(),
                idx.iter().map(|&i| mean[i] + 1.96 * se[i]).collect(),
            ));
            series.push(s);
        }
    }
    Ok(Chart {
        title: "Expected wealth by group".into(),
        x_label: "t".into(),
        y_label: "wealth".into(),
        log_x: false,
        log_y: false,
        series,
    })
}

pub fn exploitability_chart(t: &Table) -> CliResult<Chart> {
    let u = numbers_required(t, "label")?;
    Ok(Chart {
        title: "Equilibrium and best-response utilities".into(),
        x_label: "u".into(),
        y_label: "V".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series::new("equilibrium", u.clone(), numbers_required(t, "V_eq")?, palette(0)),
            Series::new("best response", u, numbers_required(t, "V_br")?, palette(1)),
        ],
    })
}

pub fn oracle_chart(t: &Table) -> CliResult<Chart> {
    let u = numbers_required(t, "label")?;
    Ok(Chart {
        title: "Learned and closed-form Y_0".into(),
        x_label: "u".into(),
        y_label: "Y_0".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series::new("closed form", u.clone(), numbers_required(t, "Y0_oracle")?, palette(1)),
            Series::new("learned", u, numbers_required(t, "Y0_learned")?, palette(0)),
        ],
    })
}

/// Relative error against `M`, mean and 95% band over seeds.
pub fn sweep_chart(t: &Table) -> CliResult<Chart> {
    let m = numbers_required(t, "M")?;
    let err = t.numbers("val_rel_error")?;
    let mut sizes: Vec<f64> = Vec::new();
    for &v in &m {
        if !sizes.contains(&v) {
            sizes.push(v);
        }
    }
    let (mut mean, mut lo, mut hi, mut xs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &s in &sizes {
        let vals: Vec<f64> = (0..m.len()).filter(|&i| m[i] == s).filter_map(|i| err[i]).collect();
        if vals.is_empty() {
            continue;
        }
        let runs: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
        let (a, b, c) = band(&runs);
        xs.push(s);
        mean.push(a[0]);
        lo.push(b[0]);
        hi.push(c[0]);
    }
    let mut s = Series::new("relative error (%)", xs, mean, palette(0));
    s.band = Some((lo, hi));
    Ok(Chart {
        title: "Validation relative error against M".into(),
        x_label: "M".into(),
        y_label: "relative error (%)".into(),
        log_x: true,
        log_y: true,
        series: vec![s],
    })
}

/// Chart for a set of tables sharing one schema.
pub fn chart_for(tables: &[Table]) -> CliResult<Chart> {
    let first = tables
        .first()
        .ok_or_else(|| CliError::Config("no CSV input given".into()))?;
    if let Some(t) = tables.iter().find(|t| t.schema != first.schema) {
        return Err(CliError::Config(format!(
            "cannot combine schemas {} and {}",
            first.schema, t.schema
        )));
    }
    let base = first.schema.rsplit_once(".v").map(|(b, _)| b).unwrap_or(&first.schema);
    match base {
        "gfbsde.trajectory" => trajectory_chart(first),
        "gfbsde.train_history" => history_chart(tables),
        "gfbsde.utilities" => utilities_chart(first),
        "gfbsde.metrics" => metrics_chart(first),
        "gfbsde.exploitability" => exploitability_chart(first),
        "gfbsde.sweep" => sweep_chart(first),
        "gfbsde.oracle" => oracle_chart(first),
        other => Err(CliError::Config(format!("no plot for schema `{other}`"))),
    }
}

/// Renders `inputs` into `output`. Returns a warning when there is nothing to draw.
pub fn emit_plot(inputs: &[&Path], output: &Path) -> CliResult<Option<String>> {
    let tables = inputs.iter().map(|p| Table::read(p)).collect::<CliResult<Vec<_>>>()?;
    let chart = chart_for(&tables)?;
    std::fs::write(output, chart.render())
        .map_err(|e| CliError::io(format!("writing {}", output.display()), e))?;
    Ok(chart.is_empty().then(|| {
        format!(
            "{}: no data rows, wrote empty axes to {}",
            inputs[0].display(),
            output.display()
        )
    }))
}
