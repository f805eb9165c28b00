//! Line charts from CSV columns, rendered as plain SVG text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec<'a> {
    pub series: &'a str,
    pub x: &'a str,
    pub y: &'a str,
    pub filter: Option<(&'a str, &'a str)>,
}

/// One line per series value, in order of first appearance; y is averaged over
/// rows sharing an x.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

pub fn read_series(bytes: &[u8], path: &Path, spec: &PlotSpec<'_>) -> Result<Vec<Series>, CliError> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CliError::csv(path, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::csv(path, "empty CSV"));
    }
    let (si, xi, yi) = (
        column(&headers, spec.series, path)?,
        column(&headers, spec.x, path)?,
        column(&headers, spec.y, path)?,
    );
    let filter = spec
        .filter
        .map(|(c, v)| column(&headers, c, path).map(|i| (i, v)))
        .transpose()?;

    let mut order: Vec<String> = Vec::new();
    // series → x bits → (sum, count); keyed by bits so equal x values merge exactly.
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e.to_string()))?;
        if let Some((fi, want)) = filter {
            if rec.get(fi) != Some(want) {
                continue;
            }
        }
        let num = |idx: usize, name: &str| -> Result<f64, CliError> {
            let raw = rec.get(idx).unwrap_or("");
            raw.trim()
                .parse()
                .map_err(|_| CliError::csv(path, format!("row {}: {name} value {raw:?} is not a number", i + 2)))
        };
        let (x, y) = (num(xi, spec.x)?, num(yi, spec.y)?);
        let name = rec.get(si).unwrap_or("").to_string();
        if !acc.contains_key(&name) {
            order.push(name.clone());
        }
        let e = acc.entry(name).or_default().entry(x.to_bits()).or_insert((x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    }
    if order.is_empty() {
        return Err(CliError::csv(path, "no data rows to plot"));
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let mut points: Vec<(f64, f64)> = acc[&name].values().map(|&(x, s, n)| (x, s / n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    format!("{v:.4}")
        .trim_end_matches('0')
        .trim_end_matches('.')
        .to_string()
}

pub fn render_svg(series: &[Series], spec: &PlotSpec<'_>, title: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 18.0,
        escape(spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(spec.y)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}">{}={}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(spec.series),
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads `csv_path` and renders it; the SVG depends only on the input bytes and `spec`.
pub fn plot(csv_path: &Path, spec: &PlotSpec<'_>) -> Result<(String, usize), CliError> {
    let bytes = std::fs::read(csv_path).map_err(|e| CliError::io(csv_path, e))?;
    let series = read_series(&bytes, csv_path, spec)?;
    let title = format!("{} vs {} by {}", spec.y, spec.x, spec.series);
    Ok((render_svg(&series, spec, &title), series.len()))
}
