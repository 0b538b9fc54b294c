use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::files::{ensure_dir, write_text};
use crate::manifest::ManifestBuilder;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Input CSV with a header row (e.g. temperatures.csv, comparison.csv).
    #[arg(long)]
    pub input: PathBuf,
    /// Column used for the x axis; defaults to the first column.
    #[arg(long)]
    pub x: Option<String>,
    /// Comma-separated columns to draw; defaults to every other numeric column.
    #[arg(long, value_delimiter = ',')]
    pub y: Option<Vec<String>>,
    /// Plot title; defaults to the input file name.
    #[arg(long)]
    pub title: Option<String>,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * lo.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Line plot of `series` against `xs` as a standalone SVG document.
pub fn render_svg(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#333"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            left - 5.0,
            left - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Header plus rows of a CSV file.
fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    if !path.is_file() {
        return Err(CliError::usage(format!("input file {} does not exist", path.display())));
    }
    let malformed = |e: csv::Error| CliError::usage(format!("{}: malformed CSV: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(malformed)?;
    let header: Vec<String> = rdr.headers().map_err(malformed)?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(malformed)?;
    if header.iter().all(|h| h.is_empty()) || rows.is_empty() {
        return Err(CliError::usage(format!("{} has no data rows", path.display())));
    }
    Ok((header, rows))
}

fn numeric_column(rows: &[Vec<String>], j: usize) -> Option<Vec<f64>> {
    rows.iter().map(|r| r.get(j)?.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

pub fn run(args: PlotArgs, argv: Vec<String>) -> CliResult {
    let (header, rows) = read_table(&args.input)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::usage(format!("no column '{name}' in {}", args.input.display())))
    };
    let xj = match &args.x {
        Some(x) => col(x)?,
        None => 0,
    };
    let xs = numeric_column(&rows, xj)
        .ok_or_else(|| CliError::usage(format!("column '{}' is not numeric", header[xj])))?;
    let series: Vec<(String, Vec<f64>)> = match &args.y {
        Some(names) => names
            .iter()
            .map(|n| {
                let j = col(n)?;
                let ys = numeric_column(&rows, j).ok_or_else(|| CliError::usage(format!("column '{n}' is not numeric")))?;
                Ok((n.clone(), ys))
            })
            .collect::<CliResult<_>>()?,
        None => (0..header.len())
            .filter(|&j| j != xj)
            .filter_map(|j| numeric_column(&rows, j).map(|ys| (header[j].clone(), ys)))
            .collect(),
    };
    if series.is_empty() {
        return Err(CliError::usage("no numeric columns to plot"));
    }

    let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
    let title = args.title.clone().unwrap_or_else(|| stem.clone());
    ensure_dir(&args.out)?;
    let svg_name = format!("{stem}.svg");
    let csv_name = format!("{stem}.csv");
    write_text(&args.out.join(&svg_name), &render_svg(&title, &header[xj], &xs, &series))?;
    let mut backing = std::iter::once(header[xj].as_str())
        .chain(series.iter().map(|(n, _)| n.as_str()))
        .collect::<Vec<_>>()
        .join(",");
    backing.push('\n');
    for (i, x) in xs.iter().enumerate() {
        let cells: Vec<String> = std::iter::once(*x).chain(series.iter().map(|(_, ys)| ys[i])).map(|v| format!("{v:?}")).collect();
        let _ = writeln!(backing, "{}", cells.join(","));
    }
    write_text(&args.out.join(&csv_name), &backing)?;

    let mut m = ManifestBuilder::new("plot", argv, &args.out);
    m.input(&args.input)?;
    m.output(svg_name.clone()).output(csv_name);
    m.write()?;
    println!("wrote {}", args.out.join(svg_name).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_escapes_and_closes() {
        let s = render_svg("a<b & c", "x", &[0.0, 1.0], &[("y\"1".into(), vec![1.0, 2.0])]);
        assert!(s.contains("a&lt;b &amp; c"));
        assert!(s.contains("y&quot;1"));
        assert!(s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn flat_series_gets_a_range() {
        assert_eq!(range([2.0, 2.0].into_iter()), (1.5, 2.5));
        assert_eq!(tick_label(0.10000), "0.1");
        assert_eq!(tick_label(-0.0), "0");
    }
}
