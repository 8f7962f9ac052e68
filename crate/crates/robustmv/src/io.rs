//! Delimited price input and the text artifacts written by the commands.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use robustmv_core::calibration::PriceSeries;
use robustmv_core::simulator::{WealthEnsemble, Which};
use robustmv_core::variance::{SurfaceGrid, SurfaceMode};
use robustmv_core::Error;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Reads a `date,close` file with a header row and ISO-8601 dates. Line
/// numbers in errors are 1-based and count the header; an unreadable file
/// is reported at line 0.
pub fn read_prices(path: &Path, symbol: &str, trading_days: usize) -> Result<PriceSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::ParseError {
        line: 0,
        message: format!("cannot open {}: {e}", path.display()),
    })?;
    parse_prices(file, symbol, trading_days)
}

pub fn parse_prices<R: std::io::Read>(
    input: R,
    symbol: &str,
    trading_days: usize,
) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header_err = |message: String| Error::ParseError { line: 1, message };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(di), Some(ci)) = (col("date"), col("close")) else {
        return Err(header_err(format!(
            "expected header `date,close`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ))
        .into());
    };
    let mut dates = Vec::new();
    let mut closes = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::ParseError {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date =
            NaiveDate::parse_from_str(field(di), "%Y-%m-%d").map_err(|e| Error::ParseError {
                line,
                message: format!("bad date `{}`: {e}", field(di)),
            })?;
        let close: f64 = field(ci).parse().map_err(|e| Error::ParseError {
            line,
            message: format!("bad close `{}`: {e}", field(ci)),
        })?;
        dates.push(date);
        closes.push(close);
    }
    if dates.is_empty() {
        return Err(Error::ParseError {
            line: 1,
            message: "no price rows".into(),
        }
        .into());
    }
    Ok(PriceSeries::new(symbol, dates, closes, trading_days)?)
}

pub fn format_prices(series: &PriceSeries) -> String {
    let mut out = String::from("date,close\n");
    for (d, p) in series.dates().iter().zip(series.prices()) {
        writeln!(out, "{},{}", d.format("%Y-%m-%d"), p).unwrap();
    }
    out
}

fn which_name(w: Which) -> &'static str {
    match w {
        Which::Misspecified => "misspecified",
        Which::Robust => "robust",
    }
}

/// Header block of `# key=value` lines, then a `terminal` column with one
/// value per path.
pub fn format_ensemble(ens: &WealthEnsemble, config_hash: &str) -> String {
    let mut out = String::new();
    writeln!(out, "# config_hash={config_hash}").unwrap();
    writeln!(out, "# seed={}", ens.seed).unwrap();
    writeln!(out, "# scenario={}", which_name(ens.which)).unwrap();
    writeln!(out, "# noise_stream={}", ens.noise_stream as u8).unwrap();
    writeln!(out, "# control_stream={}", ens.control_stream as u8).unwrap();
    writeln!(out, "# omega={}", ens.omega).unwrap();
    writeln!(out, "# rho_used={}", join(&ens.rho_used, ";")).unwrap();
    writeln!(out, "# steps={}", ens.steps).unwrap();
    writeln!(out, "# overflowed={}", ens.overflowed.len()).unwrap();
    out.push_str("terminal\n");
    for x in &ens.terminal {
        writeln!(out, "{x}").unwrap();
    }
    out
}

/// Path matrix, one row per path and one column per time node.
pub fn format_paths(paths: &[Vec<f64>]) -> String {
    let mut out = String::new();
    if let Some(first) = paths.first() {
        let cols: Vec<String> = (0..first.len()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{}", cols.join(",")).unwrap();
    }
    for p in paths {
        writeln!(out, "{}", join(p, ",")).unwrap();
    }
    out
}

pub fn parse_ensemble(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        if !seen_header {
            seen_header = true;
            continue;
        }
        values.push(line.parse().map_err(|_| Error::ParseError {
            line: i + 1,
            message: format!("bad value `{line}`"),
        })?);
    }
    Ok(values)
}

/// Metadata header (`# key=value`) followed by the value matrix, rows along
/// the first axis. Singular cells are written as `nan`.
pub fn format_surface(grid: &SurfaceGrid) -> String {
    let mut out = String::new();
    let mode = match grid.mode {
        SurfaceMode::Exploration => "exploration",
        SurfaceMode::Classical => "classical",
    };
    writeln!(out, "# mode={mode}").unwrap();
    writeln!(out, "# c={}", grid.c).unwrap();
    writeln!(out, "# T={}", grid.horizon).unwrap();
    writeln!(out, "# x0_minus_l={}", grid.x0_minus_l).unwrap();
    for (i, a) in grid.axes.iter().enumerate() {
        writeln!(out, "# axis{i}={}:{}:{}", a.min, a.max, a.steps).unwrap();
    }
    let m = &grid.markers;
    writeln!(out, "# rho_hat={}", join(&m.rho_hat, ";")).unwrap();
    writeln!(out, "# half_rho_hat={}", join(&m.half_rho_hat, ";")).unwrap();
    match (&m.k_star, &m.k_star_rho_hat) {
        (Some(k), Some(p)) => {
            writeln!(out, "# k_star={k}").unwrap();
            writeln!(out, "# k_star_rho_hat={}", join(p, ";")).unwrap();
        }
        _ => writeln!(out, "# k_star=none").unwrap(),
    }
    if let Some((idx, v)) = grid.argmin() {
        writeln!(out, "# argmin_cell={idx}").unwrap();
        writeln!(out, "# min_value={v}").unwrap();
    }
    writeln!(out, "# singular_cells={}", grid.singular.len()).unwrap();
    let (rows, cols) = grid.shape();
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| fmt_value(grid.get(i, j))).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

pub fn format_loss_history(history: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (k, v) in history.iter().enumerate() {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        v.to_string()
    }
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
