//! Dataset CSV reading/writing and run manifests.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use eivarx::signal::TimeSeriesPair;
use serde_json::{json, Value};

/// Formats a float with 12 significant digits, trimming trailing zeros.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        return format!("{x:.11e}");
    };
    // trim trailing zeros in the fractional part
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        s
    }
}

/// Writes a dataset as `k,u,y[,u_star,y_star]` with LF line endings.
pub fn write_dataset(path: &Path, series: &TimeSeriesPair) -> Result<()> {
    let with_truth = series.u_star.is_some() && series.y_star.is_some();
    let mut out = String::new();
    out.push_str(if with_truth { "k,u,y,u_star,y_star\n" } else { "k,u,y\n" });
    for k in 0..series.len() {
        out.push_str(&format!(
            "{},{},{}",
            k + 1,
            fmt_sig12(series.u[k]),
            fmt_sig12(series.y[k])
        ));
        if with_truth {
            out.push_str(&format!(
                ",{},{}",
                fmt_sig12(series.u_star.as_ref().unwrap()[k]),
                fmt_sig12(series.y_star.as_ref().unwrap()[k])
            ));
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads a dataset CSV; requires at least the `u` and `y` columns and
/// ignores everything else.
pub fn read_dataset(path: &Path) -> Result<TimeSeriesPair> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let u_col = col("u").ok_or_else(|| anyhow!("column 'u' missing in {}", path.display()))?;
    let y_col = col("y").ok_or_else(|| anyhow!("column 'y' missing in {}", path.display()))?;
    let us_col = col("u_star");
    let ys_col = col("y_star");

    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut u_star = Vec::new();
    let mut y_star = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| anyhow!("row {}: missing field {idx}", row + 2))?
                .parse::<f64>()
                .map_err(|e| anyhow!("row {}: {e}", row + 2))
        };
        u.push(field(u_col)?);
        y.push(field(y_col)?);
        if let Some(idx) = us_col {
            u_star.push(field(idx)?);
        }
        if let Some(idx) = ys_col {
            y_star.push(field(idx)?);
        }
    }
    if u.is_empty() {
        bail!("{} holds no data rows", path.display());
    }
    let u_star = (!u_star.is_empty()).then_some(u_star);
    let y_star = (!y_star.is_empty()).then_some(y_star);
    TimeSeriesPair::new(u, y, u_star, y_star, 0).map_err(|e| anyhow!("{e}"))
}

/// Writes the run manifest next to an output artifact.
pub fn write_manifest(
    path: &Path,
    subcommand: &str,
    seed: Option<u64>,
    config: Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "seed": seed,
        "config": config,
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))
}
