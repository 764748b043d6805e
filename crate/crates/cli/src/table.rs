//! Plot-ready CSV tables in and out.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

/// 17 significant digits, enough to reproduce every f64 exactly.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads the named numeric columns of a CSV file with a header row. Other
/// columns are ignored.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = r
        .headers()
        .map_err(|e| CliError::Config(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header.iter().position(|h| h == *n).ok_or_else(|| {
                let have: Vec<&str> = header.iter().collect();
                CliError::Config(format!(
                    "{}: missing column `{n}` (header is: {})",
                    path.display(),
                    have.join(", ")
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (k, &i) in idx.iter().enumerate() {
            let cell = rec.get(i).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Config(format!(
                    "{} line {line}, column `{}`: cannot read `{cell}` as a number",
                    path.display(),
                    names[k]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Config(format!(
                    "{} line {line}, column `{}`: value is not finite",
                    path.display(),
                    names[k]
                )));
            }
            cols[k].push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(CliError::Config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(cols)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn append_json_line<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Io(e.to_string()))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(f, "{line}").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
