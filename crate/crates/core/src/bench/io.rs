//! CSV datasets: a header `u1,…,u_nu,y1,…,y_ny` and one row per sample. The
//! sample rate lives in a sidecar `<stem>.json` (`{"sample_rate": …}`) or is
//! passed by the caller.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::signal::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    sample_rate: f64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Count the `u1..` and `y1..` columns, requiring that exact order.
fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<(usize, usize)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let nu = names.iter().take_while(|n| n.starts_with('u')).count();
    let ny = names.len() - nu;
    for (i, name) in names.iter().enumerate() {
        let expected = if i < nu { format!("u{}", i + 1) } else { format!("y{}", i - nu + 1) };
        if *name != expected {
            return Err(parse_err(path, 1, format!("column {} is {name:?}, expected {expected:?}", i + 1)));
        }
    }
    if nu == 0 || ny == 0 {
        return Err(parse_err(path, 1, "header needs at least one u column followed by at least one y column"));
    }
    Ok((nu, ny))
}

/// Read a dataset. `sample_rate` overrides the sidecar; one of the two must
/// be present.
pub fn load_dataset(path: impl AsRef<Path>, sample_rate: Option<f64>) -> Result<Dataset> {
    let path = path.as_ref();
    let sample_rate = match sample_rate {
        Some(fs) => fs,
        None => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(|e| {
                Error::arg(format!(
                    "no sample rate given and sidecar {} unreadable: {e}",
                    side.display()
                ))
            })?;
            serde_json::from_str::<Sidecar>(&text)?.sample_rate
        }
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::arg(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let (nu, ny) = parse_header(path, &header)?;
    let width = nu + ny;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(parse_err(path, line, format!("{} fields, expected {width}", record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {}: {field:?} is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {}: non-finite value {field:?}", j + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "no samples after the header"));
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    Dataset::new(
        all.columns(0, nu).into_owned(),
        all.columns(nu, ny).into_owned(),
        sample_rate,
    )
}

/// Write `d` (as stored, normalized or not) and its sidecar. Values are
/// printed in shortest round-trip form, so loading gives back the same bits.
pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::arg(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = (1..=d.n_inputs())
        .map(|i| format!("u{i}"))
        .chain((1..=d.n_outputs()).map(|i| format!("y{i}")))
        .collect();
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io_err)?;
    for k in 0..d.len() {
        let row: Vec<String> = d
            .u
            .row(k)
            .iter()
            .chain(d.y.row(k).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&Sidecar {
            sample_rate: d.sample_rate,
        })?,
    )?;
    Ok(())
}
