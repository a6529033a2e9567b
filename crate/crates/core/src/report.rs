//! Report formatting helpers: stable float text, CSV and key-value writers.
//!
//! Floats are written with 17 significant digits so every f64 round-trips
//! exactly and repeated runs produce byte-identical files.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// 17-significant-digit scientific form, e.g. `1.0000000000000000e1`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a CSV file with a header row. Callers pre-format cells; use
/// [`fmt_f64`] for floats.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a CSV produced by [`write_csv`]; returns (header, rows).
pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: empty csv", path.display())))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    Ok((header, rows))
}

/// Writes `key: value` lines, one per pair.
pub fn write_kv<P: AsRef<Path>>(path: P, pairs: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips_exactly() {
        for &x in &[
            0.0,
            1.0,
            -1.5,
            10.0,
            0.1,
            std::f64::consts::PI,
            1.0e-300,
            -3.444e222,
            f64::MIN_POSITIVE,
        ] {
            let parsed: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits(), "{x} via {}", fmt_f64(x));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            vec!["1".to_string(), fmt_f64(0.5)],
            vec!["2".to_string(), fmt_f64(-0.25)],
        ];
        write_csv(&path, &["step", "value"], &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["step", "value"]);
        assert_eq!(back, rows);
    }
}
