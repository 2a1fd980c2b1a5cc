//! CSV/JSON output of runs and the matching parsers.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! parsing a log back recovers the exact bit patterns; the determinism
//! checks hash these files directly.

use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::runner::RunLog;

/// Writes the per-step log with columns
/// `t, e_1.., xi_1.., phi_a_1.., phi_b_1.., u_1..u_12, norm_e, V1, violations`.
pub fn write_run_log_csv(log: &RunLog, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(run_log_csv_bytes(log)?.as_slice())?;
    Ok(())
}

/// Renders the log to CSV bytes (the exact bytes `write_run_log_csv` puts
/// on disk).
pub fn run_log_csv_bytes(log: &RunLog) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let ch = log.channels;
    let mut header: Vec<String> = vec!["t".into()];
    for group in ["e", "xi", "phi_a", "phi_b"] {
        for i in 1..=ch {
            header.push(format!("{group}_{i}"));
        }
    }
    for i in 1..=12 {
        header.push(format!("u_{i}"));
    }
    header.push("norm_e".into());
    header.push("V1".into());
    header.push("violations".into());
    writeln!(out, "{}", header.join(","))?;

    for row in &log.rows {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        fields.push(format!("{}", row.t));
        for v in row.e.iter() {
            fields.push(format!("{v}"));
        }
        for v in row.xi.iter() {
            fields.push(format!("{v}"));
        }
        for v in row.phi_a.iter() {
            fields.push(format!("{v}"));
        }
        for v in row.phi_b.iter() {
            fields.push(format!("{v}"));
        }
        for v in row.u.iter() {
            fields.push(format!("{v}"));
        }
        fields.push(format!("{}", row.norm_e));
        fields.push(format!("{}", row.record.v1));
        fields.push(format!("{}", row.record.violations));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(out)
}

/// One parsed CSV row; only the columns the file actually carries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub e: Vec<f64>,
    pub xi: Vec<f64>,
    pub phi_a: Vec<f64>,
    pub phi_b: Vec<f64>,
    pub u: Vec<f64>,
    pub norm_e: f64,
    pub v1: f64,
    pub violations: u64,
}

/// Parses a run log written by `write_run_log_csv`; returns the channel
/// count and the rows.
pub fn parse_run_log_csv(text: &str) -> Result<(usize, Vec<CsvRow>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("run log is empty".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") {
        return Err(Error::Config("run log must start with a `t` column".into()));
    }
    let mut idx = 1;
    let mut counts = [0usize; 4];
    for (g, group) in ["e_", "xi_", "phi_a_", "phi_b_"].iter().enumerate() {
        counts[g] = columns[idx..].iter().take_while(|c| c.starts_with(group)).count();
        idx += counts[g];
    }
    let ch = counts[0];
    if ch == 0 || counts.iter().any(|&c| c != ch) {
        return Err(Error::Config(format!(
            "run log channel groups disagree: {counts:?}"
        )));
    }
    let u_cols = columns[idx..].iter().take_while(|c| c.starts_with("u_")).count();
    idx += u_cols;
    if u_cols != 12 {
        return Err(Error::Config(format!("run log must carry 12 u columns, got {u_cols}")));
    }
    if columns[idx..] != ["norm_e", "V1", "violations"] {
        return Err(Error::Config("run log trailer columns must be norm_e, V1, violations".into()));
    }
    let total = idx + 3;

    let parse = |s: &str, lineno: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("run log row {lineno}: bad number `{s}`")))
    };
    let mut rows = Vec::new();
    for (li, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = li + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != total {
            return Err(Error::Config(format!(
                "run log row {lineno} has {} fields, expected {total}",
                fields.len()
            )));
        }
        let slice = |offset: usize| -> Result<Vec<f64>> {
            fields[offset..offset + ch].iter().map(|f| parse(f, lineno)).collect()
        };
        let row = CsvRow {
            t: parse(fields[0], lineno)?,
            e: slice(1)?,
            xi: slice(1 + ch)?,
            phi_a: slice(1 + 2 * ch)?,
            phi_b: slice(1 + 3 * ch)?,
            u: fields[1 + 4 * ch..1 + 4 * ch + 12]
                .iter()
                .map(|f| parse(f, lineno))
                .collect::<Result<Vec<f64>>>()?,
            norm_e: parse(fields[total - 3], lineno)?,
            v1: parse(fields[total - 2], lineno)?,
            violations: fields[total - 1]
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("run log row {lineno}: bad count")))?,
        };
        rows.push(row);
    }
    Ok((ch, rows))
}

pub fn read_run_log_csv(path: impl AsRef<Path>) -> Result<(usize, Vec<CsvRow>)> {
    let text = std::fs::read_to_string(path)?;
    parse_run_log_csv(&text)
}

/// Serializes any summary-like value as pretty JSON.
pub fn write_summary<T: serde::Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_run_logs_are_rejected() {
        assert!(parse_run_log_csv("").is_err());
        assert!(parse_run_log_csv("q_1,e_1\n").is_err());
        assert!(parse_run_log_csv("t,e_1,xi_1,phi_a_1,phi_b_2\n").is_err());
        let header = plain_header(1);
        assert!(parse_run_log_csv(&header).is_ok(), "header-only log is an empty run");
        let mut short_row = header.clone();
        short_row.push_str("0,0\n");
        assert!(parse_run_log_csv(&short_row).is_err());
    }

    fn plain_header(ch: usize) -> String {
        let mut cols: Vec<String> = vec!["t".into()];
        for group in ["e", "xi", "phi_a", "phi_b"] {
            for i in 1..=ch {
                cols.push(format!("{group}_{i}"));
            }
        }
        for i in 1..=12 {
            cols.push(format!("u_{i}"));
        }
        cols.push("norm_e".into());
        cols.push("V1".into());
        cols.push("violations".into());
        let mut s = cols.join(",");
        s.push('\n');
        s
    }

    #[test]
    fn rows_round_trip_to_the_bit() {
        let mut text = plain_header(1);
        // t, e_1, xi_1, phi_a_1, phi_b_1, u_1..u_12, norm_e = 18 numeric
        // fields, then V1 and the violation count.
        let values: Vec<String> = (0..18).map(|i| format!("{}", (i as f64 * 0.7).sin() * 1e-3)).collect();
        text.push_str(&values.join(","));
        text.push_str(",inf,2\n");
        let (ch, rows) = parse_run_log_csv(&text).unwrap();
        assert_eq!(ch, 1);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].v1.is_infinite());
        assert_eq!(rows[0].violations, 2);
        assert_eq!(rows[0].e[0], (0.7f64).sin() * 1e-3);
    }

    #[test]
    fn sha256_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
