//! CSV and JSON file formats.
//!
//! Observation files use the header `t,id,y,x1,...,xP`, series files
//! `t,value` and truth files `t,p,beta_true`. Floats are written in their
//! shortest round-trip form so re-reading a file reproduces the values
//! bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dataset, RawRecord};

/// Shortest round-trip text form of `v`; switches to exponent notation for
/// very small or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: {what} {field:?} is not a number")))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Reads an observation file. The header must be exactly `t,id,y,x1,..,xP`.
pub fn read_observations(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let expected_prefix = ["t", "id", "y"];
    let ok_prefix = names.len() >= 3 && names[..3] == expected_prefix;
    let ok_x = names
        .iter()
        .skip(3)
        .enumerate()
        .all(|(j, n)| *n == format!("x{}", j + 1));
    if !ok_prefix || !ok_x {
        return Err(Error::Input(format!(
            "{}: header must be t,id,y,x1,...,xP, got {}",
            path.display(),
            names.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = rec[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Input(format!("line {line}: t {:?} is not an integer", &rec[0])))?;
        let y = parse_f64(&rec[2], "y", line)?;
        let x = rec
            .iter()
            .skip(3)
            .map(|f| parse_f64(f, "x", line))
            .collect::<Result<Vec<_>>>()?;
        out.push(RawRecord {
            t,
            id: rec[1].to_string(),
            y,
            x,
        });
    }
    Ok(out)
}

/// Serializes a dataset in the observation schema; the intercept column is
/// implied by configuration and not written.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let raw = dataset.to_raw_records();
    let width = raw.first().map_or(0, |r| r.x.len());
    let mut s = String::from("t,id,y");
    for j in 1..=width {
        s.push_str(&format!(",x{j}"));
    }
    s.push('\n');
    for r in &raw {
        s.push_str(&format!("{},{},{}", r.t, r.id, fmt_f64(r.y)));
        for v in &r.x {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Reads a `t,value` file into values ordered by t.
pub fn read_series_csv(path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "value"] {
        return Err(Error::Series(format!(
            "{}: header must be t,value",
            path.display()
        )));
    }
    parse_series_records(rdr.records().map(|r| r.map_err(|e| Error::csv(path, e))))
}

pub(crate) fn parse_series_records(
    records: impl Iterator<Item = Result<csv::StringRecord>>,
) -> Result<Vec<(i64, f64)>> {
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::Series(format!("line {line}: expected 2 fields")));
        }
        let t = rec[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Series(format!("line {line}: bad t {:?}", &rec[0])))?;
        let v = rec[1]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Series(format!("line {line}: non-numeric value {:?}", &rec[1])))?;
        out.push((t, v));
    }
    Ok(out)
}

/// One `t,p,beta_true` row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRow {
    pub t: usize,
    pub p: usize,
    pub beta_true: f64,
}

pub fn truth_to_csv(rows: &[TruthRow]) -> String {
    let mut s = String::from("t,p,beta_true\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.t, r.p, fmt_f64(r.beta_true)));
    }
    s
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "p", "beta_true"] {
        return Err(Error::Input(format!(
            "{}: header must be t,p,beta_true",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |i: usize| {
            rec[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Input(format!("line {line}: bad integer {:?}", &rec[i])))
        };
        out.push(TruthRow {
            t: int(0)?,
            p: int(1)?,
            beta_true: parse_f64(&rec[2], "beta_true", line)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, ModelConfig};
    use proptest::prelude::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0, -3.5, 1e-300, 123456789.123, 5e20, f64::MIN_POSITIVE, 0.1 + 0.2] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1120.0), "1120");
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_text(&p, "t,y,x1\n1,2,3\n").unwrap();
        assert!(matches!(read_observations(&p), Err(Error::Input(_))));
        write_text(&p, "t,id,y,x2\n1,a,2,3\n").unwrap();
        assert!(read_observations(&p).is_err());
    }

    #[test]
    fn rejects_non_numeric() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_text(&p, "t,id,y,x1\n1,a,two,3\n").unwrap();
        assert!(matches!(read_observations(&p), Err(Error::Input(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn validate_serialize_validate_is_identity(
            rows in prop::collection::vec((1i64..12, -1e6f64..1e6, prop::collection::vec(-1e3f64..1e3, 2)), 1..40),
            intercept in any::<bool>(),
        ) {
            let raw: Vec<RawRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, (t, y, x))| RawRecord { t: *t, id: format!("r{i}"), y: *y, x: x.clone() })
                .collect();
            let cfg = ModelConfig { add_intercept: intercept, ..ModelConfig::default() };
            let ds = validate_dataset(&raw, &cfg).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("obs.csv");
            write_text(&path, &dataset_to_csv(&ds)).unwrap();
            let again = validate_dataset(&read_observations(&path).unwrap(), &cfg).unwrap();
            prop_assert_eq!(ds, again);
        }
    }
}
