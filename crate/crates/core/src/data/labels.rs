//! Ground-truth CSV in the ISIC 2017 layout: `image_id,melanoma,seborrheic_keratosis`.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: [&str; 3] = ["image_id", "melanoma", "seborrheic_keratosis"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub image_id: String,
    pub melanoma: u8,
    pub sk: u8,
}

fn ingest(row: usize, reason: impl Into<String>) -> Error {
    Error::Ingestion { row, reason: reason.into() }
}

fn binary_field(raw: &str, column: &str, row: usize) -> Result<u8> {
    let v: f64 = raw.trim().parse().map_err(|_| ingest(row, format!("{column}: {raw:?} is not a number")))?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(ingest(row, format!("{column}: {raw:?} is not 0 or 1")))
    }
}

/// Parses label rows in file order. `row` in errors is the 1-based line number.
pub fn parse_labels(reader: impl Read) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(ingest(1, "empty file"));
    }
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| ingest(1, format!("missing column {name}")))?;
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            ingest(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).ok_or_else(|| ingest(line, "missing field"));
        let id = field(idx[0])?.to_string();
        if id.is_empty() {
            return Err(ingest(line, "empty image_id"));
        }
        let melanoma = binary_field(field(idx[1])?, HEADER[1], line)?;
        let sk = binary_field(field(idx[2])?, HEADER[2], line)?;
        if melanoma == 1 && sk == 1 {
            return Err(ingest(line, format!("{id}: melanoma and seborrheic keratosis are mutually exclusive")));
        }
        if !seen.insert(id.clone()) {
            return Err(ingest(line, format!("duplicate image_id {id}")));
        }
        rows.push(LabelRow { image_id: id, melanoma, sk });
    }
    if rows.is_empty() {
        return Err(ingest(1, "no label rows"));
    }
    Ok(rows)
}

pub fn load_isic_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(file)
}

/// Serializes rows with `0.0`/`1.0` values.
pub fn format_labels(rows: &[LabelRow]) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{:.1},{:.1}\n", r.image_id, f64::from(r.melanoma), f64::from(r.sk)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<LabelRow>> {
        parse_labels(s.as_bytes())
    }

    #[test]
    fn isic_row() {
        let rows = parse("image_id,melanoma,seborrheic_keratosis\nISIC_0012484,1.0,0.0\n").unwrap();
        assert_eq!(rows, vec![LabelRow { image_id: "ISIC_0012484".into(), melanoma: 1, sk: 0 }]);
    }

    #[test]
    fn crlf_and_integer_values() {
        let rows = parse("image_id,melanoma,seborrheic_keratosis\r\na,0,1\r\nb,0.0,0.0\r\n").unwrap();
        assert_eq!(rows[0].sk, 1);
        assert_eq!(rows[1].image_id, "b");
    }

    #[test]
    fn both_positive_rejected_with_row() {
        let err = parse("image_id,melanoma,seborrheic_keratosis\na,0,0\nb,1.0,1.0\n").unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 3, .. }), "{err}");
    }

    #[test]
    fn failures() {
        assert!(matches!(parse(""), Err(Error::Ingestion { .. })));
        assert!(matches!(parse("image_id,melanoma,seborrheic_keratosis\n"), Err(Error::Ingestion { .. })));
        assert!(matches!(parse("image_id,melanoma\na,1\n"), Err(Error::Ingestion { row: 1, .. })));
        assert!(matches!(parse("image_id,melanoma,seborrheic_keratosis\na,0.5,0\n"), Err(Error::Ingestion { row: 2, .. })));
        assert!(matches!(
            parse("image_id,melanoma,seborrheic_keratosis\na,0,0\na,1,0\n"),
            Err(Error::Ingestion { row: 3, .. })
        ));
    }

    #[test]
    fn format_round_trip() {
        let rows = vec![
            LabelRow { image_id: "x".into(), melanoma: 1, sk: 0 },
            LabelRow { image_id: "y".into(), melanoma: 0, sk: 1 },
        ];
        let text = format_labels(&rows);
        assert!(text.contains("x,1.0,0.0"));
        assert_eq!(parse(&text).unwrap(), rows);
    }
}
