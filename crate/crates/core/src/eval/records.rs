use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord, Result};

pub const CSV_HEADER: &str = "estimator,scenario,snr_db,nmse,samples,extras";

#[derive(Serialize, Deserialize)]
struct Row {
    estimator: String,
    scenario: String,
    snr_db: f64,
    nmse: f64,
    samples: usize,
    extras: String,
}

fn encode_extras(extras: &BTreeMap<String, String>) -> Result<String> {
    let mut parts = Vec::with_capacity(extras.len());
    for (k, v) in extras {
        if k.is_empty() || k.contains([';', '=']) || v.contains([';', '=']) {
            return Err(EvalError::Invalid(format!("extra '{k}={v}' must not contain ';' or '='")));
        }
        parts.push(format!("{k}={v}"));
    }
    Ok(parts.join(";"))
}

fn decode_extras(s: &str, line: usize) -> Result<BTreeMap<String, String>> {
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => Ok((k.to_string(), v.to_string())),
            None => Err(EvalError::Csv { line, message: format!("extra '{p}' is not key=value") }),
        })
        .collect()
}

/// Sorts by estimator, then SNR, with scenario and extras as tie-breakers.
pub fn canonical_order(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then_with(|| a.scenario.cmp(&b.scenario))
            .then_with(|| a.extras.cmp(&b.extras))
            .then(a.samples.cmp(&b.samples))
            .then(a.nmse.total_cmp(&b.nmse))
    });
}

/// Writes records in canonical order; the header is always present.
pub fn write_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut sorted = records.to_vec();
    canonical_order(&mut sorted);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| EvalError::Io(e.into()))?;
    for r in &sorted {
        if !(r.nmse.is_finite() && r.nmse >= 0.0) {
            return Err(EvalError::Invalid(format!("record for '{}' has NMSE {}", r.estimator, r.nmse)));
        }
        let row = Row {
            estimator: r.estimator.clone(),
            scenario: r.scenario.clone(),
            snr_db: r.snr_db,
            nmse: r.nmse,
            samples: r.samples,
            extras: encode_extras(&r.extras)?,
        };
        w.serialize(row).map_err(|e| EvalError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        Some(h) => return Err(EvalError::Csv { line: 1, message: format!("expected header '{CSV_HEADER}', got '{h}'") }),
        None => return Err(EvalError::Csv { line: 1, message: "empty file".into() }),
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EvalError::Csv { line, message: e.to_string() })?;
        out.push(EvalRecord {
            estimator: row.estimator,
            scenario: row.scenario,
            snr_db: row.snr_db,
            nmse: row.nmse,
            samples: row.samples,
            extras: decode_extras(&row.extras, line)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(est: &str, snr: f64, nmse: f64) -> EvalRecord {
        EvalRecord {
            estimator: est.into(),
            scenario: "A".into(),
            snr_db: snr,
            nmse,
            samples: 10,
            extras: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_list_gives_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn round_trip_and_ordering() {
        let records = vec![
            rec("vae", 10.0, 0.012345678901234567).with_extra("train_size", 100).with_extra("pretrain", true),
            rec("ls", 10.0, 0.1),
            rec("ls", -5.0, 3.1622776601683795),
        ];
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = parse_csv(&text).unwrap();
        let mut expected = records.clone();
        canonical_order(&mut expected);
        assert_eq!(back, expected);
        assert_eq!(back[0].snr_db, -5.0);
        assert_eq!(back[2].extra("pretrain"), Some("true"));
    }

    #[test]
    fn bad_rows_name_their_line() {
        let text = format!("{CSV_HEADER}\nls,A,10,0.1,5,\nls,A,x,0.1,5,\n");
        assert!(matches!(parse_csv(&text), Err(EvalError::Csv { line: 3, .. })));
        assert!(matches!(parse_csv("a,b\n"), Err(EvalError::Csv { line: 1, .. })));
    }

    #[test]
    fn separators_in_extras_are_rejected() {
        let r = rec("ls", 0.0, 1.0).with_extra("note", "a=b");
        assert!(write_csv(&[r], Vec::new()).is_err());
    }
}
