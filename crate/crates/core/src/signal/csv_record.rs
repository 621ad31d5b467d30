use super::EcgRecord;
use crate::error::{Error, Result};

/// Parses the CSV fixture format: `record_id,sampling_rate` on the first
/// line, then one frame per line with one column per lead (millivolts).
pub fn parse_csv_record(text: &str) -> Result<EcgRecord> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    let first = rows
        .next()
        .ok_or(Error::Parse {
            line: 1,
            message: "empty CSV record".into(),
        })?
        .map_err(|e| csv_err(1, e))?;
    if first.len() != 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `record_id,sampling_rate`, found {} fields", first.len()),
        });
    }
    let record_id = first[0].to_string();
    let rate: f64 = first[1].parse().map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad sampling rate `{}`: {e}", &first[1]),
    })?;

    let mut leads: Vec<Vec<f64>> = Vec::new();
    for (idx, row) in rows.enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| csv_err(line, e))?;
        if leads.is_empty() {
            leads = vec![Vec::new(); row.len()];
        } else if row.len() != leads.len() {
            return Err(Error::Parse {
                line,
                message: format!("ragged row: {} columns, expected {}", row.len(), leads.len()),
            });
        }
        for (lead, field) in leads.iter_mut().zip(row.iter()) {
            let v: f64 = field.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad sample `{field}`: {e}"),
            })?;
            lead.push(v);
        }
    }
    if leads.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "record has no samples".into(),
        });
    }
    EcgRecord::from_leads(&record_id, rate, &leads).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })
}

/// Inverse of [`parse_csv_record`]; values use shortest round-trip decimals
/// so the round trip is exact.
pub fn write_csv_record(record: &EcgRecord) -> String {
    let mut out = format!("{},{}\n", record.record_id(), record.sampling_rate());
    for t in 0..record.samples() {
        let row: Vec<String> = (0..record.num_leads())
            .map(|l| record.lead(l)[t].to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn csv_err(line: usize, e: csv::Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}
