use super::{LeadSpec, RecordHeader, StorageFormat};
use crate::error::{Error, Result};

/// Parses a WFDB-style text header.
///
/// ```text
/// <record_id> <num_leads> <sampling_rate> <samples_per_lead>
/// <file_name> <format> <gain> <baseline>      (one line per lead)
/// ```
///
/// Blank lines and `#` comments are skipped. Only format `16` is accepted.
pub fn parse_header(bytes: &[u8]) -> Result<RecordHeader> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("header is not UTF-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty header".into(),
    })?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(line_no, format!("expected 4 record fields, found {}", fields.len())));
    }
    let record_id = fields[0].to_string();
    let num_leads: usize = number(line_no, "num_leads", fields[1])?;
    let sampling_rate: f64 = number(line_no, "sampling_rate", fields[2])?;
    let samples_per_lead: usize = number(line_no, "samples_per_lead", fields[3])?;
    if num_leads == 0 {
        return Err(parse_err(line_no, "record must have at least one lead".into()));
    }
    if !(sampling_rate > 0.0) || !sampling_rate.is_finite() {
        return Err(parse_err(line_no, format!("invalid sampling rate {sampling_rate}")));
    }
    if samples_per_lead == 0 {
        return Err(parse_err(line_no, "samples_per_lead must be positive".into()));
    }

    let mut leads = Vec::with_capacity(num_leads);
    for _ in 0..num_leads {
        let (line_no, line) = lines.next().ok_or(Error::Parse {
            line: line_no + leads.len() + 1,
            message: format!("expected {num_leads} lead lines, found {}", leads.len()),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 lead fields, found {}", fields.len())));
        }
        if fields[1] != StorageFormat::Int16Le.token() {
            return Err(Error::UnsupportedFormat(fields[1].to_string()));
        }
        let gain: f64 = number(line_no, "gain", fields[2])?;
        if gain == 0.0 || !gain.is_finite() {
            return Err(parse_err(line_no, format!("invalid gain {gain}")));
        }
        let baseline: i32 = number(line_no, "baseline", fields[3])?;
        leads.push(LeadSpec {
            file_name: fields[0].to_string(),
            gain,
            baseline,
        });
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(parse_err(line_no, format!("unexpected line after {num_leads} leads")));
    }

    Ok(RecordHeader {
        record_id,
        num_leads,
        sampling_rate,
        samples_per_lead,
        leads,
        storage_format: StorageFormat::Int16Le,
    })
}

/// Canonical text form: single spaces, shortest round-trip decimals.
pub fn serialize_header(header: &RecordHeader) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        header.record_id, header.num_leads, header.sampling_rate, header.samples_per_lead
    );
    for lead in &header.leads {
        out.push_str(&format!(
            "{} {} {} {}\n",
            lead.file_name,
            StorageFormat::Int16Le.token(),
            lead.gain,
            lead.baseline
        ));
    }
    out
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

fn number<N: std::str::FromStr>(line: usize, field: &str, token: &str) -> Result<N>
where
    N::Err: std::fmt::Display,
{
    token
        .parse()
        .map_err(|e| parse_err(line, format!("bad {field} `{token}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_lead_header() {
        let h = parse_header(b"r001 2 500 5000\nr001.dat 16 200 0\nr001.dat 16 200 0").unwrap();
        assert_eq!(h.record_id, "r001");
        assert_eq!(h.num_leads, 2);
        assert_eq!(h.sampling_rate, 500.0);
        assert_eq!(h.samples_per_lead, 5000);
        assert!(h.leads.iter().all(|l| l.gain == 200.0 && l.baseline == 0));
        assert_eq!(h.storage_format, StorageFormat::Int16Le);
    }

    #[test]
    fn zero_leads_is_a_parse_error() {
        assert!(matches!(
            parse_header(b"r001 0 500 5000\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn reports_line_numbers_and_formats() {
        let err = parse_header(b"r 1 500 10\n# comment\nr.dat 16 abc 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_header(b"r 1 500 10\nr.dat 212 200 0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(ref t) if t == "212"));
        assert!(parse_header(b"r 2 500 10\nr.dat 16 200 0\n").is_err());
        assert!(parse_header(b"r 1 500 10\nr.dat 16 0 0\n").is_err());
        assert!(parse_header(b"r 1 500 10\nr.dat 16 200 0\nextra line\n").is_err());
    }

    fn arb_header() -> impl Strategy<Value = RecordHeader> {
        (
            "[a-z][a-z0-9_]{0,8}",
            1usize..13,
            prop_oneof![Just(100.0), Just(360.0), Just(500.0), 1.0f64..2000.0],
            1usize..100_000,
        )
            .prop_flat_map(|(id, n, fs, samples)| {
                let leads = proptest::collection::vec(
                    (
                        prop_oneof![0.5f64..5000.0, -5000.0f64..-0.5],
                        -2048i32..2048,
                    ),
                    n,
                );
                (Just(id), Just(fs), Just(samples), leads)
            })
            .prop_map(|(id, fs, samples, leads)| RecordHeader {
                num_leads: leads.len(),
                leads: leads
                    .into_iter()
                    .map(|(gain, baseline)| LeadSpec {
                        file_name: format!("{id}.dat"),
                        gain,
                        baseline,
                    })
                    .collect(),
                record_id: id,
                sampling_rate: fs,
                samples_per_lead: samples,
                storage_format: StorageFormat::Int16Le,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn header_round_trip(h in arb_header()) {
            let text = serialize_header(&h);
            let parsed = parse_header(text.as_bytes()).unwrap();
            prop_assert_eq!(&parsed, &h);
            prop_assert_eq!(serialize_header(&parsed), text);
        }
    }
}
