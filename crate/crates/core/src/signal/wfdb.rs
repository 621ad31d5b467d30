use super::{EcgRecord, RecordHeader, StorageFormat};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes interleaved int16 little-endian frames into millivolts.
pub fn parse_signal(header: &RecordHeader, bytes: &[u8]) -> Result<EcgRecord> {
    header.validate()?;
    if header.storage_format != StorageFormat::Int16Le {
        return Err(Error::UnsupportedFormat(header.storage_format.token().into()));
    }
    let (leads, samples) = (header.num_leads, header.samples_per_lead);
    let expected = 2 * leads * samples;
    if bytes.len() != expected {
        return Err(Error::TruncatedSignal {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = vec![0.0; leads * samples];
    for (frame_idx, frame) in bytes.chunks_exact(2 * leads).enumerate() {
        for (lead, raw) in frame.chunks_exact(2).enumerate() {
            let raw = i16::from_le_bytes([raw[0], raw[1]]);
            let spec = &header.leads[lead];
            data[lead * samples + frame_idx] = (f64::from(raw) - f64::from(spec.baseline)) / spec.gain;
        }
    }
    EcgRecord::new(header.clone(), Tensor::new(vec![leads, samples], data)?)
}

/// Encodes a record with the gains and baselines of `header`, rounding to
/// the nearest representable sample and saturating at the int16 range.
pub fn write_signal(record: &EcgRecord, header: &RecordHeader) -> Result<Vec<u8>> {
    header.validate()?;
    if header.num_leads != record.num_leads() || header.samples_per_lead != record.samples() {
        return Err(Error::dim(
            "write_signal",
            &[header.num_leads, header.samples_per_lead],
            record.signal().shape(),
        ));
    }
    let mut out = Vec::with_capacity(2 * record.signal().len());
    for t in 0..record.samples() {
        for (lead, spec) in header.leads.iter().enumerate() {
            let v = record.lead(lead)[t] * spec.gain + f64::from(spec.baseline);
            let raw = v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
            out.extend_from_slice(&raw.to_le_bytes());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{parse_header, LeadSpec};
    use super::*;
    use proptest::prelude::*;

    fn header(leads: usize, samples: usize, gain: f64, baseline: i32) -> RecordHeader {
        RecordHeader {
            record_id: "t".into(),
            num_leads: leads,
            sampling_rate: 500.0,
            samples_per_lead: samples,
            leads: (0..leads)
                .map(|_| LeadSpec {
                    file_name: "t.dat".into(),
                    gain,
                    baseline,
                })
                .collect(),
            storage_format: StorageFormat::Int16Le,
        }
    }

    #[test]
    fn baseline_maps_to_zero() {
        let h = header(2, 3, 200.0, 17);
        let bytes: Vec<u8> = std::iter::repeat_n(17i16.to_le_bytes(), 6).flatten().collect();
        let r = parse_signal(&h, &bytes).unwrap();
        assert!(r.signal().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gain_scaling_and_interleave() {
        let h = parse_header(b"r 2 500 2\nr.dat 16 200 0\nr.dat 16 200 0\n").unwrap();
        let raw: [i16; 4] = [400, -200, 100, 0]; // frame0: (400, -200), frame1: (100, 0)
        let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
        let r = parse_signal(&h, &bytes).unwrap();
        assert_eq!(r.lead(0), &[2.0, 0.5]);
        assert_eq!(r.lead(1), &[-1.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_truncation() {
        let h = header(2, 3, 200.0, 0);
        assert!(matches!(
            parse_signal(&h, &[0u8; 11]),
            Err(Error::TruncatedSignal { expected: 12, found: 11 })
        ));
    }

    proptest! {
        #[test]
        fn write_parse_within_quantization(
            values in proptest::collection::vec(-10.0f64..10.0, 1..64),
            gain in 10.0f64..1000.0,
            baseline in -500i32..500,
        ) {
            let n = values.len();
            let h = header(1, n, gain, baseline);
            let rec = EcgRecord::new(h.clone(), Tensor::new(vec![1, n], values.clone()).unwrap()).unwrap();
            let back = parse_signal(&h, &write_signal(&rec, &h).unwrap()).unwrap();
            for (a, b) in values.iter().zip(back.signal().data()) {
                prop_assert!((a - b).abs() <= 0.5 / gain + 1e-12);
            }
        }
    }
}
