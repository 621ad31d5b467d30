use super::EcgRecord;
use crate::error::{Error, Result};

/// Linear interpolation onto a uniform grid at `target_hz`.
/// Output length is `round(samples * target_hz / source_hz)`.
pub fn resample(record: &EcgRecord, target_hz: f64) -> Result<EcgRecord> {
    if !(target_hz > 0.0) || !target_hz.is_finite() {
        return Err(Error::Config(format!("target rate must be positive, got {target_hz}")));
    }
    let source_hz = record.sampling_rate();
    if target_hz == source_hz {
        return Ok(record.clone());
    }
    let n_in = record.samples();
    let n_out = ((n_in as f64) * target_hz / source_hz).round().max(1.0) as usize;
    let step = source_hz / target_hz;
    let leads = (0..record.num_leads())
        .map(|l| {
            let x = record.lead(l);
            (0..n_out)
                .map(|i| {
                    let pos = i as f64 * step;
                    let lo = pos.floor() as usize;
                    if lo + 1 >= n_in {
                        return x[n_in - 1];
                    }
                    let frac = pos - lo as f64;
                    if frac == 0.0 {
                        x[lo]
                    } else {
                        x[lo] + (x[lo + 1] - x[lo]) * frac
                    }
                })
                .collect()
        })
        .collect();
    record.with_signal(target_hz, leads)
}

/// Per-lead zero mean, unit (population) standard deviation. Leads with
/// standard deviation below 1e-8 become all zeros.
pub fn zscore_normalize(record: &EcgRecord) -> Result<EcgRecord> {
    let leads = record
        .lead_vectors()
        .into_iter()
        .map(|lead| {
            let n = lead.len() as f64;
            let mean = lead.iter().sum::<f64>() / n;
            let var = lead.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-8 {
                vec![0.0; lead.len()]
            } else {
                lead.iter().map(|v| (v - mean) / std).collect()
            }
        })
        .collect();
    record.with_signal(record.sampling_rate(), leads)
}

/// Crops to the first `samples` frames or zero-pads at the end.
pub fn fit_window(record: &EcgRecord, samples: usize) -> Result<EcgRecord> {
    if samples == 0 {
        return Err(Error::Config("window must hold at least one sample".into()));
    }
    if samples == record.samples() {
        return Ok(record.clone());
    }
    let leads = record
        .lead_vectors()
        .into_iter()
        .map(|mut lead| {
            lead.resize(samples, 0.0);
            lead
        })
        .collect();
    record.with_signal(record.sampling_rate(), leads)
}

/// Maps a record onto exactly `leads` channels: extra leads are dropped and
/// missing ones are filled by cycling through the existing leads.
pub fn replicate_leads(record: &EcgRecord, leads: usize) -> Result<EcgRecord> {
    if leads == 0 {
        return Err(Error::Config("lead count must be positive".into()));
    }
    if leads == record.num_leads() {
        return Ok(record.clone());
    }
    let out = (0..leads)
        .map(|i| record.lead(i % record.num_leads()).to_vec())
        .collect();
    record.with_signal(record.sampling_rate(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(rate: f64, leads: &[Vec<f64>]) -> EcgRecord {
        EcgRecord::from_leads("x", rate, leads).unwrap()
    }

    #[test]
    fn resample_identity_and_constant() {
        let r = rec(10.0, &[vec![1.0, 5.0, -2.0]]);
        assert_eq!(resample(&r, 10.0).unwrap(), r);
        let c = rec(360.0, &[vec![0.7; 360]]);
        let out = resample(&c, 100.0).unwrap();
        assert_eq!(out.samples(), 100);
        assert_eq!(out.sampling_rate(), 100.0);
        assert!(out.lead(0).iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let up = resample(&c, 500.0).unwrap();
        assert_eq!(up.samples(), 500);
        assert!(up.lead(0).iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn resample_ramp_downsample() {
        let ramp: Vec<f64> = (0..10).map(f64::from).collect();
        let out = resample(&rec(10.0, &[ramp]), 5.0).unwrap();
        assert_eq!(out.lead(0), &[0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn resample_ramp_upsample_is_linear() {
        let ramp: Vec<f64> = (0..4).map(f64::from).collect();
        let out = resample(&rec(2.0, &[ramp]), 4.0).unwrap();
        assert_eq!(out.lead(0), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.0]);
        assert!(resample(&out, 0.0).is_err());
    }

    #[test]
    fn zscore_examples() {
        let r = rec(100.0, &[vec![3.0; 5], vec![-1.0, 1.0]
            .into_iter()
            .cycle()
            .take(5)
            .collect()]);
        let z = zscore_normalize(&r).unwrap();
        assert!(z.lead(0).iter().all(|&v| v == 0.0));
        let pair = zscore_normalize(&rec(100.0, &[vec![-1.0, 1.0]])).unwrap();
        assert_eq!(pair.lead(0), &[-1.0, 1.0]);
    }

    #[test]
    fn window_and_leads() {
        let r = rec(100.0, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(fit_window(&r, 2).unwrap().lead(1), &[4.0, 5.0]);
        assert_eq!(fit_window(&r, 5).unwrap().lead(0), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        let twelve = replicate_leads(&r, 12).unwrap();
        assert_eq!(twelve.num_leads(), 12);
        assert_eq!(twelve.lead(11), r.lead(1));
        assert_eq!(twelve.lead(10), r.lead(0));
        assert_eq!(replicate_leads(&r, 1).unwrap().num_leads(), 1);
    }

    proptest! {
        #[test]
        fn zscore_moments(values in proptest::collection::vec(-50.0f64..50.0, 8..200)) {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(sd > 1e-3);
            let z = zscore_normalize(&rec(100.0, &[values])).unwrap();
            let m = z.lead(0).iter().sum::<f64>() / n;
            let s = (z.lead(0).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
