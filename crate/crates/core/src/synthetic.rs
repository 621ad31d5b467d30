//! Seeded synthetic ECG-text data for tests, demos, and smoke runs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::{DatasetItem, EcgRecord, Split};
use crate::train::TrainPair;

/// Sampling rate of every synthetic record.
pub const SAMPLING_RATE: f64 = 100.0;

/// Class names of [`morphology_dataset`], in class-index order.
pub const MORPHOLOGY_CLASSES: [&str; 4] = [
    "Normal ECG",
    "Myocardial Infarction",
    "Ventricular Hypertrophy",
    "Conduction Disturbance",
];

const FINDINGS: [&str; 12] = [
    "sinus rhythm normal ecg",
    "atrial fibrillation with rapid ventricular response",
    "left bundle branch block",
    "inferior myocardial infarction age undetermined",
    "left ventricular hypertrophy",
    "first degree av block",
    "sinus bradycardia otherwise normal",
    "premature ventricular contractions",
    "right axis deviation",
    "nonspecific t wave abnormality",
    "anterior ischemia",
    "low qrs voltages",
];

/// `n` pairs of white-noise records, each with a different report.
pub fn distinct_pairs(n: usize, leads: usize, samples: usize, seed: u64) -> Vec<TrainPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..leads)
                .map(|_| (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let record = EcgRecord::from_leads(&format!("pair{i:03}"), SAMPLING_RATE, &rows).expect("consistent leads");
            let base = FINDINGS[i % FINDINGS.len()];
            let report = match i / FINDINGS.len() {
                0 => base.to_string(),
                k => format!("{base} variant {k}"),
            };
            TrainPair { record, report }
        })
        .collect()
}

/// Beat waveform of one class at phase `x` (radians).
fn beat(class: usize, x: f64) -> f64 {
    let s = x.sin();
    match class % 4 {
        0 => s,
        1 => s.signum(),
        2 => (x / (2.0 * PI)).fract() * 2.0 - 1.0,
        _ => {
            let p = (x / (2.0 * PI)).fract();
            if p < 0.2 {
                3.0
            } else {
                -0.3
            }
        }
    }
}

/// One record of a morphology class: a class-specific waveform at a
/// class-specific rate, random phase and amplitude, lead-dependent phase
/// shift, and additive noise.
pub fn morphology_record(class: usize, id: &str, leads: usize, samples: usize, rng: &mut impl Rng) -> EcgRecord {
    const RATES_HZ: [f64; 4] = [1.0, 2.5, 5.0, 9.0];
    let rate = RATES_HZ[class % 4] * rng.random_range(0.95..1.05);
    let phase = rng.random_range(0.0..2.0 * PI);
    let amplitude = rng.random_range(0.8..1.2);
    let rows: Vec<Vec<f64>> = (0..leads)
        .map(|lead| {
            (0..samples)
                .map(|t| {
                    let x = 2.0 * PI * rate * t as f64 / SAMPLING_RATE + phase + lead as f64 * PI / 3.0;
                    let noise: f64 = StandardNormal.sample(rng);
                    amplitude * beat(class, x) + 0.1 * noise
                })
                .collect()
        })
        .collect();
    EcgRecord::from_leads(id, SAMPLING_RATE, &rows).expect("consistent leads")
}

/// Report text for a class label: the label itself in lower case.
pub fn class_report(label: &str) -> String {
    label.to_lowercase()
}

/// `per_class` records of each of the four [`MORPHOLOGY_CLASSES`], shuffled
/// by class round-robin, each labelled and paired with a report.
pub fn morphology_dataset(per_class: usize, leads: usize, samples: usize, split: Split, seed: u64) -> Vec<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(per_class * MORPHOLOGY_CLASSES.len());
    for i in 0..per_class {
        for (class, label) in MORPHOLOGY_CLASSES.iter().enumerate() {
            let id = format!("syn{seed}-{class}-{i:04}");
            let record = morphology_record(class, &id, leads, samples, &mut rng);
            items.push(DatasetItem {
                record,
                report: class_report(label),
                labels: vec![label.to_string()],
                split,
            });
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let a = morphology_dataset(2, 3, 50, Split::Train, 4);
        let b = morphology_dataset(2, 3, 50, Split::Train, 4);
        assert_eq!(a.len(), 8);
        assert_eq!(a[0].record.signal().shape(), &[3, 50]);
        assert!(a.iter().zip(&b).all(|(x, y)| x.record == y.record && x.report == y.report));
        assert_eq!(a[1].labels, vec!["Myocardial Infarction".to_string()]);
        assert!(a[1].report.contains("myocardial infarction"));
    }

    #[test]
    fn distinct_reports() {
        let pairs = distinct_pairs(30, 2, 16, 0);
        let mut reports: Vec<_> = pairs.iter().map(|p| p.report.clone()).collect();
        reports.sort();
        reports.dedup();
        assert_eq!(reports.len(), 30);
    }
}
