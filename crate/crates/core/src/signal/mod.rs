//! ECG record ingestion: WFDB-style header + int16 sample files, a CSV
//! fixture format, resampling / normalization, and JSON-lines manifests.

mod csv_record;
mod header;
mod manifest;
mod transform;
mod wfdb;

pub use csv_record::{parse_csv_record, write_csv_record};
pub use header::{parse_header, serialize_header};
pub use manifest::{load_dataset, load_manifest, read_record, DatasetItem, LoaderConfig, ManifestEntry, Split};
pub use transform::{fit_window, replicate_leads, resample, zscore_normalize};
pub use wfdb::{parse_signal, write_signal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// On-disk sample encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageFormat {
    /// 16-bit two's complement, little-endian, frames interleaved lead-major.
    Int16Le,
    /// Decimal text, one frame per line.
    Csv,
}

impl StorageFormat {
    pub fn token(self) -> &'static str {
        match self {
            StorageFormat::Int16Le => "16",
            StorageFormat::Csv => "csv",
        }
    }
}

/// Per-lead storage description: `physical = (raw - baseline) / gain`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadSpec {
    pub file_name: String,
    pub gain: f64,
    pub baseline: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordHeader {
    pub record_id: String,
    pub num_leads: usize,
    pub sampling_rate: f64,
    pub samples_per_lead: usize,
    pub leads: Vec<LeadSpec>,
    pub storage_format: StorageFormat,
}

impl RecordHeader {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.num_leads == 0 {
            return bad("record has no leads".into());
        }
        if self.leads.len() != self.num_leads {
            return bad(format!(
                "header declares {} leads but describes {}",
                self.num_leads,
                self.leads.len()
            ));
        }
        if !(self.sampling_rate > 0.0) || !self.sampling_rate.is_finite() {
            return bad(format!("sampling rate must be positive, got {}", self.sampling_rate));
        }
        if self.samples_per_lead == 0 {
            return bad("record has no samples".into());
        }
        if let Some((i, l)) = self
            .leads
            .iter()
            .enumerate()
            .find(|(_, l)| l.gain == 0.0 || !l.gain.is_finite())
        {
            return bad(format!("lead {i} has invalid gain {}", l.gain));
        }
        Ok(())
    }
}

/// A multi-lead waveform in millivolts, `signal: [num_leads, samples_per_lead]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    header: RecordHeader,
    signal: Tensor<f64>,
}

impl EcgRecord {
    pub fn new(header: RecordHeader, signal: Tensor<f64>) -> Result<Self> {
        header.validate()?;
        if signal.shape() != [header.num_leads, header.samples_per_lead] {
            return Err(Error::dim(
                "ecg record",
                &[header.num_leads, header.samples_per_lead],
                signal.shape(),
            ));
        }
        if !signal.is_finite() {
            return Err(Error::Format(format!(
                "record {} contains non-finite samples",
                header.record_id
            )));
        }
        Ok(Self { header, signal })
    }

    /// Builds a record with unit gain from per-lead sample vectors.
    pub fn from_leads(record_id: &str, sampling_rate: f64, leads: &[Vec<f64>]) -> Result<Self> {
        let samples = leads.first().map_or(0, |l| l.len());
        if leads.iter().any(|l| l.len() != samples) {
            return Err(Error::Shape("leads have different lengths".into()));
        }
        let header = RecordHeader {
            record_id: record_id.to_string(),
            num_leads: leads.len(),
            sampling_rate,
            samples_per_lead: samples,
            leads: (0..leads.len())
                .map(|_| LeadSpec {
                    file_name: String::new(),
                    gain: 1.0,
                    baseline: 0,
                })
                .collect(),
            storage_format: StorageFormat::Csv,
        };
        let data = leads.iter().flatten().copied().collect();
        Self::new(header, Tensor::new(vec![leads.len(), samples], data)?)
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    pub fn record_id(&self) -> &str {
        &self.header.record_id
    }

    pub fn signal(&self) -> &Tensor<f64> {
        &self.signal
    }

    pub fn num_leads(&self) -> usize {
        self.header.num_leads
    }

    pub fn samples(&self) -> usize {
        self.header.samples_per_lead
    }

    pub fn sampling_rate(&self) -> f64 {
        self.header.sampling_rate
    }

    pub fn lead(&self, i: usize) -> &[f64] {
        self.signal.row(i)
    }

    /// Copy with new per-lead data; lead specs are reused cyclically when the
    /// lead count changes.
    pub(crate) fn with_signal(&self, sampling_rate: f64, leads: Vec<Vec<f64>>) -> Result<Self> {
        let samples = leads.first().map_or(0, |l| l.len());
        let mut header = self.header.clone();
        header.sampling_rate = sampling_rate;
        header.samples_per_lead = samples;
        header.leads = (0..leads.len())
            .map(|i| self.header.leads[i % self.header.leads.len()].clone())
            .collect();
        header.num_leads = leads.len();
        let data = leads.into_iter().flatten().collect();
        Self::new(header.clone(), Tensor::new(vec![header.num_leads, samples], data)?)
    }

    pub(crate) fn lead_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.num_leads()).map(|i| self.lead(i).to_vec()).collect()
    }
}
