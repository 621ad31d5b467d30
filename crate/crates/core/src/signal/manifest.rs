use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_window, parse_csv_record, parse_header, parse_signal, replicate_leads, resample,
    zscore_normalize, EcgRecord,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestSuperclass,
    TestForm,
    TestRhythm,
    /// Held-out dataset never seen during pretraining.
    TestExternal,
}

impl Split {
    pub fn is_test(self) -> bool {
        self != Split::Train
    }
}

/// One line of a JSON-lines manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Record path, relative to the manifest's directory.
    pub record: String,
    pub report: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub split: Split,
}

/// Preprocessing applied to every record by [`load_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoaderConfig {
    /// Resample to this rate; `None` keeps the native rate.
    pub target_hz: Option<f64>,
    /// Crop / zero-pad to this many seconds at the (resampled) rate.
    pub window_seconds: Option<f64>,
    /// Replicate or drop leads to reach this count.
    pub target_leads: Option<usize>,
    pub zscore: bool,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self {
            target_hz: Some(100.0),
            window_seconds: Some(10.0),
            target_leads: None,
            zscore: true,
        }
    }
}

impl LoaderConfig {
    pub fn apply(&self, record: &EcgRecord) -> Result<EcgRecord> {
        let mut r = match self.target_hz {
            Some(hz) => resample(record, hz)?,
            None => record.clone(),
        };
        if let Some(seconds) = self.window_seconds {
            let samples = (seconds * r.sampling_rate()).round() as usize;
            r = fit_window(&r, samples)?;
        }
        if let Some(leads) = self.target_leads {
            r = replicate_leads(&r, leads)?;
        }
        if self.zscore {
            r = zscore_normalize(&r)?;
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub record: EcgRecord,
    pub report: String,
    pub labels: Vec<String>,
    pub split: Split,
}

/// Reads and validates a manifest without touching the records.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.record.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate record path `{}`", entry.record),
            });
        }
        if entry.split.is_test() && entry.labels.len() != 1 {
            return Err(Error::Manifest {
                line: line_no,
                message: format!(
                    "test entry `{}` must carry exactly one label, found {}",
                    entry.record,
                    entry.labels.len()
                ),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Reads a record by extension: `.hea` (header, with the sample file named
/// inside it) or `.csv`.
pub fn read_record(path: &Path) -> Result<EcgRecord> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hea") => {
            let header_bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
            let header = parse_header(&header_bytes)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let dat = dir.join(&header.leads[0].file_name);
            if header.leads.iter().any(|l| l.file_name != header.leads[0].file_name) {
                return Err(Error::UnsupportedFormat("multi-file record".into()));
            }
            let bytes = std::fs::read(&dat).map_err(|e| Error::load(&dat, e))?;
            parse_signal(&header, &bytes)
        }
        Some("csv") => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
            parse_csv_record(&text)
        }
        other => Err(Error::UnsupportedFormat(format!(
            "record extension {:?} ({})",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

/// Loads every manifest entry in manifest order, applying `config`.
pub fn load_dataset(manifest_path: &Path, config: &LoaderConfig) -> Result<Vec<DatasetItem>> {
    let entries = load_manifest(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let items: Vec<DatasetItem> = entries
        .into_par_iter()
        .map(|entry| {
            let record = read_record(&base.join(&entry.record))?;
            Ok(DatasetItem {
                record: config.apply(&record)?,
                report: entry.report,
                labels: entry.labels,
                split: entry.split,
            })
        })
        .collect::<Result<_>>()?;
    let mut ids = HashSet::new();
    for (idx, item) in items.iter().enumerate() {
        if !ids.insert(item.record.record_id().to_string()) {
            return Err(Error::Manifest {
                line: idx + 1,
                message: format!("duplicate record_id `{}`", item.record.record_id()),
            });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{serialize_header, write_csv_record, write_signal, LeadSpec, RecordHeader, StorageFormat};
    use std::fs;

    fn write_csv(dir: &Path, name: &str, id: &str) {
        let r = EcgRecord::from_leads(id, 100.0, &[vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4]]).unwrap();
        fs::write(dir.join(name), write_csv_record(&r)).unwrap();
    }

    fn line(record: &str, split: &str, labels: &[&str]) -> String {
        serde_json::json!({"record": record, "report": format!("report of {record}"), "labels": labels, "split": split})
            .to_string()
    }

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "").unwrap();
        assert!(load_dataset(&m, &LoaderConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn loads_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        for (f, id) in [("c.csv", "c"), ("a.csv", "a"), ("b.csv", "b")] {
            write_csv(dir.path(), f, id);
        }
        let m = dir.path().join("m.jsonl");
        let text = [
            line("c.csv", "train", &[]),
            line("a.csv", "test_form", &["Abnormal QRS"]),
            line("b.csv", "train", &["x", "y"]),
        ]
        .join("\n");
        fs::write(&m, text).unwrap();
        let config = LoaderConfig {
            target_hz: None,
            window_seconds: None,
            target_leads: Some(12),
            zscore: true,
        };
        let items = load_dataset(&m, &config).unwrap();
        let ids: Vec<_> = items.iter().map(|i| i.record.record_id()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(items[1].split, Split::TestForm);
        assert_eq!(items[0].record.num_leads(), 12);
        assert_eq!(items[0].record.lead(1), &[0.0; 4]);
    }

    #[test]
    fn default_config_produces_ten_second_window() {
        let dir = tempfile::tempdir().unwrap();
        let r = EcgRecord::from_leads("w", 500.0, &[(0..6000).map(|i| (i as f64 * 0.01).sin()).collect()]).unwrap();
        fs::write(dir.path().join("w.csv"), write_csv_record(&r)).unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, line("w.csv", "train", &[])).unwrap();
        let items = load_dataset(&m, &LoaderConfig::default()).unwrap();
        assert_eq!(items[0].record.samples(), 1000);
        assert_eq!(items[0].record.sampling_rate(), 100.0);
    }

    #[test]
    fn reads_wfdb_records() {
        let dir = tempfile::tempdir().unwrap();
        let header = RecordHeader {
            record_id: "w1".into(),
            num_leads: 1,
            sampling_rate: 100.0,
            samples_per_lead: 3,
            leads: vec![LeadSpec {
                file_name: "w1.dat".into(),
                gain: 200.0,
                baseline: 0,
            }],
            storage_format: StorageFormat::Int16Le,
        };
        let rec = EcgRecord::from_leads("w1", 100.0, &[vec![0.5, -0.5, 1.0]]).unwrap();
        fs::write(dir.path().join("w1.hea"), serialize_header(&header)).unwrap();
        fs::write(dir.path().join("w1.dat"), write_signal(&rec, &header).unwrap()).unwrap();
        let back = read_record(&dir.path().join("w1.hea")).unwrap();
        assert_eq!(back.lead(0), &[0.5, -0.5, 1.0]);
    }

    #[test]
    fn missing_record_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, line("nope.csv", "train", &[])).unwrap();
        let err = load_dataset(&m, &LoaderConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Load { ref path, .. } if path.ends_with("nope.csv")), "{err}");
        let err = load_dataset(&dir.path().join("absent.jsonl"), &LoaderConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "a.csv", "same");
        write_csv(dir.path(), "b.csv", "same");
        let m = dir.path().join("m.jsonl");

        fs::write(&m, [line("a.csv", "train", &[]), line("a.csv", "train", &[])].join("\n")).unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::Manifest { line: 2, .. })));

        fs::write(&m, line("a.csv", "test_rhythm", &["a", "b"])).unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::Manifest { line: 1, .. })));

        fs::write(&m, [line("a.csv", "train", &[]), line("b.csv", "train", &[])].join("\n")).unwrap();
        let err = load_dataset(&m, &LoaderConfig::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate record_id"), "{err}");
    }
}
