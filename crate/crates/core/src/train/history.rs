use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub batch_loss: f64,
    /// Temperature used for this batch, before the update.
    pub temperature: f64,
    /// Global L2 norm of all parameter gradients, before clipping.
    pub grad_norm: f64,
}

/// Per-step training history, serialized as JSON lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; steps must strictly increase and losses be finite.
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if !record.batch_loss.is_finite() {
            return Err(Error::Format(format!("non-finite loss at step {}", record.step)));
        }
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Format(format!(
                    "step {} does not follow step {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            log.push(record)?;
        }
        Ok(log)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, loss: f64) -> StepRecord {
        StepRecord {
            epoch: 0,
            step,
            batch_loss: loss,
            temperature: 0.07,
            grad_norm: 1.5,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = TrainLog::new();
        log.push(rec(1, 0.693)).unwrap();
        log.push(rec(2, 0.1 + 0.2)).unwrap();
        let text = log.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(TrainLog::from_jsonl(&text).unwrap(), log);
    }

    #[test]
    fn rejects_bad_records() {
        let mut log = TrainLog::new();
        log.push(rec(3, 1.0)).unwrap();
        assert!(log.push(rec(3, 1.0)).is_err());
        assert!(log.push(rec(4, f64::NAN)).is_err());
        assert_eq!(log.len(), 1);
    }
}
