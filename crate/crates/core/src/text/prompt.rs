use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REPORT_PREFIX: &str = "The report of the ECG is that ";

/// Which sentence template produced a [`PromptedText`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Report,
    DiagnosticLabel,
    FormLabel,
    RhythmLabel,
}

/// Label vocabulary a zero-shot prompt describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTask {
    Diagnostic,
    Form,
    Rhythm,
}

impl LabelTask {
    fn noun(self) -> &'static str {
        match self {
            LabelTask::Diagnostic => "diagnostic",
            LabelTask::Form => "form",
            LabelTask::Rhythm => "rhythm",
        }
    }

    fn template(self) -> TemplateKind {
        match self {
            LabelTask::Diagnostic => TemplateKind::DiagnosticLabel,
            LabelTask::Form => TemplateKind::FormLabel,
            LabelTask::Rhythm => TemplateKind::RhythmLabel,
        }
    }
}

impl FromStr for LabelTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnostic" => Ok(LabelTask::Diagnostic),
            "form" => Ok(LabelTask::Form),
            "rhythm" => Ok(LabelTask::Rhythm),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

impl fmt::Display for LabelTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

/// A raw text together with the full sentence fed to the text model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PromptedText {
    pub raw_text: String,
    pub template_kind: TemplateKind,
    pub rendered: String,
}

/// `"The report of the ECG is that {text}"`.
pub fn render_report_prompt(text: &str) -> Result<PromptedText> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(PromptedText {
        raw_text: text.to_string(),
        template_kind: TemplateKind::Report,
        rendered: format!("{REPORT_PREFIX}{text}"),
    })
}

/// `"The ECG of {label}, a type of {task}."`
///
/// The diagnostic and form wordings are fixed; the rhythm wording follows the
/// same pattern.
pub fn render_label_prompt(label: &str, task: LabelTask) -> Result<PromptedText> {
    if label.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(PromptedText {
        raw_text: label.to_string(),
        template_kind: task.template(),
        rendered: format!("The ECG of {label}, a type of {}.", task.noun()),
    })
}
