//! Command-line front end.
//!
//! Settings come from an optional JSON config file, overridden by flags. The
//! resolved settings are written to `<out>/config.json` once the inputs have
//! been checked, so any run can be repeated from that file alone.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::encoder::{build_encoder, load_checkpoint, save_checkpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::signal::{load_dataset, load_manifest, read_record, DatasetItem, LoaderConfig, Split};
use crate::text::{
    format_precomputed, load_precomputed, render_label_prompt, render_report_prompt, EmbeddingProvider, LabelTask,
    PromptedText,
};
use crate::train::{pretrain, TrainConfig, TrainPair};
use crate::zeroshot::{evaluate, ClassCatalog};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CATALOG: i32 = 3;
pub const EXIT_PARSE: i32 = 4;

/// Every setting a command may use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stub_text: bool,
    /// Width of stub text embeddings.
    pub stub_dim: usize,
    pub checkpoint: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: PathBuf,
    /// Seeds model init, batch order, and the stub provider.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub loader: LoaderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            embeddings: None,
            stub_text: false,
            stub_dim: 128,
            checkpoint: None,
            catalog: None,
            out: PathBuf::from("mets-out"),
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            loader: LoaderConfig::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON config file; flags take precedence over its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// JSON-lines manifest of records
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Precomputed text-embedding file
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use the deterministic stub text encoder instead of an embedding file
    #[arg(long)]
    pub stub_text: bool,
    /// Model checkpoint (written by pretrain, read by eval-zeroshot)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Class catalog JSON for zero-shot evaluation
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

impl RunConfig {
    /// Config file (if any) with flag overrides applied.
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let mut c = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let o = overrides;
        if let Some(v) = &o.manifest {
            c.manifest = Some(v.clone());
        }
        if let Some(v) = &o.embeddings {
            c.embeddings = Some(v.clone());
        }
        if o.stub_text {
            c.stub_text = true;
        }
        if let Some(v) = &o.checkpoint {
            c.checkpoint = Some(v.clone());
        }
        if let Some(v) = &o.catalog {
            c.catalog = Some(v.clone());
        }
        if let Some(v) = &o.out {
            c.out = v.clone();
        }
        if let Some(v) = o.seed {
            c.seed = v;
        }
        if let Some(v) = o.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = o.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = o.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = o.weight_decay {
            c.train.weight_decay = v;
        }
        c.train.seed = c.seed;
        c.encoder.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    /// Writes the resolved config to `<out>/config.json`.
    pub fn echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        let path = value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required")))?;
        if !path.exists() {
            return Err(Error::load(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        Ok(path)
    }

    fn check_text_source(&self) -> Result<()> {
        match (&self.embeddings, self.stub_text) {
            (Some(_), true) => Err(Error::Config("use either --embeddings or --stub-text, not both".into())),
            (None, false) => Err(Error::Config("one of --embeddings or --stub-text is required".into())),
            (Some(_), false) => self.require(&self.embeddings, "embeddings").map(|_| ()),
            (None, true) => Ok(()),
        }
    }

    fn provider(&self) -> Result<EmbeddingProvider> {
        match &self.embeddings {
            Some(path) => load_precomputed(path),
            None => EmbeddingProvider::stub(self.stub_dim, self.seed),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mets", version, about = "ECG-text contrastive pretraining and zero-shot ECG classification")]
pub struct Cli {
    /// Log progress (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Contrastive pretraining on the train split of a manifest
    Pretrain(Overrides),
    /// Zero-shot evaluation of a checkpoint on the test splits of a manifest
    EvalZeroshot(Overrides),
    /// Render prompts for lines of text and write an embedding file
    EmbedText(EmbedTextArgs),
    /// Print the header and per-lead statistics of a record
    InspectRecord(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PromptKind {
    Report,
    Diagnostic,
    Form,
    Rhythm,
}

#[derive(Args, Debug)]
pub struct EmbedTextArgs {
    /// Text file, one report or label per line
    #[arg(long)]
    pub input: PathBuf,
    /// Output embedding file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "report")]
    pub template: PromptKind,
    /// Use the stub text encoder
    #[arg(long)]
    pub stub_text: bool,
    /// Take vectors from this embedding file, keyed by rendered prompt or raw line
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// `.hea` header or `.csv` record
    pub record: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnknownLabels(_) => EXIT_CATALOG,
        Error::Parse { .. }
        | Error::TruncatedSignal { .. }
        | Error::UnsupportedFormat(_)
        | Error::Format(_)
        | Error::Checkpoint(_)
        | Error::Json(_) => EXIT_PARSE,
        Error::Load { .. }
        | Error::Config(_)
        | Error::Manifest { .. }
        | Error::MissingEmbedding(_)
        | Error::DuplicatePrompt(_)
        | Error::EmptyText
        | Error::UnknownTask(_) => EXIT_INPUT,
        _ => EXIT_OTHER,
    }
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::Pretrain(o) => cmd_pretrain(o, &mut stdout),
        Command::EvalZeroshot(o) => cmd_eval_zeroshot(o, &mut stdout),
        Command::EmbedText(a) => cmd_embed_text(a, &mut stdout),
        Command::InspectRecord(a) => cmd_inspect_record(a, &mut stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_items(config: &RunConfig, manifest: &Path, keep: impl Fn(Split) -> bool) -> Result<Vec<DatasetItem>> {
    let items: Vec<DatasetItem> = load_dataset(manifest, &config.loader)?
        .into_iter()
        .filter(|i| keep(i.split))
        .collect();
    if items.is_empty() {
        return Err(Error::Config(format!("{} has no usable entries", manifest.display())));
    }
    Ok(items)
}

pub fn cmd_pretrain(overrides: &Overrides, out: &mut impl Write) -> Result<()> {
    let mut config = RunConfig::resolve(overrides)?;
    let manifest = config.require(&config.manifest, "manifest")?.to_path_buf();
    config.check_text_source()?;
    load_manifest(&manifest)?;
    config.loader.target_leads.get_or_insert(config.encoder.in_leads);
    config.echo()?;

    let provider = config.provider()?;
    let pairs: Vec<TrainPair> = load_items(&config, &manifest, |s| s == Split::Train)?
        .into_iter()
        .map(TrainPair::from)
        .collect();
    log::info!("pretraining on {} pairs", pairs.len());
    let model = build_encoder(&config.encoder, config.seed)?;
    let (model, log) = pretrain(&pairs, &provider, model, &config.train, Some(&config.out))?;

    let checkpoint = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.out.join("model.ckpt"));
    save_checkpoint(&model, &checkpoint)?;
    log.write_jsonl(&config.out.join("train_log.jsonl"))?;
    match log.last() {
        Some(r) => writeln!(out, "steps {} final loss {:.6} tau {:.6}", r.step, r.batch_loss, model.temperature())?,
        None => writeln!(out, "no training steps run")?,
    }
    writeln!(out, "checkpoint {}", checkpoint.display())?;
    Ok(())
}

pub fn cmd_eval_zeroshot(overrides: &Overrides, out: &mut impl Write) -> Result<()> {
    let mut config = RunConfig::resolve(overrides)?;
    let manifest = config.require(&config.manifest, "manifest")?.to_path_buf();
    let checkpoint = config.require(&config.checkpoint, "checkpoint")?.to_path_buf();
    let catalog_path = config.require(&config.catalog, "catalog")?.to_path_buf();
    config.check_text_source()?;

    let model = load_checkpoint(&checkpoint)?;
    let catalog = ClassCatalog::load(&catalog_path)?;
    load_manifest(&manifest)?;
    config.encoder = model.config().clone();
    config.loader.target_leads.get_or_insert(model.config().in_leads);
    config.echo()?;

    let provider = config.provider()?;
    let items = load_items(&config, &manifest, Split::is_test)?;
    let report = evaluate(&items, &model, &catalog, &provider)?;
    std::fs::write(
        config.out.join("eval_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let summary = report.summary();
    std::fs::write(config.out.join("summary.txt"), &summary)?;
    write!(out, "{summary}")?;
    Ok(())
}

pub fn cmd_embed_text(args: &EmbedTextArgs, out: &mut impl Write) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::load(&args.input, e))?;
    let render = |line: &str| -> Result<PromptedText> {
        match args.template {
            PromptKind::Report => render_report_prompt(line),
            PromptKind::Diagnostic => render_label_prompt(line, LabelTask::Diagnostic),
            PromptKind::Form => render_label_prompt(line, LabelTask::Form),
            PromptKind::Rhythm => render_label_prompt(line, LabelTask::Rhythm),
        }
    };
    let (provider, keyed_by_raw) = match (&args.embeddings, args.stub_text) {
        (Some(path), false) => (load_precomputed(path)?, true),
        (None, true) => (EmbeddingProvider::stub(args.dim, args.seed)?, false),
        _ => return Err(Error::Config("use exactly one of --embeddings or --stub-text".into())),
    };
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in text.lines().map(str::trim_end).filter(|l| !l.is_empty()) {
        let prompt = render(line)?;
        if !seen.insert(prompt.rendered.clone()) {
            return Err(Error::DuplicatePrompt(prompt.rendered));
        }
        let vector = match provider.embed_rendered(&prompt.rendered) {
            Err(Error::MissingEmbedding(_)) if keyed_by_raw => provider.embed_rendered(line)?,
            other => other?,
        };
        rows.push((prompt.rendered, vector));
    }
    std::fs::write(&args.out, format_precomputed(provider.dimension(), &rows)?)?;
    writeln!(out, "wrote {} prompts to {}", rows.len(), args.out.display())?;
    Ok(())
}

pub fn cmd_inspect_record(args: &InspectArgs, out: &mut impl Write) -> Result<()> {
    let record = read_record(&args.record)?;
    let h = record.header();
    writeln!(out, "record {}", h.record_id)?;
    writeln!(out, "leads {}", h.num_leads)?;
    writeln!(out, "sampling_rate {}", h.sampling_rate)?;
    writeln!(out, "samples_per_lead {}", h.samples_per_lead)?;
    writeln!(out, "format {}", h.storage_format.token())?;
    for (i, spec) in h.leads.iter().enumerate() {
        let lead = record.lead(i);
        let min = lead.iter().copied().fold(f64::INFINITY, f64::min);
        let max = lead.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = lead.iter().sum::<f64>() / lead.len() as f64;
        writeln!(
            out,
            "lead {i} file {} gain {} baseline {} min {min} max {max} mean {mean}",
            spec.file_name, spec.gain, spec.baseline
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"seed": 3, "train": {"epochs": 7, "batch_size": 8}, "stub_dim": 32}"#).unwrap();
        let o = Overrides {
            config: Some(file),
            epochs: Some(2),
            ..Default::default()
        };
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!((c.train.epochs, c.train.batch_size, c.seed, c.train.seed, c.stub_dim), (2, 8, 3, 3, 32));
        assert_eq!(c.encoder, EncoderConfig::default());
    }

    #[test]
    fn bad_config_is_input_error() {
        let o = Overrides {
            batch_size: Some(1),
            ..Default::default()
        };
        assert_eq!(exit_code(&RunConfig::resolve(&o).unwrap_err()), EXIT_INPUT);
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"bogus": 1}"#).unwrap();
        let o = Overrides {
            config: Some(file),
            ..Default::default()
        };
        assert_eq!(exit_code(&RunConfig::resolve(&o).unwrap_err()), EXIT_INPUT);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            out: dir.path().join("run"),
            ..RunConfig::default()
        };
        let path = c.echo().unwrap();
        let back: RunConfig = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
