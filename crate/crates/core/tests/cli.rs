use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mets::signal::{write_csv_record, DatasetItem, EcgRecord, Split};
use mets::synthetic::{self, MORPHOLOGY_CLASSES};
use mets::text::load_precomputed;

fn mets(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mets"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes each item as a CSV record next to a JSON-lines manifest.
fn write_manifest(dir: &Path, items: &[DatasetItem]) -> PathBuf {
    let mut lines = String::new();
    for item in items {
        let file = format!("{}.csv", item.record.record_id());
        std::fs::write(dir.join(&file), write_csv_record(&item.record)).unwrap();
        let entry = serde_json::json!({
            "record": file,
            "report": item.report,
            "labels": item.labels,
            "split": item.split,
        });
        lines.push_str(&entry.to_string());
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

/// Four 12-lead, 10 s records at 100 Hz.
fn smoke_fixture(dir: &Path) -> PathBuf {
    let items: Vec<DatasetItem> = (0..4)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..12)
                .map(|l| (0..1000).map(|t| ((t * (i + 1) + l * 7) as f64 * 0.05).sin()).collect())
                .collect();
            DatasetItem {
                record: EcgRecord::from_leads(&format!("r{i}"), 100.0, &rows).unwrap(),
                report: format!("report number {i}"),
                labels: vec![],
                split: Split::Train,
            }
        })
        .collect();
    write_manifest(dir, &items)
}

/// Micro encoder on 2-lead, 256-sample windows.
fn micro_config(dir: &Path, epochs: usize) -> PathBuf {
    let config = serde_json::json!({
        "stub_text": true,
        "stub_dim": 64,
        "seed": 11,
        "encoder": {
            "in_leads": 2,
            "stage_channels": [4, 8, 12, 16],
            "projection_dim": 16
        },
        "train": { "epochs": epochs },
        "loader": { "target_hz": 100.0, "window_seconds": 2.56, "zscore": false }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn catalog(dir: &Path, labels: &[&str]) -> PathBuf {
    let path = dir.join("catalog.json");
    std::fs::write(&path, serde_json::json!({ "task": "diagnostic", "labels": labels }).to_string()).unwrap();
    path
}

#[test]
fn pretrain_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = smoke_fixture(dir.path());
    let out = dir.path().join("out");
    let o = mets(&["pretrain", "--manifest", s(&manifest), "--stub-text", "--epochs", "1", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.ckpt").is_file());
    assert!(out.join("config.json").is_file());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // four records, batch 32: one batch of four
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["epoch"], 0);
    assert!(lines[0]["batch_loss"].as_f64().unwrap().is_finite());
    let echoed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 7);
    assert_eq!(echoed["train"]["epochs"], 1);
}

#[test]
fn missing_manifest_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.jsonl");
    let o = mets(&["pretrain", "--manifest", s(&missing), "--stub-text", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
    assert!(!out.exists());
}

#[test]
fn same_seed_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let items = synthetic::morphology_dataset(3, 2, 256, Split::Train, 5);
    let manifest = write_manifest(dir.path(), &items);
    let config = micro_config(dir.path(), 3);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mets(&["pretrain", "--config", s(&config), "--manifest", s(&manifest), "--batch-size", "4", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(out.join("train_log.jsonl")).unwrap(),
            std::fs::read(out.join("model.ckpt")).unwrap(),
        )
    };
    let (log_a, ckpt_a) = run("a");
    let (log_b, ckpt_b) = run("b");
    assert_eq!(String::from_utf8(log_a.clone()).unwrap().lines().count(), 9);
    assert_eq!(log_a, log_b);
    assert_eq!(ckpt_a, ckpt_b);
}

/// Pretrains on the separable morphology data and returns the directory,
/// manifest with test entries, and checkpoint.
fn trained_fixture() -> (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut items = synthetic::morphology_dataset(32, 2, 256, Split::Train, 11);
    items.extend(synthetic::morphology_dataset(4, 2, 256, Split::TestSuperclass, 12));
    let manifest = write_manifest(dir.path(), &items);
    let config = micro_config(dir.path(), 60);
    let checkpoint = dir.path().join("model.ckpt");
    let o = mets(&[
        "pretrain",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&checkpoint),
        "--out",
        s(&dir.path().join("train")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (dir, manifest, config, checkpoint)
}

#[test]
fn zero_shot_evaluation() {
    let (dir, manifest, config, checkpoint) = trained_fixture();
    let out = dir.path().join("eval");
    let full = catalog(dir.path(), &MORPHOLOGY_CLASSES);
    let o = mets(&[
        "eval-zeroshot",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&checkpoint),
        "--catalog",
        s(&full),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary, String::from_utf8(o.stdout).unwrap());
    for metric in ["Accuracy", "Precision", "Recall", "F1"] {
        let line = summary.lines().find(|l| l.starts_with(metric)).unwrap();
        assert!(line.ends_with("1.0000"), "{summary}");
    }

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    let confusion: Vec<Vec<u64>> = serde_json::from_value(report["confusion"].clone()).unwrap();
    let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let total: u64 = confusion.iter().flatten().sum();
    assert_eq!(total, 16);
    assert_eq!(report["accuracy"].as_f64().unwrap(), trace as f64 / total as f64);

    // a catalog without one of the test labels
    let partial = catalog(dir.path(), &MORPHOLOGY_CLASSES[..3]);
    let o = mets(&[
        "eval-zeroshot",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&checkpoint),
        "--catalog",
        s(&partial),
        "--out",
        s(&dir.path().join("eval2")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Conduction Disturbance"));
}

#[test]
fn embed_text_writes_loadable_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("reports.txt");
    let table = dir.path().join("emb.tsv");
    std::fs::write(&input, "sinus rhythm\nleft bundle branch block\n\nanterior ischemia\n").unwrap();
    let o = mets(&["embed-text", "--input", s(&input), "--out", s(&table), "--stub-text", "--dim", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "dim=8");
    assert!(lines[1..].iter().all(|l| l.split_once('\t').unwrap().1.split(' ').count() == 8));

    let loaded = load_precomputed(&table).unwrap();
    assert_eq!((loaded.dimension(), loaded.len()), (8, 3));

    // re-keying an existing table through itself reproduces it
    let again = dir.path().join("again.tsv");
    let o = mets(&["embed-text", "--input", s(&input), "--out", s(&again), "--embeddings", s(&table)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);
}

#[test]
fn embed_text_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    let table = dir.path().join("emb.tsv");
    std::fs::write(&empty, "").unwrap();
    let o = mets(&["embed-text", "--input", s(&empty), "--out", s(&table), "--stub-text", "--dim", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&table).unwrap(), "dim=4\n");

    let dup = dir.path().join("dup.txt");
    std::fs::write(&dup, "Normal ECG\nNormal ECG\n").unwrap();
    let o = mets(&["embed-text", "--input", s(&dup), "--out", s(&table), "--stub-text", "--template", "diagnostic"]);
    assert_eq!(o.status.code(), Some(2));
}

fn stat_fields(stdout: &str, lead: usize) -> [f64; 3] {
    let line = stdout
        .lines()
        .find(|l| l.starts_with(&format!("lead {lead} ")))
        .unwrap();
    let words: Vec<&str> = line.split_whitespace().collect();
    let field = |name: &str| {
        let i = words.iter().position(|w| *w == name).unwrap();
        words[i + 1].parse::<f64>().unwrap()
    };
    [field("min"), field("max"), field("mean")]
}

#[test]
fn inspect_record_echoes_header_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let raw: [[i16; 2]; 4] = [[10, -200], [30, 0], [-50, 400], [70, 100]];
    let bytes: Vec<u8> = raw.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.path().join("r9.dat"), &bytes).unwrap();
    let header = dir.path().join("r9.hea");
    std::fs::write(&header, "r9 2 250 4\nr9.dat 16 200 10\nr9.dat 16 100 0\n").unwrap();

    let o = mets(&["inspect-record", s(&header)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for expected in ["record r9", "leads 2", "sampling_rate 250", "samples_per_lead 4", "format 16"] {
        assert!(stdout.lines().any(|l| l == expected), "missing {expected:?} in\n{stdout}");
    }
    for (lead, (gain, baseline)) in [(200.0, 10.0), (100.0, 0.0)].into_iter().enumerate() {
        let mv: Vec<f64> = raw.iter().map(|f| (f64::from(f[lead]) - baseline) / gain).collect();
        let min = mv.iter().copied().fold(f64::INFINITY, f64::min);
        let max = mv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = mv.iter().sum::<f64>() / mv.len() as f64;
        let got = stat_fields(&stdout, lead);
        for (g, want) in got.iter().zip([min, max, mean]) {
            assert!((g - want).abs() < 1e-12, "lead {lead}: {got:?} vs {:?}", [min, max, mean]);
        }
    }

    std::fs::write(dir.path().join("r9.dat"), &bytes[..13]).unwrap();
    let o = mets(&["inspect-record", s(&header)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("13"));
}
