use std::path::Path;

use icco_cli::commands::{cmd_eval, cmd_train, load_train_config, EvalOptions, Protocol, TranslatorKind, TranslatorOptions};
use icco_cli::manifest::{RunManifest, MANIFEST_FILE};
use icco_core::model::{NetworkSizes, Variant};
use icco_core::train::TrainConfig;

fn smoke(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        seed: 3,
        episodes: 20,
        network: NetworkSizes {
            agent_hidden: 8,
            mixer_embed: 4,
            hyper_hidden: 8,
            coordinator_hidden: 8,
            posterior_hidden: 8,
            ..NetworkSizes::default()
        },
        batch_segments: 4,
        segment_len: 8,
        warmup_episodes: 2,
        log_interval: 5,
        checkpoint_interval: 10,
        ..TrainConfig::default()
    }
}

fn eval_opts(out: &Path, protocol: Protocol, trials: usize, kind: TranslatorKind) -> EvalOptions {
    EvalOptions {
        protocol,
        trials,
        out: out.to_path_buf(),
        write_logs: true,
        translator: TranslatorOptions {
            kind,
            replay_dir: None,
            task_aligned: false,
            waypoints: 4,
        },
    }
}

#[test]
fn train_writes_manifest_checkpoints_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_train(&smoke(Variant::Icco), dir.path()).unwrap();
    assert!(m.use_ce_loss);
    assert_eq!(m.seeds, vec![3]);
    assert_eq!(m.checkpoints.len(), 3);
    assert!(m.checkpoints.iter().all(|c| dir.path().join(c).exists()));
    let csv = std::fs::read_to_string(dir.path().join(&m.metrics[0])).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert_eq!(RunManifest::load(dir.path()).unwrap(), m);

    let qmix = tempfile::tempdir().unwrap();
    assert!(!cmd_train(&smoke(Variant::Qmix), qmix.path()).unwrap().use_ce_loss);
}

#[test]
fn manifest_config_is_immutable() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&smoke(Variant::Qmix), dir.path()).unwrap();
    let mut m = RunManifest::load(dir.path()).unwrap();
    m.config.lr *= 2.0;
    assert!(m.write(dir.path()).is_err());
    assert!(!dir.path().join("manifest.json.tmp").exists());
    assert!(dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn same_config_and_seed_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = smoke(Variant::IccoNoCe);
    cmd_train(&cfg, a.path()).unwrap();
    cmd_train(&cfg, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let ck = |d: &Path| std::fs::read(d.join("checkpoints/final.json")).unwrap();
    assert_eq!(ck(a.path()), ck(b.path()));
}

#[test]
fn config_file_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "episodes = \"many\"").unwrap();
    assert!(load_train_config(&bad).is_err());
    assert!(load_train_config(&dir.path().join("missing.toml")).is_err());
    let invalid = TrainConfig {
        segment_len: 7,
        ..smoke(Variant::Qmix)
    };
    assert!(cmd_train(&invalid, &dir.path().join("run")).is_err());
}

#[test]
fn eval_reports_for_both_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_train(&smoke(Variant::Icco), dir.path()).unwrap();
    let ckpt = dir.path().join(m.checkpoints.last().unwrap());

    let q = cmd_eval(&ckpt, &eval_opts(&dir.path().join("q"), Protocol::Quadrant, 2, TranslatorKind::Mock)).unwrap();
    let table = std::fs::read_to_string(&q.table).unwrap();
    assert!(table.contains("| Pick | Collect | Defense |"));
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("q/logs/trial_01.jsonl").exists());

    let l = cmd_eval(&ckpt, &eval_opts(&dir.path().join("l"), Protocol::Language, 1, TranslatorKind::Mock)).unwrap();
    let table = std::fs::read_to_string(&l.table).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for (row, name) in rows.iter().zip(["Go Right", "Move Top", "Gather Center", "Spread Out"]) {
        assert!(row.starts_with(&format!("| ICCO / {name} | 1 |")), "{row}");
        // A single trial has zero spread in every column.
        assert_eq!(row.matches("± 0.0").count(), 6, "{row}");
    }
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert!(cmd_eval(&missing, &eval_opts(dir.path(), Protocol::Quadrant, 1, TranslatorKind::Mock)).is_err());

    let m = cmd_train(&smoke(Variant::Qmix), dir.path()).unwrap();
    let ckpt = dir.path().join(m.checkpoints.last().unwrap());
    let err = cmd_eval(&ckpt, &eval_opts(&dir.path().join("r"), Protocol::Language, 1, TranslatorKind::Replay)).unwrap_err();
    assert!(err.to_string().contains("replay-dir"), "{err}");
}
