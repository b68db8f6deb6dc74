use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owsc_cli::manifest::{manifest_path_for, RunManifest};
use owsc_core::dataset::read_features;
use tempfile::TempDir;

const SYNTH: &str = r#"{"n_categories": 3, "objects_per_category": 4, "states_per_object": 4,
 "views_per_state": 4, "feature_dim": 16, "confuser_fraction": 0.5,
 "state_warp_strength": 0.5, "noise_sigma": 0.05, "seed": 11}"#;

const TRAIN: &str = r#"{"epochs": 4, "learning_rate": 5e-4, "checkpoint_period": 2,
 "encoder": {"input_dim": 16, "embed_dim": 8, "n_attention_layers": 1, "n_heads": 2,
             "dropout_rate": 0.25, "seed": 0}}"#;

fn owsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owsc"))
        .args(args)
        .env_remove("OWSC_SEED")
        .output()
        .expect("spawn owsc")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    features: PathBuf,
    train_config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = dir.path().join("synth.json");
        let train_config = dir.path().join("train.json");
        fs::write(&synth, SYNTH).unwrap();
        fs::write(&train_config, TRAIN).unwrap();
        let features = dir.path().join("feat.owsf");
        ok(owsc(&[
            "synth",
            "--config",
            s(&synth),
            "--out",
            s(&features),
        ]));
        Fixture {
            dir,
            features,
            train_config,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out_dir = self.path(out);
        let mut args = vec![
            "train",
            "--quiet",
            "--config",
            s(&self.train_config),
            "--features",
            s(&self.features),
            "--out-dir",
            s(&out_dir),
        ];
        args.extend_from_slice(extra);
        ok(owsc(&args));
        out_dir
    }
}

#[test]
fn synth_writes_a_readable_file_and_companion() {
    let fx = Fixture::new();
    let ds = read_features(&fx.features).unwrap();
    assert_eq!(ds.records().len(), 3 * 4 * 4 * 4);
    assert!(fx.path("feat.owsf.objects.json").exists());
    let m = RunManifest::read(&manifest_path_for(&fx.features)).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seed, Some(11));
}

#[test]
fn synth_is_reproducible_and_seed_precedence_holds() {
    let fx = Fixture::new();
    let synth = fx.path("synth.json");
    let again = fx.path("again.owsf");
    ok(owsc(&["synth", "--config", s(&synth), "--out", s(&again)]));
    assert_eq!(fs::read(&fx.features).unwrap(), fs::read(&again).unwrap());

    let env_out = fx.path("env.owsf");
    ok(Command::new(env!("CARGO_BIN_EXE_owsc"))
        .args(["synth", "--config", s(&synth), "--out", s(&env_out)])
        .env("OWSC_SEED", "99")
        .output()
        .unwrap());
    let flag_out = fx.path("flag.owsf");
    ok(owsc(&[
        "synth",
        "--config",
        s(&synth),
        "--out",
        s(&flag_out),
        "--seed",
        "99",
    ]));
    let both_out = fx.path("both.owsf");
    ok(Command::new(env!("CARGO_BIN_EXE_owsc"))
        .args([
            "synth",
            "--config",
            s(&synth),
            "--out",
            s(&both_out),
            "--seed",
            "11",
        ])
        .env("OWSC_SEED", "99")
        .output()
        .unwrap());

    let env_bytes = fs::read(&env_out).unwrap();
    assert_ne!(env_bytes, fs::read(&fx.features).unwrap());
    assert_eq!(env_bytes, fs::read(&flag_out).unwrap());
    assert_eq!(
        fs::read(&both_out).unwrap(),
        fs::read(&fx.features).unwrap()
    );
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_categories": 3}"#).unwrap();
    let out = owsc(&[
        "synth",
        "--config",
        s(&bad),
        "--out",
        s(&dir.path().join("x.owsf")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("objects_per_category"));

    fs::write(&bad, SYNTH.replace("\"seed\"", "\"sede\"")).unwrap();
    let out = owsc(&[
        "synth",
        "--config",
        s(&bad),
        "--out",
        s(&dir.path().join("x.owsf")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let out = owsc(&[
        "synth",
        "--config",
        s(&missing),
        "--out",
        s(&dir.path().join("x.owsf")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_writes_artifacts_with_the_default_margins() {
    let fx = Fixture::new();
    let out = fx.train("run", &[]);
    for f in ["metrics.csv", "checkpoint.owsp", "state.owst", "run.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join("checkpoint_epoch0002.owsp").exists());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    let m = RunManifest::read(&out.join("run.json")).unwrap();
    let margins = &m.config["margins"];
    assert_eq!(margins["alpha"], 0.25);
    assert_eq!(margins["beta"], 1.0);
    assert_eq!(margins["theta"], 0.25);
    assert_eq!(margins["gamma"], 4.0);
}

#[test]
fn training_is_idempotent() {
    let fx = Fixture::new();
    let a = fx.train("a", &[]);
    let b = fx.train("b", &[]);
    for f in ["metrics.csv", "checkpoint.owsp", "state.owst"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ma = RunManifest::read(&a.join("run.json")).unwrap();
    let mb = RunManifest::read(&b.join("run.json")).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);

    let c = fx.train("c", &["--seed", "5"]);
    assert_ne!(
        fs::read(a.join("checkpoint.owsp")).unwrap(),
        fs::read(c.join("checkpoint.owsp")).unwrap()
    );
    let mc = RunManifest::read(&c.join("run.json")).unwrap();
    assert_eq!(mc.seed, Some(5));
    assert_eq!(mc.config["encoder"]["seed"], 5);
    assert_ne!(ma.config_hash, mc.config_hash);
}

#[test]
fn resume_from_a_periodic_state_matches_the_full_run() {
    let fx = Fixture::new();
    let full = fx.train("full", &[]);
    let state = full.join("state_epoch0002.owst");
    let resumed = fx.train("resumed", &["--resume", s(&state)]);
    for f in ["checkpoint.owsp", "state.owst"] {
        assert_eq!(
            fs::read(full.join(f)).unwrap(),
            fs::read(resumed.join(f)).unwrap(),
            "{f}"
        );
    }
    let tail: Vec<String> = fs::read_to_string(full.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(3)
        .map(String::from)
        .collect();
    let resumed_metrics = fs::read_to_string(resumed.join("metrics.csv")).unwrap();
    let resumed_tail: Vec<&str> = resumed_metrics.lines().skip(1).collect();
    assert_eq!(tail, resumed_tail);
}

#[test]
fn eval_reports_eight_scores_reproducibly() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let ckpt = run.join("checkpoint.owsp");
    let r1 = fx.path("r1.csv");
    let r2 = fx.path("r2.csv");
    let out = ok(owsc(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--features",
        s(&fx.features),
        "--out",
        s(&r1),
    ]));
    assert!(!out.stdout.is_empty());
    ok(owsc(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--features",
        s(&fx.features),
        "--out",
        s(&r2),
    ]));
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());

    let mut reader = csv::Reader::from_path(&r1).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let scores: Vec<f64> = [1, 2, 3, 4, 6, 7, 8, 9]
        .iter()
        .map(|&i| rows[0][i].parse().unwrap())
        .collect();
    assert!(
        scores.iter().all(|v| (0.0..=100.0).contains(v)),
        "{scores:?}"
    );

    let centroid = fx.path("rc.csv");
    ok(owsc(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--features",
        s(&fx.features),
        "--out",
        s(&centroid),
        "--classifier",
        "centroid",
        "--run-id",
        "centroid",
    ]));
    assert!(fs::read_to_string(&centroid)
        .unwrap()
        .contains("\ncentroid,"));
}

#[test]
fn eval_rejects_a_feature_dim_mismatch() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let synth = fx.path("wide.json");
    fs::write(
        &synth,
        SYNTH.replace("\"feature_dim\": 16", "\"feature_dim\": 12"),
    )
    .unwrap();
    let wide = fx.path("wide.owsf");
    ok(owsc(&["synth", "--config", s(&synth), "--out", s(&wide)]));
    let out = owsc(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.owsp")),
        "--features",
        s(&wide),
        "--out",
        s(&fx.path("r.csv")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn export_writes_two_rows_per_image() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let out = fx.path("emb.csv");
    ok(owsc(&[
        "export",
        "--checkpoint",
        s(&run.join("checkpoint.owsp")),
        "--features",
        s(&fx.features),
        "--out",
        s(&out),
    ]));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 5 + 8);
    assert_eq!(reader.records().count(), 2 * 3 * 4 * 4 * 4);
}

#[test]
fn bench_emits_one_row_per_grid_point_and_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(owsc(&[
        "bench",
        "--objects-per-category",
        "10,20",
        "--dim",
        "8",
        "--repetitions",
        "1",
        "--epoch",
        "5",
        "--out",
        s(&out),
    ]));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["n_obj_per_cat", "strategy", "ns_per_object"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
}
