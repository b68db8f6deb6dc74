use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use owsc_core::dataset::{
    generate, read_features, split_by_state, write_companion_manifest, write_features,
    CompanionManifest, Dataset, SynthConfig,
};
use owsc_core::encoder::read_checkpoint;
use owsc_core::evaluator::{export_embeddings, run_eight_tasks, ClassifierMode, EvalOptions};
use owsc_core::trainer::{
    run_training_with, RunOptions, TrainConfig, CHECKPOINT_FILE, METRICS_FILE, STATE_FILE,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bench::{bench_sampling, BenchConfig, BenchRow};
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path_for, sha256_hex, RunManifest};

pub const SEED_ENV: &str = "OWSC_SEED";
pub const RUN_MANIFEST_FILE: &str = "run.json";

/// Parses a JSON config; unknown or missing keys are reported by name.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Seed precedence: command-line flag, then `OWSC_SEED`, then the file.
pub fn resolve_seed(flag: Option<u64>, file: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(file),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub test_ratio: f64,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct SynthRun<'a> {
    synth: &'a SynthConfig,
    test_ratio: f64,
}

/// `<features>.objects.json`
pub fn companion_path_for(features: &Path) -> PathBuf {
    let mut name = features.file_name().unwrap_or_default().to_os_string();
    name.push(".objects.json");
    features.with_file_name(name)
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<RunManifest> {
    let start = Instant::now();
    let mut config: SynthConfig = load_config(&args.config)?;
    config.seed = resolve_seed(args.seed, config.seed)?;
    let dataset = split_by_state(&generate(&config)?, args.test_ratio, config.seed)?;
    ensure_parent(&args.out)?;
    write_features(&args.out, &dataset)?;
    let companion = companion_path_for(&args.out);
    write_companion_manifest(&companion, &CompanionManifest::from_dataset(&dataset))?;

    let run = SynthRun {
        synth: &config,
        test_ratio: args.test_ratio,
    };
    let mut manifest = RunManifest::new("synth", &run, Some(config.seed));
    manifest.input(&args.config)?;
    manifest.output(&args.out)?;
    manifest.output(&companion)?;
    manifest.write(&manifest_path_for(&args.out), start.elapsed())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub features: PathBuf,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

pub fn load_train_config(path: &Path, seed: Option<u64>) -> CliResult<TrainConfig> {
    let config: TrainConfig = load_config(path)?;
    let seed = resolve_seed(seed, config.seed)?;
    let config = if seed != config.seed {
        config.with_seed(seed)
    } else {
        config
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<RunManifest> {
    let start = Instant::now();
    let config = load_train_config(&args.config, args.seed)?;
    let dataset = read_features(&args.features)?;
    let options = RunOptions {
        out_dir: Some(args.out_dir.clone()),
        resume: args.resume.clone(),
    };
    let quiet = args.quiet;
    run_training_with(&config, &dataset, &options, |m| {
        if !quiet {
            let rho = m.rho.map_or("-".to_string(), |r| format!("{r:.4}"));
            println!(
                "epoch {:>4} {} l_joint {:.5} l_piobj {:.5} tau_info {:.3} rho {rho} lr {:.3e}",
                m.epoch, m.strategy, m.l_joint, m.l_piobj, m.tau_info, m.lr
            );
        }
    })?;

    let mut manifest = RunManifest::new("train", &config, Some(config.seed));
    manifest.input(&args.config)?;
    manifest.input(&args.features)?;
    if let Some(r) = &args.resume {
        manifest.input(r)?;
    }
    for f in [METRICS_FILE, CHECKPOINT_FILE, STATE_FILE] {
        manifest.output(&args.out_dir.join(f))?;
    }
    manifest.write(&args.out_dir.join(RUN_MANIFEST_FILE), start.elapsed())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub out: PathBuf,
    pub classifier: ClassifierMode,
    pub run_id: Option<String>,
}

#[derive(Serialize)]
struct EvalRun<'a> {
    options: EvalOptions,
    run_id: &'a str,
}

fn load_eval_inputs(
    checkpoint: &Path,
    features: &Path,
) -> CliResult<(owsc_core::encoder::ParamSet, Dataset)> {
    let params = read_checkpoint(checkpoint)?;
    let dataset = read_features(features)?;
    if dataset.feature_dim() != params.config.input_dim {
        return Err(CliError::Config(format!(
            "checkpoint {} expects {} features per image, {} has {}",
            checkpoint.display(),
            params.config.input_dim,
            features.display(),
            dataset.feature_dim()
        )));
    }
    Ok((params, dataset))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<(String, RunManifest)> {
    let start = Instant::now();
    let (params, dataset) = load_eval_inputs(&args.checkpoint, &args.features)?;
    let options = EvalOptions {
        classifier: args.classifier,
    };
    let report = run_eight_tasks(&params, &dataset, &options)?;
    let run_id = match &args.run_id {
        Some(id) => id.clone(),
        None => {
            let bytes =
                fs::read(&args.checkpoint).map_err(|e| CliError::io(&args.checkpoint, e))?;
            sha256_hex(&bytes)[..12].to_string()
        }
    };
    ensure_parent(&args.out)?;
    fs::write(&args.out, report.to_csv(&run_id)?).map_err(|e| CliError::io(&args.out, e))?;

    let run = EvalRun {
        options,
        run_id: &run_id,
    };
    let mut manifest = RunManifest::new("eval", &run, None);
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.features)?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out), start.elapsed())?;
    Ok((report.to_string(), manifest))
}

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_export(args: &ExportArgs) -> CliResult<RunManifest> {
    let start = Instant::now();
    let (params, dataset) = load_eval_inputs(&args.checkpoint, &args.features)?;
    ensure_parent(&args.out)?;
    export_embeddings(&params, &dataset, &args.out)?;
    let mut manifest = RunManifest::new("export", &serde_json::Value::Null, None);
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.features)?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out), start.elapsed())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub config: BenchConfig,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n_obj_per_cat,strategy,ns_per_object\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.3}\n",
            r.n_obj_per_cat, r.strategy, r.ns_per_object
        ));
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<(Vec<BenchRow>, RunManifest)> {
    let start = Instant::now();
    let mut config = args.config.clone();
    config.seed = resolve_seed(args.seed, config.seed)?;
    if config.objects_per_category.is_empty() || config.objects_per_category.contains(&0) {
        return Err(CliError::Config(
            "objects-per-category needs positive sizes".into(),
        ));
    }
    if config.categories == 0 || config.dim == 0 {
        return Err(CliError::Config("categories and dim must be >= 1".into()));
    }
    if config.objects_per_category.iter().any(|&n| n < 2) {
        return Err(CliError::Config(
            "every category needs at least two objects".into(),
        ));
    }
    config.curriculum.validate()?;
    let rows = bench_sampling(&config);
    ensure_parent(&args.out)?;
    fs::write(&args.out, bench_csv(&rows)).map_err(|e| CliError::io(&args.out, e))?;
    let mut manifest = RunManifest::new("bench", &config, Some(config.seed));
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out), start.elapsed())?;
    Ok((rows, manifest))
}
