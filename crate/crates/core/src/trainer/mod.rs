//! The optimisation loop. Each epoch picks a sampling strategy, draws one
//! pair per object, runs Adam over minibatches of those pairs and records
//! loss and cluster-geometry diagnostics.
//!
//! Every epoch derives its own random streams from the run seed and the
//! epoch number, so a run resumed from a saved [`TrainState`] replays the
//! same draws as an uninterrupted one.

mod adam;
mod diagnostics;
mod state;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annindex::ObjectEmbeddings;
use crate::curriculum::{sample_pairs, select_strategy, CurriculumConfig, StrategyId};
use crate::dataset::{Dataset, Split};
use crate::encoder::{
    encode_eval, feature_matrix, init_params, write_checkpoint, EncoderConfig, ParamSet,
};
use crate::error::{Error, FormatError, Result};
use crate::losses::Margins;
use crate::objective::{minibatch_loss_and_grad, PairInput};
use crate::rng::{derive_seed, seeded, shuffle};

pub use adam::{Adam, AdamConfig};
pub use diagnostics::{diagnostics, Diagnostics};
pub use state::{decode_state, encode_state, read_state, write_state, STATE_MAGIC, STATE_VERSION};

/// Learning rate of the desk-scale preset. The default 5e-5 barely moves a
/// freshly initialised encoder in 30 epochs on the synthetic data.
pub const DESK_LEARNING_RATE: f64 = 5e-4;

const SAMPLING_STREAM: u64 = 0x5A3B;
const DROPOUT_STREAM: u64 = 0xD409;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.owsp";
pub const STATE_FILE: &str = "state.owst";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_minibatch: usize,
    pub learning_rate: f64,
    pub lr_halving_period: usize,
    pub adam: AdamConfig,
    pub margins: Margins,
    pub curriculum: CurriculumConfig,
    pub encoder: EncoderConfig,
    /// Seeds pair sampling and dropout; parameter init uses `encoder.seed`.
    pub seed: u64,
    /// Write numbered checkpoints every this many epochs; 0 writes only the
    /// final one.
    pub checkpoint_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            pairs_per_minibatch: 8,
            learning_rate: 5e-5,
            lr_halving_period: 30,
            adam: AdamConfig::default(),
            margins: Margins::default(),
            curriculum: CurriculumConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            checkpoint_period: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the desk-scale learning rate.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: DESK_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.pairs_per_minibatch < 1 {
            return Err(Error::Config("pairs_per_minibatch must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.lr_halving_period < 1 {
            return Err(Error::Config("lr_halving_period must be >= 1".into()));
        }
        self.adam.validate()?;
        self.margins.validate()?;
        self.curriculum.validate()?;
        self.encoder.validate()
    }

    /// Same settings, sets the seed of both sampling and initialisation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.encoder.seed = seed;
        self
    }
}

/// Step decay: the base rate halves every `lr_halving_period` epochs.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    assert!(epoch >= 1, "epochs are numbered from 1");
    let halvings = (epoch - 1) / config.lr_halving_period.max(1);
    config.learning_rate * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub adam: Adam,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let params = init_params(&config.encoder)?;
        let adam = Adam::new(config.adam, params.num_params());
        Ok(TrainState {
            params,
            adam,
            epoch: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub strategy: StrategyId,
    pub l_piobj: f64,
    pub l_picat: f64,
    pub l_cat: f64,
    pub l_joint: f64,
    /// Fraction of the epoch's pairs with a non-zero object loss.
    pub tau_info: f64,
    pub d_max_intra: f64,
    pub d_min_inter: f64,
    pub rho: Option<f64>,
    pub lr: f64,
}

/// Eval-mode aggregate of every image an object has in `split`, encoded
/// as one set.
pub fn object_aggregates(
    params: &ParamSet,
    dataset: &Dataset,
    split: Split,
) -> Result<ObjectEmbeddings> {
    let mut out = ObjectEmbeddings::new();
    for o in dataset.objects() {
        let imgs = dataset.images_of(o, split);
        if imgs.is_empty() {
            continue;
        }
        let e = encode_eval(params, &feature_matrix(dataset, imgs))?;
        out.insert(o, e.obj_aggregate);
    }
    Ok(out)
}

/// Identity-cluster diagnostics over per-image object embeddings of the
/// train split. Each object's train images are encoded together as one set
/// in eval mode, and every per-view row counts as one image.
pub fn train_diagnostics(params: &ParamSet, dataset: &Dataset) -> Result<Diagnostics> {
    let mut rows = Vec::with_capacity(dataset.split_len(Split::Train));
    for o in dataset.objects() {
        let imgs = dataset.images_of(o, Split::Train);
        if imgs.is_empty() {
            continue;
        }
        let e = encode_eval(params, &feature_matrix(dataset, imgs))?;
        for r in 0..e.obj_per_view.rows() {
            rows.push((o, e.obj_per_view.row(r).to_vec()));
        }
    }
    let items: Vec<(u32, &[f64])> = rows.iter().map(|(o, e)| (*o, e.as_slice())).collect();
    Ok(diagnostics(&items))
}

fn pair_input(
    dataset: &Dataset,
    x: u32,
    y: u32,
    x_images: &[usize],
    y_images: &[usize],
) -> Result<PairInput> {
    let category = |o: u32| dataset.category_of(o).ok_or(Error::UnknownObject(o));
    Ok(PairInput {
        x_object: x,
        y_object: y,
        x_category: category(x)?,
        y_category: category(y)?,
        x_features: feature_matrix(dataset, x_images),
        y_features: feature_matrix(dataset, y_images),
    })
}

/// Runs epoch `state.epoch + 1` and advances the state.
pub fn train_epoch(
    state: &mut TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    let epoch = state.epoch + 1;
    let mut rng = seeded(derive_seed(config.seed, SAMPLING_STREAM, epoch as u64));
    let mut dropout_rng = seeded(derive_seed(config.seed, DROPOUT_STREAM, epoch as u64));
    let strategy = select_strategy(epoch, &config.curriculum);
    let aggregates = if strategy.needs_embeddings() {
        Some(object_aggregates(&state.params, dataset, Split::Train)?)
    } else {
        None
    };
    let batch = sample_pairs(
        dataset,
        strategy,
        epoch,
        aggregates.as_ref(),
        &config.curriculum,
        &mut rng,
    )?;
    let objective = batch.objective();
    let mut pairs = batch.pairs;
    // one global shuffle so minibatches mix categories for the L_cat negatives
    shuffle(&mut pairs, &mut rng);
    let lr = lr_at(epoch, config);

    let mut sums = [0.0f64; 4];
    let mut informative = 0usize;
    for (minibatch, chunk) in pairs.chunks(config.pairs_per_minibatch).enumerate() {
        let inputs = chunk
            .iter()
            .map(|p| pair_input(dataset, p.x, p.y, &p.x_images, &p.y_images))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = minibatch_loss_and_grad(
            &state.params,
            &inputs,
            objective,
            &config.margins,
            Some(&mut dropout_rng),
        )?;
        if !loss.mean.l_joint.is_finite() || !grads.is_finite() {
            let objects: Vec<(u32, u32)> = chunk.iter().map(|p| (p.x, p.y)).collect();
            return Err(Error::NonFiniteLoss {
                epoch,
                minibatch,
                detail: format!(
                    "strategy {strategy}, pairs {objects:?}, mean loss {:?}",
                    loss.mean
                ),
            });
        }
        let n = chunk.len() as f64;
        let g: Vec<f64> = grads.flatten().into_iter().map(|v| v / n).collect();
        let mut p = state.params.flatten();
        state.adam.step_flat(&mut p, &g, lr);
        state.params.load_flat(&p);
        for b in &loss.per_pair {
            sums[0] += b.l_piobj;
            sums[1] += b.l_picat;
            sums[2] += b.l_cat;
            sums[3] += b.l_joint;
            informative += b.informative as usize;
        }
    }
    state.epoch = epoch;

    let n = pairs.len().max(1) as f64;
    let diag = train_diagnostics(&state.params, dataset)?;
    Ok(EpochMetrics {
        epoch,
        strategy,
        l_piobj: sums[0] / n,
        l_picat: sums[1] / n,
        l_cat: sums[2] / n,
        l_joint: sums[3] / n,
        tau_info: informative as f64 / n,
        d_max_intra: diag.d_max_intra,
        d_min_inter: diag.d_min_inter,
        rho: diag.rho,
        lr,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    epoch: usize,
    strategy: String,
    l_piobj: f64,
    l_picat: f64,
    l_cat: f64,
    l_joint: f64,
    tau_info: f64,
    d_max_intra: f64,
    d_min_inter: f64,
    rho: Option<f64>,
    lr: f64,
}

fn csv_error(e: csv::Error) -> Error {
    FormatError::Malformed(format!("metrics csv: {e}")).into()
}

pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in metrics {
        w.serialize(MetricsRow {
            epoch: m.epoch,
            strategy: m.strategy.as_str().to_string(),
            l_piobj: m.l_piobj,
            l_picat: m.l_picat,
            l_cat: m.l_cat,
            l_joint: m.l_joint,
            tau_info: m.tau_info,
            d_max_intra: m.d_max_intra,
            d_min_inter: m.d_min_inter,
            rho: m.rho,
            lr: m.lr,
        })
        .map_err(csv_error)?;
    }
    if metrics.is_empty() {
        w.write_record([
            "epoch",
            "strategy",
            "l_piobj",
            "l_picat",
            "l_cat",
            "l_joint",
            "tau_info",
            "d_max_intra",
            "d_min_inter",
            "rho",
            "lr",
        ])
        .map_err(csv_error)?;
    }
    w.into_inner()
        .map_err(|e| FormatError::Malformed(format!("metrics csv: {e}")).into())
}

pub fn metrics_from_csv(buf: &[u8]) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_reader(buf);
    r.deserialize::<MetricsRow>()
        .map(|row| {
            let row = row.map_err(csv_error)?;
            let strategy = match row.strategy.as_str() {
                "S1" => StrategyId::S1,
                "S2" => StrategyId::S2,
                "S3" => StrategyId::S3,
                other => {
                    return Err(
                        FormatError::Malformed(format!("unknown strategy {other:?}")).into(),
                    )
                }
            };
            Ok(EpochMetrics {
                epoch: row.epoch,
                strategy,
                l_piobj: row.l_piobj,
                l_picat: row.l_picat,
                l_cat: row.l_cat,
                l_joint: row.l_joint,
                tau_info: row.tau_info,
                d_max_intra: row.d_max_intra,
                d_min_inter: row.d_min_inter,
                rho: row.rho,
                lr: row.lr,
            })
        })
        .collect()
}

/// Where a run writes its artifacts and what it continues from.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// A state file from an earlier run of the same configuration.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// One row per epoch; after a resume, rows of the earlier run are
    /// included when its metrics file sits in the output directory.
    pub metrics: Vec<EpochMetrics>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e).into())
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    dataset.validate_for_training()?;
    if dataset.feature_dim() != config.encoder.input_dim {
        return Err(Error::Config(format!(
            "encoder.input_dim is {} but the features have dimension {}",
            config.encoder.input_dim,
            dataset.feature_dim()
        )));
    }
    Ok(())
}

pub fn run_training(
    config: &TrainConfig,
    dataset: &Dataset,
    options: &RunOptions,
) -> Result<TrainOutcome> {
    run_training_with(config, dataset, options, |_| {})
}

/// [`run_training`] with a callback after every epoch.
pub fn run_training_with(
    config: &TrainConfig,
    dataset: &Dataset,
    options: &RunOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(config, dataset)?;
    let out_dir = options.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }

    let mut metrics = Vec::new();
    let mut state = match &options.resume {
        None => TrainState::new(config)?,
        Some(path) => {
            let state = read_state(path, config.adam)?;
            if state.params.config != config.encoder {
                return Err(Error::Config(format!(
                    "resume state was trained with {:?}, configuration asks for {:?}",
                    state.params.config, config.encoder
                )));
            }
            if state.epoch > config.epochs {
                return Err(Error::Config(format!(
                    "resume state is at epoch {}, past the configured {} epochs",
                    state.epoch, config.epochs
                )));
            }
            if let Some(dir) = out_dir {
                let previous = dir.join(METRICS_FILE);
                if previous.exists() {
                    let buf = fs::read(&previous).map_err(|e| FormatError::io(&previous, e))?;
                    let rows: Vec<EpochMetrics> = metrics_from_csv(&buf)?
                        .into_iter()
                        .filter(|m| m.epoch <= state.epoch)
                        .collect();
                    if rows.iter().map(|m| m.epoch).eq(1..=state.epoch) {
                        metrics = rows;
                    }
                }
            }
            state
        }
    };

    while state.epoch < config.epochs {
        let m = train_epoch(&mut state, dataset, config)?;
        on_epoch(&m);
        metrics.push(m);
        if let Some(dir) = out_dir {
            write_file(&dir.join(METRICS_FILE), &metrics_to_csv(&metrics)?)?;
            let e = state.epoch;
            if config.checkpoint_period > 0
                && e % config.checkpoint_period == 0
                && e < config.epochs
            {
                write_checkpoint(
                    dir.join(format!("checkpoint_epoch{e:04}.owsp")),
                    &state.params,
                )?;
                write_state(dir.join(format!("state_epoch{e:04}.owst")), &state)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        write_file(&dir.join(METRICS_FILE), &metrics_to_csv(&metrics)?)?;
        write_checkpoint(dir.join(CHECKPOINT_FILE), &state.params)?;
        write_state(dir.join(STATE_FILE), &state)?;
    }
    Ok(TrainOutcome { state, metrics })
}
