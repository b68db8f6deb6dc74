//! Wall-clock cost of one epoch's partner selection per strategy, divided
//! by the number of objects.

use std::time::{Duration, Instant};

use owsc_core::curriculum::{
    partitions_for_epoch, partners_s1, partners_s2, partners_s3, CurriculumConfig, StrategyId,
};
use owsc_core::dataset::synthetic_object_embeddings;
use owsc_core::rng::seeded;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub objects_per_category: Vec<usize>,
    pub categories: usize,
    pub dim: usize,
    /// Epoch whose partition count S3 uses.
    pub epoch: usize,
    /// Timed repetitions per grid point; the median is reported.
    pub repetitions: usize,
    /// Each repetition loops until at least this long has passed.
    pub min_time_ms: u64,
    pub seed: u64,
    pub curriculum: CurriculumConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            objects_per_category: vec![100, 400, 1600],
            categories: 4,
            dim: 64,
            epoch: 50,
            repetitions: 5,
            min_time_ms: 20,
            seed: 0,
            curriculum: CurriculumConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_obj_per_cat: usize,
    pub strategy: String,
    pub ns_per_object: f64,
}

fn median_ns_per_call(repetitions: usize, min_time: Duration, mut f: impl FnMut()) -> f64 {
    let mut samples: Vec<f64> = (0..repetitions.max(1))
        .map(|_| {
            let start = Instant::now();
            let mut calls = 0u32;
            while calls == 0 || start.elapsed() < min_time {
                f();
                calls += 1;
            }
            start.elapsed().as_nanos() as f64 / calls as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

pub fn bench_sampling(config: &BenchConfig) -> Vec<BenchRow> {
    let min_time = Duration::from_millis(config.min_time_ms);
    let mut rows = Vec::new();
    for &per_cat in &config.objects_per_category {
        let (manifest, embeddings) =
            synthetic_object_embeddings(config.categories, per_cat, config.dim, config.seed);
        let n = manifest.len() as f64;
        let cells = partitions_for_epoch(config.epoch, &config.curriculum, manifest.len());
        let search = config.curriculum.neighbor_search;
        let mut rng = seeded(config.seed);
        for strategy in [StrategyId::S1, StrategyId::S2, StrategyId::S3] {
            let ns = median_ns_per_call(config.repetitions, min_time, || {
                let pairs = match strategy {
                    StrategyId::S1 => partners_s1(&manifest, &mut rng),
                    StrategyId::S2 => partners_s2(
                        &manifest,
                        &embeddings,
                        config.curriculum.top_k,
                        search,
                        &mut rng,
                    ),
                    StrategyId::S3 => partners_s3(
                        &manifest,
                        &embeddings,
                        cells,
                        config.curriculum.kmeans_iters,
                        &mut rng,
                    )
                    .map(|(p, _)| p),
                };
                std::hint::black_box(pairs.expect("synthetic manifest is valid"));
            });
            rows.push(BenchRow {
                n_obj_per_cat: per_cat,
                strategy: strategy.as_str().to_string(),
                ns_per_object: ns / n,
            });
        }
    }
    rows
}

/// Ratio of `ns_per_object` between consecutive grid points of one
/// strategy.
pub fn growth_factors(rows: &[BenchRow], strategy: &str) -> Vec<f64> {
    let series: Vec<&BenchRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
    series
        .windows(2)
        .map(|w| w[1].ns_per_object / w[0].ns_per_object)
        .collect()
}
