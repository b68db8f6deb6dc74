//! The eight benchmark tasks: single- and multi-view (SV/MV) queries, at
//! category and object level, scored as 1-NN recognition accuracy and as
//! retrieval mAP.
//!
//! Recognition queries come from the test split and are matched against
//! per-image train embeddings. Retrieval ranks test items against test
//! items, except MV object retrieval: a test-split object aggregate is the
//! only one of its identity, so those queries rank train-split aggregates.

mod export;
mod metrics;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::encoder::{encode_eval, feature_matrix, ParamSet, Space};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Matrix;

pub use export::{export_embeddings, write_embeddings_csv};
pub use metrics::{average_precision, centroids, nearest_label, retrieval_map, RetrievalScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Category,
    Object,
}

impl Level {
    pub fn space(self) -> Space {
        match self {
            Level::Category => Space::Category,
            Level::Object => Space::Object,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Label of the nearest gallery embedding.
    #[default]
    NearestNeighbor,
    /// Label of the nearest per-label gallery mean.
    Centroid,
}

/// Embeddings in both spaces with their labels, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub object: Matrix,
    pub category: Matrix,
    pub object_ids: Vec<u32>,
    pub category_ids: Vec<u32>,
}

impl LabeledEmbeddings {
    fn with_dim(n: usize, dim: usize) -> Self {
        LabeledEmbeddings {
            object: Matrix::zeros(n, dim),
            category: Matrix::zeros(n, dim),
            object_ids: Vec::with_capacity(n),
            category_ids: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.object_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_ids.is_empty()
    }

    pub fn points(&self, space: Space) -> &Matrix {
        match space {
            Space::Object => &self.object,
            Space::Category => &self.category,
        }
    }

    pub fn points_mut(&mut self, space: Space) -> &mut Matrix {
        match space {
            Space::Object => &mut self.object,
            Space::Category => &mut self.category,
        }
    }

    pub fn labels(&self, level: Level) -> &[u32] {
        match level {
            Level::Category => &self.category_ids,
            Level::Object => &self.object_ids,
        }
    }
}

/// Eval-mode embeddings of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub split: Split,
    /// One row per image, in record order; each image is encoded as a set
    /// of one view.
    pub images: LabeledEmbeddings,
    /// Record index of every image row.
    pub records: Vec<usize>,
    /// One row per object: the aggregate over all of its split images.
    pub aggregates: LabeledEmbeddings,
}

pub fn build_gallery(params: &ParamSet, dataset: &Dataset, split: Split) -> Result<Gallery> {
    let records: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.record(i).split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::Dataset(format!(
            "the {} split is empty",
            split.as_str()
        )));
    }
    let d = params.config.embed_dim;
    let mut images = LabeledEmbeddings::with_dim(records.len(), d);
    for (row, &i) in records.iter().enumerate() {
        let e = encode_eval(params, &feature_matrix(dataset, &[i]))?;
        images.object.row_mut(row).copy_from_slice(&e.obj_aggregate);
        images
            .category
            .row_mut(row)
            .copy_from_slice(&e.cat_aggregate);
        let r = dataset.record(i);
        images.object_ids.push(r.object_id);
        images.category_ids.push(r.category_id);
    }
    let objects: Vec<u32> = dataset
        .objects()
        .into_iter()
        .filter(|&o| !dataset.images_of(o, split).is_empty())
        .collect();
    let mut aggregates = LabeledEmbeddings::with_dim(objects.len(), d);
    for (row, &o) in objects.iter().enumerate() {
        let e = encode_eval(
            params,
            &feature_matrix(dataset, dataset.images_of(o, split)),
        )?;
        aggregates
            .object
            .row_mut(row)
            .copy_from_slice(&e.obj_aggregate);
        aggregates
            .category
            .row_mut(row)
            .copy_from_slice(&e.cat_aggregate);
        aggregates.object_ids.push(o);
        aggregates
            .category_ids
            .push(dataset.category_of(o).ok_or(Error::UnknownObject(o))?);
    }
    Ok(Gallery {
        split,
        images,
        records,
        aggregates,
    })
}

/// 1-NN over the gallery's per-image embeddings in the level's space.
pub fn classify(query: &[f64], gallery: &Gallery, level: Level) -> Result<u32> {
    classify_with(
        query,
        &gallery.images,
        level,
        ClassifierMode::NearestNeighbor,
    )
}

pub fn classify_with(
    query: &[f64],
    gallery: &LabeledEmbeddings,
    level: Level,
    mode: ClassifierMode,
) -> Result<u32> {
    let points = gallery.points(level.space());
    let labels = gallery.labels(level);
    match mode {
        ClassifierMode::NearestNeighbor => nearest_label(query, points, labels),
        ClassifierMode::Centroid => {
            let (ids, means) = centroids(points, labels);
            nearest_label(query, &means, &ids)
        }
    }
}

/// Percent of `queries` whose predicted label matches their own.
pub fn recognition_accuracy(
    queries: &LabeledEmbeddings,
    gallery: &LabeledEmbeddings,
    level: Level,
    mode: ClassifierMode,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("no recognition queries".into()));
    }
    let space = level.space();
    // centroids are computed once rather than per query
    let (points, labels) = match mode {
        ClassifierMode::NearestNeighbor => (
            gallery.points(space).clone(),
            gallery.labels(level).to_vec(),
        ),
        ClassifierMode::Centroid => {
            let (ids, means) = centroids(gallery.points(space), gallery.labels(level));
            (means, ids)
        }
    };
    let mut correct = 0usize;
    for (q, &truth) in queries.labels(level).iter().enumerate() {
        if nearest_label(queries.points(space).row(q), &points, &labels)? == truth {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / queries.len() as f64)
}

fn retrieval(
    queries: &LabeledEmbeddings,
    gallery: Option<&LabeledEmbeddings>,
    level: Level,
) -> Result<RetrievalScore> {
    let space = level.space();
    let g = gallery.unwrap_or(queries);
    retrieval_map(
        queries.points(space),
        queries.labels(level),
        g.points(space),
        g.labels(level),
        gallery.is_none(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub classifier: ClassifierMode,
}

/// Scores of the eight tasks, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub sv_cat_acc: f64,
    pub mv_cat_acc: f64,
    pub sv_obj_acc: f64,
    pub mv_obj_acc: f64,
    pub sv_cat_map: f64,
    pub mv_cat_map: f64,
    pub sv_obj_map: f64,
    pub mv_obj_map: f64,
    /// Retrieval queries skipped for lack of a relevant item, in the
    /// column order above.
    pub skipped: [usize; 4],
}

impl TaskReport {
    pub fn accuracies(&self) -> [f64; 4] {
        [
            self.sv_cat_acc,
            self.mv_cat_acc,
            self.sv_obj_acc,
            self.mv_obj_acc,
        ]
    }

    pub fn maps(&self) -> [f64; 4] {
        [
            self.sv_cat_map,
            self.mv_cat_map,
            self.sv_obj_map,
            self.mv_obj_map,
        ]
    }

    pub fn scores(&self) -> [f64; 8] {
        let (a, m) = (self.accuracies(), self.maps());
        [a[0], a[1], a[2], a[3], m[0], m[1], m[2], m[3]]
    }

    pub fn accuracy_avg(&self) -> f64 {
        self.accuracies().iter().sum::<f64>() / 4.0
    }

    pub fn map_avg(&self) -> f64 {
        self.maps().iter().sum::<f64>() / 4.0
    }

    pub const CSV_HEADER: [&'static str; 15] = [
        "run_id",
        "sv_cat_acc",
        "mv_cat_acc",
        "sv_obj_acc",
        "mv_obj_acc",
        "acc_avg",
        "sv_cat_map",
        "mv_cat_map",
        "sv_obj_map",
        "mv_obj_map",
        "map_avg",
        "skipped_sv_cat",
        "skipped_mv_cat",
        "skipped_sv_obj",
        "skipped_mv_obj",
    ];

    fn csv_record(&self, run_id: &str) -> Vec<String> {
        let mut row = vec![run_id.to_string()];
        row.extend(self.accuracies().iter().map(|v| format!("{v:.4}")));
        row.push(format!("{:.4}", self.accuracy_avg()));
        row.extend(self.maps().iter().map(|v| format!("{v:.4}")));
        row.push(format!("{:.4}", self.map_avg()));
        row.extend(self.skipped.iter().map(|v| v.to_string()));
        row
    }

    /// Header plus one row keyed by `run_id`.
    pub fn to_csv(&self, run_id: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::from(FormatError::Malformed(format!("report csv: {e}")));
        w.write_record(Self::CSV_HEADER).map_err(err)?;
        w.write_record(self.csv_record(run_id)).map_err(err)?;
        let bytes = w
            .into_inner()
            .map_err(|e| FormatError::Malformed(format!("report csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

impl fmt::Display for TaskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16}{:>9}{:>9}{:>9}{:>9}{:>9}",
            "", "Cat SV", "Cat MV", "Obj SV", "Obj MV", "Avg."
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, v: [f64; 4], avg: f64| {
            writeln!(
                f,
                "{name:<16}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}",
                v[0], v[1], v[2], v[3], avg
            )
        };
        row(f, "Accuracy (%)", self.accuracies(), self.accuracy_avg())?;
        row(f, "mAP (%)", self.maps(), self.map_avg())?;
        if self.skipped.iter().any(|&s| s > 0) {
            writeln!(f, "skipped retrieval queries: {:?}", self.skipped)?;
        }
        Ok(())
    }
}

/// All eight tasks from prebuilt train and test galleries.
pub fn evaluate_galleries(
    train: &Gallery,
    test: &Gallery,
    options: &EvalOptions,
) -> Result<TaskReport> {
    let mode = options.classifier;
    let acc = |q: &LabeledEmbeddings, level| recognition_accuracy(q, &train.images, level, mode);
    let sv_cat = retrieval(&test.images, None, Level::Category)?;
    let mv_cat = retrieval(&test.aggregates, None, Level::Category)?;
    let sv_obj = retrieval(&test.images, None, Level::Object)?;
    let mv_obj = retrieval(&test.aggregates, Some(&train.aggregates), Level::Object)?;
    Ok(TaskReport {
        sv_cat_acc: acc(&test.images, Level::Category)?,
        mv_cat_acc: acc(&test.aggregates, Level::Category)?,
        sv_obj_acc: acc(&test.images, Level::Object)?,
        mv_obj_acc: acc(&test.aggregates, Level::Object)?,
        sv_cat_map: sv_cat.map,
        mv_cat_map: mv_cat.map,
        sv_obj_map: sv_obj.map,
        mv_obj_map: mv_obj.map,
        skipped: [
            sv_cat.skipped,
            mv_cat.skipped,
            sv_obj.skipped,
            mv_obj.skipped,
        ],
    })
}

pub fn run_eight_tasks(
    params: &ParamSet,
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<TaskReport> {
    if dataset.feature_dim() != params.config.input_dim {
        return Err(Error::Config(format!(
            "checkpoint expects {} features, the dataset has {}",
            params.config.input_dim,
            dataset.feature_dim()
        )));
    }
    let train = build_gallery(params, dataset, Split::Train)?;
    let test = build_gallery(params, dataset, Split::Test)?;
    evaluate_galleries(&train, &test, options)
}
