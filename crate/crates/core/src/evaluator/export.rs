use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::Dataset;
use crate::encoder::{encode_single, ParamSet};
use crate::error::{Error, FormatError, Result};

/// Writes one row per image and space:
/// `object_id,category_id,state_id,split,space,dim_0..dim_{D-1}`.
pub fn write_embeddings_csv<W: Write>(params: &ParamSet, dataset: &Dataset, out: W) -> Result<()> {
    let err = |e: csv::Error| Error::from(FormatError::Malformed(format!("embedding csv: {e}")));
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["object_id", "category_id", "state_id", "split", "space"]
        .map(String::from)
        .to_vec();
    header.extend((0..params.config.embed_dim).map(|i| format!("dim_{i}")));
    w.write_record(&header).map_err(err)?;
    for r in dataset.records() {
        let feature: Vec<f64> = r.feature.iter().map(|&v| v as f64).collect();
        let (obj, cat) = encode_single(params, &feature)?;
        for (space, e) in [("object", obj), ("category", cat)] {
            let mut row = vec![
                r.object_id.to_string(),
                r.category_id.to_string(),
                r.state_id.to_string(),
                r.split.as_str().to_string(),
                space.to_string(),
            ];
            row.extend(e.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush()
        .map_err(|e| FormatError::Malformed(format!("embedding csv: {e}")))?;
    Ok(())
}

pub fn export_embeddings(
    params: &ParamSet,
    dataset: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_embeddings_csv(params, dataset, &mut buf)?;
    fs::write(path, buf).map_err(|e| FormatError::io(path, e).into())
}
