//! Dataset directories and the CSV/JSON artefacts written by runs.

mod dataset;
mod export;

pub use dataset::{
    load_dataset, random_split, read_manifest, save_dataset, DatasetFiles, DatasetManifest,
    FeatureEncoding, MANIFEST_FILE,
};
pub use export::{
    fmt_float, write_curve, write_embeddings, write_json, write_loss_history, write_predictions,
    write_table,
};
