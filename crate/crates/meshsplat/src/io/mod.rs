//! Dataset ingestion, synthetic-scene generation, and model import/export.

mod dataset;
mod model_io;
pub mod synthetic;

pub use dataset::{
    load_dataset, load_mesh_sequence, Dataset, DatasetFrame, FrameRecord, Manifest,
    SEQUENCE_MANIFEST,
};
pub use model_io::{export_model, import_model, CANONICAL_MESH_FILE, EMBEDDINGS_FILE, PLY_FILE};
