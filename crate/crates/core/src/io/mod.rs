//! Dataset bundles, run configuration, synthetic-graph generation,
//! checkpoints and embedding export.

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod synth;

pub use bundle::{load_dataset, write_bundle, LoadedDataset, SchemaFile};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{RunConfig, SampleSetting, Variant};
pub use export::{export_coords, export_embeddings, load_embeddings, EmbeddingHeader};
pub use synth::{generate_synthetic_hin, AuxTypeSpec, SynthSpec};
