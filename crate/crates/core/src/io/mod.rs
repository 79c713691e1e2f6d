//! Stream files in, embedding tables out, run configuration and snapshots.

mod config;
mod embeddings;
mod snapshot;
mod stream;

pub use config::{read_binning, write_binning, EmbeddingOptions, EmitMode, RunConfig, SketchSettings};
pub use embeddings::{format_sig9, write_embeddings, EmbeddingRecord, EmbeddingWriter, RecordKind};
pub use snapshot::{
    binning_hash, config_hash, read_manifest, restore_engine, restore_sketch, schema_hash, snapshot_engine,
    snapshot_sketch, SnapshotManifest, StoreKind, SNAPSHOT_FORMAT_VERSION,
};
pub use stream::{read_all, read_edge_stream, spawn_reader, write_edge_stream, EdgeReader, StreamFormat};
