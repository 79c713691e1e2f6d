//! Streaming node embeddings for continuous-time dynamic graphs.
//!
//! Each node keeps one exponentially discounted histogram per tracked feature
//! plus time-decayed in/out degree counters. An arriving edge updates only its
//! two endpoints, in time proportional to the total number of histogram bins,
//! and the result approximates aggregating features along temporal random
//! walks without ever sampling one.
//!
//! Modules:
//! - [`types`]: events, schemas, discount configuration, node state.
//! - [`binning`]: quantile / categorical bins fitted on a training prefix.
//! - [`engine`]: the per-edge update state machine.
//! - [`sketch`]: the same updates on random projections of the histograms.
//! - [`oracle`]: slow independent references (discounted sums, replay, walks).
//! - [`io`]: stream readers, embedding writers, configuration, snapshots.
//! - [`verify`] and [`bench`]: oracle suites and latency measurement.

pub mod bench;
pub mod binning;
pub mod engine;
pub mod error;
pub mod io;
pub mod oracle;
pub mod sketch;
pub mod synth;
pub mod types;
pub mod verify;

pub use binning::{BinEntry, BinningSpec, FeatureBins, FitOptions};
pub use engine::{EdgeUpdate, Engine, NodeSlot};
pub use error::{Error, Result};
pub use sketch::{HashPlanes, SketchEngine, SketchState};
pub use types::{
    Activity, DiscountConfig, DiscountMode, EdgeEvent, Embedding, EmbeddingLayout, FeatureDef,
    FeatureKind, FeatureSchema, FeatureSource, FeatureValue, HistogramSet, Layout, NodeId,
    NodeState,
};
