use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::BinningSpec;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::sketch::{HashPlanes, SketchEngine, SketchState};
use crate::types::{Activity, DiscountConfig, FeatureSchema, HistogramSet, NodeId, NodeState};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Histogram,
    Sketch,
}

/// Everything a restore checks before trusting the stored states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format_version: u32,
    pub store: StoreKind,
    pub schema_hash: String,
    pub binning_hash: String,
    pub config_hash: String,
    pub sketch_seed: Option<u64>,
    pub sketch_k: Option<usize>,
    pub events_applied: u64,
    pub last_time: Option<f64>,
    pub node_count: usize,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    /// Flat histograms, or projections for a sketch store.
    values: Vec<f64>,
    activity: Activity,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    manifest: SnapshotManifest,
    nodes: Vec<NodeRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    manifest: ProbeManifest,
}

#[derive(Deserialize)]
struct ProbeManifest {
    format_version: u32,
}

fn sha256_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn schema_hash(schema: &FeatureSchema) -> Result<String> {
    sha256_json(schema)
}

pub fn binning_hash(binning: &BinningSpec) -> Result<String> {
    sha256_json(binning)
}

/// Covers the discount configuration and the ordering tolerance.
pub fn config_hash(config: &DiscountConfig, tolerance: f64) -> Result<String> {
    sha256_json(&(config, tolerance))
}

struct Pinned<'a> {
    schema: &'a FeatureSchema,
    binning: &'a BinningSpec,
    config: &'a DiscountConfig,
    tolerance: f64,
    sketch: Option<&'a HashPlanes>,
}

fn write_snapshot(
    path: &Path,
    store: StoreKind,
    pinned: Pinned,
    events_applied: u64,
    last_time: Option<f64>,
    nodes: Vec<NodeRecord>,
) -> Result<SnapshotManifest> {
    let manifest = SnapshotManifest {
        format_version: SNAPSHOT_FORMAT_VERSION,
        store,
        schema_hash: schema_hash(pinned.schema)?,
        binning_hash: binning_hash(pinned.binning)?,
        config_hash: config_hash(pinned.config, pinned.tolerance)?,
        sketch_seed: pinned.sketch.map(HashPlanes::seed),
        sketch_k: pinned.sketch.map(HashPlanes::k),
        events_applied,
        last_time,
        node_count: nodes.len(),
        state_hash: sha256_json(&nodes)?,
    };
    let file = SnapshotFile { manifest, nodes };
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, serde_json::to_vec(&file)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(file.manifest)
}

fn load(path: &Path) -> Result<SnapshotFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let probe: VersionProbe = serde_json::from_slice(&bytes)?;
    if probe.manifest.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::SnapshotVersion {
            expected: SNAPSHOT_FORMAT_VERSION,
            found: probe.manifest.format_version,
        });
    }
    Ok(serde_json::from_slice(&bytes)?)
}

fn expect(what: &'static str, expected: String, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::SnapshotMismatch {
            what,
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

fn verify(file: &SnapshotFile, store: StoreKind, pinned: Pinned) -> Result<()> {
    let m = &file.manifest;
    let kind = |k: StoreKind| format!("{k:?}").to_lowercase();
    expect("store kind", kind(store), &kind(m.store))?;
    expect("schema hash", schema_hash(pinned.schema)?, &m.schema_hash)?;
    expect("binning hash", binning_hash(pinned.binning)?, &m.binning_hash)?;
    expect("config hash", config_hash(pinned.config, pinned.tolerance)?, &m.config_hash)?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    expect(
        "sketch seed",
        opt(pinned.sketch.map(|p| p.seed().to_string())),
        &opt(m.sketch_seed.map(|s| s.to_string())),
    )?;
    expect(
        "sketch k",
        opt(pinned.sketch.map(|p| p.k().to_string())),
        &opt(m.sketch_k.map(|k| k.to_string())),
    )?;
    expect("node count", file.nodes.len().to_string(), &m.node_count.to_string())?;
    expect("state hash", sha256_json(&file.nodes)?, &m.state_hash)?;
    Ok(())
}

/// Reads and version-checks the manifest without verifying hashes.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SnapshotManifest> {
    Ok(load(path.as_ref())?.manifest)
}

/// Persists a histogram engine between events.
pub fn snapshot_engine(engine: &Engine, path: impl AsRef<Path>) -> Result<SnapshotManifest> {
    let nodes = engine
        .states()
        .into_iter()
        .map(|(id, s)| NodeRecord {
            id,
            values: s.histograms.as_flat().to_vec(),
            activity: s.activity,
        })
        .collect();
    let pinned = Pinned {
        schema: engine.schema(),
        binning: engine.binning(),
        config: engine.config(),
        tolerance: engine.tolerance(),
        sketch: None,
    };
    write_snapshot(
        path.as_ref(),
        StoreKind::Histogram,
        pinned,
        engine.events_applied(),
        engine.last_timestamp(),
        nodes,
    )
}

/// Rebuilds a histogram engine, refusing snapshots taken under a different
/// schema, binning, configuration or format version.
pub fn restore_engine(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    binning: &BinningSpec,
    config: &DiscountConfig,
    tolerance: f64,
) -> Result<Engine> {
    let file = load(path.as_ref())?;
    let pinned = Pinned {
        schema,
        binning,
        config,
        tolerance,
        sketch: None,
    };
    verify(&file, StoreKind::Histogram, pinned)?;
    let offsets = crate::types::Layout::new(schema, binning)?.offsets().clone();
    let states = file
        .nodes
        .into_iter()
        .map(|n| {
            let histograms = HistogramSet::from_parts(n.values, offsets.clone())?;
            Ok((
                n.id,
                NodeState {
                    histograms,
                    activity: n.activity,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Engine::from_states(
        schema.clone(),
        binning.clone(),
        *config,
        tolerance,
        states,
        file.manifest.last_time,
        file.manifest.events_applied,
    )
}

/// Persists a sketch engine between events.
pub fn snapshot_sketch(engine: &SketchEngine, path: impl AsRef<Path>) -> Result<SnapshotManifest> {
    let nodes = engine
        .states()
        .into_iter()
        .map(|(id, s)| NodeRecord {
            id,
            values: s.theta,
            activity: s.activity,
        })
        .collect();
    let pinned = Pinned {
        schema: engine.schema(),
        binning: engine.binning(),
        config: engine.config(),
        tolerance: engine.tolerance(),
        sketch: Some(engine.planes()),
    };
    write_snapshot(
        path.as_ref(),
        StoreKind::Sketch,
        pinned,
        engine.events_applied(),
        engine.last_timestamp(),
        nodes,
    )
}

pub fn restore_sketch(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    binning: &BinningSpec,
    config: &DiscountConfig,
    tolerance: f64,
    planes: Arc<HashPlanes>,
) -> Result<SketchEngine> {
    let file = load(path.as_ref())?;
    let pinned = Pinned {
        schema,
        binning,
        config,
        tolerance,
        sketch: Some(&planes),
    };
    verify(&file, StoreKind::Sketch, pinned)?;
    let states = file
        .nodes
        .into_iter()
        .map(|n| {
            (
                n.id,
                SketchState {
                    theta: n.values,
                    activity: n.activity,
                },
            )
        })
        .collect();
    SketchEngine::from_states(
        schema.clone(),
        binning.clone(),
        *config,
        planes,
        tolerance,
        states,
        file.manifest.last_time,
        file.manifest.events_applied,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::max_state_discrepancy;
    use crate::synth::standard_stream;

    fn engine_for(s: &crate::synth::SyntheticStream) -> Engine {
        Engine::new(s.schema.clone(), s.binning.clone(), DiscountConfig::constant(0.4, 0.3, 10.0)).unwrap()
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        let s = standard_stream(5, 20, 1).unwrap();
        let e = engine_for(&s);
        let m = snapshot_engine(&e, &path).unwrap();
        assert_eq!(m.node_count, 0);
        assert_eq!(m.format_version, SNAPSHOT_FORMAT_VERSION);
        let back = restore_engine(&path, e.schema(), e.binning(), e.config(), 0.0).unwrap();
        assert_eq!(back.node_count(), 0);
    }

    #[test]
    fn split_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        let s = standard_stream(60, 1000, 2).unwrap();
        let mut full = engine_for(&s);
        let mut first = engine_for(&s);
        for (i, ev) in s.events.iter().enumerate() {
            full.apply_edge(ev).unwrap();
            if i < 500 {
                first.apply_edge(ev).unwrap();
            }
        }
        snapshot_engine(&first, &path).unwrap();
        let mut resumed = restore_engine(&path, &s.schema, &s.binning, first.config(), 0.0).unwrap();
        assert_eq!(resumed.states(), first.states());
        for ev in &s.events[500..] {
            resumed.apply_edge(ev).unwrap();
        }
        let want = full.states().into_iter().collect();
        assert_eq!(max_state_discrepancy(&resumed.states(), &want), 0.0);
        assert_eq!(resumed.events_applied(), 1000);
    }

    #[test]
    fn drift_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        let s = standard_stream(10, 100, 3).unwrap();
        let mut e = engine_for(&s);
        for ev in &s.events {
            e.apply_edge(ev).unwrap();
        }
        snapshot_engine(&e, &path).unwrap();

        let other = DiscountConfig::constant(0.5, 0.3, 10.0);
        assert!(matches!(
            restore_engine(&path, &s.schema, &s.binning, &other, 0.0),
            Err(Error::SnapshotMismatch { what: "config hash", .. })
        ));
        let mut edited = s.binning.clone();
        edited.features[0].bins = crate::binning::BinEntry::Numerical { cut_points: vec![1.0] };
        assert!(matches!(
            restore_engine(&path, &s.schema, &edited, e.config(), 0.0),
            Err(Error::SnapshotMismatch { what: "binning hash", .. })
        ));

        let text = fs::read_to_string(&path).unwrap();
        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        fs::write(&path, bumped).unwrap();
        assert!(matches!(
            restore_engine(&path, &s.schema, &s.binning, e.config(), 0.0),
            Err(Error::SnapshotVersion { found: 2, .. })
        ));
    }

    #[test]
    fn sketch_round_trip_and_seed_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sketch.json");
        let s = standard_stream(20, 300, 4).unwrap();
        let dim = crate::types::Layout::new(&s.schema, &s.binning).unwrap().dim();
        let planes = Arc::new(HashPlanes::new(8, dim, 42).unwrap());
        let cfg = DiscountConfig::constant(0.4, 0.3, 10.0);
        let mut e = SketchEngine::new(s.schema.clone(), s.binning.clone(), cfg, planes.clone()).unwrap();
        for ev in &s.events {
            e.apply_edge(ev).unwrap();
        }
        snapshot_sketch(&e, &path).unwrap();
        let back = restore_sketch(&path, &s.schema, &s.binning, &cfg, 0.0, planes).unwrap();
        assert_eq!(back.states(), e.states());
        let other = Arc::new(HashPlanes::new(8, dim, 43).unwrap());
        assert!(matches!(
            restore_sketch(&path, &s.schema, &s.binning, &cfg, 0.0, other),
            Err(Error::SnapshotMismatch { what: "sketch seed", .. })
        ));
        assert!(restore_engine(&path, &s.schema, &s.binning, &cfg, 0.0).is_err());
    }
}
