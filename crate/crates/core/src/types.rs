//! Domain types shared by the binning, engine, sketch, oracle and io modules.

use std::borrow::Borrow;
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::binning::BinningSpec;
use crate::error::{Error, Result};

/// Identifier of a graph node, as it appears in the input stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// A raw edge feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Num(v) => write!(f, "{v}"),
            FeatureValue::Cat(s) => f.write_str(s),
        }
    }
}

/// One timestamped interaction between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub source: NodeId,
    pub destination: NodeId,
    /// Seconds; finite and non-negative.
    pub timestamp: f64,
    /// Positionally matches the schema's edge-sourced features.
    pub values: Vec<FeatureValue>,
}

impl EdgeEvent {
    pub fn new(
        source: impl Into<NodeId>,
        destination: impl Into<NodeId>,
        timestamp: f64,
        values: Vec<FeatureValue>,
    ) -> Self {
        EdgeEvent {
            source: source.into(),
            destination: destination.into(),
            timestamp,
            values,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.source == self.destination
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(Error::Data(format!(
                "timestamp {} is not a finite non-negative number",
                self.timestamp
            )));
        }
        let expected = schema.edge_feature_count();
        if self.values.len() != expected {
            return Err(Error::Data(format!(
                "event carries {} values, schema declares {} edge features",
                self.values.len(),
                expected
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numerical,
    Categorical,
}

/// Where a feature's per-event value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Edge,
    DerivedInDegree,
    DerivedOutDegree,
    DerivedTimeDelta,
}

impl FeatureSource {
    pub fn is_derived(self) -> bool {
        self != FeatureSource::Edge
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default = "edge_source")]
    pub source: FeatureSource,
}

fn edge_source() -> FeatureSource {
    FeatureSource::Edge
}

impl FeatureDef {
    pub fn numerical(name: impl Into<String>) -> Self {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Numerical,
            source: FeatureSource::Edge,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Categorical,
            source: FeatureSource::Edge,
        }
    }

    pub fn derived(name: impl Into<String>, source: FeatureSource) -> Self {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Numerical,
            source,
        }
    }
}

/// Ordered list of tracked features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDef>) -> Result<Self> {
        let schema = FeatureSchema { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut names = HashSet::new();
        let mut derived = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            if f.source.is_derived() {
                if !derived.insert(f.source) {
                    return Err(Error::Schema(format!(
                        "more than one feature with source {:?}",
                        f.source
                    )));
                }
                if f.kind != FeatureKind::Numerical {
                    return Err(Error::Schema(format!(
                        "derived feature `{}` must be numerical",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn edge_feature_count(&self) -> usize {
        self.features
            .iter()
            .filter(|f| f.source == FeatureSource::Edge)
            .count()
    }

    /// Edge-sourced features, in schema order.
    pub fn edge_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features.iter().filter(|f| f.source == FeatureSource::Edge)
    }

    pub fn has_derived(&self) -> bool {
        self.features.iter().any(|f| f.source.is_derived())
    }
}

/// How a discount factor (alpha or beta) is obtained for an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiscountMode {
    /// Fixed value in [0, 1].
    Constant { value: f64 },
    /// `exp(-dt / timescale)` with `dt` the node's time since its last event.
    ExpTimeDecay { timescale: f64 },
}

impl DiscountMode {
    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            DiscountMode::Constant { value } if !(0.0..=1.0).contains(&value) => Err(
                Error::Config(format!("{what}: constant {value} outside [0, 1]")),
            ),
            DiscountMode::ExpTimeDecay { timescale } if !(timescale > 0.0 && timescale.is_finite()) => {
                Err(Error::Config(format!(
                    "{what}: timescale {timescale} must be finite and > 0"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    /// Weight of the neighbour summary against the new event indicator.
    pub alpha: DiscountMode,
    /// Weight of the node's own history against the incoming mix.
    pub beta: DiscountMode,
    /// Timescale of the streaming degree counters, seconds.
    pub degree_timescale: f64,
}

impl DiscountConfig {
    pub fn constant(alpha: f64, beta: f64, degree_timescale: f64) -> Self {
        DiscountConfig {
            alpha: DiscountMode::Constant { value: alpha },
            beta: DiscountMode::Constant { value: beta },
            degree_timescale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        if !(self.degree_timescale > 0.0 && self.degree_timescale.is_finite()) {
            return Err(Error::Config(format!(
                "degree_timescale {} must be finite and > 0",
                self.degree_timescale
            )));
        }
        Ok(())
    }
}

/// Names of each embedding position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingLayout {
    pub names: Vec<String>,
}

impl EmbeddingLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn prefixed(&self, prefix: &str) -> impl Iterator<Item = String> + '_ {
        let prefix = prefix.to_owned();
        self.names.iter().map(move |n| format!("{prefix}:{n}"))
    }

    /// Layout of a source-then-destination concatenation.
    pub fn pair(&self) -> EmbeddingLayout {
        EmbeddingLayout {
            names: self.prefixed("src").chain(self.prefixed("dst")).collect(),
        }
    }
}

/// Histogram geometry derived from a schema and its fitted bins.
#[derive(Debug, Clone)]
pub struct Layout {
    feature_names: Vec<String>,
    offsets: Arc<[usize]>,
    histograms: Arc<EmbeddingLayout>,
    with_degrees: Arc<EmbeddingLayout>,
}

impl Layout {
    pub fn new(schema: &FeatureSchema, binning: &BinningSpec) -> Result<Self> {
        binning.validate_against(schema)?;
        let bins: Vec<usize> = binning.features.iter().map(|f| f.bins.bin_count()).collect();
        Ok(Self::from_bins(
            schema.features.iter().map(|f| f.name.clone()).collect(),
            &bins,
        ))
    }

    pub fn from_bins(feature_names: Vec<String>, bins: &[usize]) -> Self {
        assert_eq!(feature_names.len(), bins.len());
        let mut offsets = Vec::with_capacity(bins.len() + 1);
        offsets.push(0);
        for b in bins {
            offsets.push(offsets.last().unwrap() + b);
        }
        let mut names = Vec::with_capacity(*offsets.last().unwrap());
        for (name, &b) in feature_names.iter().zip(bins) {
            names.extend((0..b).map(|j| format!("{name}:bin_{j}")));
        }
        let histograms = EmbeddingLayout { names };
        let mut with_degrees = histograms.clone();
        with_degrees.names.push("in_degree".into());
        with_degrees.names.push("out_degree".into());
        Layout {
            feature_names,
            offsets: offsets.into(),
            histograms: Arc::new(histograms),
            with_degrees: Arc::new(with_degrees),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Total number of bins across all features.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    pub fn bins(&self, feature: usize) -> usize {
        self.offsets[feature + 1] - self.offsets[feature]
    }

    pub fn embedding_layout(&self, append_degrees: bool) -> &Arc<EmbeddingLayout> {
        if append_degrees {
            &self.with_degrees
        } else {
            &self.histograms
        }
    }

    /// Concatenation of per-feature uniform histograms.
    pub fn uniform(&self) -> HistogramSet {
        HistogramSet::uniform(self.offsets.clone())
    }
}

/// Per-feature histograms stored back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    values: Vec<f64>,
    /// `offsets[f]..offsets[f + 1]` is feature `f`'s histogram.
    offsets: Arc<[usize]>,
}

impl HistogramSet {
    pub fn uniform(offsets: Arc<[usize]>) -> Self {
        let mut values = vec![0.0; *offsets.last().unwrap_or(&0)];
        for w in offsets.windows(2) {
            let fill = 1.0 / (w[1] - w[0]) as f64;
            values[w[0]..w[1]].fill(fill);
        }
        HistogramSet { values, offsets }
    }

    pub fn from_parts(values: Vec<f64>, offsets: Arc<[usize]>) -> Result<Self> {
        if offsets.first() != Some(&0)
            || offsets.windows(2).any(|w| w[1] <= w[0])
            || offsets.last() != Some(&values.len())
        {
            return Err(Error::Structural(format!(
                "{} values do not fit offsets {:?}",
                values.len(),
                offsets
            )));
        }
        Ok(HistogramSet { values, offsets })
    }

    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut values = Vec::new();
        for f in features {
            values.extend_from_slice(f);
            offsets.push(values.len());
        }
        Self::from_parts(values, offsets.into())
    }

    pub fn feature_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        &self.values[self.offsets[f]..self.offsets[f + 1]]
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.offsets.windows(2).map(|w| &self.values[w[0]..w[1]])
    }

    /// The concatenated vector of all histograms.
    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    pub fn same_shape(&self, other: &HistogramSet) -> bool {
        self.offsets == other.offsets
    }

    /// Largest `|sum - 1|` over all features.
    pub fn max_normalization_error(&self) -> f64 {
        self.features()
            .map(|h| (h.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Streaming degree counters and last-seen times of one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub in_degree: f64,
    pub out_degree: f64,
    pub last_any_event_time: Option<f64>,
    pub last_in_event_time: Option<f64>,
    pub last_out_event_time: Option<f64>,
}

/// Full per-node state: decayed histograms plus activity counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub histograms: HistogramSet,
    #[serde(flatten)]
    pub activity: Activity,
}

impl NodeState {
    pub fn in_degree(&self) -> f64 {
        self.activity.in_degree
    }

    pub fn out_degree(&self) -> f64 {
        self.activity.out_degree
    }
}

/// A flat embedding vector and the names of its positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub layout: Arc<EmbeddingLayout>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Flat embedding of one node: its histograms in schema order, then optionally
/// the raw in/out degrees.
pub fn node_embedding(state: &NodeState, layout: &Layout, append_degrees: bool) -> Result<Embedding> {
    check_shape(state, layout)?;
    let mut values = Vec::with_capacity(layout.dim() + 2);
    values.extend_from_slice(state.histograms.as_flat());
    if append_degrees {
        values.push(state.activity.in_degree);
        values.push(state.activity.out_degree);
    }
    Ok(Embedding {
        values,
        layout: layout.embedding_layout(append_degrees).clone(),
    })
}

/// Source embedding followed by destination embedding.
pub fn pair_embedding(
    source: &NodeState,
    destination: &NodeState,
    layout: &Layout,
    append_degrees: bool,
) -> Result<Embedding> {
    if !source.histograms.same_shape(&destination.histograms) {
        return Err(Error::Structural(
            "source and destination histograms have different layouts".into(),
        ));
    }
    let mut u = node_embedding(source, layout, append_degrees)?;
    let v = node_embedding(destination, layout, append_degrees)?;
    u.values.extend_from_slice(&v.values);
    u.layout = Arc::new(u.layout.pair());
    Ok(u)
}

fn check_shape(state: &NodeState, layout: &Layout) -> Result<()> {
    if state.histograms.offsets() != layout.offsets() {
        return Err(Error::Structural(format!(
            "node histograms have offsets {:?}, layout expects {:?}",
            state.histograms.offsets(),
            layout.offsets()
        )));
    }
    Ok(())
}
