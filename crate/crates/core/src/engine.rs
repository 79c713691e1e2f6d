//! The streaming update engine.
//!
//! Every arriving edge `u -> v` updates exactly two node summaries. Per
//! feature, each endpoint's histogram becomes
//!
//! ```text
//! s_self' = beta * s_self + (1 - beta) * (alpha * s_neighbor + (1 - alpha) * delta)
//! ```
//!
//! where `delta` is the one-hot bin indicator of the event's value and
//! `s_neighbor` is the other endpoint's summary *before* this event. In/out
//! degrees are exponentially decayed counts, `d <- d * exp(-dt / tau_d) + 1`.
//!
//! No adjacency is stored, so the cost of an update depends only on the
//! number of bins.

use std::collections::HashMap;

use compact_str::CompactString;
use rustc_hash::FxHashMap;
use std::sync::Arc;

use crate::binning::{BinEntry, BinningSpec};
use crate::error::{Error, Result};
use crate::types::{
    Activity, DiscountConfig, DiscountMode, EdgeEvent, Embedding, FeatureSchema, FeatureSource,
    HistogramSet, Layout, NodeId, NodeState,
};

/// Discount factor for an update given the node's time since its previous
/// event. `None` means this is the node's first event: time-decayed modes
/// then return 0 so the new information fully replaces the initial state.
pub fn effective_discount(mode: &DiscountMode, dt: Option<f64>) -> Result<f64> {
    match (*mode, dt) {
        (_, Some(dt)) if dt < 0.0 => Err(Error::TimeOrder(format!("negative time delta {dt}"))),
        (DiscountMode::Constant { value }, _) => Ok(value),
        (DiscountMode::ExpTimeDecay { .. }, None) => Ok(0.0),
        (DiscountMode::ExpTimeDecay { timescale }, Some(dt)) => Ok((-dt / timescale).exp()),
    }
}

/// Streaming degree count: `d * exp(-dt / tau) + 1`, or `1` on the node's
/// first event in this direction.
pub fn update_degree(degree: f64, dt: Option<f64>, timescale: f64) -> Result<f64> {
    match dt {
        None => Ok(1.0),
        Some(dt) if dt < 0.0 => Err(Error::TimeOrder(format!("negative time delta {dt}"))),
        Some(dt) => Ok(degree * (-dt / timescale).exp() + 1.0),
    }
}

/// Which side(s) of an edge a node is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Source,
    Destination,
    SelfLoop,
}

impl Role {
    fn outgoing(self) -> bool {
        self != Role::Destination
    }

    fn incoming(self) -> bool {
        self != Role::Source
    }
}

/// Per-node values of the derived features at the current event.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivedValues {
    pub in_degree: f64,
    pub out_degree: f64,
    /// `None` on the node's first event.
    pub time_delta: Option<f64>,
}

fn since(last: Option<f64>, t: f64) -> Option<f64> {
    last.map(|l| (t - l).max(0.0))
}

impl Activity {
    /// Time since the node's previous event of any direction.
    pub fn time_since_last(&self, t: f64) -> Option<f64> {
        since(self.last_any_event_time, t)
    }

    /// Derived values for an event at `t`. Counters in the event's direction
    /// include the event itself; the other direction is decayed to `t`.
    pub(crate) fn derive(&self, role: Role, t: f64, timescale: f64) -> Result<DerivedValues> {
        let counter = |d: f64, last: Option<f64>, counts: bool| -> Result<f64> {
            let dt = since(last, t);
            if counts {
                update_degree(d, dt, timescale)
            } else {
                Ok(dt.map_or(0.0, |dt| d * (-dt / timescale).exp()))
            }
        };
        Ok(DerivedValues {
            in_degree: counter(self.in_degree, self.last_in_event_time, role.incoming())?,
            out_degree: counter(self.out_degree, self.last_out_event_time, role.outgoing())?,
            time_delta: self.time_since_last(t),
        })
    }

    pub(crate) fn commit(&mut self, role: Role, t: f64, derived: &DerivedValues) {
        let advance = |last: &mut Option<f64>| *last = Some(last.map_or(t, |l| l.max(t)));
        if role.incoming() {
            self.in_degree = derived.in_degree;
            advance(&mut self.last_in_event_time);
        }
        if role.outgoing() {
            self.out_degree = derived.out_degree;
            advance(&mut self.last_out_event_time);
        }
        advance(&mut self.last_any_event_time);
    }
}

/// One-hot bin indicators for every feature, stored as bin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSet {
    pub bins: Vec<usize>,
    pub offsets: Arc<[usize]>,
}

impl OneHotSet {
    pub fn to_dense(&self) -> HistogramSet {
        let mut values = vec![0.0; *self.offsets.last().unwrap()];
        for (f, &b) in self.bins.iter().enumerate() {
            values[self.offsets[f] + b] = 1.0;
        }
        HistogramSet::from_parts(values, self.offsets.clone()).expect("offsets are well formed")
    }

    /// Positions of the hot entries in the flattened vector.
    pub fn flat_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bins.iter().enumerate().map(|(f, &b)| self.offsets[f] + b)
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Edge(usize),
    Derived(FeatureSource),
}

/// Maps events plus derived values to per-feature bin indices.
#[derive(Debug, Clone)]
pub(crate) struct Binner {
    features: Vec<(Slot, BinEntry)>,
    /// Last bin of each feature; used for undefined time deltas.
    last_bin: Vec<usize>,
    /// Positions of the derived features.
    derived: Vec<usize>,
}

impl Binner {
    pub(crate) fn new(schema: &FeatureSchema, binning: &BinningSpec) -> Result<Self> {
        binning.validate_against(schema)?;
        let mut col = 0;
        let mut features = Vec::with_capacity(schema.len());
        for (def, fb) in schema.features.iter().zip(&binning.features) {
            let slot = match def.source {
                FeatureSource::Edge => {
                    col += 1;
                    Slot::Edge(col - 1)
                }
                src => Slot::Derived(src),
            };
            features.push((slot, fb.bins.clone()));
        }
        let last_bin = features.iter().map(|(_, b)| b.bin_count() - 1).collect();
        let derived = (0..features.len())
            .filter(|&f| matches!(features[f].0, Slot::Derived(_)))
            .collect();
        Ok(Binner {
            features,
            last_bin,
            derived,
        })
    }

    pub(crate) fn fill(&self, event: &EdgeEvent, derived: &DerivedValues, out: &mut Vec<usize>) -> Result<()> {
        self.fill_edge(event, out)?;
        self.fill_derived(derived, out)
    }

    /// Bins of the edge features; derived positions are left at 0.
    pub(crate) fn fill_edge(&self, event: &EdgeEvent, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        for (slot, entry) in &self.features {
            out.push(match *slot {
                Slot::Edge(col) => entry.lookup(&event.values[col])?,
                Slot::Derived(_) => 0,
            });
        }
        Ok(())
    }

    /// Overwrites the derived positions of a row filled by `fill_edge`.
    pub(crate) fn fill_derived(&self, derived: &DerivedValues, out: &mut [usize]) -> Result<()> {
        for &f in &self.derived {
            let (slot, entry) = &self.features[f];
            out[f] = match *slot {
                Slot::Derived(FeatureSource::DerivedInDegree) => entry.lookup_numeric(derived.in_degree)?,
                Slot::Derived(FeatureSource::DerivedOutDegree) => entry.lookup_numeric(derived.out_degree)?,
                Slot::Derived(FeatureSource::DerivedTimeDelta) => match derived.time_delta {
                    Some(dt) => entry.lookup_numeric(dt)?,
                    None => self.last_bin[f],
                },
                Slot::Derived(FeatureSource::Edge) | Slot::Edge(_) => unreachable!(),
            };
        }
        Ok(())
    }
}

/// One-hot indicators for an event as seen by one endpoint.
pub fn delta_vector(
    event: &EdgeEvent,
    derived: &DerivedValues,
    schema: &FeatureSchema,
    binning: &BinningSpec,
) -> Result<OneHotSet> {
    event.validate(schema)?;
    let layout = Layout::new(schema, binning)?;
    let binner = Binner::new(schema, binning)?;
    let mut bins = Vec::new();
    binner.fill(event, derived, &mut bins)?;
    Ok(OneHotSet {
        bins,
        offsets: layout.offsets().clone(),
    })
}

/// Fresh node: uniform histograms, zero degrees, no timestamps.
pub fn init_node(layout: &Layout) -> NodeState {
    NodeState {
        histograms: layout.uniform(),
        activity: Activity::default(),
    }
}

/// Pure form of the per-node update.
pub fn sprint_update(
    own: &HistogramSet,
    neighbor: &HistogramSet,
    delta: &OneHotSet,
    alpha: f64,
    beta: f64,
) -> Result<HistogramSet> {
    if !own.same_shape(neighbor) || own.offsets() != &delta.offsets {
        return Err(Error::Structural(
            "own, neighbour and indicator vectors have different layouts".into(),
        ));
    }
    let dense = delta.to_dense();
    let values = own
        .as_flat()
        .iter()
        .zip(neighbor.as_flat())
        .zip(dense.as_flat())
        .map(|((&s, &n), &d)| beta * s + (1.0 - beta) * (alpha * n + (1.0 - alpha) * d))
        .collect();
    HistogramSet::from_parts(values, own.offsets().clone())
}

/// Discounts and bins for one endpoint of the current edge.
#[derive(Debug, Clone, Default)]
pub(crate) struct Side {
    pub bins: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub derived: DerivedValues,
}

/// Combines two endpoint rows in place from their pre-update values.
pub(crate) trait Mixer {
    fn mix_pair(&self, a: &mut [f64], b: &mut [f64], side_a: &Side, side_b: &Side);
    fn mix_self(&self, row: &mut [f64], side: &Side);
}

struct HistogramMixer<'a> {
    offsets: &'a [usize],
}

impl Mixer for HistogramMixer<'_> {
    #[inline]
    fn mix_pair(&self, a: &mut [f64], b: &mut [f64], sa: &Side, sb: &Side) {
        let (keep_a, take_a) = (sa.beta, (1.0 - sa.beta) * sa.alpha);
        let (keep_b, take_b) = (sb.beta, (1.0 - sb.beta) * sb.alpha);
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let (x0, y0) = (*x, *y);
            *x = keep_a * x0 + take_a * y0;
            *y = keep_b * y0 + take_b * x0;
        }
        let (hot_a, hot_b) = ((1.0 - sa.beta) * (1.0 - sa.alpha), (1.0 - sb.beta) * (1.0 - sb.alpha));
        for (f, (&ba, &bb)) in sa.bins.iter().zip(&sb.bins).enumerate() {
            a[self.offsets[f] + ba] += hot_a;
            b[self.offsets[f] + bb] += hot_b;
        }
    }

    #[inline]
    fn mix_self(&self, row: &mut [f64], s: &Side) {
        let keep = s.beta + (1.0 - s.beta) * s.alpha;
        row.iter_mut().for_each(|x| *x *= keep);
        let hot = (1.0 - s.beta) * (1.0 - s.alpha);
        for (f, &b) in s.bins.iter().enumerate() {
            row[self.offsets[f] + b] += hot;
        }
    }
}

/// Dense node table: id index plus fixed-width value rows and activity.
#[derive(Debug, Clone)]
pub(crate) struct SlotStore {
    /// Keys are stored inline when short, so probing rarely leaves the table.
    index: FxHashMap<CompactString, usize>,
    ids: Vec<NodeId>,
    rows: Vec<f64>,
    activity: Vec<Activity>,
    width: usize,
}

impl SlotStore {
    pub(crate) fn new(width: usize) -> Self {
        SlotStore {
            index: FxHashMap::default(),
            ids: Vec::new(),
            rows: Vec::new(),
            activity: Vec::new(),
            width,
        }
    }

    pub(crate) fn reserve(&mut self, nodes: usize) {
        self.index.reserve(nodes);
        self.ids.reserve(nodes);
        self.rows.reserve(nodes * self.width);
        self.activity.reserve(nodes);
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn insert(&mut self, id: NodeId, row: &[f64], activity: Activity) -> usize {
        debug_assert_eq!(row.len(), self.width);
        let slot = self.ids.len();
        self.index.insert(CompactString::from(id.as_str()), slot);
        self.ids.push(id);
        self.rows.extend_from_slice(row);
        self.activity.push(activity);
        slot
    }

    pub(crate) fn get_or_insert(&mut self, id: &NodeId, init: &[f64]) -> usize {
        match self.get(id.as_str()) {
            Some(s) => s,
            None => self.insert(id.clone(), init, Activity::default()),
        }
    }

    /// Hints the CPU to start loading a node's row and counters.
    #[inline]
    pub(crate) fn prefetch(&self, slot: usize) {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            let row = self.row(slot);
            let lines = row.as_ptr_range();
            let mut p = lines.start.cast::<i8>();
            while p < lines.end.cast::<i8>() {
                // SAFETY: prefetching never faults and `p` stays within `row`.
                unsafe { _mm_prefetch::<_MM_HINT_T0>(p) };
                p = p.wrapping_add(64);
            }
            let act = std::ptr::from_ref(&self.activity[slot]).cast::<i8>();
            // SAFETY: as above.
            unsafe { _mm_prefetch::<_MM_HINT_T0>(act) };
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = slot;
    }

    pub(crate) fn row(&self, slot: usize) -> &[f64] {
        &self.rows[slot * self.width..(slot + 1) * self.width]
    }

    pub(crate) fn row_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.rows[slot * self.width..(slot + 1) * self.width]
    }

    pub(crate) fn rows_pair_mut(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a, b);
        let w = self.width;
        if a < b {
            let (lo, hi) = self.rows.split_at_mut(b * w);
            (&mut lo[a * w..(a + 1) * w], &mut hi[..w])
        } else {
            let (lo, hi) = self.rows.split_at_mut(a * w);
            (&mut hi[..w], &mut lo[b * w..(b + 1) * w])
        }
    }

    pub(crate) fn activity(&self, slot: usize) -> &Activity {
        &self.activity[slot]
    }

    pub(crate) fn activity_mut(&mut self, slot: usize) -> &mut Activity {
        &mut self.activity[slot]
    }

    pub(crate) fn id(&self, slot: usize) -> &NodeId {
        &self.ids[slot]
    }

    pub(crate) fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Index of a node inside an engine's table. Stable for the engine's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeSlot(pub usize);

/// Slots touched by one applied edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeUpdate {
    pub source: NodeSlot,
    pub destination: NodeSlot,
}

/// Event validation, ordering, derived values and discounts shared by the
/// histogram engine and the sketch engine.
#[derive(Debug, Clone)]
pub(crate) struct Driver {
    pub schema: FeatureSchema,
    pub binning: BinningSpec,
    pub config: DiscountConfig,
    pub layout: Layout,
    pub tolerance: f64,
    pub store: SlotStore,
    pub init_row: Vec<f64>,
    pub last_time: Option<f64>,
    pub applied: u64,
    binner: Binner,
    side_a: Side,
    side_b: Side,
}

impl Driver {
    pub(crate) fn new(
        schema: FeatureSchema,
        binning: BinningSpec,
        config: DiscountConfig,
        init_row: Vec<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        config.validate()?;
        let layout = Layout::new(&schema, &binning)?;
        let binner = Binner::new(&schema, &binning)?;
        Ok(Driver {
            store: SlotStore::new(init_row.len()),
            schema,
            binning,
            config,
            layout,
            tolerance: 0.0,
            init_row,
            last_time: None,
            applied: 0,
            binner,
            side_a: Side::default(),
            side_b: Side::default(),
        })
    }

    /// Discounts, derived values and derived bins for one endpoint. Edge bins
    /// must already be in `side.bins`.
    fn plan(&self, role: Role, activity: &Activity, t: f64, side: &mut Side) -> Result<()> {
        side.derived = activity.derive(role, t, self.config.degree_timescale)?;
        let dt = activity.time_since_last(t);
        side.alpha = effective_discount(&self.config.alpha, dt)?;
        side.beta = effective_discount(&self.config.beta, dt)?;
        self.binner.fill_derived(&side.derived, &mut side.bins)
    }

    pub(crate) fn apply<M: Mixer>(&mut self, mixer: &M, event: &EdgeEvent) -> Result<EdgeUpdate> {
        event.validate(&self.schema).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("event {}: {m}", self.applied)),
            other => other,
        })?;
        let t = event.timestamp;
        if let Some(prev) = self.last_time {
            if t < prev - self.tolerance {
                return Err(Error::OrderedStream {
                    event_index: self.applied,
                    timestamp: t,
                    previous: prev,
                    tolerance: self.tolerance,
                });
            }
        }

        // Everything fallible happens before the first mutation.
        let src = self.store.get(event.source.as_str());
        let dst = if event.is_self_loop() {
            src
        } else {
            self.store.get(event.destination.as_str())
        };
        // Start pulling both rows in while the bins are computed.
        for slot in [src, dst].into_iter().flatten() {
            self.store.prefetch(slot);
        }
        let fresh = Activity::default();
        let mut side_a = std::mem::take(&mut self.side_a);
        let mut side_b = std::mem::take(&mut self.side_b);
        let planned = self.binner.fill_edge(event, &mut side_a.bins).and_then(|_| {
            let src_act = src.map_or(fresh, |s| *self.store.activity(s));
            let dst_act = dst.map_or(fresh, |s| *self.store.activity(s));
            if event.is_self_loop() {
                self.plan(Role::SelfLoop, &src_act, t, &mut side_a)
            } else {
                side_b.bins.clone_from(&side_a.bins);
                self.plan(Role::Source, &src_act, t, &mut side_a)?;
                self.plan(Role::Destination, &dst_act, t, &mut side_b)
            }
        });
        if let Err(e) = planned {
            self.side_a = side_a;
            self.side_b = side_b;
            return Err(match e {
                Error::Data(m) => Error::Data(format!("event {}: {m}", self.applied)),
                other => other,
            });
        }

        let src = src.unwrap_or_else(|| self.store.insert(event.source.clone(), &self.init_row, fresh));
        let update = if event.is_self_loop() {
            mixer.mix_self(self.store.row_mut(src), &side_a);
            self.store.activity_mut(src).commit(Role::SelfLoop, t, &side_a.derived);
            EdgeUpdate {
                source: NodeSlot(src),
                destination: NodeSlot(src),
            }
        } else {
            let dst = dst.unwrap_or_else(|| self.store.insert(event.destination.clone(), &self.init_row, fresh));
            let (a, b) = self.store.rows_pair_mut(src, dst);
            mixer.mix_pair(a, b, &side_a, &side_b);
            self.store.activity_mut(src).commit(Role::Source, t, &side_a.derived);
            self.store.activity_mut(dst).commit(Role::Destination, t, &side_b.derived);
            EdgeUpdate {
                source: NodeSlot(src),
                destination: NodeSlot(dst),
            }
        };
        self.side_a = side_a;
        self.side_b = side_b;
        self.last_time = Some(self.last_time.map_or(t, |p| p.max(t)));
        self.applied += 1;
        Ok(update)
    }

    pub(crate) fn slot(&self, id: &str) -> Result<usize> {
        self.store.get(id).ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }
}

/// Streaming histogram engine: a single-writer state machine over all nodes
/// seen so far.
#[derive(Debug, Clone)]
pub struct Engine {
    driver: Driver,
    offsets: Arc<[usize]>,
}

impl Engine {
    pub fn new(schema: FeatureSchema, binning: BinningSpec, config: DiscountConfig) -> Result<Self> {
        let layout = Layout::new(&schema, &binning)?;
        let init = layout.uniform().as_flat().to_vec();
        Ok(Engine {
            driver: Driver::new(schema, binning, config, init)?,
            offsets: layout.offsets().clone(),
        })
    }

    /// Allows timestamps to go back by up to `tolerance` seconds.
    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance {tolerance} must be finite and >= 0")));
        }
        self.driver.tolerance = tolerance;
        Ok(self)
    }

    pub fn apply_edge(&mut self, event: &EdgeEvent) -> Result<EdgeUpdate> {
        let mixer = HistogramMixer {
            offsets: &self.offsets,
        };
        self.driver.apply(&mixer, event)
    }

    /// Registers a node without an event, as if it had been seen but never
    /// touched.
    pub fn ensure_node(&mut self, id: &NodeId) -> NodeSlot {
        NodeSlot(self.driver.store.get_or_insert(id, &self.driver.init_row))
    }

    pub fn reserve(&mut self, nodes: usize) {
        self.driver.store.reserve(nodes);
    }

    pub fn slot(&self, id: &str) -> Option<NodeSlot> {
        self.driver.store.get(id).map(NodeSlot)
    }

    pub fn node_state(&self, id: &str) -> Result<NodeState> {
        Ok(self.state_at(NodeSlot(self.driver.slot(id)?)))
    }

    pub fn state_at(&self, slot: NodeSlot) -> NodeState {
        NodeState {
            histograms: HistogramSet::from_parts(
                self.driver.store.row(slot.0).to_vec(),
                self.driver.layout.offsets().clone(),
            )
            .expect("rows match the layout"),
            activity: *self.driver.store.activity(slot.0),
        }
    }

    /// Histogram part of a node's state, flattened.
    pub fn histograms_at(&self, slot: NodeSlot) -> &[f64] {
        self.driver.store.row(slot.0)
    }

    pub fn activity_at(&self, slot: NodeSlot) -> &Activity {
        self.driver.store.activity(slot.0)
    }

    pub fn node_embedding(&self, id: &str, append_degrees: bool) -> Result<Embedding> {
        let slot = NodeSlot(self.driver.slot(id)?);
        let mut values = Vec::new();
        self.embedding_into(slot, append_degrees, &mut values);
        Ok(Embedding {
            values,
            layout: self.driver.layout.embedding_layout(append_degrees).clone(),
        })
    }

    /// Appends a node's embedding to `out` without allocating a new vector.
    #[inline]
    pub fn embedding_into(&self, slot: NodeSlot, append_degrees: bool, out: &mut Vec<f64>) {
        out.extend_from_slice(self.driver.store.row(slot.0));
        if append_degrees {
            let a = self.driver.store.activity(slot.0);
            out.push(a.in_degree);
            out.push(a.out_degree);
        }
    }

    pub fn id_at(&self, slot: NodeSlot) -> &NodeId {
        self.driver.store.id(slot.0)
    }

    /// Node ids in first-seen order.
    pub fn node_ids(&self) -> &[NodeId] {
        self.driver.store.ids()
    }

    pub fn node_count(&self) -> usize {
        self.driver.store.len()
    }

    /// All node states in first-seen order.
    pub fn states(&self) -> Vec<(NodeId, NodeState)> {
        (0..self.node_count())
            .map(|s| (self.driver.store.id(s).clone(), self.state_at(NodeSlot(s))))
            .collect()
    }

    pub fn events_applied(&self) -> u64 {
        self.driver.applied
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.driver.last_time
    }

    pub fn layout(&self) -> &Layout {
        &self.driver.layout
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.driver.schema
    }

    pub fn binning(&self) -> &BinningSpec {
        &self.driver.binning
    }

    pub fn config(&self) -> &DiscountConfig {
        &self.driver.config
    }

    pub fn tolerance(&self) -> f64 {
        self.driver.tolerance
    }

    /// Rebuilds an engine from persisted states.
    pub fn from_states(
        schema: FeatureSchema,
        binning: BinningSpec,
        config: DiscountConfig,
        tolerance: f64,
        states: Vec<(NodeId, NodeState)>,
        last_time: Option<f64>,
        events_applied: u64,
    ) -> Result<Self> {
        let mut engine = Engine::new(schema, binning, config)?.with_tolerance(tolerance)?;
        engine.reserve(states.len());
        for (id, state) in states {
            if state.histograms.offsets() != engine.driver.layout.offsets() {
                return Err(Error::Structural(format!(
                    "state of node `{id}` does not match the binning layout"
                )));
            }
            if engine.driver.store.get(id.as_str()).is_some() {
                return Err(Error::Structural(format!("node `{id}` appears twice")));
            }
            engine
                .driver
                .store
                .insert(id, state.histograms.as_flat(), state.activity);
        }
        engine.driver.last_time = last_time;
        engine.driver.applied = events_applied;
        Ok(engine)
    }
}

/// Samples of derived feature values, as the engine would bin them while
/// replaying `events`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivedSamples {
    pub in_degree: Vec<f64>,
    pub out_degree: Vec<f64>,
    /// First events contribute no time delta.
    pub time_delta: Vec<f64>,
}

/// Replays only the activity counters over `events`.
pub fn calibrate_derived(events: &[EdgeEvent], degree_timescale: f64) -> Result<DerivedSamples> {
    fn observe<'a>(
        nodes: &mut HashMap<&'a str, Activity>,
        role: Role,
        id: &'a str,
        t: f64,
        timescale: f64,
        out: &mut DerivedSamples,
    ) -> Result<()> {
        let act = nodes.entry(id).or_default();
        let d = act.derive(role, t, timescale)?;
        out.in_degree.push(d.in_degree);
        out.out_degree.push(d.out_degree);
        out.time_delta.extend(d.time_delta);
        act.commit(role, t, &d);
        Ok(())
    }

    let mut nodes: HashMap<&str, Activity> = HashMap::new();
    let mut out = DerivedSamples::default();
    for e in events {
        let t = e.timestamp;
        if e.is_self_loop() {
            observe(&mut nodes, Role::SelfLoop, e.source.as_str(), t, degree_timescale, &mut out)?;
        } else {
            // Distinct endpoints: observing them in sequence equals observing
            // both against pre-event activity.
            observe(&mut nodes, Role::Source, e.source.as_str(), t, degree_timescale, &mut out)?;
            observe(&mut nodes, Role::Destination, e.destination.as_str(), t, degree_timescale, &mut out)?;
        }
    }
    Ok(out)
}
