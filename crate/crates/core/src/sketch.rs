//! Compressed node state via random-hyperplane projections.
//!
//! Instead of the concatenated histogram vector `s` (dimension `M`), each node
//! stores `theta_j = h_j . s` for `k` random unit vectors `h_j`. Because the
//! histogram update is affine in `s`, the projections can be updated directly:
//!
//! ```text
//! theta_j' = beta * theta_j + (1 - beta) * (alpha * theta_neighbor_j + (1 - alpha) * h_j . delta)
//! ```
//!
//! which reduces per-node storage from `M` to `k` values. Sign bits of `theta`
//! form a similarity hash and are derived on demand.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binning::BinningSpec;
use crate::engine::{Driver, EdgeUpdate, Mixer, NodeSlot, Side};
use crate::error::{Error, Result};
use crate::types::{Activity, DiscountConfig, EdgeEvent, EmbeddingLayout, FeatureSchema, HistogramSet, NodeId};

/// `k` random unit vectors in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashPlanes {
    k: usize,
    dim: usize,
    seed: u64,
    /// Row-major, `k * dim`.
    vectors: Vec<f64>,
}

impl HashPlanes {
    /// Gaussian components, normalized to unit length. Same seed, same planes.
    pub fn new(k: usize, dim: usize, seed: u64) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::Config(format!("hash planes need k >= 1 and dim >= 1, got k={k}, dim={dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(k * dim);
        for _ in 0..k {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-300 {
                    vectors.extend(v.iter().map(|x| x / norm));
                    break;
                }
            }
        }
        Ok(HashPlanes { k, dim, seed, vectors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn plane(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }

    /// `h_j . delta` for a one-hot set given by its hot flat positions.
    #[inline]
    fn dot_hot(&self, j: usize, offsets: &[usize], bins: &[usize]) -> f64 {
        let h = self.plane(j);
        bins.iter().enumerate().map(|(f, &b)| h[offsets[f] + b]).sum()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Structural(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `theta_j = h_j . s_tot`.
pub fn project(s_tot: &[f64], planes: &HashPlanes) -> Result<Vec<f64>> {
    check_len("histogram vector", s_tot.len(), planes.dim)?;
    Ok(planes
        .planes()
        .map(|h| h.iter().zip(s_tot).map(|(a, b)| a * b).sum())
        .collect())
}

/// Sign bits; zero maps to `false`.
pub fn binarize(theta: &[f64]) -> Vec<bool> {
    theta.iter().map(|&t| t > 0.0).collect()
}

/// Reference form of the projected update with a dense indicator vector.
pub fn sketch_update(
    theta_self: &[f64],
    theta_neighbor: &[f64],
    delta: &[f64],
    alpha: f64,
    beta: f64,
    planes: &HashPlanes,
) -> Result<Vec<f64>> {
    check_len("own theta", theta_self.len(), planes.k)?;
    check_len("neighbour theta", theta_neighbor.len(), planes.k)?;
    let injected = project(delta, planes)?;
    Ok(theta_self
        .iter()
        .zip(theta_neighbor)
        .zip(injected)
        .map(|((&s, &n), hd)| beta * s + (1.0 - beta) * (alpha * n + (1.0 - alpha) * hd))
        .collect())
}

/// `max_j |h_j . mean(S) - mean(h_j . S)|` over a collection of histogram
/// sets.
pub fn average_preservation_check(sets: &[HistogramSet], planes: &HashPlanes) -> Result<f64> {
    let Some(first) = sets.first() else {
        return Err(Error::Precondition("need at least one histogram set".into()));
    };
    if sets.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::Structural("histogram sets have different layouts".into()));
    }
    let n = sets.len() as f64;
    let mut mean = vec![0.0; first.as_flat().len()];
    let mut mean_theta = vec![0.0; planes.k];
    for s in sets {
        for (m, x) in mean.iter_mut().zip(s.as_flat()) {
            *m += x / n;
        }
        for (m, t) in mean_theta.iter_mut().zip(project(s.as_flat(), planes)?) {
            *m += t / n;
        }
    }
    let theta_of_mean = project(&mean, planes)?;
    Ok(theta_of_mean
        .iter()
        .zip(&mean_theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Compressed per-node state: projections plus the uncompressed activity
/// counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchState {
    pub theta: Vec<f64>,
    #[serde(flatten)]
    pub activity: Activity,
}

impl SketchState {
    pub fn bits(&self) -> Vec<bool> {
        binarize(&self.theta)
    }

    /// Finite and `|theta_j| <= sqrt(feature_count)`, which holds whenever
    /// the underlying per-feature histograms are normalized.
    pub fn within_bounds(&self, feature_count: usize) -> bool {
        let bound = (feature_count as f64).sqrt() + 1e-9;
        self.theta.iter().all(|t| t.is_finite() && t.abs() <= bound)
    }
}

struct SketchMixer<'a> {
    planes: &'a HashPlanes,
    offsets: &'a [usize],
}

impl Mixer for SketchMixer<'_> {
    #[inline]
    fn mix_pair(&self, a: &mut [f64], b: &mut [f64], sa: &Side, sb: &Side) {
        let (keep_a, take_a, hot_a) = (sa.beta, (1.0 - sa.beta) * sa.alpha, (1.0 - sa.beta) * (1.0 - sa.alpha));
        let (keep_b, take_b, hot_b) = (sb.beta, (1.0 - sb.beta) * sb.alpha, (1.0 - sb.beta) * (1.0 - sb.alpha));
        for j in 0..self.planes.k {
            let (x0, y0) = (a[j], b[j]);
            a[j] = keep_a * x0 + take_a * y0 + hot_a * self.planes.dot_hot(j, self.offsets, &sa.bins);
            b[j] = keep_b * y0 + take_b * x0 + hot_b * self.planes.dot_hot(j, self.offsets, &sb.bins);
        }
    }

    #[inline]
    fn mix_self(&self, row: &mut [f64], s: &Side) {
        let keep = s.beta + (1.0 - s.beta) * s.alpha;
        let hot = (1.0 - s.beta) * (1.0 - s.alpha);
        for (j, x) in row.iter_mut().enumerate() {
            *x = keep * *x + hot * self.planes.dot_hot(j, self.offsets, &s.bins);
        }
    }
}

/// The streaming engine over hashed state. Never materializes histograms.
#[derive(Debug, Clone)]
pub struct SketchEngine {
    driver: Driver,
    planes: Arc<HashPlanes>,
    offsets: Arc<[usize]>,
    layouts: [Arc<EmbeddingLayout>; 2],
}

impl SketchEngine {
    pub fn new(
        schema: FeatureSchema,
        binning: BinningSpec,
        config: DiscountConfig,
        planes: Arc<HashPlanes>,
    ) -> Result<Self> {
        let layout = crate::types::Layout::new(&schema, &binning)?;
        if planes.dim != layout.dim() {
            return Err(Error::Structural(format!(
                "hash planes have dimension {}, histograms have {} bins",
                planes.dim,
                layout.dim()
            )));
        }
        let init = project(layout.uniform().as_flat(), &planes)?;
        let offsets = layout.offsets().clone();
        let names: Vec<String> = (0..planes.k).map(|j| format!("theta_{j}")).collect();
        let mut with_deg = names.clone();
        with_deg.extend(["in_degree".to_string(), "out_degree".to_string()]);
        Ok(SketchEngine {
            driver: Driver::new(schema, binning, config, init)?,
            planes,
            offsets,
            layouts: [
                Arc::new(EmbeddingLayout { names }),
                Arc::new(EmbeddingLayout { names: with_deg }),
            ],
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance {tolerance} must be finite and >= 0")));
        }
        self.driver.tolerance = tolerance;
        Ok(self)
    }

    pub fn apply_edge(&mut self, event: &EdgeEvent) -> Result<EdgeUpdate> {
        let mixer = SketchMixer {
            planes: &self.planes,
            offsets: &self.offsets,
        };
        self.driver.apply(&mixer, event)
    }

    pub fn planes(&self) -> &Arc<HashPlanes> {
        &self.planes
    }

    pub fn ensure_node(&mut self, id: &NodeId) -> NodeSlot {
        NodeSlot(self.driver.store.get_or_insert(id, &self.driver.init_row))
    }

    pub fn slot(&self, id: &str) -> Option<NodeSlot> {
        self.driver.store.get(id).map(NodeSlot)
    }

    pub fn theta_at(&self, slot: NodeSlot) -> &[f64] {
        self.driver.store.row(slot.0)
    }

    pub fn state_at(&self, slot: NodeSlot) -> SketchState {
        SketchState {
            theta: self.theta_at(slot).to_vec(),
            activity: *self.driver.store.activity(slot.0),
        }
    }

    pub fn sketch_state(&self, id: &str) -> Result<SketchState> {
        Ok(self.state_at(NodeSlot(self.driver.slot(id)?)))
    }

    pub fn embedding_into(&self, slot: NodeSlot, append_degrees: bool, out: &mut Vec<f64>) {
        out.extend_from_slice(self.driver.store.row(slot.0));
        if append_degrees {
            let a = self.driver.store.activity(slot.0);
            out.push(a.in_degree);
            out.push(a.out_degree);
        }
    }

    pub fn embedding_layout(&self, append_degrees: bool) -> &Arc<EmbeddingLayout> {
        &self.layouts[append_degrees as usize]
    }

    pub fn id_at(&self, slot: NodeSlot) -> &NodeId {
        self.driver.store.id(slot.0)
    }

    pub fn node_ids(&self) -> &[NodeId] {
        self.driver.store.ids()
    }

    pub fn node_count(&self) -> usize {
        self.driver.store.len()
    }

    pub fn states(&self) -> Vec<(NodeId, SketchState)> {
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

    pub fn feature_count(&self) -> usize {
        self.driver.layout.feature_count()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_states(
        schema: FeatureSchema,
        binning: BinningSpec,
        config: DiscountConfig,
        planes: Arc<HashPlanes>,
        tolerance: f64,
        states: Vec<(NodeId, SketchState)>,
        last_time: Option<f64>,
        events_applied: u64,
    ) -> Result<Self> {
        let mut engine = SketchEngine::new(schema, binning, config, planes)?.with_tolerance(tolerance)?;
        engine.driver.store.reserve(states.len());
        for (id, state) in states {
            check_len("stored theta", state.theta.len(), engine.planes.k)?;
            if engine.driver.store.get(id.as_str()).is_some() {
                return Err(Error::Structural(format!("node `{id}` appears twice")));
            }
            engine.driver.store.insert(id, &state.theta, state.activity);
        }
        engine.driver.last_time = last_time;
        engine.driver.applied = events_applied;
        Ok(engine)
    }
}
