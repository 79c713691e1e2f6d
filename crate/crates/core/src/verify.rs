//! Oracle suites on synthetic data, each reporting its worst discrepancy
//! against a fixed tolerance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::oracle::{chain_equivalence, linear_lookup, naive_replay, truncated_sum, walk_sampler};
use crate::sketch::{average_preservation_check, project, HashPlanes, SketchEngine};
use crate::synth::{chain, integer_bins_schema, random_config, standard_stream, star_fixture};
use crate::types::{HistogramSet, Layout, NodeId, NodeState};

pub const CHAIN_TOLERANCE: f64 = 1e-12;
pub const REPLAY_TOLERANCE: f64 = 1e-12;
pub const SKETCH_TOLERANCE: f64 = 1e-9;
pub const AVERAGING_TOLERANCE: f64 = 1e-12;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Standard errors allowed between a walk estimate and its expectation.
pub const WALK_SIGMAS: f64 = 3.0;

pub const CHAIN_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Chain,
    Replay,
    Sketch,
    Walks,
    Normalization,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "chain" => Suite::Chain,
            "replay" => Suite::Replay,
            "sketch" => Suite::Sketch,
            "walks" => Suite::Walks,
            "normalization" => Suite::Normalization,
            "all" => Suite::All,
            _ => return Err(Error::Config(format!("unknown suite `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    /// Where the worst case occurred, or the first violation.
    pub detail: String,
}

impl SuiteReport {
    fn new(suite: &str, max_discrepancy: f64, tolerance: f64, detail: String) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            passed: max_discrepancy <= tolerance,
            max_discrepancy,
            tolerance,
            detail,
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max discrepancy {:.3e} (tolerance {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.max_discrepancy,
            self.tolerance,
            self.detail
        )
    }
}

/// Sizes for each suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub chain_max_len: usize,
    pub replay_nodes: usize,
    pub replay_events: usize,
    pub checkpoints: usize,
    pub sketch_nodes: usize,
    pub sketch_events: usize,
    pub sketch_k: usize,
    pub averaging_sets: usize,
    pub star_walks: usize,
    pub normalization_nodes: usize,
    pub normalization_events: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 42,
            chain_max_len: 20,
            replay_nodes: 500,
            replay_events: 10_000,
            checkpoints: 5,
            sketch_nodes: 500,
            sketch_events: 10_000,
            sketch_k: 16,
            averaging_sets: 100,
            star_walks: 100_000,
            normalization_nodes: 1_000,
            normalization_events: 100_000,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    Ok(match suite {
        Suite::Chain => vec![chain_suite(opts)?],
        Suite::Replay => vec![replay_suite(opts)?],
        Suite::Sketch => sketch_suite(opts)?,
        Suite::Walks => walks_suite(opts)?,
        Suite::Normalization => vec![normalization_suite(opts)?],
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Chain, Suite::Replay, Suite::Sketch, Suite::Walks, Suite::Normalization] {
                all.extend(run_suite(s, opts)?);
            }
            all
        }
    })
}

/// Engine vs truncated discounted sum on chains of every length up to the
/// maximum, for each alpha in [`CHAIN_ALPHAS`].
pub fn chain_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let bins = [4, 3, 7];
    let (schema, binning) = integer_bins_schema(&bins);
    let mut worst = (0.0, String::from("no chains"));
    for len in 1..=opts.chain_max_len {
        for alpha in CHAIN_ALPHAS {
            let (events, _) = chain(len, &bins, opts.seed.wrapping_add(len as u64));
            let r = chain_equivalence(&events, alpha, &schema, &binning)?;
            if r.max_discrepancy >= worst.0 {
                worst = (r.max_discrepancy, format!("worst at length {len}, alpha {alpha}"));
            }
        }
    }
    Ok(SuiteReport::new("chain", worst.0, CHAIN_TOLERANCE, worst.1))
}

/// Largest discrepancy and, if any entry exceeds `tolerance`, the first
/// violating node and position.
pub fn compare_states(
    actual: &[(NodeId, NodeState)],
    expected: &BTreeMap<NodeId, NodeState>,
    tolerance: f64,
) -> (f64, Option<String>) {
    let worst = crate::oracle::max_state_discrepancy(actual, expected);
    if worst <= tolerance {
        return (worst, None);
    }
    let by_id: BTreeMap<&NodeId, &NodeState> = actual.iter().map(|(i, s)| (i, s)).collect();
    for (id, want) in expected {
        let Some(got) = by_id.get(id) else {
            return (worst, Some(format!("node `{id}` missing from the engine")));
        };
        let pairs = got.histograms.as_flat().iter().zip(want.histograms.as_flat());
        for (j, (a, b)) in pairs.enumerate() {
            if (a - b).abs() > tolerance {
                return (worst, Some(format!("node `{id}` bin {j}: engine {a}, oracle {b}")));
            }
        }
        if got.activity != want.activity {
            return (
                worst,
                Some(format!("node `{id}` activity: engine {:?}, oracle {:?}", got.activity, want.activity)),
            );
        }
    }
    (worst, Some("node sets differ".into()))
}

/// Incremental engine vs from-scratch replay at evenly spaced checkpoints.
pub fn replay_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let s = standard_stream(opts.replay_nodes, opts.replay_events, opts.seed)?;
    let config = random_config(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n = opts.checkpoints.max(1);
    let checkpoints: Vec<usize> = (1..=n).map(|k| s.events.len() * k / n).collect();
    let naive = naive_replay(&s.events, &s.schema, &s.binning, &config, 0.0, &checkpoints)?;
    let mut engine = Engine::new(s.schema.clone(), s.binning.clone(), config)?;
    let mut applied = 0;
    let mut worst: f64 = 0.0;
    let mut detail = format!("{} checkpoints, {} events", checkpoints.len(), s.events.len());
    for cp in &naive {
        for e in &s.events[applied..cp.events] {
            engine.apply_edge(e)?;
        }
        applied = cp.events;
        let (d, violation) = compare_states(&engine.states(), &cp.nodes, REPLAY_TOLERANCE);
        worst = worst.max(d);
        if let Some(v) = violation {
            detail = format!("checkpoint {}: {v}", cp.events);
            break;
        }
    }
    Ok(SuiteReport::new("replay", worst, REPLAY_TOLERANCE, detail))
}

fn random_sets(layout: &Layout, count: usize, rng: &mut impl Rng) -> Result<Vec<HistogramSet>> {
    (0..count)
        .map(|_| {
            let features: Vec<Vec<f64>> = (0..layout.feature_count())
                .map(|f| {
                    let raw: Vec<f64> = (0..layout.bins(f)).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / total).collect()
                })
                .collect();
            HistogramSet::from_features(&features)
        })
        .collect()
}

/// Streaming projections vs projecting the full engine's histograms, plus
/// the averaging identity on random histograms.
pub fn sketch_suite(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    let s = standard_stream(opts.sketch_nodes, opts.sketch_events, opts.seed)?;
    let config = random_config(&mut ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1)));
    let layout = Layout::new(&s.schema, &s.binning)?;
    let planes = Arc::new(HashPlanes::new(opts.sketch_k, layout.dim(), opts.seed)?);
    let mut full = Engine::new(s.schema.clone(), s.binning.clone(), config)?;
    let mut sketch = SketchEngine::new(s.schema.clone(), s.binning.clone(), config, planes.clone())?;
    for e in &s.events {
        full.apply_edge(e)?;
        sketch.apply_edge(e)?;
    }
    let mut worst = (0.0, String::from("no nodes"));
    for (id, state) in full.states() {
        let want = project(state.histograms.as_flat(), &planes)?;
        let got = sketch.sketch_state(id.as_str())?;
        for (j, (a, b)) in got.theta.iter().zip(&want).enumerate() {
            let d = (a - b).abs();
            if d >= worst.0 {
                worst = (d, format!("worst at node `{id}`, projection {j}"));
            }
        }
    }
    let linear = SuiteReport::new("sketch", worst.0, SKETCH_TOLERANCE, worst.1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let sets = random_sets(&layout, opts.averaging_sets, &mut rng)?;
    let avg = average_preservation_check(&sets, &planes)?;
    let averaging = SuiteReport::new(
        "sketch-averaging",
        avg,
        AVERAGING_TOLERANCE,
        format!("{} random histogram sets", sets.len()),
    );
    Ok(vec![linear, averaging])
}

/// Walk sampler vs truncated sum on chains (exact), and vs the analytic
/// mixture on the star fixture (within [`WALK_SIGMAS`] standard errors).
pub fn walks_suite(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    let bins = [4, 3];
    let (schema, binning) = integer_bins_schema(&bins);
    let mut chain_worst = (0.0, String::from("no chains"));
    for len in 1..=opts.chain_max_len {
        let (events, seed) = chain(len, &bins, opts.seed.wrapping_add(len as u64));
        for alpha in CHAIN_ALPHAS {
            let est = walk_sampler(&events, &schema, &binning, seed.as_str(), alpha, 16, len + 1, opts.seed)?;
            for (k, &f) in est.features.iter().enumerate() {
                let entry = &binning.features[f].bins;
                let n = entry.bin_count();
                let deltas = events
                    .iter()
                    .rev()
                    .map(|e| {
                        let mut d = vec![0.0; n];
                        d[linear_lookup(entry, &e.values[f])?] = 1.0;
                        Ok(d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let want = truncated_sum(&deltas, alpha, &vec![1.0 / n as f64; n])?;
                for (a, b) in est.mean[k].iter().zip(&want) {
                    let d = (a - b).abs();
                    if d > chain_worst.0 {
                        chain_worst = (d, format!("length {len}, alpha {alpha}, feature {f}"));
                    }
                }
            }
        }
    }
    let chains = SuiteReport::new("walks-chain", chain_worst.0, 0.0, chain_worst.1);

    let star = star_fixture();
    let alpha = 0.5;
    let est = walk_sampler(
        &star.events,
        &star.schema,
        &star.binning,
        star.seed.as_str(),
        alpha,
        opts.star_walks,
        64,
        opts.seed,
    )?;
    // Hop 0 is the bin-3 edge; hop 1 one of three spokes in bins 0..2; then
    // the walk ends on the uniform tail.
    let tail = alpha * alpha / 4.0;
    let spoke = alpha * (1.0 - alpha) / 3.0;
    let expected = [spoke + tail, spoke + tail, spoke + tail, (1.0 - alpha) + tail];
    let mut worst_z: f64 = 0.0;
    let mut detail = format!("{} walks", est.n_walks);
    for (j, ((m, se), want)) in est.mean[0].iter().zip(&est.std_err[0]).zip(expected).enumerate() {
        let diff = (m - want).abs();
        // Bins with no sampling variance must match to rounding.
        let z = if *se > 0.0 {
            diff / se
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        if z > worst_z {
            worst_z = z;
            detail = format!("{} walks, worst bin {j}: estimate {m}, expected {want}, std err {se}", est.n_walks);
        }
    }
    let star = SuiteReport::new("walks-star", worst_z, WALK_SIGMAS, detail);
    Ok(vec![chains, star])
}

/// Every per-feature histogram of every node sums to one after a long random
/// stream with randomly chosen discount modes.
pub fn normalization_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let s = standard_stream(opts.normalization_nodes, opts.normalization_events, opts.seed)?;
    let config = random_config(&mut ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3)));
    let mut engine = Engine::new(s.schema.clone(), s.binning.clone(), config)?;
    for e in &s.events {
        engine.apply_edge(e)?;
    }
    let mut worst = (0.0, String::from("no nodes"));
    for (id, state) in engine.states() {
        let err = state.histograms.max_normalization_error();
        if err >= worst.0 {
            worst = (err, format!("worst at node `{id}`, {} nodes", engine.node_count()));
        }
    }
    Ok(SuiteReport::new("normalization", worst.0, NORMALIZATION_TOLERANCE, worst.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            chain_max_len: 6,
            replay_nodes: 30,
            replay_events: 600,
            sketch_nodes: 30,
            sketch_events: 600,
            averaging_sets: 10,
            star_walks: 5_000,
            normalization_nodes: 30,
            normalization_events: 2_000,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn all_suites_pass_small() {
        let reports = run_suite(Suite::All, &small()).unwrap();
        assert_eq!(reports.len(), 7);
        for r in &reports {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!("walks".parse::<Suite>().unwrap(), Suite::Walks);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn compare_points_at_first_violation() {
        let s = standard_stream(5, 40, 1).unwrap();
        let cfg = crate::types::DiscountConfig::constant(0.5, 0.5, 1.0);
        let mut e = Engine::new(s.schema.clone(), s.binning.clone(), cfg).unwrap();
        for ev in &s.events {
            e.apply_edge(ev).unwrap();
        }
        let mut want: BTreeMap<NodeId, NodeState> = e.states().into_iter().collect();
        let (id, state) = want.iter_mut().next().unwrap();
        let id = id.clone();
        let mut values = state.histograms.as_flat().to_vec();
        values[2] += 0.1;
        state.histograms = HistogramSet::from_parts(values, state.histograms.offsets().clone()).unwrap();
        let (d, msg) = compare_states(&e.states(), &want, 1e-12);
        assert!(d > 0.09);
        assert!(msg.unwrap().contains(&format!("node `{id}` bin 2")));
    }
}
