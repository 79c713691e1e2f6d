use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binning::BinningSpec;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::types::{DiscountConfig, DiscountMode, EdgeEvent, FeatureSchema, FeatureSource, NodeId};

use super::{linear_lookup, one_hot, truncated_sum};

/// Monte-Carlo estimate of a node's walk histograms, one entry per edge
/// feature. Derived features are not defined along a walk and are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkEstimate {
    /// Schema indices of the estimated features.
    pub features: Vec<usize>,
    pub mean: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub n_walks: usize,
}

impl WalkEstimate {
    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().flatten().fold(0.0, |m, &s| m.max(s))
    }
}

/// Edges incident to each node, in stream order (hence time order).
struct Adjacency<'a> {
    events: &'a [EdgeEvent],
    incident: HashMap<&'a str, Vec<usize>>,
}

impl<'a> Adjacency<'a> {
    fn new(events: &'a [EdgeEvent]) -> Self {
        let mut incident: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            incident.entry(e.source.as_str()).or_default().push(i);
            if !e.is_self_loop() {
                incident.entry(e.destination.as_str()).or_default().push(i);
            }
        }
        Adjacency { events, incident }
    }

    /// Incident edges of `node` strictly older than `before`.
    fn older(&self, node: &str, before: f64) -> &[usize] {
        let list = &self.incident[node];
        let n = list.partition_point(|&i| self.events[i].timestamp < before);
        &list[..n]
    }

    fn other_end(&self, edge: usize, node: &str) -> &'a str {
        let e = &self.events[edge];
        if e.source.as_str() == node {
            e.destination.as_str()
        } else {
            e.source.as_str()
        }
    }
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn std_err(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Samples `n_walks` temporal walks backward in time from the seed node's
/// latest event. Each hop picks uniformly among the strictly older edges
/// incident to the node just reached; a walk of depth `k` contributes
/// `sum_i alpha^i (1 - alpha) delta_i + alpha^k uniform`.
#[allow(clippy::too_many_arguments)]
pub fn walk_sampler(
    events: &[EdgeEvent],
    schema: &FeatureSchema,
    binning: &BinningSpec,
    seed_node: &str,
    alpha: f64,
    n_walks: usize,
    max_hops: usize,
    rng_seed: u64,
) -> Result<WalkEstimate> {
    binning.validate_against(schema)?;
    if n_walks == 0 {
        return Err(Error::Precondition("at least one walk is required".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha {alpha} outside [0, 1]")));
    }
    let adjacency = Adjacency::new(events);
    let Some(start) = adjacency.incident.get(seed_node).and_then(|l| l.last().copied()) else {
        return Err(Error::UnknownNode(seed_node.to_string()));
    };

    let mut features = Vec::new();
    let mut columns = Vec::new();
    let mut column = 0;
    for (f, def) in schema.features.iter().enumerate() {
        if def.source == FeatureSource::Edge {
            features.push(f);
            columns.push(column);
            column += 1;
        }
    }
    // Bin indicators per edge and feature, looked up once.
    let deltas = events
        .iter()
        .map(|e| {
            features
                .iter()
                .zip(&columns)
                .map(|(&f, &c)| {
                    let entry = &binning.features[f].bins;
                    Ok(one_hot(entry.bin_count(), linear_lookup(entry, &e.values[c])?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let tails: Vec<Vec<f64>> = features
        .iter()
        .map(|&f| {
            let n = binning.features[f].bins.bin_count();
            vec![1.0 / n as f64; n]
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut stats: Vec<Welford> = tails.iter().map(|t| Welford::new(t.len())).collect();
    let mut path = Vec::with_capacity(max_hops);
    let mut path_deltas: Vec<Vec<f64>> = Vec::with_capacity(max_hops);
    for _ in 0..n_walks {
        path.clear();
        let mut edge = start;
        let mut node = seed_node;
        while path.len() < max_hops {
            path.push(edge);
            node = adjacency.other_end(edge, node);
            let older = adjacency.older(node, events[edge].timestamp);
            if older.is_empty() {
                break;
            }
            edge = older[rng.random_range(0..older.len())];
        }
        for (k, (tail, st)) in tails.iter().zip(&mut stats).enumerate() {
            path_deltas.clear();
            path_deltas.extend(path.iter().map(|&e| deltas[e][k].clone()));
            st.push(&truncated_sum(&path_deltas, alpha, tail)?);
        }
    }

    Ok(WalkEstimate {
        features,
        std_err: stats.iter().map(Welford::std_err).collect(),
        mean: stats.into_iter().map(|s| s.mean).collect(),
        n_walks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationRow {
    pub node: NodeId,
    /// Events the node took part in.
    pub events: usize,
    /// L1 distance between engine and walk histograms, summed over edge features.
    pub l1: f64,
    pub mean_std_err: f64,
}

/// Per-node L1 distance between the engine's histograms after the whole
/// stream and walk-sampled estimates. Informational only.
#[allow(clippy::too_many_arguments)]
pub fn approximation_report(
    events: &[EdgeEvent],
    schema: &FeatureSchema,
    binning: &BinningSpec,
    config: &DiscountConfig,
    n_walks: usize,
    max_hops: usize,
    rng_seed: u64,
) -> Result<Vec<ApproximationRow>> {
    let DiscountMode::Constant { value: alpha } = config.alpha else {
        return Err(Error::Precondition(
            "walk comparison needs a constant alpha".into(),
        ));
    };
    let mut engine = Engine::new(schema.clone(), binning.clone(), *config)?;
    let mut counts: HashMap<&NodeId, usize> = HashMap::new();
    for e in events {
        engine.apply_edge(e)?;
        *counts.entry(&e.source).or_default() += 1;
        if !e.is_self_loop() {
            *counts.entry(&e.destination).or_default() += 1;
        }
    }
    let mut nodes: Vec<(&NodeId, usize)> = counts.into_iter().collect();
    nodes.sort();

    nodes
        .into_iter()
        .enumerate()
        .map(|(i, (node, n_events))| {
            let est = walk_sampler(
                events,
                schema,
                binning,
                node.as_str(),
                alpha,
                n_walks,
                max_hops,
                rng_seed.wrapping_add(i as u64),
            )?;
            let state = engine.node_state(node.as_str())?;
            let mut l1 = 0.0;
            let mut se_sum = 0.0;
            let mut se_len = 0;
            for ((&f, mean), se) in est.features.iter().zip(&est.mean).zip(&est.std_err) {
                l1 += state.histograms.feature(f).iter().zip(mean).map(|(a, b)| (a - b).abs()).sum::<f64>();
                se_sum += se.iter().sum::<f64>();
                se_len += se.len();
            }
            Ok(ApproximationRow {
                node: node.clone(),
                events: n_events,
                l1,
                mean_std_err: if se_len == 0 { 0.0 } else { se_sum / se_len as f64 },
            })
        })
        .collect()
}

/// Writes the report as comma-separated rows with a header.
pub fn write_report(rows: &[ApproximationRow], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["node_id", "events", "l1", "mean_std_err"])?;
    for r in rows {
        w.write_record([
            r.node.as_str(),
            &r.events.to_string(),
            &r.l1.to_string(),
            &r.mean_std_err.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{chain, integer_bins_schema, star_fixture};
    use crate::types::FeatureValue;

    #[test]
    fn chain_walk_is_exact() {
        let (schema, binning) = integer_bins_schema(&[4, 2]);
        let (events, seed) = chain(12, &[4, 2], 5);
        for alpha in [0.0, 0.25, 0.7, 1.0] {
            let est = walk_sampler(&events, &schema, &binning, seed.as_str(), alpha, 50, 100, 1).unwrap();
            for (k, &f) in est.features.iter().enumerate() {
                let len = binning.features[f].bins.bin_count();
                let deltas: Vec<Vec<f64>> = events
                    .iter()
                    .rev()
                    .map(|e| one_hot(len, linear_lookup(&binning.features[f].bins, &e.values[f]).unwrap()))
                    .collect();
                let want = truncated_sum(&deltas, alpha, &vec![1.0 / len as f64; len]).unwrap();
                assert_eq!(est.mean[k], want);
                assert!(est.std_err[k].iter().all(|&s| s == 0.0));
            }
        }
    }

    #[test]
    fn max_hops_truncates() {
        let (schema, binning) = integer_bins_schema(&[2]);
        let (events, seed) = chain(5, &[2], 2);
        let est = walk_sampler(&events, &schema, &binning, seed.as_str(), 0.5, 3, 1, 0).unwrap();
        let bin = linear_lookup(&binning.features[0].bins, &events[4].values[0]).unwrap();
        let want = truncated_sum(&[one_hot(2, bin)], 0.5, &[0.5, 0.5]).unwrap();
        assert_eq!(est.mean[0], want);
    }

    #[test]
    fn alpha_zero_is_first_indicator() {
        let star = star_fixture();
        let est = walk_sampler(&star.events, &star.schema, &star.binning, "seed", 0.0, 100, 10, 3).unwrap();
        assert_eq!(est.mean[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(est.max_std_err(), 0.0);
    }

    #[test]
    fn star_matches_mixture() {
        let star = star_fixture();
        let est = walk_sampler(&star.events, &star.schema, &star.binning, "seed", 0.5, 20_000, 10, 11).unwrap();
        let want = [
            0.25 / 3.0 + 0.0625,
            0.25 / 3.0 + 0.0625,
            0.25 / 3.0 + 0.0625,
            0.5 + 0.0625,
        ];
        for ((m, w), se) in est.mean[0].iter().zip(want).zip(&est.std_err[0]) {
            assert!((m - w).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn unknown_seed() {
        let star = star_fixture();
        assert!(matches!(
            walk_sampler(&star.events, &star.schema, &star.binning, "nobody", 0.5, 10, 10, 0),
            Err(Error::UnknownNode(_))
        ));
        assert!(walk_sampler(&star.events, &star.schema, &star.binning, "seed", 0.5, 0, 10, 0).is_err());
    }

    #[test]
    fn report_covers_active_nodes() {
        let star = star_fixture();
        let cfg = DiscountConfig::constant(0.5, 0.0, 1.0);
        let rows = approximation_report(&star.events, &star.schema, &star.binning, &cfg, 200, 10, 0).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.l1.is_finite()));
        let hub = rows.iter().find(|r| r.node.as_str() == "hub").unwrap();
        assert_eq!(hub.events, 4);

        let mut out = Vec::new();
        write_report(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 6);
    }

    #[test]
    fn report_on_chain_is_small() {
        let (schema, binning) = integer_bins_schema(&[3]);
        let (events, seed) = chain(8, &[3], 9);
        let cfg = DiscountConfig::constant(0.5, 0.0, 1.0);
        let rows = approximation_report(&events, &schema, &binning, &cfg, 10, 50, 0).unwrap();
        let row = rows.iter().find(|r| r.node == seed).unwrap();
        assert!(row.l1 <= 1e-12);
    }

    #[test]
    fn report_needs_constant_alpha() {
        let (schema, binning) = integer_bins_schema(&[2]);
        let cfg = DiscountConfig {
            alpha: DiscountMode::ExpTimeDecay { timescale: 1.0 },
            beta: DiscountMode::Constant { value: 0.0 },
            degree_timescale: 1.0,
        };
        let ev = vec![EdgeEvent::new("a", "b", 0.0, vec![FeatureValue::Num(0.5)])];
        assert!(approximation_report(&ev, &schema, &binning, &cfg, 1, 1, 0).is_err());
    }
}
