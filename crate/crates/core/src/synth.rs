//! Seeded synthetic streams for verification suites, tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binning::{fit_from_events, BinEntry, BinningSpec, FeatureBins, FitOptions};
use crate::error::Result;
use crate::types::{
    DiscountConfig, DiscountMode, EdgeEvent, FeatureDef, FeatureSchema, FeatureSource, FeatureValue,
    NodeId,
};

const CHANNELS: [&str; 6] = ["web", "pos", "atm", "app", "wire", "other"];

/// Two numerical edge features, one categorical, and all three derived ones.
pub fn standard_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureDef::numerical("amount"),
        FeatureDef::numerical("score"),
        FeatureDef::categorical("channel"),
        FeatureDef::derived("in_degree", FeatureSource::DerivedInDegree),
        FeatureDef::derived("out_degree", FeatureSource::DerivedOutDegree),
        FeatureDef::derived("time_delta", FeatureSource::DerivedTimeDelta),
    ])
    .expect("static schema is valid")
}

pub fn node_name(i: usize) -> NodeId {
    NodeId(format!("n{i}"))
}

fn random_values(rng: &mut impl Rng) -> Vec<FeatureValue> {
    let u: f64 = rng.random();
    // Heavy-ish tail for the amount.
    let amount = (-(1.0 - u).ln() * 50.0).floor();
    let score = rng.random::<f64>();
    let c = (rng.random::<f64>().powi(2) * CHANNELS.len() as f64) as usize;
    vec![
        FeatureValue::Num(amount),
        FeatureValue::Num(score),
        FeatureValue::Cat(CHANNELS[c.min(CHANNELS.len() - 1)].to_string()),
    ]
}

/// `n_events` edges between uniformly chosen nodes, time-ordered, with
/// exponential gaps and about 10% simultaneous events.
pub fn random_events(n_nodes: usize, n_events: usize, seed: u64) -> Vec<EdgeEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..n_events)
        .map(|_| {
            if rng.random::<f64>() >= 0.1 {
                t += -(1.0 - rng.random::<f64>()).ln();
            }
            let s = rng.random_range(0..n_nodes);
            let d = rng.random_range(0..n_nodes);
            EdgeEvent {
                source: node_name(s),
                destination: node_name(d),
                timestamp: t,
                values: random_values(&mut rng),
            }
        })
        .collect()
}

/// Discount configuration with each of alpha and beta independently constant
/// or time-decayed.
pub fn random_config(rng: &mut impl Rng) -> DiscountConfig {
    let mode = |rng: &mut dyn rand::RngCore| {
        if rng.random::<bool>() {
            DiscountMode::Constant {
                value: rng.random::<f64>(),
            }
        } else {
            DiscountMode::ExpTimeDecay {
                timescale: 0.1 + 20.0 * rng.random::<f64>(),
            }
        }
    };
    DiscountConfig {
        alpha: mode(rng),
        beta: mode(rng),
        degree_timescale: 0.5 + 50.0 * rng.random::<f64>(),
    }
}

/// A random stream with bins fitted on its first 75%.
pub struct SyntheticStream {
    pub schema: FeatureSchema,
    pub binning: BinningSpec,
    pub events: Vec<EdgeEvent>,
}

pub fn standard_stream(n_nodes: usize, n_events: usize, seed: u64) -> Result<SyntheticStream> {
    let schema = standard_schema();
    let events = random_events(n_nodes, n_events, seed);
    let train = (events.len() * 3 / 4).max(1).min(events.len());
    let binning = fit_from_events(&events[..train], &schema, &FitOptions::default())?;
    Ok(SyntheticStream {
        schema,
        binning,
        events,
    })
}

/// Numerical edge features whose bins are `[j, j + 1)` for `j = 0..bins`.
pub fn integer_bins_schema(bins: &[usize]) -> (FeatureSchema, BinningSpec) {
    let names: Vec<String> = (0..bins.len()).map(|i| format!("f{i}")).collect();
    let schema = FeatureSchema::new(names.iter().map(FeatureDef::numerical).collect()).expect("unique names");
    let binning = BinningSpec {
        features: names
            .into_iter()
            .zip(bins)
            .map(|(name, &b)| FeatureBins {
                name,
                bins: BinEntry::Numerical {
                    cut_points: (1..b).map(|c| c as f64).collect(),
                },
            })
            .collect(),
    };
    (schema, binning)
}

/// A temporal chain `c_len - c_(len-1) - ... - c_0`: the edge between `c_(i+1)`
/// and `c_i` happens at time `len - i`, so each node's only older neighbour is
/// the next one down the chain. The seed node is `c0`.
pub fn chain(len: usize, bins: &[usize], seed: u64) -> (Vec<EdgeEvent>, NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..len)
        .rev()
        .map(|i| EdgeEvent {
            source: NodeId(format!("c{}", i + 1)),
            destination: NodeId(format!("c{i}")),
            timestamp: (len - i) as f64,
            values: bins
                .iter()
                .map(|&b| FeatureValue::Num(rng.random_range(0..b) as f64 + 0.5))
                .collect(),
        })
        .collect();
    (events, NodeId("c0".into()))
}

/// A hub with three spokes at distinct bins (0, 1, 2 of 4), then the seed
/// node touching the hub with a bin-3 edge. A walk from the seed visits the
/// hub and then one spoke uniformly at random.
pub struct StarFixture {
    pub schema: FeatureSchema,
    pub binning: BinningSpec,
    pub events: Vec<EdgeEvent>,
    pub seed: NodeId,
}

pub fn star_fixture() -> StarFixture {
    let (schema, binning) = integer_bins_schema(&[4]);
    let ev = |s: &str, d: &str, t: f64, v: f64| EdgeEvent::new(s, d, t, vec![FeatureValue::Num(v)]);
    StarFixture {
        schema,
        binning,
        events: vec![
            ev("a", "hub", 1.0, 0.5),
            ev("b", "hub", 2.0, 1.5),
            ev("c", "hub", 3.0, 2.5),
            ev("seed", "hub", 4.0, 3.5),
        ],
        seed: NodeId("seed".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_ordered() {
        let a = random_events(50, 500, 9);
        assert_eq!(a, random_events(50, 500, 9));
        assert!(a.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(a.windows(2).any(|w| w[0].timestamp == w[1].timestamp));
        let s = standard_stream(50, 500, 9).unwrap();
        assert!(s.events.iter().all(|e| e.validate(&s.schema).is_ok()));
    }

    #[test]
    fn chain_shape() {
        let (ev, seed) = chain(3, &[2], 1);
        assert_eq!(seed.as_str(), "c0");
        assert_eq!(ev[0].source.as_str(), "c3");
        assert_eq!(ev[2].destination.as_str(), "c0");
        assert_eq!(ev.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }
}
