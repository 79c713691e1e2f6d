use std::collections::HashSet;

use crate::binning::BinningSpec;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::types::{DiscountConfig, EdgeEvent, FeatureSchema, NodeId};

use super::{linear_lookup, one_hot};

/// `sum_{i<k} alpha^i (1 - alpha) delta_i + alpha^k tail`, with `k` the number
/// of path indicators (newest first).
pub fn truncated_sum(path_deltas: &[Vec<f64>], alpha: f64, tail: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(d) = path_deltas.iter().find(|d| d.len() != tail.len()) {
        return Err(Error::Structural(format!(
            "indicator of length {} does not match tail of length {}",
            d.len(),
            tail.len()
        )));
    }
    let mut out = vec![0.0; tail.len()];
    let mut weight = 1.0;
    for delta in path_deltas {
        for (o, d) in out.iter_mut().zip(delta) {
            *o += weight * (1.0 - alpha) * d;
        }
        weight *= alpha;
    }
    for (o, t) in out.iter_mut().zip(tail) {
        *o += weight * t;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub seed: NodeId,
    pub length: usize,
    pub max_discrepancy: f64,
}

/// Returns the seed node (newest end) of a temporal chain, or a precondition
/// error if `events` are not one.
fn chain_seed(events: &[EdgeEvent]) -> Result<NodeId> {
    let not_chain = |why: String| Err(Error::Precondition(format!("not a temporal chain: {why}")));
    let Some(last) = events.last() else {
        return not_chain("no events".into());
    };
    if let Some((i, _)) = events.iter().enumerate().find(|(_, e)| e.is_self_loop()) {
        return not_chain(format!("event {i} is a self-loop"));
    }
    if let Some(i) = (1..events.len()).find(|&i| events[i].timestamp <= events[i - 1].timestamp) {
        return not_chain(format!("event {i} is not strictly newer than event {}", i - 1));
    }
    let mut nodes = HashSet::new();
    for e in events {
        nodes.insert(&e.source);
        nodes.insert(&e.destination);
    }
    if nodes.len() != events.len() + 1 {
        return not_chain(format!("{} events touch {} distinct nodes", events.len(), nodes.len()));
    }
    let mut links: Vec<&NodeId> = Vec::with_capacity(events.len());
    for i in 1..events.len() {
        let (a, b) = (&events[i - 1], &events[i]);
        let shared: Vec<&NodeId> = [&a.source, &a.destination]
            .into_iter()
            .filter(|n| **n == b.source || **n == b.destination)
            .collect();
        if shared.len() != 1 {
            return not_chain(format!("events {} and {i} share {} nodes", i - 1, shared.len()));
        }
        if links.last() == Some(&shared[0]) {
            return not_chain(format!("node `{}` has more than one older neighbour", shared[0]));
        }
        links.push(shared[0]);
    }
    if events.len() == 1 {
        return Ok(last.destination.clone());
    }
    let prev = &events[events.len() - 2];
    let seed = if last.source == prev.source || last.source == prev.destination {
        &last.destination
    } else {
        &last.source
    };
    Ok(seed.clone())
}

/// Runs the engine with `beta = 0` over a temporal chain and compares the
/// seed node's histograms with the truncated discounted sum along the chain,
/// terminated by the uniform initial histogram.
pub fn chain_equivalence(
    events: &[EdgeEvent],
    alpha: f64,
    schema: &FeatureSchema,
    binning: &BinningSpec,
) -> Result<ChainReport> {
    if schema.has_derived() {
        return Err(Error::Precondition(
            "chain equivalence is defined for edge features only".into(),
        ));
    }
    let seed = chain_seed(events)?;
    let mut engine = Engine::new(schema.clone(), binning.clone(), DiscountConfig::constant(alpha, 0.0, 1.0))?;
    for e in events {
        engine.apply_edge(e)?;
    }
    let state = engine.node_state(seed.as_str())?;

    let mut max_discrepancy: f64 = 0.0;
    for (f, fb) in binning.features.iter().enumerate() {
        let len = fb.bins.bin_count();
        let deltas = events
            .iter()
            .rev()
            .map(|e| Ok(one_hot(len, linear_lookup(&fb.bins, &e.values[f])?)))
            .collect::<Result<Vec<_>>>()?;
        let expected = truncated_sum(&deltas, alpha, &vec![1.0 / len as f64; len])?;
        for (x, y) in state.histograms.feature(f).iter().zip(&expected) {
            max_discrepancy = max_discrepancy.max((x - y).abs());
        }
    }
    Ok(ChainReport {
        seed,
        length: events.len(),
        max_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{chain, integer_bins_schema};
    use crate::types::FeatureValue;

    #[test]
    fn empty_path_returns_tail() {
        assert_eq!(truncated_sum(&[], 0.3, &[0.2, 0.8]).unwrap(), vec![0.2, 0.8]);
    }

    #[test]
    fn two_step_hand_value() {
        let out = truncated_sum(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.5, &[0.5, 0.5]).unwrap();
        assert_eq!(out, vec![0.625, 0.375]);
    }

    #[test]
    fn alpha_zero_keeps_first_indicator() {
        let out = truncated_sum(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]], 0.0, &[0.1, 0.1, 0.8]).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            truncated_sum(&[vec![1.0]], 0.5, &[0.5, 0.5]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn single_edge_chain() {
        let (schema, binning) = integer_bins_schema(&[3]);
        let (events, seed) = chain(1, &[3], 4);
        let report = chain_equivalence(&events, 0.4, &schema, &binning).unwrap();
        assert_eq!(report.seed, seed);
        assert!(report.max_discrepancy <= 1e-15);
    }

    #[test]
    fn long_chains_match() {
        let (schema, binning) = integer_bins_schema(&[4, 3]);
        for alpha in [0.0, 0.3, 0.5, 0.9, 1.0] {
            let (events, seed) = chain(20, &[4, 3], 77);
            let report = chain_equivalence(&events, alpha, &schema, &binning).unwrap();
            assert_eq!(report.seed, seed);
            assert!(report.max_discrepancy <= 1e-12, "alpha {alpha}: {}", report.max_discrepancy);
        }
    }

    #[test]
    fn seed_found_regardless_of_direction() {
        let (schema, binning) = integer_bins_schema(&[2]);
        let v = || vec![FeatureValue::Num(0.5)];
        let events = vec![
            EdgeEvent::new("x", "y", 1.0, v()),
            EdgeEvent::new("z", "y", 2.0, v()),
        ];
        let report = chain_equivalence(&events, 0.5, &schema, &binning).unwrap();
        assert_eq!(report.seed.as_str(), "z");
    }

    #[test]
    fn rejects_non_chains() {
        let (schema, binning) = integer_bins_schema(&[2]);
        let v = || vec![FeatureValue::Num(0.5)];
        let star = vec![
            EdgeEvent::new("a", "h", 1.0, v()),
            EdgeEvent::new("b", "h", 2.0, v()),
            EdgeEvent::new("c", "h", 3.0, v()),
        ];
        assert!(matches!(
            chain_equivalence(&star, 0.5, &schema, &binning),
            Err(Error::Precondition(_))
        ));
        let unordered = vec![EdgeEvent::new("a", "b", 2.0, v()), EdgeEvent::new("b", "c", 1.0, v())];
        assert!(chain_equivalence(&unordered, 0.5, &schema, &binning).is_err());
        assert!(chain_equivalence(&[], 0.5, &schema, &binning).is_err());
    }
}
