use std::collections::{BTreeMap, HashMap};

use crate::binning::BinningSpec;
use crate::error::{Error, Result};
use crate::types::{
    Activity, DiscountConfig, DiscountMode, EdgeEvent, FeatureSchema, FeatureSource, FeatureValue,
    HistogramSet,
    NodeId, NodeState,
};

use super::{linear_lookup, one_hot};

/// Node state as the naive replay keeps it: one owned vector per feature.
#[derive(Debug, Clone)]
struct NaiveNode {
    histograms: Vec<Vec<f64>>,
    in_degree: f64,
    out_degree: f64,
    last_any: Option<f64>,
    last_in: Option<f64>,
    last_out: Option<f64>,
}

impl NaiveNode {
    fn fresh(bin_counts: &[usize]) -> Self {
        NaiveNode {
            histograms: bin_counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect(),
            in_degree: 0.0,
            out_degree: 0.0,
            last_any: None,
            last_in: None,
            last_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCheckpoint {
    /// Number of events applied.
    pub events: usize,
    pub nodes: BTreeMap<NodeId, NodeState>,
}

fn discount(mode: &DiscountMode, last: Option<f64>, now: f64) -> f64 {
    match (mode, last) {
        (DiscountMode::Constant { value }, _) => *value,
        (DiscountMode::ExpTimeDecay { .. }, None) => 0.0,
        (DiscountMode::ExpTimeDecay { timescale }, Some(l)) => {
            let dt = if now > l { now - l } else { 0.0 };
            (-dt / timescale).exp()
        }
    }
}

/// Decayed counter at `now`, optionally including one new event.
fn counter(value: f64, last: Option<f64>, now: f64, timescale: f64, add_one: bool) -> f64 {
    let decayed = match last {
        None => 0.0,
        Some(l) => {
            let dt = if now > l { now - l } else { 0.0 };
            value * (-dt / timescale).exp()
        }
    };
    if add_one {
        decayed + 1.0
    } else {
        decayed
    }
}

struct Replayer<'a> {
    schema: &'a FeatureSchema,
    binning: &'a BinningSpec,
    config: &'a DiscountConfig,
    bin_counts: Vec<usize>,
}

impl Replayer<'_> {
    /// New state for `node` after an event, given its own and its
    /// neighbour's states before the event.
    fn updated(
        &self,
        node: &NaiveNode,
        neighbor: &NaiveNode,
        event: &EdgeEvent,
        outgoing: bool,
        incoming: bool,
    ) -> Result<NaiveNode> {
        let now = event.timestamp;
        let tau = self.config.degree_timescale;
        let in_degree = counter(node.in_degree, node.last_in, now, tau, incoming);
        let out_degree = counter(node.out_degree, node.last_out, now, tau, outgoing);
        let time_delta = node.last_any.map(|l| if now > l { now - l } else { 0.0 });
        let alpha = discount(&self.config.alpha, node.last_any, now);
        let beta = discount(&self.config.beta, node.last_any, now);

        let mut histograms = Vec::new();
        let mut edge_col = 0;
        for (f, def) in self.schema.features.iter().enumerate() {
            let entry = &self.binning.features[f].bins;
            let len = self.bin_counts[f];
            let bin = match def.source {
                FeatureSource::Edge => {
                    edge_col += 1;
                    linear_lookup(entry, &event.values[edge_col - 1])?
                }
                FeatureSource::DerivedInDegree => linear_lookup(entry, &FeatureValue::Num(in_degree))?,
                FeatureSource::DerivedOutDegree => linear_lookup(entry, &FeatureValue::Num(out_degree))?,
                FeatureSource::DerivedTimeDelta => match time_delta {
                    Some(dt) => linear_lookup(entry, &FeatureValue::Num(dt))?,
                    None => len - 1,
                },
            };
            let delta = one_hot(len, bin);
            let own = &node.histograms[f];
            let other = &neighbor.histograms[f];
            let mut h = Vec::new();
            for j in 0..len {
                h.push(beta * own[j] + (1.0 - beta) * (alpha * other[j] + (1.0 - alpha) * delta[j]));
            }
            histograms.push(h);
        }

        let later = |t: Option<f64>| Some(match t {
            Some(t) if t > now => t,
            _ => now,
        });
        Ok(NaiveNode {
            histograms,
            in_degree: if incoming { in_degree } else { node.in_degree },
            out_degree: if outgoing { out_degree } else { node.out_degree },
            last_any: later(node.last_any),
            last_in: if incoming { later(node.last_in) } else { node.last_in },
            last_out: if outgoing { later(node.last_out) } else { node.last_out },
        })
    }

    fn run(&self, events: &[EdgeEvent], tolerance: f64) -> Result<BTreeMap<NodeId, NaiveNode>> {
        let mut nodes: BTreeMap<NodeId, NaiveNode> = BTreeMap::new();
        let mut latest: Option<f64> = None;
        for (i, e) in events.iter().enumerate() {
            e.validate(self.schema)?;
            if let Some(p) = latest {
                if e.timestamp < p - tolerance {
                    return Err(Error::OrderedStream {
                        event_index: i as u64,
                        timestamp: e.timestamp,
                        previous: p,
                        tolerance,
                    });
                }
            }
            latest = Some(latest.map_or(e.timestamp, |p: f64| p.max(e.timestamp)));

            let fresh = NaiveNode::fresh(&self.bin_counts);
            let src = nodes.get(&e.source).cloned().unwrap_or_else(|| fresh.clone());
            let dst = nodes.get(&e.destination).cloned().unwrap_or(fresh);
            if e.is_self_loop() {
                let new = self.updated(&src, &src, e, true, true)?;
                nodes.insert(e.source.clone(), new);
            } else {
                let new_src = self.updated(&src, &dst, e, true, false)?;
                let new_dst = self.updated(&dst, &src, e, false, true)?;
                nodes.insert(e.source.clone(), new_src);
                nodes.insert(e.destination.clone(), new_dst);
            }
        }
        Ok(nodes)
    }
}

fn to_state(node: NaiveNode) -> Result<NodeState> {
    Ok(NodeState {
        histograms: HistogramSet::from_features(&node.histograms)?,
        activity: Activity {
            in_degree: node.in_degree,
            out_degree: node.out_degree,
            last_any_event_time: node.last_any,
            last_in_event_time: node.last_in,
            last_out_event_time: node.last_out,
        },
    })
}

/// Recomputes every node's state from scratch for each checkpoint prefix
/// `events[..checkpoint]`.
pub fn naive_replay(
    events: &[EdgeEvent],
    schema: &FeatureSchema,
    binning: &BinningSpec,
    config: &DiscountConfig,
    tolerance: f64,
    checkpoints: &[usize],
) -> Result<Vec<ReplayCheckpoint>> {
    schema.validate()?;
    binning.validate_against(schema)?;
    config.validate()?;
    let replayer = Replayer {
        schema,
        binning,
        config,
        bin_counts: binning.bin_counts(),
    };
    checkpoints
        .iter()
        .map(|&c| {
            if c > events.len() {
                return Err(Error::Precondition(format!(
                    "checkpoint {c} beyond the {} available events",
                    events.len()
                )));
            }
            let nodes = replayer
                .run(&events[..c], tolerance)?
                .into_iter()
                .map(|(id, n)| Ok((id, to_state(n)?)))
                .collect::<Result<_>>()?;
            Ok(ReplayCheckpoint { events: c, nodes })
        })
        .collect()
}

/// Largest absolute difference over histogram entries, degrees and
/// timestamps. Differing node sets or timestamp presence is infinite.
pub fn max_state_discrepancy(
    actual: &[(NodeId, NodeState)],
    expected: &BTreeMap<NodeId, NodeState>,
) -> f64 {
    if actual.len() != expected.len() {
        return f64::INFINITY;
    }
    let by_id: HashMap<&NodeId, &NodeState> = actual.iter().map(|(id, s)| (id, s)).collect();
    let mut worst: f64 = 0.0;
    for (id, want) in expected {
        let Some(got) = by_id.get(id) else {
            return f64::INFINITY;
        };
        if !got.histograms.same_shape(&want.histograms) {
            return f64::INFINITY;
        }
        for (a, b) in got.histograms.as_flat().iter().zip(want.histograms.as_flat()) {
            worst = worst.max((a - b).abs());
        }
        let (ga, wa) = (&got.activity, &want.activity);
        worst = worst
            .max((ga.in_degree - wa.in_degree).abs())
            .max((ga.out_degree - wa.out_degree).abs());
        for (x, y) in [
            (ga.last_any_event_time, wa.last_any_event_time),
            (ga.last_in_event_time, wa.last_in_event_time),
            (ga.last_out_event_time, wa.last_out_event_time),
        ] {
            match (x, y) {
                (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}
