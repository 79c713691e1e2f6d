//! Per-edge latency as a function of graph size.
//!
//! Each timed step is one `apply_edge` followed by reading both endpoints'
//! embeddings. Stream generation, bin fitting and node registration happen
//! outside the timed region.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use crate::binning::{fit_from_events, FitOptions};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::synth::{node_name, random_events, standard_schema};
use crate::types::DiscountConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyBench {
    pub node_counts: Vec<usize>,
    /// Timed events per repetition.
    pub events: usize,
    /// Untimed events applied before timing starts.
    pub warmup: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for LatencyBench {
    fn default() -> Self {
        LatencyBench {
            node_counts: vec![1_000, 10_000, 100_000],
            events: 40_000,
            warmup: 5_000,
            repetitions: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub nodes: usize,
    pub events: usize,
    pub repetitions: usize,
    /// Mean per-edge latency over all timed events, nanoseconds.
    pub mean_ns: f64,
    /// Standard deviation of the per-repetition means.
    pub std_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    /// `mean_ns` relative to the first (smallest) graph.
    pub ratio: f64,
}

/// Nearest-rank percentile of ascending samples; NaN when empty.
pub fn percentile(sorted: &[u64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1] as f64
}

impl LatencyBench {
    pub fn validate(&self) -> Result<()> {
        if self.node_counts.is_empty() || self.node_counts.contains(&0) {
            return Err(Error::Config("node counts must be non-empty and positive".into()));
        }
        if self.events == 0 || self.repetitions == 0 {
            return Err(Error::Config("events and repetitions must be positive".into()));
        }
        Ok(())
    }

    /// One row per node count, in the given order.
    pub fn run(&self) -> Result<Vec<LatencyRow>> {
        self.validate()?;
        let mut rows = Vec::with_capacity(self.node_counts.len());
        for &n in &self.node_counts {
            rows.push(self.measure(n)?);
        }
        let base = rows[0].mean_ns;
        for r in &mut rows {
            r.ratio = r.mean_ns / base;
        }
        Ok(rows)
    }

    fn measure(&self, nodes: usize) -> Result<LatencyRow> {
        let schema = standard_schema();
        let events = random_events(nodes, self.warmup + self.events, self.seed ^ nodes as u64);
        let train = &events[..self.warmup.max(1).min(events.len())];
        let binning = fit_from_events(train, &schema, &FitOptions::default())?;
        let config = DiscountConfig::constant(0.5, 0.5, 3600.0);

        let mut samples: Vec<u64> = Vec::with_capacity(self.events * self.repetitions);
        let mut rep_means = Vec::with_capacity(self.repetitions);
        let mut buf = Vec::new();
        for _ in 0..self.repetitions {
            let mut engine = Engine::new(schema.clone(), binning.clone(), config)?;
            engine.reserve(nodes);
            for i in 0..nodes {
                engine.ensure_node(&node_name(i));
            }
            for e in &events[..self.warmup] {
                engine.apply_edge(e)?;
            }
            let start = samples.len();
            for e in &events[self.warmup..] {
                let t0 = Instant::now();
                let up = engine.apply_edge(e)?;
                buf.clear();
                engine.embedding_into(up.source, true, &mut buf);
                engine.embedding_into(up.destination, true, &mut buf);
                black_box(&buf);
                samples.push(t0.elapsed().as_nanos() as u64);
            }
            let rep = &samples[start..];
            rep_means.push(rep.iter().sum::<u64>() as f64 / rep.len() as f64);
        }

        let mean = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
        let rep_avg = rep_means.iter().sum::<f64>() / rep_means.len() as f64;
        let std = if rep_means.len() > 1 {
            (rep_means.iter().map(|m| (m - rep_avg).powi(2)).sum::<f64>() / (rep_means.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        samples.sort_unstable();
        Ok(LatencyRow {
            nodes,
            events: self.events,
            repetitions: self.repetitions,
            mean_ns: mean,
            std_ns: std,
            p50_ns: percentile(&samples, 0.5),
            p99_ns: percentile(&samples, 0.99),
            ratio: 1.0,
        })
    }
}

/// Comma-separated table with a header row.
pub fn write_table(rows: &[LatencyRow], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["nodes", "events", "repetitions", "mean_ns", "std_ns", "p50_ns", "p99_ns", "ratio"])?;
    for r in rows {
        w.write_record([
            r.nodes.to_string(),
            r.events.to_string(),
            r.repetitions.to_string(),
            format!("{:.1}", r.mean_ns),
            format!("{:.1}", r.std_ns),
            format!("{:.0}", r.p50_ns),
            format!("{:.0}", r.p99_ns),
            format!("{:.3}", r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&[7], 0.99), 7.0);
    }

    #[test]
    fn table_shape() {
        let bench = LatencyBench {
            node_counts: vec![50, 200, 400],
            events: 300,
            warmup: 100,
            repetitions: 2,
            seed: 1,
        };
        let rows = bench.run().unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].ratio, 1.0);
        assert!(rows.iter().all(|r| r.mean_ns > 0.0 && r.p99_ns >= r.p50_ns));
        let mut out = Vec::new();
        write_table(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 4);
    }

    #[test]
    fn rejects_empty_sizes() {
        let bench = LatencyBench {
            node_counts: vec![],
            ..LatencyBench::default()
        };
        assert!(bench.run().is_err());
    }
}
