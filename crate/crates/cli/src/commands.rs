use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::json;

use ctdg_embed::bench::{percentile, write_table, LatencyBench};
use ctdg_embed::binning::fit_from_events;
use ctdg_embed::io::{
    read_all, read_binning, read_edge_stream, read_manifest, restore_engine, restore_sketch, snapshot_engine,
    snapshot_sketch, spawn_reader, write_binning, EmbeddingWriter, EmitMode, RecordKind, RunConfig, StoreKind,
};
use ctdg_embed::oracle::{approximation_report, write_report};
use ctdg_embed::synth::standard_stream;
use ctdg_embed::verify::{run_suite, Suite, SuiteReport, VerifyOptions};
use ctdg_embed::{
    BinEntry, BinningSpec, DiscountConfig, EdgeUpdate, EmbeddingLayout, Engine, FitOptions, HashPlanes, NodeId,
    NodeSlot, SketchEngine,
};

use crate::{BenchArgs, Emit, FitBinsArgs, RunArgs, SuiteArg, VerifyArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn fit_bins(args: FitBinsArgs) -> Result<ExitCode> {
    let config = RunConfig::load(&args.config)?;
    let events = read_all(&args.stream, &config.schema, config.tolerance)?;
    let train = match (args.train_fraction, args.cutoff) {
        (_, Some(cutoff)) => events.partition_point(|e| e.timestamp < cutoff),
        (fraction, None) => {
            let f = fraction.unwrap_or(1.0);
            if !(f > 0.0 && f <= 1.0) {
                bail!("train fraction {f} must be in (0, 1]");
            }
            (events.len() as f64 * f).floor() as usize
        }
    };
    if train == 0 {
        bail!("training prefix of {} is empty", args.stream.display());
    }
    let opts = FitOptions {
        n_bins: args.n_bins,
        max_categories: args.max_categories,
        degree_timescale: config.discounts.degree_timescale,
    };
    let spec = fit_from_events(&events[..train], &config.schema, &opts)?;
    write_binning(&args.out, &spec)?;

    println!("fitted bins on {train} of {} events", events.len());
    for f in &spec.features {
        let n = f.bins.bin_count();
        let kind = match f.bins {
            BinEntry::Numerical { .. } => "quantile",
            BinEntry::Categorical { .. } => "categorical",
        };
        println!("  {}: {n} bins ({kind})", f.name);
        if n == 1 {
            eprintln!("warning: feature `{}` collapsed to a single bin and carries no information", f.name);
        }
    }
    let bins: serde_json::Map<String, serde_json::Value> =
        spec.features.iter().map(|f| (f.name.clone(), json!(f.bins.bin_count()))).collect();
    println!(
        "{}",
        json!({"command": "fit-bins", "train_events": train, "total_events": events.len(), "bins": bins, "out": args.out})
    );
    Ok(ExitCode::SUCCESS)
}

enum Store {
    Hist(Engine),
    Sketch(SketchEngine),
}

impl Store {
    fn apply(&mut self, e: &ctdg_embed::EdgeEvent) -> ctdg_embed::Result<EdgeUpdate> {
        match self {
            Store::Hist(s) => s.apply_edge(e),
            Store::Sketch(s) => s.apply_edge(e),
        }
    }

    fn embedding_into(&self, slot: NodeSlot, append_degrees: bool, out: &mut Vec<f64>) {
        match self {
            Store::Hist(s) => s.embedding_into(slot, append_degrees, out),
            Store::Sketch(s) => s.embedding_into(slot, append_degrees, out),
        }
    }

    fn layout(&self, append_degrees: bool) -> Arc<EmbeddingLayout> {
        match self {
            Store::Hist(s) => s.layout().embedding_layout(append_degrees).clone(),
            Store::Sketch(s) => s.embedding_layout(append_degrees).clone(),
        }
    }

    fn id_at(&self, slot: NodeSlot) -> &NodeId {
        match self {
            Store::Hist(s) => s.id_at(slot),
            Store::Sketch(s) => s.id_at(slot),
        }
    }

    fn node_count(&self) -> usize {
        match self {
            Store::Hist(s) => s.node_count(),
            Store::Sketch(s) => s.node_count(),
        }
    }

    fn events_applied(&self) -> u64 {
        match self {
            Store::Hist(s) => s.events_applied(),
            Store::Sketch(s) => s.events_applied(),
        }
    }

    fn snapshot(&self, path: &Path) -> ctdg_embed::Result<()> {
        match self {
            Store::Hist(s) => snapshot_engine(s, path).map(drop),
            Store::Sketch(s) => snapshot_sketch(s, path).map(drop),
        }
    }
}

fn binning_for(args: &RunArgs, config: &RunConfig) -> Result<BinningSpec> {
    let spec = match (&args.bins, &config.binning) {
        (Some(path), _) => read_binning(path)?,
        (None, Some(spec)) => spec.clone(),
        (None, None) => bail!("no bins: pass --bins or embed a binning table in the config"),
    };
    spec.validate_against(&config.schema)?;
    Ok(spec)
}

fn open_store(args: &RunArgs, config: &RunConfig, binning: BinningSpec) -> Result<Store> {
    let sketch = args.sketch || config.sketch.enabled;
    let k = args.k.unwrap_or(config.sketch.k);
    let seed = args.seed.unwrap_or(config.sketch.seed);
    let planes = || -> Result<Arc<HashPlanes>> {
        let dim = ctdg_embed::Layout::new(&config.schema, &binning)?.dim();
        Ok(Arc::new(HashPlanes::new(k, dim, seed)?))
    };
    let (schema, discounts, tol) = (&config.schema, &config.discounts, config.tolerance);
    let store = match &args.resume_from {
        Some(path) => {
            let manifest = read_manifest(path)?;
            match (manifest.store, sketch) {
                (StoreKind::Histogram, false) => Store::Hist(restore_engine(path, schema, &binning, discounts, tol)?),
                (StoreKind::Sketch, true) => {
                    Store::Sketch(restore_sketch(path, schema, &binning, discounts, tol, planes()?)?)
                }
                (kind, _) => bail!(
                    "snapshot {} holds a {kind:?} store but this run uses a {} store",
                    path.display(),
                    if sketch { "sketch" } else { "histogram" }
                ),
            }
        }
        None if sketch => Store::Sketch(
            SketchEngine::new(schema.clone(), binning.clone(), *discounts, planes()?)?.with_tolerance(tol)?,
        ),
        None => Store::Hist(Engine::new(schema.clone(), binning, *discounts)?.with_tolerance(tol)?),
    };
    Ok(store)
}

pub fn run(args: RunArgs) -> Result<ExitCode> {
    let config = RunConfig::load(&args.config)?;
    let binning = binning_for(&args, &config)?;
    let emit = match args.emit {
        Some(Emit::PerEvent) => EmitMode::PerEvent,
        Some(Emit::Final) => EmitMode::Final,
        None => config.embedding.emit,
    };
    let pair = args.pair_embeddings || config.embedding.pair;
    let degrees = args.append_degrees || config.embedding.append_degrees;
    let mut store = open_store(&args, &config, binning)?;
    let resumed_at = store.events_applied();

    let layout = store.layout(degrees);
    let (kind, out_layout) = match (emit, pair) {
        (EmitMode::Final, _) => (RecordKind::Node, (*layout).clone()),
        (EmitMode::PerEvent, true) => (RecordKind::Event, layout.pair()),
        (EmitMode::PerEvent, false) => (RecordKind::EventNode, (*layout).clone()),
    };
    let mut writer = EmbeddingWriter::new(create(&args.out)?, kind, &out_layout)?;

    let reader = read_edge_stream(&args.stream, &config.schema, config.tolerance)?;
    let (rx, handle) = spawn_reader(reader, 4096);
    let start = Instant::now();
    let mut latencies = Vec::new();
    let mut buf = Vec::new();
    for event in rx {
        let event = event?;
        let t0 = Instant::now();
        let up = store
            .apply(&event)
            .with_context(|| format!("event {} ({} -> {})", store.events_applied(), event.source, event.destination))?;
        latencies.push(t0.elapsed().as_nanos() as u64);
        if emit == EmitMode::PerEvent {
            let index = store.events_applied() - 1;
            buf.clear();
            if pair {
                store.embedding_into(up.source, degrees, &mut buf);
                store.embedding_into(up.destination, degrees, &mut buf);
                writer.write_event(index, &event.source, &event.destination, &buf)?;
            } else {
                store.embedding_into(up.source, degrees, &mut buf);
                writer.write_event_node(index, &event.source, &buf)?;
                if up.destination != up.source {
                    buf.clear();
                    store.embedding_into(up.destination, degrees, &mut buf);
                    writer.write_event_node(index, &event.destination, &buf)?;
                }
            }
        }
    }
    handle.join().map_err(|_| anyhow::anyhow!("stream reader panicked"))?;
    if emit == EmitMode::Final {
        for s in 0..store.node_count() {
            buf.clear();
            store.embedding_into(NodeSlot(s), degrees, &mut buf);
            writer.write_node(store.id_at(NodeSlot(s)), &buf)?;
        }
    }
    let rows = writer.finish()?;
    let wall = start.elapsed().as_secs_f64();
    if let Some(path) = &args.snapshot_out {
        store.snapshot(path)?;
    }

    latencies.sort_unstable();
    let events = latencies.len();
    let (p50, p99) = (percentile(&latencies, 0.5), percentile(&latencies, 0.99));
    println!(
        "applied {events} events ({} total) over {} nodes in {wall:.3}s; per-edge p50 {p50:.0} ns, p99 {p99:.0} ns; wrote {rows} rows to {}",
        store.events_applied(),
        store.node_count(),
        args.out.display()
    );
    let opt = |v: f64| if v.is_nan() { serde_json::Value::Null } else { json!(v) };
    println!(
        "{}",
        json!({
            "command": "run",
            "events": events,
            "resumed_from_events": resumed_at,
            "nodes": store.node_count(),
            "rows": rows,
            "wall_seconds": wall,
            "p50_ns": opt(p50),
            "p99_ns": opt(p99),
            "store": match store { Store::Hist(_) => "histogram", Store::Sketch(_) => "sketch" },
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn write_suite_table(reports: &[SuiteReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["suite", "passed", "max_discrepancy", "tolerance", "detail"])?;
    for r in reports {
        w.write_record([
            r.suite.as_str(),
            if r.passed { "true" } else { "false" },
            &format!("{:e}", r.max_discrepancy),
            &format!("{:e}", r.tolerance),
            &r.detail,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let suite = match args.suite {
        SuiteArg::Chain => Suite::Chain,
        SuiteArg::Replay => Suite::Replay,
        SuiteArg::Sketch => Suite::Sketch,
        SuiteArg::Walks => Suite::Walks,
        SuiteArg::Normalization => Suite::Normalization,
        SuiteArg::All => Suite::All,
    };
    let opts = VerifyOptions {
        seed: args.seed,
        chain_max_len: args.chain_max_len,
        replay_nodes: args.replay_nodes,
        replay_events: args.replay_events,
        checkpoints: args.checkpoints,
        sketch_events: args.sketch_events,
        sketch_k: args.sketch_k,
        star_walks: args.walks,
        normalization_nodes: args.normalization_nodes,
        normalization_events: args.normalization_events,
        ..VerifyOptions::default()
    };
    let reports = run_suite(suite, &opts)?;
    for r in &reports {
        println!("{r}");
    }
    if let Some(path) = &args.report {
        write_suite_table(&reports, path)?;
    }

    let mut approx = serde_json::Value::Null;
    if matches!(suite, Suite::Walks | Suite::All) {
        let s = standard_stream(30, 300, args.seed)?;
        let config = DiscountConfig::constant(0.5, 0.0, 3600.0);
        let rows = approximation_report(&s.events, &s.schema, &s.binning, &config, 2_000, 16, args.seed)?;
        let mean_l1 = rows.iter().map(|r| r.l1).sum::<f64>() / rows.len().max(1) as f64;
        let max_l1 = rows.iter().map(|r| r.l1).fold(0.0, f64::max);
        println!(
            "engine vs sampled walks on a 30-node graph: mean L1 {mean_l1:.4}, max L1 {max_l1:.4} over {} nodes",
            rows.len()
        );
        if let Some(path) = &args.approximation_out {
            write_report(&rows, create(path)?)?;
        }
        approx = json!({"nodes": rows.len(), "mean_l1": mean_l1, "max_l1": max_l1});
    }

    let passed = reports.iter().all(|r| r.passed);
    let suites: Vec<_> = reports
        .iter()
        .map(|r| json!({"suite": r.suite, "passed": r.passed, "max_discrepancy": r.max_discrepancy, "tolerance": r.tolerance}))
        .collect();
    println!("{}", json!({"command": "verify", "passed": passed, "suites": suites, "approximation": approx}));
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub fn bench(args: BenchArgs) -> Result<ExitCode> {
    let bench = LatencyBench {
        node_counts: args.sizes,
        events: args.events,
        warmup: args.warmup,
        repetitions: args.repetitions,
        seed: args.seed,
    };
    let rows = bench.run()?;
    let mut stdout = std::io::stdout().lock();
    write_table(&rows, &mut stdout)?;
    if let Some(path) = &args.out {
        write_table(&rows, create(path)?)?;
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let table: Vec<_> = rows
        .iter()
        .map(|r| json!({"nodes": r.nodes, "mean_ns": r.mean_ns, "p50_ns": r.p50_ns, "p99_ns": r.p99_ns, "ratio": r.ratio}))
        .collect();
    writeln!(stdout, "{}", json!({"command": "bench", "rows": table, "max_ratio": max_ratio}))?;
    Ok(ExitCode::SUCCESS)
}
