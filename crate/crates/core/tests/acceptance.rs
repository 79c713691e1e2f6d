//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctdg_embed::bench::LatencyBench;
use ctdg_embed::binning::fit_quantile_bins;
use ctdg_embed::engine::update_degree;
use ctdg_embed::io::{restore_engine, snapshot_engine};
use ctdg_embed::oracle::{linear_lookup, max_state_discrepancy};
use ctdg_embed::synth::{random_config, standard_stream};
use ctdg_embed::verify::{
    chain_suite, normalization_suite, replay_suite, sketch_suite, walks_suite, SuiteReport, VerifyOptions,
};
use ctdg_embed::{BinEntry, Engine, Error, FeatureValue, Result};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_reports(reports: &[SuiteReport]) -> Outcome {
    Outcome {
        passed: reports.iter().all(|r| r.passed),
        detail: reports
            .iter()
            .map(|r| format!("{} {:.3e} <= {:.0e}", r.suite, r.max_discrepancy, r.tolerance))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn normalization() -> Result<Outcome> {
    Ok(from_reports(&[normalization_suite(&VerifyOptions::default())?]))
}

fn chains() -> Result<Outcome> {
    Ok(from_reports(&[chain_suite(&VerifyOptions::default())?]))
}

fn replay() -> Result<Outcome> {
    Ok(from_reports(&[replay_suite(&VerifyOptions::default())?]))
}

fn sketch() -> Result<Outcome> {
    Ok(from_reports(&sketch_suite(&VerifyOptions::default())?))
}

fn degrees() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let d = rng.random::<f64>() * 1e3;
        let dt = rng.random::<f64>() * 1e5;
        let tau = 1e-2 + rng.random::<f64>() * 1e5;
        let direct = d * (-dt / tau).exp() + 1.0;
        worst = worst.max((update_degree(d, Some(dt), tau)? - direct).abs());
    }
    let first = (0..100).all(|i| update_degree(i as f64 * 3.7, None, 10.0).map(|v| v == 1.0).unwrap_or(false));
    Ok(Outcome {
        passed: worst <= 1e-12 && first,
        detail: format!("1000 triples, max error {worst:.3e} <= 1e-12; first event gives exactly 1: {first}"),
    })
}

fn walks() -> Result<Outcome> {
    Ok(from_reports(&walks_suite(&VerifyOptions::default())?))
}

fn latency() -> Result<Outcome> {
    let bench = LatencyBench {
        node_counts: vec![1_000, 100_000],
        events: 40_000,
        warmup: 5_000,
        repetitions: 10,
        seed: 42,
    };
    let rows = bench.run()?;
    let ratio = rows[1].ratio;
    Ok(Outcome {
        passed: ratio <= 2.0,
        detail: format!(
            "mean per edge {:.0} ns at 1e3 nodes, {:.0} ns at 1e5 nodes, ratio {ratio:.3} <= 2.0",
            rows[0].mean_ns, rows[1].mean_ns
        ),
    })
}

fn persistence() -> Result<Outcome> {
    let s = standard_stream(100, 1_000, 8)?;
    let config = random_config(&mut ChaCha8Rng::seed_from_u64(8));
    let mut full = Engine::new(s.schema.clone(), s.binning.clone(), config)?;
    for e in &s.events {
        full.apply_edge(e)?;
    }
    let want = full.states().into_iter().collect();

    let dir = tempfile::tempdir().map_err(Error::Write)?;
    let path = dir.path().join("snapshot.json");
    let mut worst: f64 = 0.0;
    for split in (0..=s.events.len()).step_by(100) {
        let mut first = Engine::new(s.schema.clone(), s.binning.clone(), config)?;
        for e in &s.events[..split] {
            first.apply_edge(e)?;
        }
        snapshot_engine(&first, &path)?;
        let mut resumed = restore_engine(&path, &s.schema, &s.binning, &config, 0.0)?;
        for e in &s.events[split..] {
            resumed.apply_edge(e)?;
        }
        worst = worst.max(max_state_discrepancy(&resumed.states(), &want));
    }

    let text = fs::read_to_string(&path).map_err(Error::Write)?;
    let start = text.find("\"config_hash\":\"").expect("manifest has a config hash") + 15;
    let mut tampered = text.clone();
    let flipped = if &text[start..start + 1] == "0" { "1" } else { "0" };
    tampered.replace_range(start..start + 1, flipped);
    fs::write(&path, tampered).map_err(Error::Write)?;
    let refused = matches!(
        restore_engine(&path, &s.schema, &s.binning, &config, 0.0),
        Err(Error::SnapshotMismatch { what: "config hash", .. })
    );
    Ok(Outcome {
        passed: worst <= 1e-12 && refused,
        detail: format!("11 split points, max discrepancy {worst:.3e} <= 1e-12; tampered config hash refused: {refused}"),
    })
}

fn lookup() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let n_cuts = rng.random_range(0..12);
        let mut cuts: Vec<f64> = (0..n_cuts).map(|_| (rng.random::<f64>() * 20.0).round() / 2.0).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let v = if !cuts.is_empty() && rng.random::<bool>() {
            cuts[rng.random_range(0..cuts.len())]
        } else {
            rng.random::<f64>() * 12.0 - 1.0
        };
        let entry = BinEntry::Numerical { cut_points: cuts };
        let value = FeatureValue::Num(v);
        if entry.lookup(&value)? != linear_lookup(&entry, &value)? {
            mismatches += 1;
        }
    }
    let values: Vec<f64> = (1..=10).map(f64::from).collect();
    let fitted = fit_quantile_bins(&values, 5)?;
    let hand = fitted
        == BinEntry::Numerical {
            cut_points: vec![2.0, 4.0, 6.0, 8.0],
        };
    Ok(Outcome {
        passed: mismatches == 0 && hand,
        detail: format!("100000 pairs, {mismatches} mismatches; 1..10 in 5 bins gives [2, 4, 6, 8]: {hand}"),
    })
}

type Criterion = (u32, &'static str, Duration, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "histogram normalization", Duration::from_secs(30), normalization),
        (2, "chain equivalence", Duration::from_secs(5), chains),
        (3, "replay regression", Duration::from_secs(60), replay),
        (4, "sketch linearity", Duration::MAX, sketch),
        (5, "degree decay closed form", Duration::MAX, degrees),
        (6, "walk sampler consistency", Duration::from_secs(60), walks),
        (7, "constant per-edge latency", Duration::from_secs(300), latency),
        (8, "persistence determinism", Duration::MAX, persistence),
        (9, "bin lookup oracle", Duration::MAX, lookup),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(o) => (o.passed && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" (limit {}s)", budget.as_secs())
        };
        println!(
            "{} criterion {id} {name}: {detail}; {:.2}s{limit}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !passed {
            failed += 1;
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
