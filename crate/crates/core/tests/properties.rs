use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctdg_embed::engine::update_degree;
use ctdg_embed::io::{read_all, restore_engine, snapshot_engine, write_edge_stream};
use ctdg_embed::oracle::max_state_discrepancy;
use ctdg_embed::sketch::project;
use ctdg_embed::synth::{random_config, standard_stream};
use ctdg_embed::{EdgeEvent, Engine, HashPlanes, NodeId, NodeState, SketchEngine};

fn run(events: &[EdgeEvent], s: &ctdg_embed::synth::SyntheticStream, cfg_seed: u64) -> Engine {
    let config = random_config(&mut ChaCha8Rng::seed_from_u64(cfg_seed));
    let mut engine = Engine::new(s.schema.clone(), s.binning.clone(), config).unwrap();
    for e in events {
        engine.apply_edge(e).unwrap();
    }
    engine
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn histograms_stay_normalized(nodes in 2usize..40, events in 1usize..400, seed in any::<u64>(), cfg in any::<u64>()) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let engine = run(&s.events, &s, cfg);
        for (id, state) in engine.states() {
            prop_assert!(state.histograms.max_normalization_error() <= 1e-9, "node {id}");
            prop_assert!(state.histograms.as_flat().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            prop_assert!(state.in_degree() >= 0.0 && state.out_degree() >= 0.0);
        }
    }

    #[test]
    fn replays_are_bitwise_deterministic(nodes in 2usize..30, events in 1usize..300, seed in any::<u64>(), cfg in any::<u64>()) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let a = run(&s.events, &s, cfg).states();
        let b = run(&s.events, &s, cfg).states();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabeling_nodes_permutes_states(nodes in 2usize..30, events in 1usize..300, seed in any::<u64>(), cfg in any::<u64>()) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let rename = |id: &NodeId| NodeId(format!("x-{}", id.as_str().chars().rev().collect::<String>()));
        let renamed: Vec<EdgeEvent> = s
            .events
            .iter()
            .map(|e| EdgeEvent { source: rename(&e.source), destination: rename(&e.destination), ..e.clone() })
            .collect();
        let want: BTreeMap<NodeId, NodeState> =
            run(&s.events, &s, cfg).states().into_iter().map(|(id, st)| (rename(&id), st)).collect();
        let got = run(&renamed, &s, cfg).states();
        prop_assert_eq!(max_state_discrepancy(&got, &want), 0.0);
    }

    #[test]
    fn reversing_edges_swaps_degrees(nodes in 2usize..20, events in 1usize..200, seed in any::<u64>(), cfg in any::<u64>()) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let mut reversed = s.events.clone();
        for e in &mut reversed {
            std::mem::swap(&mut e.source, &mut e.destination);
        }
        let fwd = run(&s.events, &s, cfg);
        let rev = run(&reversed, &s, cfg);
        for (id, st) in fwd.states() {
            let other = rev.node_state(id.as_str()).unwrap();
            prop_assert_eq!(st.in_degree(), other.out_degree());
            prop_assert_eq!(st.out_degree(), other.in_degree());
        }
    }

    #[test]
    fn sketch_tracks_projected_histograms(nodes in 2usize..30, events in 1usize..300, seed in any::<u64>(), cfg in any::<u64>(), k in 1usize..24) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let engine = run(&s.events, &s, cfg);
        let planes = Arc::new(HashPlanes::new(k, engine.layout().dim(), seed ^ 0x5eed).unwrap());
        let mut sketch = SketchEngine::new(s.schema.clone(), s.binning.clone(), *engine.config(), planes.clone()).unwrap();
        for e in &s.events {
            sketch.apply_edge(e).unwrap();
        }
        for (id, st) in engine.states() {
            let want = project(st.histograms.as_flat(), &planes).unwrap();
            let got = sketch.sketch_state(id.as_str()).unwrap();
            let worst = want.iter().zip(&got.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(worst <= 1e-9, "node {id}: {worst}");
            prop_assert_eq!(got.activity, st.activity);
            prop_assert!(got.within_bounds(sketch.feature_count()));
        }
    }

    #[test]
    fn resume_at_any_split_is_exact(nodes in 2usize..30, events in 1usize..300, seed in any::<u64>(), cfg in any::<u64>(), split in 0.0f64..=1.0) {
        let s = standard_stream(nodes, events, seed).unwrap();
        let cut = (split * s.events.len() as f64) as usize;
        let full = run(&s.events, &s, cfg);
        let first = run(&s.events[..cut], &s, cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        snapshot_engine(&first, &path).unwrap();
        let mut resumed = restore_engine(&path, &s.schema, &s.binning, first.config(), 0.0).unwrap();
        for e in &s.events[cut..] {
            resumed.apply_edge(e).unwrap();
        }
        prop_assert_eq!(resumed.states(), full.states());
        prop_assert_eq!(resumed.events_applied(), full.events_applied());
    }

    #[test]
    fn edge_streams_round_trip(nodes in 1usize..30, events in 0usize..200, seed in any::<u64>(), json in any::<bool>()) {
        let s = standard_stream(nodes, events.max(1), seed).unwrap();
        let evs = &s.events[..events];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if json { "s.jsonl" } else { "s.csv" });
        write_edge_stream(&path, &s.schema, evs).unwrap();
        prop_assert_eq!(read_all(&path, &s.schema, 0.0).unwrap(), evs.to_vec());
    }

    #[test]
    fn degree_counter_matches_closed_form(d in 0.0f64..1e4, dt in 0.0f64..1e6, tau in 1e-3f64..1e6) {
        let direct = d * (-dt / tau).exp() + 1.0;
        prop_assert!((update_degree(d, Some(dt), tau).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
        prop_assert_eq!(update_degree(d, None, tau).unwrap(), 1.0);
        prop_assert!(update_degree(d, Some(-dt - 1e-9), tau).is_err());
    }
}
