mod common;

use std::sync::OnceLock;

use common::{brute_induced, random_graph};
use extrabench::graph::{Graph, GraphRecord};
use extrabench::isomorph::{enumerate_connected, StructureVocabulary};
use extrabench::pretext::{
    build_label_cache, filter_vocabulary, motif_labels, structure_labels, MotifVocabulary,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> &'static StructureVocabulary {
    static V: OnceLock<StructureVocabulary> = OnceLock::new();
    V.get_or_init(|| enumerate_connected(3, 5).unwrap())
}

fn record(id: &str, graph: Graph) -> GraphRecord {
    GraphRecord { id: id.into(), graph, label: None }
}

fn seeded_graph(seed: u64, max_nodes: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes);
    let p = rng.random_range(0.2..0.8);
    random_graph(&mut rng, n, p, 6, 4)
}

fn with_extra_edge(g: &Graph, seed: u64) -> Graph {
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs = g.node_attrs().to_vec();
    let mut edges = g.edges().to_vec();
    let missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !g.has_edge(i, j))
        .collect();
    if missing.is_empty() || rng.random_bool(0.5) {
        attrs.push(rng.random_range(0..6));
        edges.push((rng.random_range(0..n), n, rng.random_range(0..4)));
    } else {
        let (u, v) = missing[rng.random_range(0..missing.len())];
        edges.push((u, v, rng.random_range(0..4)));
    }
    Graph::new(attrs, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn structure_labels_ignore_attributes(seed in any::<u64>(), relabel in any::<u64>()) {
        let g = seeded_graph(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(relabel);
        let attrs = (0..g.node_count()).map(|_| rng.random_range(0..6)).collect();
        let edges = g.edges().iter().map(|&(u, v, _)| (u, v, rng.random_range(0..4))).collect();
        let h = Graph::new(attrs, edges).unwrap();
        prop_assert_eq!(structure_labels(&record("a", g), vocab()), structure_labels(&record("a", h), vocab()));
    }

    #[test]
    fn structure_bits_match_brute_force(seed in any::<u64>()) {
        let g = seeded_graph(seed, 6);
        let label = structure_labels(&record("a", g.clone()), vocab());
        for (k, p) in vocab().patterns().iter().enumerate() {
            prop_assert_eq!(label.get(k), brute_induced(p, &g));
        }
    }

    #[test]
    fn motif_bits_never_drop_when_host_grows(seed in any::<u64>(), grow in any::<u64>()) {
        let motifs = MotifVocabulary::builtin();
        let g = seeded_graph(seed, 9);
        let h = with_extra_edge(&g, grow);
        let before = motif_labels(&record("a", g), &motifs);
        let after = motif_labels(&record("a", h), &motifs);
        for k in 0..motifs.len() {
            prop_assert!(!before.get(k) || after.get(k), "motif {} lost", motifs.patterns()[k].name);
        }
    }

    #[test]
    fn filtering_is_idempotent(seeds in proptest::collection::vec(any::<u64>(), 0..6)) {
        let records: Vec<GraphRecord> = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| record(&i.to_string(), seeded_graph(s, 7)))
            .collect();
        let once = filter_vocabulary(vocab(), &records);
        let twice = filter_vocabulary(&once, &records);
        prop_assert_eq!(once.patterns(), twice.patterns());
        for p in once.patterns() {
            prop_assert!(records.iter().any(|r| brute_induced(p, &r.graph)));
        }
    }
}

#[test]
fn label_cache_is_independent_of_thread_count() {
    let records: Vec<GraphRecord> = (0..40).map(|i| record(&format!("g{i}"), seeded_graph(i, 9))).collect();
    let motifs = MotifVocabulary::builtin();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = single.install(|| build_label_cache(&records, 3, vocab(), &motifs).unwrap());
    let b = multi.install(|| build_label_cache(&records, 3, vocab(), &motifs).unwrap());
    assert_eq!(a, b);
}
