//! Exhaustive generation of connected unattributed graphs.
//!
//! Every connected graph on `n > 1` nodes has a non-cut vertex, so each
//! class on `n` nodes arises from some class on `n - 1` nodes by adding a
//! vertex joined to a non-empty neighbour subset. Classes are deduplicated
//! on their canonical code.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::canon::{canonical_code, CanonicalCode};
use super::StructureVocabulary;

/// Largest node count accepted by [`enumerate_connected`].
pub const MAX_ENUMERATION_NODES: usize = 8;

/// Canonical codes of all connected classes on exactly `n` nodes, for every
/// `n` in `1..=n_max`.
fn connected_levels(n_max: usize) -> Vec<Vec<CanonicalCode>> {
    let single = canonical_code(&Graph::unlabeled(1, &[]).unwrap()).unwrap();
    let mut levels = vec![Vec::new(), vec![single]];
    for n in 2..=n_max {
        let mut next: BTreeMap<CanonicalCode, ()> = BTreeMap::new();
        for code in &levels[n - 1] {
            let base = code.to_graph();
            let base_edges: Vec<(usize, usize)> =
                base.edges().iter().map(|&(u, v, _)| (u, v)).collect();
            let new_node = n - 1;
            for subset in 1u32..(1 << (n - 1)) {
                let mut edges = base_edges.clone();
                for u in 0..n - 1 {
                    if subset & (1 << u) != 0 {
                        edges.push((u, new_node));
                    }
                }
                let g = Graph::unlabeled(n, &edges).expect("augmentation stays simple");
                next.insert(canonical_code(&g).expect("n within canonical bound"), ());
            }
        }
        levels.push(next.into_keys().collect());
    }
    levels
}

/// All connected unattributed graphs with `n_min..=n_max` nodes, one per
/// isomorphism class, ordered by node count and then canonical code.
pub fn enumerate_connected(n_min: usize, n_max: usize) -> Result<StructureVocabulary> {
    if n_min < 1 || n_min > n_max || n_max > MAX_ENUMERATION_NODES {
        return Err(Error::Size(format!(
            "enumeration bounds must satisfy 1 <= n_min <= n_max <= {MAX_ENUMERATION_NODES}, got ({n_min}, {n_max})"
        )));
    }
    let levels = connected_levels(n_max);
    let patterns = levels[n_min..=n_max]
        .iter()
        .flatten()
        .map(CanonicalCode::to_graph)
        .collect();
    Ok(StructureVocabulary::new_unchecked(patterns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_node_classes() {
        let v = enumerate_connected(3, 3).unwrap();
        assert_eq!(v.len(), 2);
        let mut edge_counts: Vec<_> = v.patterns().iter().map(Graph::edge_count).collect();
        edge_counts.sort();
        assert_eq!(edge_counts, vec![2, 3]);
    }

    #[test]
    fn small_sizes() {
        assert_eq!(enumerate_connected(1, 1).unwrap().len(), 1);
        assert_eq!(enumerate_connected(2, 2).unwrap().len(), 1);
        assert_eq!(enumerate_connected(7, 7).unwrap().len(), 853);
    }

    #[test]
    fn bounds_are_checked() {
        assert!(enumerate_connected(0, 3).is_err());
        assert!(enumerate_connected(4, 3).is_err());
        assert!(enumerate_connected(3, 9).is_err());
    }
}
