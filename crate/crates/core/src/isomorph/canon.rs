//! Canonical codes for small unattributed graphs.
//!
//! The code of a graph on `n` nodes is the lexicographically largest
//! column-wise upper-triangle adjacency bit string over all node orderings
//! that list nodes by non-increasing degree. The set of such orderings is
//! carried onto itself by every isomorphism, so the maximum is a complete
//! invariant. The search is branch-and-bound: a partial ordering fixes a
//! prefix of the bit string, and prefixes below the incumbent are cut.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest graph accepted by [`canonical_code`].
pub const MAX_CANONICAL_NODES: usize = 10;

/// Byte string identifying an unattributed isomorphism class.
///
/// Layout: one byte of node count followed by the big-endian bytes of the
/// maximal adjacency bit string (`n(n-1)/2` bits, right aligned).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(Vec<u8>);

impl CanonicalCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn node_count(&self) -> usize {
        self.0[0] as usize
    }

    /// Rebuilds the graph in canonical node order.
    pub fn to_graph(&self) -> Graph {
        let n = self.node_count();
        let total = n * n.saturating_sub(1) / 2;
        let mut bits: u64 = 0;
        for &b in &self.0[1..] {
            bits = (bits << 8) | u64::from(b);
        }
        let mut edges = Vec::new();
        let mut pos = 0;
        for j in 1..n {
            for i in 0..j {
                let shift = total - 1 - pos;
                if (bits >> shift) & 1 == 1 {
                    edges.push((i, j));
                }
                pos += 1;
            }
        }
        Graph::unlabeled(n, &edges).expect("canonical code decodes to a simple graph")
    }
}

impl fmt::Debug for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalCode(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Canonical code of `g`, ignoring attributes.
pub fn canonical_code(g: &Graph) -> Result<CanonicalCode> {
    let n = g.node_count();
    if n > MAX_CANONICAL_NODES {
        return Err(Error::Size(format!(
            "canonical_code supports at most {MAX_CANONICAL_NODES} nodes, got {n}"
        )));
    }
    let mut adj = [0u16; MAX_CANONICAL_NODES];
    for &(u, v, _) in g.edges() {
        adj[u] |= 1 << v;
        adj[v] |= 1 << u;
    }
    let degree: Vec<u32> = (0..n).map(|i| adj[i].count_ones()).collect();
    let mut sorted_degree = degree.clone();
    sorted_degree.sort_unstable_by(|a, b| b.cmp(a));

    let mut search = Search {
        n,
        adj: &adj[..n],
        degree: &degree,
        sorted_degree: &sorted_degree,
        total_bits: n * n.saturating_sub(1) / 2,
        order: Vec::with_capacity(n),
        best: None,
    };
    search.extend(0, 0, 0);
    let best = search.best.unwrap_or(0);

    let byte_len = search.total_bits.div_ceil(8);
    let mut bytes = Vec::with_capacity(1 + byte_len);
    bytes.push(n as u8);
    bytes.extend_from_slice(&best.to_be_bytes()[8 - byte_len..]);
    Ok(CanonicalCode(bytes))
}

struct Search<'a> {
    n: usize,
    adj: &'a [u16],
    degree: &'a [u32],
    sorted_degree: &'a [u32],
    total_bits: usize,
    order: Vec<usize>,
    best: Option<u64>,
}

impl Search<'_> {
    /// `acc` holds the `len` leading bits fixed by `order`; `used` is a node mask.
    fn extend(&mut self, used: u16, acc: u64, len: usize) {
        let p = self.order.len();
        if p == self.n {
            if self.best.is_none_or(|b| acc > b) {
                self.best = Some(acc);
            }
            return;
        }
        for v in 0..self.n {
            if used & (1 << v) != 0 || self.degree[v] != self.sorted_degree[p] {
                continue;
            }
            let mut column = 0u64;
            for &u in &self.order {
                column = (column << 1) | u64::from((self.adj[u] >> v) & 1);
            }
            let next = (acc << p) | column;
            let next_len = len + p;
            if let Some(best) = self.best {
                let best_prefix = best >> (self.total_bits - next_len);
                if next < best_prefix {
                    continue;
                }
            }
            self.order.push(v);
            self.extend(used | (1 << v), next, next_len);
            self.order.pop();
        }
    }
}
