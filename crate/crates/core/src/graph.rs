//! Attributed undirected graphs, the JSONL dataset format, and the structural
//! primitives (degrees, hop distances) shared by the matchers and the encoder.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance value used for pairs of nodes in different components.
pub const UNREACHABLE: u32 = u32::MAX;

/// A simple undirected graph with integer node and edge attribute codes.
///
/// Edges are stored once per unordered pair with `u < v`, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_attrs: Vec<u32>,
    edges: Vec<(usize, usize, u32)>,
    neighbors: Vec<Vec<(usize, u32)>>,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicate edges, out-of-range
    /// endpoints and empty node sets.
    pub fn new(node_attrs: Vec<u32>, edges: Vec<(usize, usize, u32)>) -> Result<Self> {
        let n = node_attrs.len();
        if n == 0 {
            return Err(Error::Validation("graph must have at least one node".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut neighbors = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(edges.len());
        for &(u, v, etype) in &edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) has an endpoint outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {u}")));
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            if !seen.insert((a, b)) {
                return Err(Error::Validation(format!("duplicate edge ({a}, {b})")));
            }
            neighbors[a].push((b, etype));
            neighbors[b].push((a, etype));
            normalized.push((a, b, etype));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            node_attrs,
            edges: normalized,
            neighbors,
        })
    }

    /// Unattributed graph: every node and edge carries code 0.
    pub fn unlabeled(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            vec![0; node_count],
            edges.iter().map(|&(u, v)| (u, v, 0)).collect(),
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_attrs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_attrs(&self) -> &[u32] {
        &self.node_attrs
    }

    pub fn edges(&self) -> &[(usize, usize, u32)] {
        &self.edges
    }

    /// Sorted `(neighbor, edge code)` pairs of `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, u32)] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn edge_attr(&self, u: usize, v: usize) -> Option<u32> {
        self.neighbors[u]
            .binary_search_by_key(&v, |&(w, _)| w)
            .ok()
            .map(|i| self.neighbors[u][i].1)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_attr(u, v).is_some()
    }

    /// Dense boolean adjacency, row-major `n * n`.
    pub fn adjacency_matrix(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut adj = vec![false; n * n];
        for &(u, v, _) in &self.edges {
            adj[u * n + v] = true;
            adj[v * n + u] = true;
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Same graph with nodes renamed: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        assert_eq!(perm.len(), n, "permutation length must equal node count");
        let mut attrs = vec![0; n];
        for (i, &a) in self.node_attrs.iter().enumerate() {
            attrs[perm[i]] = a;
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v, e)| (perm[u], perm[v], e))
            .collect();
        Self::new(attrs, edges).expect("permutation preserves graph invariants")
    }

    /// Copy with one node's attribute replaced.
    pub fn with_node_attr(&self, node: usize, attr: u32) -> Self {
        let mut out = self.clone();
        out.node_attrs[node] = attr;
        out
    }
}

/// Degree of every node, in node order.
pub fn degrees(g: &Graph) -> Vec<usize> {
    (0..g.node_count()).map(|i| g.degree(i)).collect()
}

/// All-pairs hop distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpdMatrix {
    n: usize,
    dist: Vec<u32>,
}

impl SpdMatrix {
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Hop count between `u` and `v`, or [`UNREACHABLE`].
    pub fn get(&self, u: usize, v: usize) -> u32 {
        self.dist[u * self.n + v]
    }

    pub fn is_reachable(&self, u: usize, v: usize) -> bool {
        self.get(u, v) != UNREACHABLE
    }
}

/// Floyd-Warshall over hop counts.
pub fn shortest_paths(g: &Graph) -> SpdMatrix {
    let n = g.node_count();
    let mut dist = vec![UNREACHABLE; n * n];
    for i in 0..n {
        dist[i * n + i] = 0;
    }
    for &(u, v, _) in g.edges() {
        dist[u * n + v] = 1;
        dist[v * n + u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik == UNREACHABLE {
                continue;
            }
            for j in 0..n {
                let dkj = dist[k * n + j];
                if dkj == UNREACHABLE {
                    continue;
                }
                let through = dik + dkj;
                if through < dist[i * n + j] {
                    dist[i * n + j] = through;
                }
            }
        }
    }
    SpdMatrix { n, dist }
}

/// A graph with an identifier and an optional regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub id: String,
    pub graph: Graph,
    pub label: Option<f64>,
}

impl GraphRecord {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    nodes: Vec<u32>,
    edges: Vec<(usize, usize, u32)>,
    #[serde(default)]
    y: Option<f64>,
}

/// Parses one JSONL record. `line` is only used for error messages.
pub fn parse_record(text: &str, line: usize) -> Result<GraphRecord> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let graph = Graph::new(raw.nodes, raw.edges).map_err(|e| Error::InvalidRecord {
        id: raw.id.clone(),
        reason: e.to_string(),
    })?;
    if let Some(y) = raw.y {
        if !y.is_finite() {
            return Err(Error::InvalidRecord {
                id: raw.id,
                reason: "label is not finite".into(),
            });
        }
    }
    Ok(GraphRecord {
        id: raw.id,
        graph,
        label: raw.y,
    })
}

/// Reads a JSONL dataset. Blank lines are skipped; ids must be unique.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<GraphRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, idx + 1)?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::InvalidRecord {
                id: record.id,
                reason: "duplicate record id".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Vec<GraphRecord>> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file))
}

/// Serializes one record as a single JSON line (without the newline).
pub fn record_to_line(record: &GraphRecord) -> String {
    let mut out = String::new();
    write!(out, "{{\"id\":{},\"nodes\":", serde_json::Value::from(record.id.as_str())).unwrap();
    out.push_str(&serde_json::to_string(record.graph.node_attrs()).unwrap());
    out.push_str(",\"edges\":");
    out.push_str(&serde_json::to_string(record.graph.edges()).unwrap());
    out.push_str(",\"y\":");
    match record.label {
        Some(y) => out.push_str(&serde_json::to_string(&y).unwrap()),
        None => out.push_str("null"),
    }
    out.push('}');
    out
}

pub fn write_dataset<W: Write>(mut writer: W, records: &[GraphRecord]) -> Result<()> {
    for record in records {
        writeln!(writer, "{}", record_to_line(record))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[GraphRecord]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), records)
}
