use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    /// `sign(x) * ln(1 + |x|)`
    SignedLog1p,
    /// `x * |x|`
    SignedSquare,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::None => x,
            Nonlinearity::SignedLog1p => x.signum() * x.abs().ln_1p(),
            Nonlinearity::SignedSquare => x * x.abs(),
        }
    }
}

/// Label formula: a weighted sum of structural counts and attribute sums,
/// passed through an optional nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSpec {
    /// Weight of the cycle rank `edges - nodes + 1`.
    pub cycle_weight: f64,
    pub triangle_weight: f64,
    /// Weight of the number of nodes with degree >= 3.
    pub branch_weight: f64,
    /// Per node-attribute code; missing codes weigh 0.
    pub node_weights: Vec<f64>,
    /// Per edge-attribute code; missing codes weigh 0.
    pub edge_weights: Vec<f64>,
    pub bias: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            cycle_weight: 1.0,
            triangle_weight: 0.5,
            branch_weight: 0.3,
            node_weights: vec![0.1, 0.4, 0.3, 0.6, 0.2, 0.5],
            edge_weights: vec![0.0, 0.15, 0.3, 0.1],
            bias: 0.0,
            nonlinearity: Nonlinearity::None,
        }
    }
}

fn triangle_count(g: &Graph) -> usize {
    let mut count = 0;
    for u in 0..g.node_count() {
        for &(v, _) in g.neighbors(u) {
            if v <= u {
                continue;
            }
            for &(w, _) in g.neighbors(v) {
                if w > v && g.has_edge(u, w) {
                    count += 1;
                }
            }
        }
    }
    count
}

impl TargetSpec {
    pub fn evaluate(&self, g: &Graph) -> f64 {
        let weight = |w: &[f64], code: u32| w.get(code as usize).copied().unwrap_or(0.0);
        let cycles = g.edge_count() as f64 - g.node_count() as f64 + 1.0;
        let branches = (0..g.node_count()).filter(|&v| g.degree(v) >= 3).count() as f64;
        let nodes: f64 = g.node_attrs().iter().map(|&a| weight(&self.node_weights, a)).sum();
        let edges: f64 = g.edges().iter().map(|&(_, _, e)| weight(&self.edge_weights, e)).sum();
        let raw = self.bias
            + self.cycle_weight * cycles
            + self.triangle_weight * triangle_count(g) as f64
            + self.branch_weight * branches
            + nodes
            + edges;
        self.nonlinearity.apply(raw)
    }
}

/// Random connected attributed graphs with formula labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Extra edges beyond a spanning tree are drawn uniformly from
    /// `0..=extra_edge_ratio * nodes`.
    pub extra_edge_ratio: f64,
    /// Sampling weights of node-attribute codes.
    pub node_code_weights: Vec<f64>,
    /// Sampling weights of edge-attribute codes.
    pub edge_code_weights: Vec<f64>,
    pub target: TargetSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            min_nodes: 4,
            max_nodes: 12,
            extra_edge_ratio: 0.35,
            node_code_weights: vec![0.55, 0.15, 0.15, 0.05, 0.05, 0.05],
            edge_code_weights: vec![0.7, 0.2, 0.05, 0.05],
            target: TargetSpec::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(Error::Config(format!(
                "node range {}..={} is empty or starts at 0",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(self.extra_edge_ratio >= 0.0 && self.extra_edge_ratio.is_finite()) {
            return Err(Error::Config("extra_edge_ratio must be a finite value >= 0".into()));
        }
        for (name, w) in [("node_code_weights", &self.node_code_weights), ("edge_code_weights", &self.edge_code_weights)] {
            WeightedIndex::new(w).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

fn random_connected(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, nodes: &WeightedIndex<f64>, edges: &WeightedIndex<f64>) -> Graph {
    let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
    let attrs: Vec<u32> = (0..n).map(|_| nodes.sample(rng) as u32).collect();
    let mut present = vec![false; n * n];
    let mut list = Vec::with_capacity(2 * n);
    let add = |u: usize, v: usize, code: u32, present: &mut [bool], list: &mut Vec<(usize, usize, u32)>| {
        present[u * n + v] = true;
        present[v * n + u] = true;
        list.push((u, v, code));
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        let code = edges.sample(rng) as u32;
        add(u, v, code, &mut present, &mut list);
    }
    let max_extra = (spec.extra_edge_ratio * n as f64).floor() as usize;
    let extra = rng.random_range(0..=max_extra);
    for _ in 0..extra {
        let free: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !present[u * n + v])
            .collect();
        if free.is_empty() {
            break;
        }
        let (u, v) = free[rng.random_range(0..free.len())];
        let code = edges.sample(rng) as u32;
        add(u, v, code, &mut present, &mut list);
    }
    Graph::new(attrs, list).expect("generated graph is simple")
}

/// `n` labeled records with ids `syn00000`, `syn00001`, ...
pub fn generate_synthetic(n: usize, seed: u64, spec: &SyntheticSpec) -> Result<Vec<GraphRecord>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("synthetic dataset size must be >= 1".into()));
    }
    let nodes = WeightedIndex::new(&spec.node_code_weights).expect("validated");
    let edges = WeightedIndex::new(&spec.edge_code_weights).expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let graph = random_connected(&mut rng, spec, &nodes, &edges);
            let label = spec.target.evaluate(&graph);
            GraphRecord {
                id: format!("syn{i:05}"),
                graph,
                label: Some(label),
            }
        })
        .collect())
}
