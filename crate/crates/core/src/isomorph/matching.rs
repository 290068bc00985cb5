//! Backtracking subgraph matchers (VF2-style state space with degree pruning).
//!
//! Two semantics are provided:
//! - node-induced isomorphism: mapped host nodes carry an edge iff the pattern
//!   nodes do;
//! - monomorphism: every pattern edge maps to a host edge, extra host edges
//!   are allowed.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Which embedding relation a matcher tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Induced,
    Monomorphic,
}

/// Attribute constraint on a pattern node or edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrConstraint {
    Any,
    Code(u32),
}

impl AttrConstraint {
    pub fn accepts(self, code: u32) -> bool {
        match self {
            AttrConstraint::Any => true,
            AttrConstraint::Code(c) => c == code,
        }
    }
}

impl Serialize for AttrConstraint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AttrConstraint::Any => s.serialize_str("*"),
            AttrConstraint::Code(c) => s.serialize_u32(*c),
        }
    }
}

impl<'de> Deserialize<'de> for AttrConstraint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Code(c) => Ok(AttrConstraint::Code(c)),
            Raw::Text(t) if t == "*" => Ok(AttrConstraint::Any),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected an attribute code or \"*\", got {t:?}"
            ))),
        }
    }
}

/// A named pattern whose nodes and edges may constrain attribute codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributedPattern {
    pub name: String,
    pub nodes: Vec<AttrConstraint>,
    pub edges: Vec<(usize, usize, AttrConstraint)>,
}

impl AttributedPattern {
    /// Checks simplicity and connectivity of the underlying unlabeled graph.
    pub fn validate(&self) -> Result<()> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(u, v, _)| (u, v)).collect();
        let shape = Graph::unlabeled(self.nodes.len(), &edges).map_err(|e| {
            Error::Validation(format!("pattern {}: {e}", self.name))
        })?;
        if !shape.is_connected() {
            return Err(Error::Validation(format!(
                "pattern {} is not connected",
                self.name
            )));
        }
        Ok(())
    }

    /// Pattern matching `shape` with every attribute left as a wildcard.
    pub fn wildcard(name: impl Into<String>, shape: &Graph) -> Self {
        Self {
            name: name.into(),
            nodes: vec![AttrConstraint::Any; shape.node_count()],
            edges: shape
                .edges()
                .iter()
                .map(|&(u, v, _)| (u, v, AttrConstraint::Any))
                .collect(),
        }
    }
}

/// Precomputed lookup tables for a host graph, reusable across many patterns.
pub struct HostIndex<'g> {
    graph: &'g Graph,
    n: usize,
    // Edge code + 1 per ordered pair, 0 when absent.
    edge_code: Vec<u32>,
}

impl<'g> HostIndex<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        let n = graph.node_count();
        let mut edge_code = vec![0; n * n];
        for &(u, v, e) in graph.edges() {
            edge_code[u * n + v] = e + 1;
            edge_code[v * n + u] = e + 1;
        }
        Self {
            graph,
            n,
            edge_code,
        }
    }

    fn edge(&self, u: usize, v: usize) -> Option<u32> {
        match self.edge_code[u * self.n + v] {
            0 => None,
            c => Some(c - 1),
        }
    }

    /// Node-induced containment of an unattributed pattern.
    pub fn contains_induced(&self, pattern: &Graph) -> bool {
        let spec = PatternSpec::from_graph(pattern);
        self.search(&spec, MatchMode::Induced)
    }

    /// Monomorphic containment of an attributed pattern.
    pub fn contains_monomorphic(&self, pattern: &AttributedPattern) -> bool {
        match PatternSpec::from_attributed(pattern) {
            Some(spec) => self.search(&spec, MatchMode::Monomorphic),
            None => false,
        }
    }

    /// Containment of an attributed pattern under either semantics.
    pub fn contains(&self, pattern: &AttributedPattern, mode: MatchMode) -> bool {
        match PatternSpec::from_attributed(pattern) {
            Some(spec) => self.search(&spec, mode),
            None => false,
        }
    }

    fn search(&self, spec: &PatternSpec, mode: MatchMode) -> bool {
        if spec.n > self.n {
            return false;
        }
        if spec.n == 0 {
            return true;
        }
        let order = spec.match_order();
        let mut state = State {
            host: self,
            spec,
            mode,
            order: &order,
            mapping: vec![usize::MAX; spec.n],
            host_used: vec![false; self.n],
        };
        state.descend(0)
    }
}

/// Pattern in matcher-friendly form. `edge` holds constraint per ordered pair.
struct PatternSpec {
    n: usize,
    nodes: Vec<AttrConstraint>,
    edge: Vec<Option<AttrConstraint>>,
    degree: Vec<usize>,
    adj: Vec<Vec<usize>>,
}

impl PatternSpec {
    fn from_graph(g: &Graph) -> Self {
        let n = g.node_count();
        let mut edge = vec![None; n * n];
        let mut adj = vec![Vec::new(); n];
        for &(u, v, _) in g.edges() {
            edge[u * n + v] = Some(AttrConstraint::Any);
            edge[v * n + u] = Some(AttrConstraint::Any);
            adj[u].push(v);
            adj[v].push(u);
        }
        Self {
            n,
            nodes: vec![AttrConstraint::Any; n],
            degree: adj.iter().map(Vec::len).collect(),
            edge,
            adj,
        }
    }

    /// `None` when the pattern is not a simple graph (it can never match).
    fn from_attributed(p: &AttributedPattern) -> Option<Self> {
        let n = p.nodes.len();
        let mut edge = vec![None; n * n];
        let mut adj = vec![Vec::new(); n];
        for &(u, v, c) in &p.edges {
            if u >= n || v >= n || u == v || edge[u * n + v].is_some() {
                return None;
            }
            edge[u * n + v] = Some(c);
            edge[v * n + u] = Some(c);
            adj[u].push(v);
            adj[v].push(u);
        }
        Some(Self {
            n,
            nodes: p.nodes.clone(),
            degree: adj.iter().map(Vec::len).collect(),
            edge,
            adj,
        })
    }

    /// Matching order: repeatedly pick the unplaced node with the most
    /// already-placed neighbours (ties: higher degree, then lower index).
    fn match_order(&self) -> Vec<usize> {
        let mut placed = vec![false; self.n];
        let mut links = vec![0usize; self.n];
        let mut order = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let next = (0..self.n)
                .filter(|&v| !placed[v])
                .max_by(|&a, &b| {
                    (links[a], self.degree[a], std::cmp::Reverse(a))
                        .cmp(&(links[b], self.degree[b], std::cmp::Reverse(b)))
                })
                .expect("an unplaced node remains");
            placed[next] = true;
            order.push(next);
            for &w in &self.adj[next] {
                links[w] += 1;
            }
        }
        order
    }
}

struct State<'a, 'g> {
    host: &'a HostIndex<'g>,
    spec: &'a PatternSpec,
    mode: MatchMode,
    order: &'a [usize],
    mapping: Vec<usize>,
    host_used: Vec<bool>,
}

impl State<'_, '_> {
    fn descend(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let p = self.order[depth];
        // Candidates come from the neighbourhood of a mapped pattern neighbour
        // when one exists, otherwise from every host node.
        let anchor = self.spec.adj[p]
            .iter()
            .copied()
            .find(|&q| self.mapping[q] != usize::MAX);
        match anchor {
            Some(q) => {
                let host_q = self.mapping[q];
                let graph = self.host.graph;
                for &(h, _) in graph.neighbors(host_q) {
                    if self.try_assign(p, h, depth) {
                        return true;
                    }
                }
                false
            }
            None => {
                for h in 0..self.host.n {
                    if self.try_assign(p, h, depth) {
                        return true;
                    }
                }
                false
            }
        }
    }

    fn try_assign(&mut self, p: usize, h: usize, depth: usize) -> bool {
        if self.host_used[h] || !self.feasible(p, h) {
            return false;
        }
        self.mapping[p] = h;
        self.host_used[h] = true;
        let found = self.descend(depth + 1);
        self.mapping[p] = usize::MAX;
        self.host_used[h] = false;
        found
    }

    fn feasible(&self, p: usize, h: usize) -> bool {
        let graph = self.host.graph;
        if !self.spec.nodes[p].accepts(graph.node_attrs()[h]) {
            return false;
        }
        if graph.degree(h) < self.spec.degree[p] {
            return false;
        }
        let n = self.spec.n;
        for q in 0..n {
            let hq = self.mapping[q];
            if hq == usize::MAX {
                continue;
            }
            let host_edge = self.host.edge(h, hq);
            match (self.spec.edge[p * n + q], host_edge) {
                (Some(c), Some(code)) => {
                    if !c.accepts(code) {
                        return false;
                    }
                }
                (Some(_), None) => return false,
                (None, Some(_)) => {
                    if self.mode == MatchMode::Induced {
                        return false;
                    }
                }
                (None, None) => {}
            }
        }
        true
    }
}

/// True iff some node subset of `host` induces a subgraph isomorphic to
/// `pattern`. Attributes are ignored.
pub fn subgraph_induced_isomorphic(pattern: &Graph, host: &Graph) -> bool {
    HostIndex::new(host).contains_induced(pattern)
}

/// True iff an injective edge-preserving map from `pattern` into `host`
/// exists that satisfies every non-wildcard attribute constraint.
pub fn subgraph_monomorphic(pattern: &AttributedPattern, host: &Graph) -> bool {
    HostIndex::new(host).contains_monomorphic(pattern)
}
