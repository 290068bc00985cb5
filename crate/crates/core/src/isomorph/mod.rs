//! Isomorphism machinery: canonical codes, subgraph matching and the
//! enumerated structure vocabulary.

pub mod canon;
pub mod enumerate;
pub mod matching;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use canon::{canonical_code, CanonicalCode, MAX_CANONICAL_NODES};
pub use enumerate::{enumerate_connected, MAX_ENUMERATION_NODES};
pub use matching::{
    subgraph_induced_isomorphic, subgraph_monomorphic, AttrConstraint, AttributedPattern,
    HostIndex, MatchMode,
};

/// Ordered set of pairwise non-isomorphic connected unattributed patterns.
/// Position `k` is label dimension `k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StructureVocabulary {
    patterns: Vec<Graph>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabLine {
    k: usize,
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl StructureVocabulary {
    /// Validates connectivity and pairwise non-isomorphism.
    pub fn new(patterns: Vec<Graph>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (k, p) in patterns.iter().enumerate() {
            if !p.is_connected() {
                return Err(Error::Validation(format!("vocabulary pattern {k} is not connected")));
            }
            if !seen.insert(canonical_code(p)?) {
                return Err(Error::Validation(format!(
                    "vocabulary pattern {k} duplicates an earlier pattern"
                )));
            }
        }
        Ok(Self { patterns })
    }

    pub(crate) fn new_unchecked(patterns: Vec<Graph>) -> Self {
        Self { patterns }
    }

    pub fn patterns(&self) -> &[Graph] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Keeps the patterns selected by `keep`, preserving order.
    pub fn retain_indices(&self, keep: &[bool]) -> Self {
        Self {
            patterns: self
                .patterns
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(p, _)| p.clone())
                .collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, p) in self.patterns.iter().enumerate() {
            let line = VocabLine {
                k,
                nodes: p.node_count(),
                edges: p.edges().iter().map(|&(u, v, _)| (u, v)).collect(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut patterns = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: VocabLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if parsed.k != patterns.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected k = {}, found {}", patterns.len(), parsed.k),
                });
            }
            let g = Graph::unlabeled(parsed.nodes, &parsed.edges).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            patterns.push(g);
        }
        Self::new(patterns)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}
