//! Self-supervised targets computed from graph structure alone: one masked
//! node per graph, structure-presence bits over a [`StructureVocabulary`],
//! and motif-presence bits over a [`MotifVocabulary`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphRecord;
use crate::isomorph::{HostIndex, MatchMode, StructureVocabulary};

pub use crate::isomorph::{AttrConstraint, AttributedPattern};

const DEFAULT_MOTIFS: &str = include_str!("../data/motifs.jsonl");

/// Masked node per record, fixed before training starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskAssignment {
    pub seed: u64,
    masks: IndexMap<String, usize>,
}

impl MaskAssignment {
    pub fn get(&self, id: &str) -> Option<usize> {
        self.masks.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.masks.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Draws one node per record, uniformly, from a generator seeded with `seed`.
/// Records are visited in order so the result depends only on (seed, order).
pub fn assign_masks(records: &[GraphRecord], seed: u64) -> Result<MaskAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = IndexMap::with_capacity(records.len());
    for r in records {
        let n = r.graph.node_count();
        if n == 0 {
            return Err(Error::InvalidRecord {
                id: r.id.clone(),
                reason: "cannot mask a node of an empty graph".into(),
            });
        }
        masks.insert(r.id.clone(), rng.random_range(0..n));
    }
    Ok(MaskAssignment { seed, masks })
}

/// Multi-hot presence label; dimension equals the generating vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiHotLabel(Vec<u8>);

impl MultiHotLabel {
    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> bool {
        self.0[k] == 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn as_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }
}

/// Patterns of `vocab` present (node-induced) in at least one record, in
/// their original order.
pub fn filter_vocabulary(vocab: &StructureVocabulary, records: &[GraphRecord]) -> StructureVocabulary {
    filter_vocabulary_with(vocab, records, MatchMode::Induced)
}

pub fn filter_vocabulary_with(
    vocab: &StructureVocabulary,
    records: &[GraphRecord],
    mode: MatchMode,
) -> StructureVocabulary {
    let hosts: Vec<HostIndex<'_>> = records.iter().map(|r| HostIndex::new(&r.graph)).collect();
    let keep: Vec<bool> = vocab
        .patterns()
        .par_iter()
        .map(|p| {
            let pattern = AttributedPattern::wildcard("", p);
            hosts.iter().any(|h| h.contains(&pattern, mode))
        })
        .collect();
    vocab.retain_indices(&keep)
}

/// Bit `k` is set iff `vocab[k]` is a node-induced subgraph of the record.
pub fn structure_labels(record: &GraphRecord, vocab: &StructureVocabulary) -> MultiHotLabel {
    structure_labels_with(record, vocab, MatchMode::Induced)
}

pub fn structure_labels_with(
    record: &GraphRecord,
    vocab: &StructureVocabulary,
    mode: MatchMode,
) -> MultiHotLabel {
    let host = HostIndex::new(&record.graph);
    MultiHotLabel::from_bools(vocab.patterns().iter().map(|p| match mode {
        MatchMode::Induced => host.contains_induced(p),
        MatchMode::Monomorphic => host.contains(&AttributedPattern::wildcard("", p), mode),
    }))
}

/// Bit `k` is set iff motif `k` embeds (monomorphically) in the record.
pub fn motif_labels(record: &GraphRecord, vocab: &MotifVocabulary) -> MultiHotLabel {
    motif_labels_with(record, vocab, MatchMode::Monomorphic)
}

pub fn motif_labels_with(record: &GraphRecord, vocab: &MotifVocabulary, mode: MatchMode) -> MultiHotLabel {
    let host = HostIndex::new(&record.graph);
    MultiHotLabel::from_bools(vocab.patterns().iter().map(|p| host.contains(p, mode)))
}

/// Ordered, uniquely named set of attributed motifs.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifVocabulary {
    patterns: Vec<AttributedPattern>,
}

impl MotifVocabulary {
    pub fn new(patterns: Vec<AttributedPattern>) -> Result<Self> {
        let mut names = HashSet::new();
        for p in &patterns {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::Validation(format!("duplicate motif name {:?}", p.name)));
            }
        }
        Ok(Self { patterns })
    }

    /// The bundled hand-written motif set.
    pub fn builtin() -> Self {
        Self::read_jsonl(DEFAULT_MOTIFS.as_bytes()).expect("bundled motif file is valid")
    }

    pub fn patterns(&self) -> &[AttributedPattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut patterns = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: AttributedPattern = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            patterns.push(p);
        }
        Self::new(patterns)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.patterns {
            writeln!(w, "{}", serde_json::to_string(p)?)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// One line of the label cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelCacheEntry {
    pub id: String,
    pub mask: usize,
    pub structure: MultiHotLabel,
    pub motif: MultiHotLabel,
}

/// Computes every pretext target for every record. Output order follows
/// `records` regardless of thread count.
pub fn build_label_cache(
    records: &[GraphRecord],
    mask_seed: u64,
    structures: &StructureVocabulary,
    motifs: &MotifVocabulary,
) -> Result<Vec<LabelCacheEntry>> {
    let masks = assign_masks(records, mask_seed)?;
    Ok(records
        .par_iter()
        .map(|r| LabelCacheEntry {
            id: r.id.clone(),
            mask: masks.get(&r.id).expect("every record has a mask"),
            structure: structure_labels(r, structures),
            motif: motif_labels(r, motifs),
        })
        .collect())
}

pub fn write_label_cache<W: Write>(mut w: W, entries: &[LabelCacheEntry]) -> Result<()> {
    for e in entries {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_label_cache(path: impl AsRef<Path>, entries: &[LabelCacheEntry]) -> Result<()> {
    write_label_cache(BufWriter::new(File::create(path)?), entries)
}

pub fn read_label_cache<R: BufRead>(r: R) -> Result<Vec<LabelCacheEntry>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
