//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use extrabench::graph::{parse_dataset, GraphRecord};
use extrabench::isomorph::{enumerate_connected, StructureVocabulary, MAX_ENUMERATION_NODES};
use extrabench::pipeline::{generate_synthetic, ExperimentConfig, PretextVocabularies, SyntheticSpec};
use extrabench::pretext::MotifVocabulary;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "EXTRABENCH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub output: PathBuf,
}

/// Exactly one of `path` and `synthetic`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    /// Structure vocabulary file; enumerated from the bounds below if unset.
    pub structures: Option<PathBuf>,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Motif file; the built-in motifs if unset.
    pub motifs: Option<PathBuf>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { structures: None, min_nodes: 3, max_nodes: 6, motifs: None }
    }
}

impl VocabConfig {
    pub fn load(&self) -> Result<PretextVocabularies, CliError> {
        let structures = match &self.structures {
            Some(p) => StructureVocabulary::load(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
            None => enumerate_connected(self.min_nodes, self.max_nodes).map_err(CliError::from)?,
        };
        let motifs = match &self.motifs {
            Some(p) => MotifVocabulary::load(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
            None => MotifVocabulary::builtin(),
        };
        Ok(PretextVocabularies { structures, motifs })
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} does not exist", p.display())))
    }
}

impl RunConfig {
    /// Reads, resolves relative paths against the file's directory, applies
    /// the seed override from the environment, and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &mut cfg.data.path {
            resolve(base, p);
        }
        for p in [&mut cfg.vocab.structures, &mut cfg.vocab.motifs].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.output);
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            cfg.experiment.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(p), None) => require_file(p, "dataset")?,
            (None, Some(s)) => {
                if s.n == 0 {
                    return Err(CliError::config("data.synthetic.n must be >= 1"));
                }
                s.spec.validate()?;
            }
            _ => return Err(CliError::config("set exactly one of data.path and data.synthetic")),
        }
        match &self.vocab.structures {
            Some(p) => require_file(p, "structure vocabulary")?,
            None => {
                let v = &self.vocab;
                if v.min_nodes == 0 || v.min_nodes > v.max_nodes || v.max_nodes > MAX_ENUMERATION_NODES {
                    return Err(CliError::config(format!(
                        "vocab bounds {}..={} must satisfy 1 <= min <= max <= {MAX_ENUMERATION_NODES}",
                        v.min_nodes, v.max_nodes
                    )));
                }
            }
        }
        if let Some(p) = &self.vocab.motifs {
            require_file(p, "motif file")?;
        }
        self.experiment.validate()?;
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<GraphRecord>, CliError> {
        let records = match (&self.data.path, &self.data.synthetic) {
            (Some(p), _) => load_dataset(p)?,
            (None, Some(s)) => generate_synthetic(s.n, s.seed, &s.spec)?,
            (None, None) => unreachable!("validated"),
        };
        check_codes(&records, &self.experiment)?;
        Ok(records)
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<GraphRecord>, CliError> {
    parse_dataset(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Rejects records whose attribute codes the configured model cannot embed.
pub fn check_codes(records: &[GraphRecord], experiment: &ExperimentConfig) -> Result<(), CliError> {
    let m = &experiment.model;
    for r in records {
        if let Some(&a) = r.graph.node_attrs().iter().find(|&&a| a as usize >= m.node_attr_cardinality) {
            return Err(CliError::data(format!(
                "record {:?}: node attribute {a} >= node_attr_cardinality {}",
                r.id, m.node_attr_cardinality
            )));
        }
        if let Some(&(_, _, e)) = r.graph.edges().iter().find(|e| e.2 as usize >= m.edge_attr_cardinality) {
            return Err(CliError::data(format!(
                "record {:?}: edge attribute {e} >= edge_attr_cardinality {}",
                r.id, m.edge_attr_cardinality
            )));
        }
    }
    Ok(())
}
