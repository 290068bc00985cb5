//! Label-based splits, pretraining and fine-tuning, and the seven-method
//! experiment matrix.

mod split;
mod synthetic;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{scatter_dump, CellReport, CellStatus, ExperimentReport, MethodSummary};
use crate::graph::{Graph, GraphRecord};
use crate::isomorph::StructureVocabulary;
use crate::model::{EncoderModel, HeadKind, ModelConfig};
use crate::pretext::{build_label_cache, LabelCacheEntry, MotifVocabulary, MultiHotLabel};

pub use split::{forward_split, random_split, SplitKind, SplitSpec, TieAdjustment};
pub use synthetic::{generate_synthetic, Nonlinearity, SyntheticSpec, TargetSpec};
pub use train::{
    finetune, pretext_loss, pretrain, AuditCounts, FinetuneOutcome, LabelAccess, PretextData,
    PretextTask, PretrainOutcome, TrainingConfig,
};

/// A pretext task (or none) plus the graph scope used for pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingMethod {
    pub pretext: Option<PretextTask>,
    pub pretrain_uses_validation_graphs: bool,
}

impl TrainingMethod {
    pub const BASELINE: Self = Self { pretext: None, pretrain_uses_validation_graphs: false };

    /// The seven methods in report order.
    pub fn all() -> [Self; 7] {
        let with = |task, val| Self { pretext: Some(task), pretrain_uses_validation_graphs: val };
        [
            Self::BASELINE,
            with(PretextTask::NodeMasking, false),
            with(PretextTask::StructurePresence, false),
            with(PretextTask::MotifPresence, false),
            with(PretextTask::NodeMasking, true),
            with(PretextTask::StructurePresence, true),
            with(PretextTask::MotifPresence, true),
        ]
    }

    pub fn name(&self) -> &'static str {
        match (self.pretext, self.pretrain_uses_validation_graphs) {
            (None, _) => "baseline",
            (Some(PretextTask::NodeMasking), false) => "task1_train",
            (Some(PretextTask::StructurePresence), false) => "task2_train",
            (Some(PretextTask::MotifPresence), false) => "task3_train",
            (Some(PretextTask::NodeMasking), true) => "task1_train_val",
            (Some(PretextTask::StructurePresence), true) => "task2_train_val",
            (Some(PretextTask::MotifPresence), true) => "task3_train_val",
        }
    }
}

impl fmt::Display for TrainingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training method {s:?}")))
    }
}

impl Serialize for TrainingMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TrainingMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which graphs decide the Task-2 vocabulary filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// The graphs the method pretrains on.
    #[default]
    PretrainGraphs,
    TrainGraphs,
    AllGraphs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub validation_fraction: f64,
    /// Only used by random holdout.
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { kind: SplitKind::ForwardHoldout, validation_fraction: 2.0 / 92.0, seed: 0 }
    }
}

impl SplitConfig {
    pub fn apply(&self, records: &[GraphRecord]) -> Result<SplitSpec> {
        match self.kind {
            SplitKind::ForwardHoldout => forward_split(records, self.validation_fraction),
            SplitKind::RandomHoldout => random_split(records, self.validation_fraction, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seeds: Vec<u64>,
    pub split: SplitConfig,
    pub methods: Vec<TrainingMethod>,
    pub mask_seed: u64,
    pub vocab_filter: FilterScope,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            pretrain_epochs: 30,
            finetune_epochs: 80,
            seeds: vec![0, 1, 2],
            split: SplitConfig::default(),
            methods: TrainingMethod::all().to_vec(),
            mask_seed: 0,
            vocab_filter: FilterScope::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::Config("epoch counts must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let f = self.split.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("validation_fraction {f} outside (0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no training methods selected".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }
}

pub struct PretextVocabularies {
    pub structures: StructureVocabulary,
    pub motifs: MotifVocabulary,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where trace, scatter and summary files go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Concurrent matrix cells; 0 or 1 runs them one after another.
    pub jobs: usize,
    /// Reuse existing successful cell files produced from the same inputs.
    pub resume: bool,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives an independent stream seed from a run seed and a purpose tag.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_TAG: u64 = 1;
const PRETRAIN_TAG: u64 = 3;
const REGRESSION_HEAD_TAG: u64 = 4;
const FINETUNE_TAG: u64 = 5;

/// Everything one (method, seed) cell depends on.
pub struct CellInputs<'a> {
    records: &'a [GraphRecord],
    index: HashMap<&'a str, usize>,
    split: &'a SplitSpec,
    labels: &'a [LabelCacheEntry],
    config: &'a ExperimentConfig,
}

/// Encoder after the pretraining stage, already carrying a fresh
/// regression head.
pub struct PretrainedEncoder {
    pub model: EncoderModel,
    pub pretext_dim: Option<usize>,
    pub epoch_losses: Vec<f64>,
}

impl<'a> CellInputs<'a> {
    /// `labels` must be the label cache of `records`, in the same order; it
    /// may be empty when only the baseline runs.
    pub fn new(
        records: &'a [GraphRecord],
        split: &'a SplitSpec,
        labels: &'a [LabelCacheEntry],
        config: &'a ExperimentConfig,
    ) -> Result<Self> {
        let index: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        if index.len() != records.len() {
            return Err(Error::Validation("record ids are not unique".into()));
        }
        if !labels.is_empty() {
            if labels.len() != records.len() {
                return Err(Error::Validation(format!(
                    "label cache has {} entries for {} records",
                    labels.len(),
                    records.len()
                )));
            }
            if let Some((r, _)) = records.iter().zip(labels).find(|(r, l)| r.id != l.id) {
                return Err(Error::Validation(format!("label cache is out of order at record {:?}", r.id)));
            }
        }
        for id in split.train.iter().chain(&split.validation) {
            if !index.contains_key(id.as_str()) {
                return Err(Error::Validation(format!("split id {id:?} is not in the dataset")));
            }
        }
        Ok(Self { records, index, split, labels, config })
    }

    fn scope(&self, with_validation: bool) -> Vec<usize> {
        let ids = self.split.train.iter().chain(if with_validation { &self.split.validation[..] } else { &[] });
        ids.map(|id| self.index[id.as_str()]).collect()
    }

    /// Pretext examples of `method`: train graphs, plus validation graphs
    /// when the method asks for them. `None` for the baseline.
    pub fn pretext_data(&self, method: TrainingMethod) -> Result<Option<PretextData>> {
        let Some(task) = method.pretext else {
            return Ok(None);
        };
        if self.labels.is_empty() {
            return Err(Error::Config("pretraining needs a label cache".into()));
        }
        let scope = self.scope(method.pretrain_uses_validation_graphs);
        let graphs: Vec<&Graph> = scope.iter().map(|&i| &self.records[i].graph).collect();
        let data = match task {
            PretextTask::NodeMasking => {
                let masks: Vec<usize> = scope.iter().map(|&i| self.labels[i].mask).collect();
                PretextData::node_masking(&graphs, &masks, self.config.model.mask_code())
            }
            PretextTask::StructurePresence => {
                let filter_scope = match self.config.vocab_filter {
                    FilterScope::PretrainGraphs => scope.clone(),
                    FilterScope::TrainGraphs => self.scope(false),
                    FilterScope::AllGraphs => (0..self.records.len()).collect(),
                };
                let dim = self.labels[0].structure.dim();
                let keep: Vec<usize> = (0..dim)
                    .filter(|&k| filter_scope.iter().any(|&i| self.labels[i].structure.get(k)))
                    .collect();
                let labels: Vec<MultiHotLabel> = scope
                    .iter()
                    .map(|&i| MultiHotLabel::from_bools(keep.iter().map(|&k| self.labels[i].structure.get(k))))
                    .collect();
                PretextData::multilabel(task, &graphs, &labels)
            }
            PretextTask::MotifPresence => {
                let labels: Vec<MultiHotLabel> = scope.iter().map(|&i| self.labels[i].motif.clone()).collect();
                PretextData::multilabel(task, &graphs, &labels)
            }
        }?;
        Ok(Some(data))
    }

    /// Builds the encoder for `seed` and pretrains it if `method` has a
    /// pretext task.
    pub fn pretrain_stage(&self, method: TrainingMethod, seed: u64) -> Result<PretrainedEncoder> {
        let cfg = self.config;
        let init = derive_seed(seed, INIT_TAG);
        match self.pretext_data(method)? {
            None => Ok(PretrainedEncoder {
                model: EncoderModel::new(cfg.model.clone(), HeadKind::Regression, init)?,
                pretext_dim: None,
                epoch_losses: Vec::new(),
            }),
            Some(data) => {
                let model = EncoderModel::new(cfg.model.clone(), data.head(), init)?;
                let out = pretrain(model, &data, &cfg.training, cfg.pretrain_epochs, derive_seed(seed, PRETRAIN_TAG))?;
                Ok(PretrainedEncoder {
                    model: out.model.swap_head(HeadKind::Regression, derive_seed(seed, REGRESSION_HEAD_TAG))?,
                    pretext_dim: Some(data.head().output_dim(&cfg.model)),
                    epoch_losses: out.epoch_losses,
                })
            }
        }
    }

    pub fn finetune_stage(&self, model: EncoderModel, seed: u64) -> Result<FinetuneOutcome> {
        let cfg = self.config;
        finetune(model, self.records, self.split, &cfg.training, cfg.finetune_epochs, derive_seed(seed, FINETUNE_TAG))
    }
}

struct MatrixContext<'a> {
    inputs: CellInputs<'a>,
    base_hash: u64,
}

impl MatrixContext<'_> {
    fn cell_hash(&self, method: TrainingMethod, seed: u64) -> String {
        format!("{:016x}", fnv1a(format!("{}|{method}|{seed}", self.base_hash).as_bytes()))
    }

    fn run(&self, method: TrainingMethod, seed: u64) -> Result<(CellReport, FinetuneOutcome)> {
        let stage = self.inputs.pretrain_stage(method, seed)?;
        let outcome = self.inputs.finetune_stage(stage.model, seed)?;
        let report = CellReport {
            method: method.name().to_string(),
            seed,
            status: CellStatus::Ok,
            input_hash: self.cell_hash(method, seed),
            pretext_dim: stage.pretext_dim,
            pretrain_loss: stage.epoch_losses,
            trace: outcome.trace.clone(),
            validation_label_reads_in_training: outcome.audit.validation_reads_in_training,
        };
        Ok((report, outcome))
    }
}

fn cell_stem(method: TrainingMethod, seed: u64) -> String {
    format!("{method}-seed{seed}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    split: &'a SplitSpec,
    best_epoch_selection: &'a str,
    methods: &'a [MethodSummary],
}

/// Runs every (method, seed) cell and assembles the report. A failing cell
/// is recorded as failed; the others still run.
pub fn run_matrix(
    records: &[GraphRecord],
    config: &ExperimentConfig,
    vocab: &PretextVocabularies,
    options: &RunOptions,
) -> Result<ExperimentReport> {
    config.validate()?;
    let split = config.split.apply(records)?;
    let needs_labels = config.methods.iter().any(|m| m.pretext.is_some());
    let labels = if needs_labels {
        build_label_cache(records, config.mask_seed, &vocab.structures, &vocab.motifs)?
    } else {
        Vec::new()
    };

    let mut hasher_input = serde_json::to_vec(config)?;
    for r in records {
        hasher_input.extend_from_slice(crate::graph::record_to_line(r).as_bytes());
    }
    let mut vocab_text = Vec::new();
    vocab.structures.write_jsonl(&mut vocab_text)?;
    vocab.motifs.write_jsonl(&mut vocab_text)?;
    hasher_input.extend_from_slice(&vocab_text);

    let ctx = MatrixContext {
        inputs: CellInputs::new(records, &split, &labels, config)?,
        base_hash: fnv1a(&hasher_input),
    };

    let (trace_dir, scatter_dir) = match &options.out_dir {
        Some(dir) => {
            let t = dir.join("traces");
            let s = dir.join("scatter");
            fs::create_dir_all(&t)?;
            fs::create_dir_all(&s)?;
            write_json(&dir.join("split.json"), &split)?;
            (Some(t), Some(s))
        }
        None => (None, None),
    };

    let cells: Vec<(TrainingMethod, u64)> = config
        .methods
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let run_cell = |&(method, seed): &(TrainingMethod, u64)| -> Result<CellReport> {
        let stem = cell_stem(method, seed);
        if let (true, Some(dir)) = (options.resume, &trace_dir) {
            let path = dir.join(format!("{stem}.json"));
            if let Ok(text) = fs::read_to_string(&path) {
                if let Ok(cell) = serde_json::from_str::<CellReport>(&text) {
                    if cell.is_ok() && cell.input_hash == ctx.cell_hash(method, seed) {
                        return Ok(cell);
                    }
                }
            }
        }
        let report = match ctx.run(method, seed) {
            Ok((report, outcome)) => {
                if let Some(dir) = &scatter_dir {
                    scatter_dump(
                        &outcome.final_predictions,
                        &outcome.validation_targets,
                        dir.join(format!("{stem}.csv")),
                    )?;
                }
                report
            }
            Err(e) => CellReport {
                method: method.name().to_string(),
                seed,
                status: CellStatus::Failed(e.to_string()),
                input_hash: ctx.cell_hash(method, seed),
                pretext_dim: None,
                pretrain_loss: Vec::new(),
                trace: Vec::new(),
                validation_label_reads_in_training: 0,
            },
        };
        if let Some(dir) = &trace_dir {
            write_json(&dir.join(format!("{stem}.json")), &report)?;
        }
        Ok(report)
    };

    let results: Vec<Result<CellReport>> = if options.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} jobs: {e}", options.jobs)))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    } else {
        cells.iter().map(run_cell).collect()
    };
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;

    let names: Vec<String> = config.methods.iter().map(|m| m.name().to_string()).collect();
    drop(ctx);
    let report = ExperimentReport::assemble(split, &names, reports);
    if let Some(dir) = &options.out_dir {
        write_summary(dir, &report)?;
    }
    Ok(report)
}

/// Writes `summary.json` and `summary.csv` for `report` into `dir`.
pub fn write_summary(dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            split: &report.split,
            best_epoch_selection: &report.best_epoch_selection,
            methods: &report.summaries,
        },
    )?;
    fs::write(dir.join("summary.csv"), report.summary_csv())?;
    Ok(())
}

/// Rebuilds a report from the `split.json` and `traces/` files of a run
/// directory.
pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let split: SplitSpec = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("traces"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    let cells: Vec<CellReport> = paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect::<Result<_>>()?;
    let mut methods: Vec<String> = Vec::new();
    for m in TrainingMethod::all() {
        if cells.iter().any(|c| c.method == m.name()) {
            methods.push(m.name().to_string());
        }
    }
    if let Some(c) = cells.iter().find(|c| !methods.contains(&c.method)) {
        return Err(Error::Validation(format!("trace file names unknown method {:?}", c.method)));
    }
    Ok(ExperimentReport::assemble(split, &methods, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_seven_methods_with_unique_names() {
        let all = TrainingMethod::all();
        let mut names: Vec<&str> = all.iter().map(|m| m.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 7);
        for m in all {
            assert_eq!(m.name().parse::<TrainingMethod>().unwrap(), m);
        }
        assert!("task4".parse::<TrainingMethod>().is_err());
        assert_eq!(all.iter().filter(|m| m.pretext.is_none()).count(), 1);
    }

    #[test]
    fn method_serde_uses_names() {
        let json = serde_json::to_string(&TrainingMethod::all()[5]).unwrap();
        assert_eq!(json, "\"task2_train_val\"");
        let back: TrainingMethod = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainingMethod::all()[5]);
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(0, INIT_TAG), derive_seed(0, FINETUNE_TAG));
        assert_ne!(derive_seed(0, INIT_TAG), derive_seed(1, INIT_TAG));
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut c = ExperimentConfig { seeds: vec![], ..Default::default() };
        assert!(c.validate().is_err());
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let c = ExperimentConfig { methods: vec![TrainingMethod::BASELINE; 2], ..Default::default() };
        assert!(c.validate().is_err());
    }
}
