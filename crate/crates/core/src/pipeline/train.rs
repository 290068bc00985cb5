use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mae, rank_correlation, saturation, MetricPoint};
use crate::graph::{Graph, GraphRecord};
use crate::model::{EncoderModel, HeadKind, Readout};
use crate::optim::{
    adamw_step, loss_bce_multilabel, loss_cross_entropy, loss_mae, AdamWConfig, LrSchedule,
    OptimizerState,
};
use crate::pretext::MultiHotLabel;

use super::split::SplitSpec;

/// Optimisation settings shared by pretraining and fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub end_lr: f64,
    pub power: f64,
    pub optimizer: AdamWConfig,
    /// Fine-tune on train labels standardised with train mean and std.
    pub normalize_targets: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            peak_lr: 2e-4,
            warmup_fraction: 0.05,
            end_lr: 0.0,
            power: 1.0,
            optimizer: AdamWConfig::default(),
            normalize_targets: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        self.schedule(1)?;
        Ok(())
    }

    fn schedule(&self, total_steps: u64) -> Result<LrSchedule> {
        let mut s = LrSchedule::with_warmup_fraction(self.peak_lr, total_steps, self.warmup_fraction)?;
        s.end_lr = self.end_lr;
        s.power = self.power;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextTask {
    /// Task 1: predict the attribute of the masked node.
    NodeMasking,
    /// Task 2: multi-label presence of vocabulary structures.
    StructurePresence,
    /// Task 3: multi-label presence of motifs.
    MotifPresence,
}

#[derive(Debug, Clone)]
enum Target {
    Class { node: usize, class: usize },
    Bits(Vec<f64>),
}

#[derive(Debug, Clone)]
struct PretextExample {
    graph: Graph,
    target: Target,
}

/// Label-free pretraining examples for one task.
#[derive(Debug, Clone)]
pub struct PretextData {
    task: PretextTask,
    head: HeadKind,
    examples: Vec<PretextExample>,
}

impl PretextData {
    /// Replaces node `masks[i]` of graph `i` by `mask_code`; the target is the
    /// original attribute.
    pub fn node_masking(graphs: &[&Graph], masks: &[usize], mask_code: u32) -> Result<Self> {
        if graphs.len() != masks.len() {
            return Err(Error::Config(format!("{} masks for {} graphs", masks.len(), graphs.len())));
        }
        let examples = graphs
            .iter()
            .zip(masks)
            .map(|(g, &m)| {
                if m >= g.node_count() {
                    return Err(Error::Validation(format!("mask index {m} outside a {}-node graph", g.node_count())));
                }
                let class = g.node_attrs()[m];
                if class >= mask_code {
                    return Err(Error::Validation(format!("node attribute {class} is not below the mask code")));
                }
                Ok(PretextExample {
                    graph: g.with_node_attr(m, mask_code),
                    target: Target::Class { node: m, class: class as usize },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { task: PretextTask::NodeMasking, head: HeadKind::NodeClass, examples })
    }

    /// Multi-label targets; every label must have the same dimension.
    pub fn multilabel(task: PretextTask, graphs: &[&Graph], labels: &[MultiHotLabel]) -> Result<Self> {
        if task == PretextTask::NodeMasking {
            return Err(Error::Config("node masking is not a multi-label task".into()));
        }
        if graphs.len() != labels.len() {
            return Err(Error::Config(format!("{} labels for {} graphs", labels.len(), graphs.len())));
        }
        let dim = labels.first().map_or(0, MultiHotLabel::dim);
        if dim == 0 {
            return Err(Error::Config("multi-label pretext task needs a non-empty vocabulary".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.dim() != dim) {
            return Err(Error::Config(format!("label dimension {} differs from {dim}", bad.dim())));
        }
        let examples = graphs
            .iter()
            .zip(labels)
            .map(|(g, l)| PretextExample { graph: (*g).clone(), target: Target::Bits(l.as_targets()) })
            .collect();
        Ok(Self { task, head: HeadKind::MultiLabel(dim), examples })
    }

    pub fn task(&self) -> PretextTask {
        self.task
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Loss of a predictor with constant zero logits.
    pub fn uniform_loss(&self, node_attr_cardinality: usize) -> f64 {
        match self.task {
            PretextTask::NodeMasking => (node_attr_cardinality as f64).ln(),
            _ => std::f64::consts::LN_2,
        }
    }
}

fn readout(target: &Target) -> Readout {
    match *target {
        Target::Class { node, .. } => Readout::MaskedNode(node),
        Target::Bits(_) => Readout::Graph,
    }
}

fn pretext_loss_of(out: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Class { class, .. } => loss_cross_entropy(out, *class),
        Target::Bits(bits) => loss_bce_multilabel(out, bits),
    }
}

/// Mean evaluation-mode pretext loss.
pub fn pretext_loss(model: &EncoderModel, data: &PretextData) -> Result<f64> {
    if model.head() != data.head {
        return Err(Error::Config(format!("model head {:?} does not fit pretext head {:?}", model.head(), data.head)));
    }
    if data.is_empty() {
        return Err(Error::Config("no pretext examples".into()));
    }
    let mut total = 0.0;
    for ex in &data.examples {
        let (out, _) = model.forward(&ex.graph, readout(&ex.target), None::<&mut ChaCha8Rng>)?;
        total += pretext_loss_of(&out, &ex.target)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch AdamW over shuffled examples.
struct Trainer {
    state: OptimizerState,
    schedule: LrSchedule,
    batch_size: usize,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    fn new(model: &EncoderModel, cfg: &TrainingConfig, examples: usize, epochs: usize, seed: u64) -> Result<Self> {
        let batches = examples.div_ceil(cfg.batch_size) as u64;
        Ok(Self {
            state: OptimizerState::new(model.params(), cfg.optimizer),
            schedule: cfg.schedule(batches * epochs as u64)?,
            batch_size: cfg.batch_size,
            order_rng: ChaCha8Rng::seed_from_u64(seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    /// Runs one epoch; `step(model, i, rng)` returns the loss and the trace
    /// gradient for example `i`. Returns the mean example loss.
    fn epoch<F>(&mut self, model: &mut EncoderModel, examples: usize, mut step: F) -> Result<f64>
    where
        F: FnMut(&EncoderModel, usize, &mut ChaCha8Rng, &mut crate::params::Gradients) -> Result<f64>,
    {
        let mut order: Vec<usize> = (0..examples).collect();
        order.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        for batch in order.chunks(self.batch_size) {
            let mut grads = model.params().zeros_like();
            for &i in batch {
                total += step(model, i, &mut self.dropout_rng, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            let lr = self.schedule.lr_at(self.state.step);
            adamw_step(model.params_mut(), &grads, &mut self.state, lr)?;
        }
        Ok(total / examples as f64)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: EncoderModel,
    /// Mean training loss per epoch, with dropout active.
    pub epoch_losses: Vec<f64>,
    /// Evaluation-mode loss before the first update.
    pub initial_loss: f64,
    /// Evaluation-mode loss after the last epoch.
    pub final_loss: f64,
}

/// Trains `model` on the pretext examples. Property labels never enter here.
pub fn pretrain(
    mut model: EncoderModel,
    data: &PretextData,
    cfg: &TrainingConfig,
    epochs: usize,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if epochs == 0 {
        return Err(Error::Config("pretrain epochs must be >= 1".into()));
    }
    let initial_loss = pretext_loss(&model, data)?;
    let mut trainer = Trainer::new(&model, cfg, data.len(), epochs, seed)?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let loss = trainer.epoch(&mut model, data.len(), |m, i, rng, grads| {
            let ex = &data.examples[i];
            let (out, trace) = m.forward(&ex.graph, readout(&ex.target), Some(rng))?;
            let (loss, dl) = pretext_loss_of(&out, &ex.target)?;
            m.backward_into(&trace, &dl, grads)?;
            Ok(loss)
        })?;
        epoch_losses.push(loss);
    }
    let final_loss = pretext_loss(&model, data)?;
    Ok(PretrainOutcome { model, epoch_losses, initial_loss, final_loss })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub training_reads: u64,
    /// Reads of validation labels from a gradient path; must stay 0.
    pub validation_reads_in_training: u64,
    pub evaluation_reads: u64,
}

/// Property-label accessor that counts who reads what.
pub struct LabelAccess<'a> {
    labels: HashMap<&'a str, Option<f64>>,
    validation: HashSet<&'a str>,
    counts: Cell<AuditCounts>,
}

impl<'a> LabelAccess<'a> {
    pub fn new(records: &'a [GraphRecord], split: &'a SplitSpec) -> Self {
        Self {
            labels: records.iter().map(|r| (r.id.as_str(), r.label)).collect(),
            validation: split.validation.iter().map(String::as_str).collect(),
            counts: Cell::new(AuditCounts::default()),
        }
    }

    fn read(&self, id: &str) -> Result<f64> {
        match self.labels.get(id) {
            None => Err(Error::Validation(format!("split id {id:?} is not in the dataset"))),
            Some(None) => Err(Error::Validation(format!("record {id:?} has no label"))),
            Some(Some(y)) => Ok(*y),
        }
    }

    pub fn for_training(&self, id: &str) -> Result<f64> {
        let mut c = self.counts.get();
        c.training_reads += 1;
        if self.validation.contains(id) {
            c.validation_reads_in_training += 1;
        }
        self.counts.set(c);
        self.read(id)
    }

    pub fn for_evaluation(&self, id: &str) -> Result<f64> {
        let mut c = self.counts.get();
        c.evaluation_reads += 1;
        self.counts.set(c);
        self.read(id)
    }

    pub fn counts(&self) -> AuditCounts {
        self.counts.get()
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: EncoderModel,
    pub trace: Vec<MetricPoint>,
    pub validation_ids: Vec<String>,
    pub validation_targets: Vec<f64>,
    /// Validation predictions after the last epoch, in label units.
    pub final_predictions: Vec<f64>,
    pub audit: AuditCounts,
}

fn check_split(split: &SplitSpec) -> Result<()> {
    let train: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    if train.len() != split.train.len() {
        return Err(Error::Validation("split lists a train id twice".into()));
    }
    if let Some(id) = split.validation.iter().find(|id| train.contains(id.as_str())) {
        return Err(Error::Validation(format!("id {id:?} is in both train and validation")));
    }
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Validation("split needs non-empty train and validation sets".into()));
    }
    Ok(())
}

/// Trains the regression head and encoder on the train ids by MAE and
/// evaluates the validation ids after every epoch.
pub fn finetune(
    mut model: EncoderModel,
    records: &[GraphRecord],
    split: &SplitSpec,
    cfg: &TrainingConfig,
    epochs: usize,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if epochs == 0 {
        return Err(Error::Config("finetune epochs must be >= 1".into()));
    }
    if model.head() != HeadKind::Regression {
        return Err(Error::Config(format!("fine-tuning needs a regression head, found {:?}", model.head())));
    }
    check_split(split)?;
    let by_id: HashMap<&str, &Graph> = records.iter().map(|r| (r.id.as_str(), &r.graph)).collect();
    let graph = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("split id {id:?} is not in the dataset")))
    };
    let access = LabelAccess::new(records, split);

    let train_graphs: Vec<&Graph> = split.train.iter().map(|id| graph(id)).collect::<Result<_>>()?;
    let train_y: Vec<f64> = split.train.iter().map(|id| access.for_training(id)).collect::<Result<_>>()?;
    let val_graphs: Vec<&Graph> = split.validation.iter().map(|id| graph(id)).collect::<Result<_>>()?;

    let (shift, scale) = if cfg.normalize_targets {
        let n = train_y.len() as f64;
        let mean = train_y.iter().sum::<f64>() / n;
        let std = (train_y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
        (mean, if std > 0.0 { std } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let train_t: Vec<f64> = train_y.iter().map(|y| (y - shift) / scale).collect();

    let mut trainer = Trainer::new(&model, cfg, train_graphs.len(), epochs, seed)?;
    let mut trace = Vec::with_capacity(epochs);
    let mut val_y: Option<Vec<f64>> = None;
    let mut preds = Vec::new();
    for epoch in 1..=epochs {
        let loss = trainer.epoch(&mut model, train_graphs.len(), |m, i, rng, grads| {
            let (out, tr) = m.forward(train_graphs[i], Readout::Graph, Some(rng))?;
            let (loss, dl) = loss_mae(&out, &train_t[i..=i])?;
            m.backward_into(&tr, &dl, grads)?;
            Ok(loss)
        })?;
        preds = val_graphs
            .iter()
            .map(|g| model.predict(g).map(|y| shift + scale * y))
            .collect::<Result<_>>()?;
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric { param: "validation prediction".into() });
        }
        let targets = match &val_y {
            Some(v) => v,
            None => {
                let v = split.validation.iter().map(|id| access.for_evaluation(id)).collect::<Result<_>>()?;
                val_y.insert(v)
            }
        };
        let sat = saturation(&preds, split);
        trace.push(MetricPoint {
            epoch,
            train_mae: loss * scale,
            val_mae: mae(&preds, targets)?,
            rank_corr: rank_correlation(&preds, targets)?,
            max_prediction: sat.max_prediction,
            saturation_margin: sat.margin,
            fraction_above_train_max: sat.fraction_above,
            val_count: preds.len(),
        });
    }
    Ok(FinetuneOutcome {
        model,
        trace,
        validation_ids: split.validation.clone(),
        validation_targets: val_y.unwrap_or_default(),
        final_predictions: preds,
        audit: access.counts(),
    })
}
