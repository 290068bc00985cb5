//! Regression metrics for held-out predictions: MAE, Spearman rank
//! correlation, saturation above the training-label maximum, and CSV dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SplitSpec;

fn check_lengths(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("metrics need at least one prediction".into()));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds, targets)?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / preds.len() as f64)
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation with average ranks for ties. `None` when either
/// side has fewer than two elements or no rank variance.
pub fn rank_correlation(preds: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    check_lengths(preds, targets)?;
    if preds.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(preds), &average_ranks(targets)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub max_prediction: f64,
    /// `max_prediction - max train label`.
    pub margin: f64,
    /// Share of predictions strictly above the max train label.
    pub fraction_above: f64,
}

pub fn saturation(preds: &[f64], split: &SplitSpec) -> Saturation {
    let cap = split.max_train_label;
    let max_prediction = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Saturation {
        max_prediction,
        margin: max_prediction - cap,
        fraction_above: fraction_above(preds, cap),
    }
}

/// Share of `preds` strictly greater than `threshold`; 0 for no predictions.
pub fn fraction_above(preds: &[f64], threshold: f64) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|&&p| p > threshold).count() as f64 / preds.len() as f64
}

pub const SCATTER_HEADER: &str = "true,pred";

/// Writes `true,pred` rows using shortest round-trip float formatting.
pub fn scatter_dump(preds: &[f64], targets: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCATTER_HEADER}")?;
    for (p, t) in preds.iter().zip(targets) {
        writeln!(w, "{t},{p}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scatter file back as `(true, pred)` pairs.
pub fn read_scatter(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == SCATTER_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header {SCATTER_HEADER:?}") }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line: i + 2,
                message: format!("malformed row {line:?}"),
            })
        };
        let mut parts = line.split(',');
        let t = parse(parts.next())?;
        let p = parse(parts.next())?;
        rows.push((t, p));
    }
    Ok(rows)
}

/// Metrics recorded after one fine-tuning epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    /// `None` when the correlation is undefined.
    pub rank_corr: Option<f64>,
    pub max_prediction: f64,
    pub saturation_margin: f64,
    pub fraction_above_train_max: f64,
    pub val_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "message")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

/// Outcome of one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub seed: u64,
    pub status: CellStatus,
    /// Fingerprint of the inputs that produced this cell, used for resuming.
    pub input_hash: String,
    pub pretext_dim: Option<usize>,
    pub pretrain_loss: Vec<f64>,
    pub trace: Vec<MetricPoint>,
    pub validation_label_reads_in_training: u64,
}

impl CellReport {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    /// Lowest validation MAE over epochs.
    pub fn best_val_mae(&self) -> Option<f64> {
        self.trace.iter().map(|m| m.val_mae).reduce(f64::min)
    }

    /// Highest defined rank correlation over epochs.
    pub fn best_rank_corr(&self) -> Option<f64> {
        self.trace.iter().filter_map(|m| m.rank_corr).reduce(f64::max)
    }

    pub fn final_point(&self) -> Option<&MetricPoint> {
        self.trace.last()
    }
}

/// Per-method means over the successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seed_count: usize,
    pub failed_seeds: Vec<u64>,
    pub best_val_mae: Option<f64>,
    pub best_rank_corr: Option<f64>,
    pub final_val_mae: Option<f64>,
    pub final_rank_corr: Option<f64>,
    pub saturation_fraction: Option<f64>,
    pub val_count: Option<usize>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MethodSummary {
    pub fn from_cells(method: &str, cells: &[&CellReport]) -> Self {
        let ok: Vec<&CellReport> = cells.iter().copied().filter(|c| c.is_ok()).collect();
        let finals: Vec<&MetricPoint> = ok.iter().filter_map(|c| c.final_point()).collect();
        Self {
            method: method.to_string(),
            seed_count: ok.len(),
            failed_seeds: cells.iter().filter(|c| !c.is_ok()).map(|c| c.seed).collect(),
            best_val_mae: mean(ok.iter().filter_map(|c| c.best_val_mae())),
            best_rank_corr: mean(ok.iter().filter_map(|c| c.best_rank_corr())),
            final_val_mae: mean(finals.iter().map(|m| m.val_mae)),
            final_rank_corr: mean(finals.iter().filter_map(|m| m.rank_corr)),
            saturation_fraction: mean(finals.iter().map(|m| m.fraction_above_train_max)),
            val_count: finals.first().map(|m| m.val_count),
        }
    }
}

pub const SUMMARY_CSV_HEADER: &str =
    "method,seed_count,best_val_mae,best_rank_corr,final_rank_corr,saturation_fraction";

/// Marker written in CSV cells for undefined metrics.
pub const UNDEFINED: &str = "undefined";

fn csv_value(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

/// All cells of a run plus per-method summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub split: SplitSpec,
    /// How the "best" columns are chosen.
    pub best_epoch_selection: String,
    pub summaries: Vec<MethodSummary>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// Groups `cells` by method in the order given by `methods`.
    pub fn assemble(split: SplitSpec, methods: &[String], mut cells: Vec<CellReport>) -> Self {
        cells.sort_by(|a, b| {
            let pos = |m: &str| methods.iter().position(|x| x == m);
            pos(&a.method).cmp(&pos(&b.method)).then(a.seed.cmp(&b.seed))
        });
        let summaries = methods
            .iter()
            .map(|m| {
                let mine: Vec<&CellReport> = cells.iter().filter(|c| &c.method == m).collect();
                MethodSummary::from_cells(m, &mine)
            })
            .collect();
        Self {
            split,
            best_epoch_selection: "per seed, the epoch with the best validation value of each metric \
                                   (an oracle choice on the extrapolation set; final-epoch columns avoid it)"
                .into(),
            summaries,
            cells,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(CellReport::is_ok)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_CSV_HEADER);
        out.push('\n');
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.method,
                s.seed_count,
                csv_value(s.best_val_mae),
                csv_value(s.best_rank_corr),
                csv_value(s.final_rank_corr),
                csv_value(s.saturation_fraction),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn correlation_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rank_correlation(&[0.1, 0.5, 0.7, 9.0], &t).unwrap(), Some(1.0));
        assert_eq!(rank_correlation(&[4.0, 3.0, 2.0, 1.0], &t).unwrap(), Some(-1.0));
        // ranks [1, 2.5, 2.5, 4] against [1, 2, 3, 4]: centred cross sum 4.5,
        // centred square sums 4.5 and 5.
        let expected = 0.9f64.sqrt();
        let got = rank_correlation(&[1.0, 2.0, 2.0, 4.0], &t).unwrap().unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert_eq!(rank_correlation(&[1.0, 2.0], &[3.0, 3.0]).unwrap(), None);
        assert_eq!(rank_correlation(&[1.0], &[3.0]).unwrap(), None);
    }

    fn split(max_train: f64) -> SplitSpec {
        SplitSpec {
            kind: crate::pipeline::SplitKind::ForwardHoldout,
            train: vec!["a".into()],
            validation: vec!["b".into()],
            max_train_label: max_train,
            min_validation_label: max_train + 1.0,
            requested_validation: 1,
            tie_adjustment: crate::pipeline::TieAdjustment::None,
        }
    }

    #[test]
    fn saturation_examples() {
        let s = saturation(&[0.5, 1.0, 1.5], &split(2.0));
        assert!(s.margin < 0.0);
        assert_eq!(s.fraction_above, 0.0);
        let s = saturation(&[0.5, 3.0, 1.5, 2.0], &split(2.0));
        assert_eq!(s.margin, 1.0);
        assert_eq!(s.fraction_above, 0.25);
    }

    #[test]
    fn scatter_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let preds = [0.1, -2.5e-7, 1.0 / 3.0];
        let targets = [1.0, 2.0, std::f64::consts::PI];
        scatter_dump(&preds, &targets, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("true,pred\n"));
        let rows = read_scatter(&path).unwrap();
        assert_eq!(rows.len(), 3);
        for (i, (t, p)) in rows.into_iter().enumerate() {
            assert_eq!((t, p), (targets[i], preds[i]));
        }
    }

    #[test]
    fn summary_uses_marker_for_undefined() {
        let cell = CellReport {
            method: "baseline".into(),
            seed: 0,
            status: CellStatus::Ok,
            input_hash: String::new(),
            pretext_dim: None,
            pretrain_loss: vec![],
            trace: vec![MetricPoint {
                epoch: 1,
                train_mae: 1.0,
                val_mae: 2.0,
                rank_corr: None,
                max_prediction: 0.0,
                saturation_margin: -1.0,
                fraction_above_train_max: 0.0,
                val_count: 1,
            }],
            validation_label_reads_in_training: 0,
        };
        let report = ExperimentReport::assemble(split(1.0), &["baseline".into()], vec![cell]);
        let csv = report.summary_csv();
        assert_eq!(csv.lines().next().unwrap(), SUMMARY_CSV_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "baseline,1,2,undefined,undefined,0");
    }
}
