use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    ForwardHoldout,
    RandomHoldout,
}

/// How records tied at the forward-split boundary were handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "moved")]
pub enum TieAdjustment {
    None,
    /// Tied records were moved from validation to train.
    ToTrain(usize),
    /// Moving ties to train would have emptied validation, so the tie group
    /// went to validation instead.
    ToValidation(usize),
}

/// Partition of the labeled records into train and validation ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub max_train_label: f64,
    pub min_validation_label: f64,
    pub requested_validation: usize,
    pub tie_adjustment: TieAdjustment,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")))
    }
}

fn labeled(records: &[GraphRecord]) -> Result<Vec<(&str, f64)>> {
    let pool: Vec<(&str, f64)> = records
        .iter()
        .filter_map(|r| r.label.map(|y| (r.id.as_str(), y)))
        .collect();
    if pool.len() < 2 {
        return Err(Error::Split(format!("need at least 2 labeled records, found {}", pool.len())));
    }
    Ok(pool)
}

fn requested(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

fn bounds(train: &[(&str, f64)], val: &[(&str, f64)]) -> (f64, f64) {
    let max_train = train.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min_val = val.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    (max_train, min_val)
}

fn ids(pairs: &[(&str, f64)]) -> Vec<String> {
    pairs.iter().map(|p| p.0.to_string()).collect()
}

/// Forward holdout: the largest labels form the validation set, with every
/// validation label strictly above every train label. Unlabeled records are
/// ignored.
pub fn forward_split(records: &[GraphRecord], validation_fraction: f64) -> Result<SplitSpec> {
    check_fraction(validation_fraction)?;
    let mut pool = labeled(records)?;
    if pool.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::Validation("labels must be finite".into()));
    }
    pool.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n = pool.len();
    let want = requested(n, validation_fraction);
    let nominal = n - want;
    let boundary = pool[nominal].1;

    let (cut, tie_adjustment) = if pool[nominal - 1].1 < boundary {
        (nominal, TieAdjustment::None)
    } else {
        let above = nominal + pool[nominal..].iter().take_while(|p| p.1 == boundary).count();
        if above < n {
            (above, TieAdjustment::ToTrain(above - nominal))
        } else {
            let below = pool[..nominal].iter().rev().take_while(|p| p.1 == boundary).count();
            if below == nominal {
                return Err(Error::Split("all labels are equal; no strict forward split exists".into()));
            }
            (nominal - below, TieAdjustment::ToValidation(below))
        }
    };

    let (train, val) = pool.split_at(cut);
    let (max_train_label, min_validation_label) = bounds(train, val);
    Ok(SplitSpec {
        kind: SplitKind::ForwardHoldout,
        train: ids(train),
        validation: ids(val),
        max_train_label,
        min_validation_label,
        requested_validation: want,
        tie_adjustment,
    })
}

/// Uniform random holdout of `round(fraction * n)` labeled records.
pub fn random_split(records: &[GraphRecord], validation_fraction: f64, seed: u64) -> Result<SplitSpec> {
    check_fraction(validation_fraction)?;
    let mut pool = labeled(records)?;
    let want = requested(pool.len(), validation_fraction);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = pool.split_at(want);
    let (max_train_label, min_validation_label) = bounds(train, val);
    Ok(SplitSpec {
        kind: SplitKind::RandomHoldout,
        train: ids(train),
        validation: ids(val),
        max_train_label,
        min_validation_label,
        requested_validation: want,
        tie_adjustment: TieAdjustment::None,
    })
}
