//! Loss functions, the AdamW optimizer and the warmup + polynomial-decay
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};

/// Mean absolute error and its (sub)gradient with respect to `pred`.
/// The subgradient at `pred == target` is taken as 0.
pub fn loss_mae(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Validation(format!(
            "mae needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Softmax cross-entropy of `logits` against class `target`.
pub fn loss_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Validation(format!(
            "target class {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - max);
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Mean over labels of binary cross-entropy on logits.
pub fn loss_bce_multilabel(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::Validation(format!(
            "bce needs equal non-empty dimensions, got {} and {}",
            logits.len(),
            target.len()
        )));
    }
    let k = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&z, &t)| {
            // max(z, 0) - z t + ln(1 + e^{-|z|})
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - t) / k
        })
        .collect();
    Ok((loss / k, grad))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers and step counter for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One AdamW update (decoupled weight decay, bias-corrected moments), in the
/// order used by PyTorch: decay, moment update, parameter step.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let congruent = params.len() == grads.buffers().len()
        && params.len() == state.first.len()
        && params
            .tensors()
            .iter()
            .zip(grads.buffers())
            .zip(&state.first)
            .all(|((t, g), m)| t.len() == g.len() && t.len() == m.len());
    if !congruent {
        return Err(Error::Validation(
            "parameters, gradients and optimizer state are not congruent".into(),
        ));
    }
    for (t, g) in params.tensors().iter().zip(grads.buffers()) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                param: t.name.clone(),
            });
        }
    }

    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let step = state.step as i32;
    let correction1 = 1.0 - beta1.powi(step);
    let correction2 = 1.0 - beta2.powi(step);
    let decay = 1.0 - lr * weight_decay;

    for (((t, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.buffers())
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for i in 0..t.data.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            t.data[i] = t.data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup to `peak_lr`, then polynomial decay to `end_lr` at
/// `total_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub end_lr: f64,
    pub power: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            peak_lr,
            warmup_steps,
            total_steps,
            end_lr: 0.0,
            power: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Warmup length as a fraction of `total_steps`, rounded down.
    pub fn with_warmup_fraction(peak_lr: f64, total_steps: u64, fraction: f64) -> Result<Self> {
        Self::new(peak_lr, (total_steps as f64 * fraction).floor() as u64, total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr >= 0.0 && self.end_lr >= 0.0 && self.power > 0.0) {
            return Err(Error::Config(
                "learning rates must be >= 0 and power > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps.max(1) as f64;
        }
        if step >= self.total_steps {
            return if self.total_steps == self.warmup_steps && step == self.warmup_steps {
                self.peak_lr
            } else {
                self.end_lr
            };
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let remaining = 1.0 - (step - self.warmup_steps) as f64 / span;
        self.end_lr + (self.peak_lr - self.end_lr) * remaining.powf(self.power)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.lr_at(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Tensor;

    fn scalar_params(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push(Tensor::filled("w", &[1], w));
        p
    }

    #[test]
    fn mae_examples() {
        assert_eq!(loss_mae(&[1.5, 2.0], &[1.5, 2.0]).unwrap().0, 0.0);
        assert_eq!(loss_mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap().0, 1.0);
        assert!(loss_mae(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(loss_mae(&[3.0, 0.0, 1.0], &[1.0, 2.0, 1.0]).unwrap().1, vec![1.0 / 3.0, -1.0 / 3.0, 0.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = loss_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let (l, g) = loss_cross_entropy(&[0.0, 1000.0, 0.0], 1).unwrap();
        assert!(l.abs() < 1e-12 && l.is_finite());
        assert!(g.iter().all(|x| x.is_finite()));
        assert!(loss_cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn bce_examples() {
        let (l, _) = loss_bce_multilabel(&[0.0; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, g) = loss_bce_multilabel(&[1000.0], &[1.0]).unwrap();
        assert!(l.abs() < 1e-12 && g[0].abs() < 1e-12);
        let (l, _) = loss_bce_multilabel(&[-1000.0], &[1.0]).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
        assert!(loss_bce_multilabel(&[0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = scalar_params(0.7);
        let before = p.clone();
        let config = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimizerState::new(&p, config);
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut state, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn scalar_adamw_first_step() {
        // m = 0.1, v = 0.001; bias corrections give m_hat = v_hat = 1.
        let mut p = scalar_params(1.0);
        let config = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimizerState::new(&p, config);
        let g = Gradients::from_buffers(vec![vec![1.0]]);
        adamw_step(&mut p, &g, &mut state, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors()[0].data[0] - expected).abs() < 1e-15);
        assert!((p.tensors()[0].data[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = scalar_params(2.0);
        let mut state = OptimizerState::new(&p, AdamWConfig::default());
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut state, 0.1).unwrap();
        assert!((p.tensors()[0].data[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn adamw_errors() {
        let mut p = scalar_params(1.0);
        let mut state = OptimizerState::new(&p, AdamWConfig::default());
        let bad_shape = Gradients::from_buffers(vec![vec![1.0, 2.0]]);
        assert!(matches!(adamw_step(&mut p, &bad_shape, &mut state, 0.1), Err(Error::Validation(_))));
        let nan = Gradients::from_buffers(vec![vec![f64::NAN]]);
        match adamw_step(&mut p, &nan, &mut state, 0.1) {
            Err(Error::Numeric { param }) => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::new(2e-4, 10, 110).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(10), 2e-4);
        assert!((s.lr_at(60) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(110), 0.0);
        assert_eq!(s.lr_at(500), 0.0);
        assert!(LrSchedule::new(1.0, 5, 4).is_err());
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        let s = LrSchedule::new(1e-3, 0, 100).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        let degenerate = LrSchedule::new(1e-3, 0, 0).unwrap();
        assert_eq!(degenerate.lr_at(0), 1e-3);
    }
}
