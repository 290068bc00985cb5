//! Desk-scale Graphormer-style encoder.
//!
//! Tokens are one virtual graph token followed by one token per node. Node
//! tokens start as attribute embedding + clipped-degree embedding. Every
//! layer is pre-norm multi-head self-attention followed by a pre-norm GELU
//! feed-forward block, both residual. Attention logits receive a learned
//! per-head bias indexed by hop-distance bucket, plus a per-head bias indexed
//! by edge code for adjacent node pairs. Pairs involving the graph token use
//! their own distance bucket. A final layer norm feeds one linear head that
//! reads either the graph token (regression, multi-label) or a node token
//! (masked-attribute classification).

mod checkpoint;
mod encoder;
mod layers;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{ForwardTrace, Readout};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Hop distances above this share the last distance bucket.
    pub max_spd_bucket: usize,
    /// Degrees above this share the last degree bucket.
    pub max_degree_bucket: usize,
    pub node_attr_cardinality: usize,
    pub edge_attr_cardinality: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden_dim: 64,
            heads: 4,
            ffn_dim: 64,
            max_spd_bucket: 8,
            max_degree_bucket: 16,
            node_attr_cardinality: 8,
            edge_attr_cardinality: 4,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.node_attr_cardinality == 0 || self.edge_attr_cardinality == 0 {
            return Err(Error::Config(
                "ffn_dim and attribute cardinalities must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Reserved node code replacing the attribute of a masked node.
    pub fn mask_code(&self) -> u32 {
        self.node_attr_cardinality as u32
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Distance buckets: `0..=max_spd_bucket`, unreachable, graph token.
    pub fn spd_bucket_count(&self) -> usize {
        self.max_spd_bucket + 3
    }

    pub(crate) fn unreachable_bucket(&self) -> usize {
        self.max_spd_bucket + 1
    }

    pub(crate) fn graph_token_bucket(&self) -> usize {
        self.max_spd_bucket + 2
    }
}

/// Output head attached to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dim")]
pub enum HeadKind {
    Regression,
    NodeClass,
    MultiLabel(usize),
}

impl HeadKind {
    pub fn output_dim(&self, config: &ModelConfig) -> usize {
        match *self {
            HeadKind::Regression => 1,
            HeadKind::NodeClass => config.node_attr_cardinality,
            HeadKind::MultiLabel(k) => k,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    pub node_embed: ParamId,
    pub degree_embed: ParamId,
    pub graph_token: ParamId,
    pub spd_bias: ParamId,
    pub edge_bias: ParamId,
    pub layers: Vec<LayerIds>,
    pub final_gamma: ParamId,
    pub final_beta: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

pub(crate) const HEAD_PREFIX: &str = "head.";

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// Identifies a model state; traces remember the stamp they were built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Stamp {
    instance: u64,
    version: u64,
}

/// Graph transformer plus one output head.
#[derive(Debug)]
pub struct EncoderModel {
    config: ModelConfig,
    head: HeadKind,
    params: ParamSet,
    ids: ParamIds,
    stamp: Stamp,
}

impl Clone for EncoderModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            head: self.head,
            params: self.params.clone(),
            ids: self.ids.clone(),
            stamp: Stamp {
                instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
                version: 0,
            },
        }
    }
}

/// Symmetric normal truncated at two standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let x = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break x;
            }
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, name: String, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        name,
        shape: shape.to_vec(),
        data: truncated_normal(rng, INIT_STD, n),
    }
}

fn head_tensors(rng: &mut ChaCha8Rng, config: &ModelConfig, head: HeadKind) -> (Tensor, Tensor) {
    let out = head.output_dim(config);
    (
        random_tensor(rng, format!("{HEAD_PREFIX}w"), &[config.hidden_dim, out]),
        Tensor::zeros(format!("{HEAD_PREFIX}b"), &[out]),
    )
}

impl EncoderModel {
    /// Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, head: HeadKind, seed: u64) -> Result<Self> {
        config.validate()?;
        if head.output_dim(&config) == 0 {
            return Err(Error::Config("head output dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let mut p = ParamSet::new();
        let rt = |rng: &mut ChaCha8Rng, name: &str, shape: &[usize]| random_tensor(rng, name.to_string(), shape);

        let node_embed = p.push(rt(&mut rng, "embed.node", &[config.node_attr_cardinality + 1, d]));
        let degree_embed = p.push(rt(&mut rng, "embed.degree", &[config.max_degree_bucket + 1, d]));
        let graph_token = p.push(rt(&mut rng, "embed.graph_token", &[1, d]));
        let spd_bias = p.push(Tensor::zeros("bias.spd", &[config.spd_bucket_count(), config.heads]));
        let edge_bias = p.push(Tensor::zeros("bias.edge", &[config.edge_attr_cardinality, config.heads]));

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let pre = format!("layer{l}");
            let mat = |p: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]| {
                p.push(random_tensor(rng, format!("{pre}.{name}"), shape))
            };
            let ln1_gamma = p.push(Tensor::filled(format!("layer{l}.ln1.gamma"), &[d], 1.0));
            let ln1_beta = p.push(Tensor::zeros(format!("layer{l}.ln1.beta"), &[d]));
            let wq = mat(&mut p, &mut rng, "attn.wq", &[d, d]);
            let bq = p.push(Tensor::zeros(format!("layer{l}.attn.bq"), &[d]));
            let wk = mat(&mut p, &mut rng, "attn.wk", &[d, d]);
            let bk = p.push(Tensor::zeros(format!("layer{l}.attn.bk"), &[d]));
            let wv = mat(&mut p, &mut rng, "attn.wv", &[d, d]);
            let bv = p.push(Tensor::zeros(format!("layer{l}.attn.bv"), &[d]));
            let wo = mat(&mut p, &mut rng, "attn.wo", &[d, d]);
            let bo = p.push(Tensor::zeros(format!("layer{l}.attn.bo"), &[d]));
            let ln2_gamma = p.push(Tensor::filled(format!("layer{l}.ln2.gamma"), &[d], 1.0));
            let ln2_beta = p.push(Tensor::zeros(format!("layer{l}.ln2.beta"), &[d]));
            let w1 = mat(&mut p, &mut rng, "ffn.w1", &[d, config.ffn_dim]);
            let b1 = p.push(Tensor::zeros(format!("layer{l}.ffn.b1"), &[config.ffn_dim]));
            let w2 = mat(&mut p, &mut rng, "ffn.w2", &[config.ffn_dim, d]);
            let b2 = p.push(Tensor::zeros(format!("layer{l}.ffn.b2"), &[d]));
            layers.push(LayerIds {
                ln1_gamma,
                ln1_beta,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_gamma,
                ln2_beta,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let final_gamma = p.push(Tensor::filled("final_ln.gamma", &[d], 1.0));
        let final_beta = p.push(Tensor::zeros("final_ln.beta", &[d]));
        let (hw, hb) = head_tensors(&mut rng, &config, head);
        let head_w = p.push(hw);
        let head_b = p.push(hb);

        Ok(Self {
            config,
            head,
            params: p,
            ids: ParamIds {
                node_embed,
                degree_embed,
                graph_token,
                spd_bias,
                edge_bias,
                layers,
                final_gamma,
                final_beta,
                head_w,
                head_b,
            },
            stamp: Stamp {
                instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
                version: 0,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameter access. Invalidates every outstanding trace.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.stamp.version += 1;
        &mut self.params
    }

    /// Fingerprint of every non-head parameter.
    pub fn encoder_fingerprint(&self) -> u64 {
        self.params.fingerprint(|name| !name.starts_with(HEAD_PREFIX))
    }

    /// Replaces the head with a freshly initialized one; encoder parameters
    /// are untouched.
    pub fn swap_head(mut self, head: HeadKind, seed: u64) -> Result<Self> {
        if head.output_dim(&self.config) == 0 {
            return Err(Error::Config("head output dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hw, hb) = head_tensors(&mut rng, &self.config, head);
        let params = self.params_mut();
        params.remove_prefix(HEAD_PREFIX);
        let head_w = params.push(hw);
        let head_b = params.push(hb);
        self.ids.head_w = head_w;
        self.ids.head_b = head_b;
        self.head = head;
        Ok(self)
    }

    #[cfg(test)]
    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }
}
