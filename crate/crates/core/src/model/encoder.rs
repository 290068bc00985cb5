//! Forward pass with cached activations and the matching reverse pass.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::layers::*;
use super::{EncoderModel, HeadKind, LayerIds, Stamp};
use crate::error::{Error, Result};
use crate::graph::{shortest_paths, Graph, UNREACHABLE};
use crate::params::Gradients;

/// Which token the head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// The virtual graph token.
    Graph,
    /// A node token; that node's attribute is replaced by the mask code.
    MaskedNode(usize),
}

/// Per-graph token indices into the embedding and bias tables.
struct Layout {
    tokens: usize,
    node_rows: Vec<usize>,
    degree_rows: Vec<usize>,
    spd_bucket: Vec<usize>,
    edge_code: Vec<Option<usize>>,
}

struct LayerTrace {
    ln1: LnCache,
    normed1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LnCache,
    normed2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

/// Activations cached by a forward pass, consumed by
/// [`EncoderModel::backward`].
pub struct ForwardTrace {
    stamp: Stamp,
    head: HeadKind,
    layout: Layout,
    layers: Vec<LayerTrace>,
    final_ln: LnCache,
    final_out: Array2<f64>,
    readout_row: usize,
    head_dim: usize,
}

impl ForwardTrace {
    pub fn output_dim(&self) -> usize {
        self.head_dim
    }
}

impl EncoderModel {
    fn layout(&self, g: &Graph, masked: Option<usize>) -> Result<Layout> {
        let c = &self.config;
        let n = g.node_count();
        if let Some(m) = masked {
            if m >= n {
                return Err(Error::Validation(format!(
                    "masked index {m} out of range for {n} nodes"
                )));
            }
        }
        let mut node_rows = Vec::with_capacity(n);
        for (i, &a) in g.node_attrs().iter().enumerate() {
            let a = a as usize;
            if a > c.node_attr_cardinality {
                return Err(Error::Validation(format!(
                    "node {i} has attribute code {a}, cardinality is {}",
                    c.node_attr_cardinality
                )));
            }
            node_rows.push(if masked == Some(i) { c.node_attr_cardinality } else { a });
        }
        let degree_rows = (0..n).map(|i| g.degree(i).min(c.max_degree_bucket)).collect();

        let t = n + 1;
        let spd = shortest_paths(g);
        let mut spd_bucket = vec![c.graph_token_bucket(); t * t];
        let mut edge_code = vec![None; t * t];
        for a in 0..n {
            for b in 0..n {
                let dist = spd.get(a, b);
                spd_bucket[(a + 1) * t + b + 1] = if dist == UNREACHABLE {
                    c.unreachable_bucket()
                } else {
                    (dist as usize).min(c.max_spd_bucket)
                };
            }
        }
        for &(u, v, e) in g.edges() {
            let e = e as usize;
            if e >= c.edge_attr_cardinality {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) has attribute code {e}, cardinality is {}",
                    c.edge_attr_cardinality
                )));
            }
            edge_code[(u + 1) * t + v + 1] = Some(e);
            edge_code[(v + 1) * t + u + 1] = Some(e);
        }
        Ok(Layout {
            tokens: t,
            node_rows,
            degree_rows,
            spd_bucket,
            edge_code,
        })
    }

    fn check_head(&self, expected: HeadKind) -> Result<()> {
        if self.head != expected {
            return Err(Error::Config(format!(
                "model head is {:?}, operation needs {:?}",
                self.head, expected
            )));
        }
        Ok(())
    }

    /// Evaluation-mode regression prediction.
    pub fn forward_regression(&self, g: &Graph) -> Result<(f64, ForwardTrace)> {
        self.check_head(HeadKind::Regression)?;
        let (out, trace) = self.forward(g, Readout::Graph, None::<&mut rand_chacha::ChaCha8Rng>)?;
        Ok((out[0], trace))
    }

    /// Evaluation-mode logits for the masked node's attribute.
    pub fn forward_node_classes(&self, g: &Graph, masked_index: usize) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_head(HeadKind::NodeClass)?;
        self.forward(g, Readout::MaskedNode(masked_index), None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Evaluation-mode multi-label logits.
    pub fn forward_multilabel(&self, g: &Graph, k: usize) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_head(HeadKind::MultiLabel(k))?;
        self.forward(g, Readout::Graph, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Regression prediction without keeping the trace.
    pub fn predict(&self, g: &Graph) -> Result<f64> {
        self.forward_regression(g).map(|(y, _)| y)
    }

    /// Full forward pass. Dropout is active iff `dropout_rng` is given and
    /// the configured rate is positive.
    pub fn forward<R: Rng>(
        &self,
        g: &Graph,
        readout: Readout,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let masked = match readout {
            Readout::Graph => None,
            Readout::MaskedNode(i) => Some(i),
        };
        let layout = self.layout(g, masked)?;
        let c = &self.config;
        let p = &self.params;
        let ids = &self.ids;
        let (t, d, heads, hd) = (layout.tokens, c.hidden_dim, c.heads, c.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        let node_embed = mat(p, ids.node_embed);
        let degree_embed = mat(p, ids.degree_embed);
        let mut x = Array2::zeros((t, d));
        x.row_mut(0).assign(&mat(p, ids.graph_token).row(0));
        for i in 0..t - 1 {
            let mut row = x.row_mut(i + 1);
            row.assign(&node_embed.row(layout.node_rows[i]));
            row += &degree_embed.row(layout.degree_rows[i]);
        }

        // Attention bias per head, shared by all layers.
        let spd_bias = mat(p, ids.spd_bias);
        let edge_bias = mat(p, ids.edge_bias);
        let bias: Vec<Array2<f64>> = (0..heads)
            .map(|h| {
                Array2::from_shape_fn((t, t), |(i, j)| {
                    let idx = i * t + j;
                    let mut b = spd_bias[[layout.spd_bucket[idx], h]];
                    if let Some(e) = layout.edge_code[idx] {
                        b += edge_bias[[e, h]];
                    }
                    b
                })
            })
            .collect();

        let rate = c.dropout_rate;
        let mut dropout_mask = |shape: (usize, usize)| -> Option<Array2<f64>> {
            let rng = dropout_rng.as_deref_mut()?;
            if rate <= 0.0 {
                return None;
            }
            let keep = 1.0 / (1.0 - rate);
            Some(Array2::from_shape_simple_fn(shape, || {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            }))
        };

        let mut layer_traces = Vec::with_capacity(c.layers);
        for lid in &ids.layers {
            let (normed1, ln1) = layer_norm(&x, row_vec(p, lid.ln1_gamma), row_vec(p, lid.ln1_beta));
            let q = affine(&normed1, mat(p, lid.wq), row_vec(p, lid.bq));
            let k = affine(&normed1, mat(p, lid.wk), row_vec(p, lid.bk));
            let v = affine(&normed1, mat(p, lid.wv), row_vec(p, lid.bv));
            let mut heads_out = Array2::zeros((t, d));
            let mut probs = Vec::with_capacity(heads);
            for (h, bias_h) in bias.iter().enumerate() {
                let cols = s![.., h * hd..(h + 1) * hd];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                scores *= scale;
                scores += bias_h;
                softmax_rows(&mut scores);
                heads_out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let mut attn = affine(&heads_out, mat(p, lid.wo), row_vec(p, lid.bo));
            let attn_mask = dropout_mask((t, d));
            if let Some(m) = &attn_mask {
                attn *= m;
            }
            let mid = &x + &attn;

            let (normed2, ln2) = layer_norm(&mid, row_vec(p, lid.ln2_gamma), row_vec(p, lid.ln2_beta));
            let pre_act = affine(&normed2, mat(p, lid.w1), row_vec(p, lid.b1));
            let act = pre_act.mapv(gelu);
            let mut ffn = affine(&act, mat(p, lid.w2), row_vec(p, lid.b2));
            let ffn_mask = dropout_mask((t, d));
            if let Some(m) = &ffn_mask {
                ffn *= m;
            }
            let out = &mid + &ffn;

            x = out;
            layer_traces.push(LayerTrace {
                ln1,
                normed1,
                q,
                k,
                v,
                probs,
                heads_out,
                attn_mask,
                ln2,
                normed2,
                pre_act,
                act,
                ffn_mask,
            });
        }

        let (final_out, final_ln) = layer_norm(&x, row_vec(p, ids.final_gamma), row_vec(p, ids.final_beta));
        let readout_row = masked.map_or(0, |i| i + 1);
        let head_w = mat(p, ids.head_w);
        let mut out = final_out.row(readout_row).dot(&head_w);
        out += &row_vec(p, ids.head_b);

        let trace = ForwardTrace {
            stamp: self.stamp,
            head: self.head,
            layout,
            layers: layer_traces,
            final_ln,
            final_out,
            readout_row,
            head_dim: out.len(),
        };
        Ok((out.to_vec(), trace))
    }

    /// Exact parameter gradients of `upstream . output` for the pass recorded
    /// in `trace`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = self.params.zeros_like();
        self.backward_into(trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`.
    pub fn backward_into(&self, trace: &ForwardTrace, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        if trace.stamp != self.stamp || trace.head != self.head {
            return Err(Error::Usage(
                "trace was recorded on a different model state".into(),
            ));
        }
        if upstream.len() != trace.head_dim {
            return Err(Error::Validation(format!(
                "upstream gradient has {} entries, head output has {}",
                upstream.len(),
                trace.head_dim
            )));
        }
        if grads.buffers().len() != self.params.len() {
            return Err(Error::Validation("gradient buffer does not match parameters".into()));
        }
        let c = &self.config;
        let p = &self.params;
        let ids = &self.ids;
        let layout = &trace.layout;
        let (t, d, hd) = (layout.tokens, c.hidden_dim, c.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        // Head.
        let up = ndarray::ArrayView1::from(upstream);
        {
            let mut dw = grad_mat(grads, p, ids.head_w);
            let feat = trace.final_out.row(trace.readout_row);
            for (r, &f) in feat.iter().enumerate() {
                for (col, &u) in up.iter().enumerate() {
                    dw[[r, col]] += f * u;
                }
            }
        }
        grad_vec(grads, ids.head_b).scaled_add(1.0, &up);
        let mut dfinal = Array2::zeros((t, d));
        dfinal
            .row_mut(trace.readout_row)
            .assign(&mat(p, ids.head_w).dot(&up));

        let mut dx = layer_norm_backward(
            &dfinal,
            &trace.final_ln,
            row_vec(p, ids.final_gamma),
            grads,
            ids.final_gamma,
            ids.final_beta,
        );

        let mut dbias: Vec<Array2<f64>> = vec![Array2::zeros((t, t)); c.heads];
        for (lid, lt) in ids.layers.iter().zip(&trace.layers).rev() {
            dx = self.layer_backward(lid, lt, dx, &mut dbias, grads, scale)?;
        }

        // Bias tables.
        {
            let spd_shape = p.get(ids.spd_bias).shape.clone();
            let dspd = grads.get_mut(ids.spd_bias);
            for (h, db) in dbias.iter().enumerate() {
                for (idx, &g) in db.iter().enumerate() {
                    dspd[layout.spd_bucket[idx] * spd_shape[1] + h] += g;
                }
            }
        }
        {
            let heads = c.heads;
            let dedge = grads.get_mut(ids.edge_bias);
            for (h, db) in dbias.iter().enumerate() {
                for (idx, &g) in db.iter().enumerate() {
                    if let Some(e) = layout.edge_code[idx] {
                        dedge[e * heads + h] += g;
                    }
                }
            }
        }

        // Embeddings.
        {
            let mut dtok = grad_mat(grads, p, ids.graph_token);
            let mut row = dtok.row_mut(0);
            row += &dx.row(0);
        }
        {
            let mut dnode = grad_mat(grads, p, ids.node_embed);
            for (i, &r) in layout.node_rows.iter().enumerate() {
                let mut row = dnode.row_mut(r);
                row += &dx.row(i + 1);
            }
        }
        {
            let mut ddeg = grad_mat(grads, p, ids.degree_embed);
            for (i, &r) in layout.degree_rows.iter().enumerate() {
                let mut row = ddeg.row_mut(r);
                row += &dx.row(i + 1);
            }
        }
        Ok(())
    }

    fn layer_backward(
        &self,
        lid: &LayerIds,
        lt: &LayerTrace,
        dout: Array2<f64>,
        dbias: &mut [Array2<f64>],
        grads: &mut Gradients,
        scale: f64,
    ) -> Result<Array2<f64>> {
        let p = &self.params;
        let hd = self.config.head_dim();

        // Feed-forward block.
        let mut dffn = dout.clone();
        if let Some(m) = &lt.ffn_mask {
            dffn *= m;
        }
        let mut dact = affine_backward(&lt.act, &dffn, mat(p, lid.w2), grads, p, lid.w2, lid.b2);
        dact.zip_mut_with(&lt.pre_act, |g, &u| *g *= gelu_grad(u));
        let dnormed2 = affine_backward(&lt.normed2, &dact, mat(p, lid.w1), grads, p, lid.w1, lid.b1);
        let mut dmid = dout;
        dmid += &layer_norm_backward(
            &dnormed2,
            &lt.ln2,
            row_vec(p, lid.ln2_gamma),
            grads,
            lid.ln2_gamma,
            lid.ln2_beta,
        );

        // Attention block.
        let mut dattn = dmid.clone();
        if let Some(m) = &lt.attn_mask {
            dattn *= m;
        }
        let dheads = affine_backward(&lt.heads_out, &dattn, mat(p, lid.wo), grads, p, lid.wo, lid.bo);
        let mut dq = Array2::zeros(lt.q.raw_dim());
        let mut dk = Array2::zeros(lt.k.raw_dim());
        let mut dv = Array2::zeros(lt.v.raw_dim());
        for (h, probs) in lt.probs.iter().enumerate() {
            let cols = s![.., h * hd..(h + 1) * hd];
            let dh = dheads.slice(cols);
            let dprobs = dh.dot(&lt.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&dh));
            // Softmax backward: dS = P * (dP - rowsum(dP * P)).
            let mut dscores = &dprobs * probs;
            let row_sums = dscores.sum_axis(Axis(1));
            for ((mut row, prow), &rs) in dscores
                .rows_mut()
                .into_iter()
                .zip(probs.rows())
                .zip(row_sums.iter())
            {
                row.zip_mut_with(&prow, |x, &pv| *x -= pv * rs);
            }
            dbias[h] += &dscores;
            dscores *= scale;
            dq.slice_mut(cols).assign(&dscores.dot(&lt.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&lt.q.slice(cols)));
        }
        let mut dnormed1 = affine_backward(&lt.normed1, &dq, mat(p, lid.wq), grads, p, lid.wq, lid.bq);
        dnormed1 += &affine_backward(&lt.normed1, &dk, mat(p, lid.wk), grads, p, lid.wk, lid.bk);
        dnormed1 += &affine_backward(&lt.normed1, &dv, mat(p, lid.wv), grads, p, lid.wv, lid.bv);
        let mut dinput = dmid;
        dinput += &layer_norm_backward(
            &dnormed1,
            &lt.ln1,
            row_vec(p, lid.ln1_gamma),
            grads,
            lid.ln1_gamma,
            lid.ln1_beta,
        );
        Ok(dinput)
    }
}
