use std::rc::Rc;

use serde::Serialize;

use super::{AttnIds, BiasIds, FfnIds, Model, NormIds};
use crate::assembly::{assemble, plan_windows, AssembledInput, Dependency, DependencyMatrix};
use crate::corpus::{Corpus, TemplateRegistry};
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, ParamStore, Tensor};

/// Plain-value copy of one set of dependency bias parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasParams {
    pub intra_w: Tensor,
    pub intra_b: f64,
    pub inter_w: Tensor,
    pub inter_b: f64,
}

impl BiasParams {
    pub(crate) fn from_store(params: &ParamStore, ids: BiasIds) -> Self {
        BiasParams {
            intra_w: params.get(ids.intra_w).clone(),
            intra_b: params.get(ids.intra_b).scalar(),
            inter_w: params.get(ids.inter_w).clone(),
            inter_b: params.get(ids.inter_b).scalar(),
        }
    }
}

/// Single-head attention logits with the dependency bias, computed cell by
/// cell: `q_i.k_j / sqrt(dk) + gamma * (q_i W k_j + b) / sqrt(dk)` where `W, b`
/// belong to the cell's dependency category and NA cells get no bias.
pub fn biased_attention_scores(
    q: &Tensor,
    k: &Tensor,
    dep: &DependencyMatrix,
    bias: &BiasParams,
    gamma: f64,
) -> Result<Tensor> {
    let (n, dk) = (q.rows(), q.cols());
    if k.rows() != n || k.cols() != dk || dep.len() != n {
        return Err(Error::Shape(format!(
            "q {n}x{dk}, k {}x{}, dependency {}",
            k.rows(),
            k.cols(),
            dep.len()
        )));
    }
    let scale = (dk as f64).sqrt();
    Ok(Tensor::from_fn(n, n, |i, j| {
        let (qi, kj) = (q.row(i), k.row(j));
        let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
        let (w, b) = match dep.get(i, j) {
            Dependency::None => return dot / scale,
            Dependency::Intra => (&bias.intra_w, bias.intra_b),
            Dependency::Inter => (&bias.inter_w, bias.inter_b),
        };
        let mut qwk = 0.0;
        for a in 0..dk {
            for c in 0..dk {
                qwk += qi[a] * w.get(a, c) * kj[c];
            }
        }
        dot / scale + gamma * (qwk + b) / scale
    }))
}

/// Constant 0/1 masks for the two biased categories of one dependency matrix.
#[derive(Debug, Clone)]
pub(crate) struct DepMasks {
    pub intra: Option<Rc<Vec<f64>>>,
    pub inter: Option<Rc<Vec<f64>>>,
}

impl DepMasks {
    pub fn new(dep: &DependencyMatrix) -> Self {
        let pick = |d| (dep.count(d) > 0).then(|| Rc::new(dep.mask(d)));
        DepMasks {
            intra: pick(Dependency::Intra),
            inter: pick(Dependency::Inter),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intra.is_none() && self.inter.is_none()
    }
}

/// Running sums of `gamma * bias` per encoder layer and category.
#[derive(Debug, Clone, Default)]
pub(crate) struct BiasStats {
    pub sums: Vec<[f64; 2]>,
    pub counts: Vec<[usize; 2]>,
}

impl BiasStats {
    pub fn new(layers: usize) -> Self {
        BiasStats {
            sums: vec![[0.0; 2]; layers],
            counts: vec![[0; 2]; layers],
        }
    }
}

pub(crate) struct BiasCtx<'a> {
    pub ids: BiasIds,
    pub masks: &'a DepMasks,
    pub gamma: f64,
}

pub(crate) fn layer_norm(g: &mut Graph, ids: NormIds, x: NodeId) -> Result<NodeId> {
    let gain = g.param(ids.gain);
    let bias = g.param(ids.bias);
    g.layer_norm(x, gain, bias)
}

pub(crate) fn feed_forward(g: &mut Graph, ids: FfnIds, x: NodeId) -> Result<NodeId> {
    let w1 = g.param(ids.w1);
    let b1 = g.param(ids.b1);
    let w2 = g.param(ids.w2);
    let b2 = g.param(ids.b2);
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.gelu(h);
    let o = g.matmul(h, w2)?;
    g.add_row(o, b2)
}

fn project(g: &mut Graph, x: NodeId, w: crate::nn::ParamId, b: crate::nn::ParamId) -> Result<NodeId> {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Multi-head attention of `xq` over `xkv`; returns the output and every
/// head's probability matrix.
pub(crate) fn attention(
    g: &mut Graph,
    ids: AttnIds,
    xq: NodeId,
    xkv: NodeId,
    heads: usize,
    bias: Option<BiasCtx>,
    mut stats: Option<(&mut BiasStats, usize)>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let q = project(g, xq, ids.wq, ids.bq)?;
    let k = project(g, xkv, ids.wk, ids.bk)?;
    let v = project(g, xkv, ids.wv, ids.bv)?;
    let dk = g.value(q).cols() / heads;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    let bias = bias.filter(|b| b.gamma != 0.0 && !b.masks.is_empty());
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let dot = g.matmul_nt(qh, kh)?;
        let mut scores = g.scale(dot, inv_sqrt);
        if let Some(ctx) = &bias {
            let cats = [
                (0, ctx.ids.intra_w, ctx.ids.intra_b, &ctx.masks.intra),
                (1, ctx.ids.inter_w, ctx.ids.inter_b, &ctx.masks.inter),
            ];
            let mut parts = Vec::with_capacity(2);
            for (slot, w, b, mask) in cats {
                let Some(mask) = mask else { continue };
                let w = g.param(w);
                let b = g.param(b);
                let qw = g.matmul(qh, w)?;
                let raw = g.matmul_nt(qw, kh)?;
                let raw = g.add_scalar(raw, b)?;
                if let Some((st, layer)) = stats.as_mut() {
                    let vals = &g.value(raw).data;
                    let s: f64 = vals.iter().zip(mask.iter()).map(|(v, m)| v * m).sum();
                    st.sums[*layer][slot] += ctx.gamma * inv_sqrt * s;
                    st.counts[*layer][slot] += mask.iter().filter(|&&m| m != 0.0).count();
                }
                parts.push(g.mask_mul(raw, mask.clone())?);
            }
            let total = g.sum(&parts)?;
            let total = g.scale(total, ctx.gamma * inv_sqrt);
            scores = g.add(scores, total)?;
        }
        let p = g.softmax_rows(scores)?;
        outs.push(g.matmul(p, vh)?);
        probs.push(p);
    }
    let cat = g.concat_cols(&outs)?;
    let out = project(g, cat, ids.wo, ids.bo)?;
    Ok((out, probs))
}

/// Token plus position embeddings for one pass.
pub(crate) fn embed(g: &mut Graph, model: &Model, token_ids: &[usize]) -> Result<NodeId> {
    if token_ids.len() > model.config.max_len + 1 {
        return Err(Error::Shape(format!(
            "pass of {} tokens exceeds max_len {} + 1",
            token_ids.len(),
            model.config.max_len
        )));
    }
    let tok = g.gather(model.ids.token, token_ids)?;
    let positions: Vec<usize> = (0..token_ids.len()).collect();
    let pos = g.gather(model.ids.position, &positions)?;
    g.add(tok, pos)
}

/// Encoder layers over already embedded inputs; returns the normalized final
/// states and the last layer's attention probabilities per head.
pub(crate) fn encoder_stack(
    g: &mut Graph,
    model: &Model,
    x: NodeId,
    dep: &DependencyMatrix,
    mut stats: Option<&mut BiasStats>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let masks = DepMasks::new(dep);
    let mut x = x;
    let mut last = Vec::new();
    for (l, layer) in model.ids.encoder.iter().enumerate() {
        let h = layer_norm(g, layer.norm1, x)?;
        let ctx = BiasCtx {
            ids: model.ids.encoder_bias(l),
            masks: &masks,
            gamma: model.config.gamma,
        };
        let st = stats.as_deref_mut().map(|s| (s, l));
        let (a, probs) = attention(g, layer.attn, h, h, model.config.heads, Some(ctx), st)?;
        x = g.add(x, a)?;
        let h = layer_norm(g, layer.norm2, x)?;
        let f = feed_forward(g, layer.ffn, h)?;
        x = g.add(x, f)?;
        last = probs;
    }
    let out = layer_norm(g, model.ids.encoder_norm, x)?;
    Ok((out, last))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    pub h_en: Tensor,
    /// Final-layer attention probabilities, one `n x n` matrix per head.
    pub attention: Vec<Tensor>,
}

/// Runs the encoder over one assembled input that fits in a single pass.
pub fn encode(model: &Model, inp: &AssembledInput, dep: &DependencyMatrix) -> Result<EncodeOutput> {
    if dep.len() != inp.len() {
        return Err(Error::Shape(format!("dependency {} for input {}", dep.len(), inp.len())));
    }
    let ids = model.vocab.ids(&inp.tokens);
    let mut g = Graph::new(&model.params);
    let x = embed(&mut g, model, &ids)?;
    let (h, probs) = encoder_stack(&mut g, model, x, dep, None)?;
    let out = EncodeOutput {
        h_en: g.value(h).clone(),
        attention: probs.iter().map(|&p| g.value(p).clone()).collect(),
    };
    if !out.h_en.is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSummaryRow {
    pub layer: usize,
    pub category: String,
    pub mean_bias: f64,
}

/// Mean of `gamma * bias` per encoder layer and dependency category over every
/// matching cell, head and encoder pass of the corpus. Categories without
/// cells report 0.
pub fn export_bias_summary(model: &Model, corpus: &Corpus, reg: &TemplateRegistry) -> Result<Vec<BiasSummaryRow>> {
    if corpus.documents.is_empty() {
        return Err(Error::Empty("corpus has no documents".into()));
    }
    let layers = model.config.encoder_layers;
    let mut stats = BiasStats::new(layers);
    let c = &model.config;
    for doc in &corpus.documents {
        let inp = assemble(doc, reg, &c.assembly())?;
        let plan = plan_windows(&inp, c.d1, c.d2, c.max_len)?;
        for pass in &plan.passes {
            let tokens: Vec<String> = pass.positions.iter().map(|&p| inp.tokens[p].clone()).collect();
            let dep = DependencyMatrix::from_regions(&pass.regions);
            let mut g = Graph::new(&model.params);
            let x = embed(&mut g, model, &model.vocab.ids(&tokens))?;
            encoder_stack(&mut g, model, x, &dep, Some(&mut stats))?;
        }
    }
    let mut rows = Vec::with_capacity(layers * 2);
    for l in 0..layers {
        for (slot, name) in [(0, "intra"), (1, "inter")] {
            let n = stats.counts[l][slot];
            rows.push(BiasSummaryRow {
                layer: l,
                category: name.to_string(),
                mean_bias: if n == 0 { 0.0 } else { stats.sums[l][slot] / n as f64 },
            });
        }
    }
    Ok(rows)
}
