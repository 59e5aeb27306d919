use std::ops::Range;

use super::encoder::{attention, feed_forward, layer_norm, BiasCtx, DepMasks};
use super::Model;
use crate::assembly::DependencyMatrix;
use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};

/// Decoder layers over encoder states; `masks` is only consulted when the
/// model applies the dependency bias in the decoder.
pub(crate) fn decoder_stack(g: &mut Graph, model: &Model, h_en: NodeId, masks: Option<&DepMasks>) -> Result<NodeId> {
    let mut x = h_en;
    for (l, layer) in model.ids.decoder.iter().enumerate() {
        let h = layer_norm(g, layer.norm1, x)?;
        let bias = match masks {
            Some(m) if model.config.bias_in_decoder => Some(BiasCtx {
                ids: model.ids.decoder_bias(l),
                masks: m,
                gamma: model.config.gamma,
            }),
            _ => None,
        };
        let (a, _) = attention(g, layer.self_attn, h, h, model.config.heads, bias, None)?;
        x = g.add(x, a)?;
        let h = layer_norm(g, layer.norm2, x)?;
        let (c, _) = attention(g, layer.cross_attn, h, h_en, model.config.heads, None, None)?;
        x = g.add(x, c)?;
        let h = layer_norm(g, layer.norm3, x)?;
        let f = feed_forward(g, layer.ffn, h)?;
        x = g.add(x, f)?;
    }
    layer_norm(g, model.ids.decoder_norm, x)
}

/// Decoder states for the given encoder states.
pub fn decode(model: &Model, h_en: &Tensor, dep: Option<&DependencyMatrix>) -> Result<Tensor> {
    if let Some(d) = dep {
        if d.len() != h_en.rows() {
            return Err(Error::Shape(format!("dependency {} for {} states", d.len(), h_en.rows())));
        }
    }
    let masks = dep.map(DepMasks::new);
    let mut g = Graph::new(&model.params);
    let x = g.input(h_en.clone());
    let out = decoder_stack(&mut g, model, x, masks.as_ref())?;
    let v = g.value(out).clone();
    if !v.is_finite() {
        return Err(Error::NonFinite("decoder output".into()));
    }
    Ok(v)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn head_mean_rows(attention: &[Tensor], rows: Range<usize>) -> Vec<f64> {
    let n = attention[0].cols();
    let mut acc = vec![0.0; n];
    let count = (attention.len() * rows.len()) as f64;
    for a in attention {
        for r in rows.clone() {
            acc.iter_mut().zip(a.row(r)).for_each(|(x, y)| *x += y);
        }
    }
    acc.iter().map(|x| x / count).collect()
}

/// Aggregation weights for one (event, slot): softmax of the elementwise
/// product of the head-averaged trigger-marker row and the head- and
/// token-averaged slot rows.
pub fn eia_weights(attention: &[Tensor], trigger_pos: usize, slot: Range<usize>) -> Vec<f64> {
    let at = head_mean_rows(attention, trigger_pos..trigger_pos + 1);
    let as_ = head_mean_rows(attention, slot);
    let prod: Vec<f64> = at.iter().zip(&as_).map(|(a, b)| a * b).collect();
    softmax(&prod)
}

/// `tanh(W1 [mean slot decoder state ; H_en^T p])`.
pub fn eia_enhance(h_en: &Tensor, p: &[f64], h_de: &Tensor, slot: Range<usize>, w1: &Tensor) -> Vec<f64> {
    let d = h_en.cols();
    let mut c = vec![0.0; d];
    for (r, &w) in p.iter().enumerate() {
        c.iter_mut().zip(h_en.row(r)).for_each(|(x, y)| *x += w * y);
    }
    let mut hs = vec![0.0; d];
    for r in slot.clone() {
        hs.iter_mut().zip(h_de.row(r)).for_each(|(x, y)| *x += y);
    }
    hs.iter_mut().for_each(|x| *x /= slot.len() as f64);
    let cat: Vec<f64> = hs.into_iter().chain(c).collect();
    (0..w1.cols())
        .map(|j| cat.iter().enumerate().map(|(i, x)| x * w1.get(i, j)).sum::<f64>().tanh())
        .collect()
}

pub fn span_selectors(h: &[f64], w_start: &[f64], w_end: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        h.iter().zip(w_start).map(|(a, b)| a * b).collect(),
        h.iter().zip(w_end).map(|(a, b)| a * b).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanChoice {
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    /// Half-open span in assembled coordinates; `(0, 0)` is the empty answer.
    pub span: Span,
    pub score: f64,
}

/// Best `(m, n)` among the empty span `(0, 0)` and every context span with
/// `0 < n - m <= max_span`, scored `start[m] + end[n - 1]` (the empty span
/// uses `start[0] + end[0]`). Ties go to the smallest `m`, then `n`.
pub fn best_span(start: &[f64], end: &[f64], context: Range<usize>, max_span: usize) -> Result<(Span, f64)> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    if context.end > start.len() || start.len() != end.len() || max_span == 0 {
        return Err(Error::Shape(format!(
            "context {context:?} with {} start and {} end scores, max span {max_span}",
            start.len(),
            end.len()
        )));
    }
    let mut best = (Span::new(0, 0), start[0] + end[0]);
    for m in context.clone() {
        for n in m + 1..=(m + max_span).min(context.end) {
            let s = start[m] + end[n - 1];
            if s > best.1 || (s == best.1 && (m, n) < (best.0.start, best.0.end)) {
                best = (Span::new(m, n), s);
            }
        }
    }
    Ok(best)
}

/// Masked start/end distributions over the context and the null anchor,
/// followed by [`best_span`].
pub fn select_span(
    h_de: &Tensor,
    phi_start: &[f64],
    phi_end: &[f64],
    context: Range<usize>,
    max_span: usize,
) -> Result<SpanChoice> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    let probs = |phi: &[f64]| {
        let logits: Vec<f64> = (0..h_de.rows())
            .map(|r| {
                if r == 0 || context.contains(&r) {
                    h_de.row(r).iter().zip(phi).map(|(a, b)| a * b).sum()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        softmax(&logits)
    };
    let start_probs = probs(phi_start);
    let end_probs = probs(phi_end);
    let (span, score) = best_span(&start_probs, &end_probs, context, max_span)?;
    Ok(SpanChoice {
        start_probs,
        end_probs,
        span,
        score,
    })
}
