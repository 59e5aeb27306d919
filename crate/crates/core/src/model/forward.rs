use std::collections::HashMap;
use std::rc::Rc;

use super::decoder::decoder_stack;
use super::encoder::{embed, encoder_stack, BiasStats, DepMasks};
use super::Model;
use crate::assembly::{build_dependency_matrix, plan_windows, AssembledInput, DependencyMatrix, WindowPlan};
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, ParamStore, Tensor};

/// Start/end distributions for one (event, slot) pair.
#[derive(Debug, Clone)]
pub struct SlotNode {
    /// Index into `AssembledInput::events`.
    pub event: usize,
    pub prompt: usize,
    /// Index into the prompt's slots.
    pub slot: usize,
    pub role: String,
    pub start: NodeId,
    pub end: NodeId,
}

/// A recorded forward pass over one assembled document.
pub struct DocForward<'p> {
    pub graph: Graph<'p>,
    pub plan: WindowPlan,
    pub h_en: NodeId,
    pub h_de: NodeId,
    pub slots: Vec<SlotNode>,
}

impl DocForward<'_> {
    pub fn encoder_passes(&self) -> usize {
        self.plan.passes.len()
    }

    pub fn probs(&self, node: NodeId) -> &[f64] {
        &self.graph.value(node).data
    }
}

/// Merged final-layer attention rows of interest, one matrix per head.
struct AttentionRows {
    heads: Vec<NodeId>,
    row_of: HashMap<usize, usize>,
}

impl AttentionRows {
    fn mean(&self, g: &mut Graph, rows: &[usize]) -> Result<NodeId> {
        let local: Vec<usize> = rows.iter().map(|r| self.row_of[r]).collect();
        let per_head = self
            .heads
            .iter()
            .map(|&h| g.mean_rows(h, &local))
            .collect::<Result<Vec<_>>>()?;
        let s = g.sum(&per_head)?;
        Ok(g.scale(s, 1.0 / self.heads.len() as f64))
    }
}

pub fn forward_document<'p>(model: &'p Model, inp: &AssembledInput) -> Result<DocForward<'p>> {
    forward_with(model, &model.params, inp)
}

/// Like [`forward_document`] but reading weights from `params`, which must
/// share the model's layout.
pub fn forward_with<'p>(model: &Model, params: &'p ParamStore, inp: &AssembledInput) -> Result<DocForward<'p>> {
    forward_with_stats(model, params, inp, None)
}

pub(crate) fn forward_with_stats<'p>(
    model: &Model,
    params: &'p ParamStore,
    inp: &AssembledInput,
    mut stats: Option<&mut BiasStats>,
) -> Result<DocForward<'p>> {
    let c = &model.config;
    let plan = plan_windows(inp, c.d1, c.d2, c.max_len)?;
    let mut g = Graph::new(params);

    let mut states = Vec::with_capacity(plan.passes.len());
    let mut probs = Vec::with_capacity(plan.passes.len());
    for pass in &plan.passes {
        let ids: Vec<usize> = pass.positions.iter().map(|&p| model.vocab.id(&inp.tokens[p])).collect();
        let dep = DependencyMatrix::from_regions(&pass.regions);
        let x = embed(&mut g, model, &ids)?;
        let (h, p) = encoder_stack(&mut g, model, x, &dep, stats.as_deref_mut())?;
        states.push(h);
        probs.push(p);
    }

    let mut rows: Vec<usize> = inp.events.iter().map(|e| e.marker()).collect();
    for p in &inp.prompts {
        for s in &p.slots {
            rows.extend(s.range.clone());
        }
    }
    rows.sort_unstable();
    rows.dedup();

    let n = plan.total_len;
    let (h_en, attn) = if plan.is_identity() {
        let row_of = (0..n).map(|r| (r, r)).collect();
        (states[0], AttentionRows { heads: probs[0].clone(), row_of })
    } else {
        let h_en = g.combine_rows(&states, Rc::new(plan.row_merge()), n)?;
        let cells = Rc::new(plan.cell_merge(&rows));
        let heads = (0..c.heads)
            .map(|h| {
                let per_pass: Vec<NodeId> = probs.iter().map(|p| p[h]).collect();
                g.combine_cells(&per_pass, cells.clone(), rows.len(), n)
            })
            .collect::<Result<Vec<_>>>()?;
        let row_of = rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        (h_en, AttentionRows { heads, row_of })
    };
    if !g.value(h_en).is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }

    let masks = c.bias_in_decoder.then(|| DepMasks::new(&build_dependency_matrix(inp)));
    let h_de = decoder_stack(&mut g, model, h_en, masks.as_ref())?;
    if !g.value(h_de).is_finite() {
        return Err(Error::NonFinite("decoder output".into()));
    }

    let mut mask = Tensor::filled(1, n, f64::NEG_INFINITY);
    mask.data[0] = 0.0;
    for p in inp.context.clone() {
        mask.data[p] = 0.0;
    }
    let mask = g.input(mask);
    let w1 = g.param(model.ids.eia);
    let w_start = g.param(model.ids.w_start);
    let w_end = g.param(model.ids.w_end);
    let zero_context = (!c.use_eia).then(|| g.input(Tensor::zeros(1, c.dim)));

    let mut trigger_rows: HashMap<usize, NodeId> = HashMap::new();
    let mut slot_rows: HashMap<(usize, usize), NodeId> = HashMap::new();
    let mut slot_states: HashMap<(usize, usize), NodeId> = HashMap::new();
    let mut slots = Vec::new();
    for (ei, event) in inp.events.iter().enumerate() {
        let prompt = &inp.prompts[event.prompt];
        for (si, slot) in prompt.slots.iter().enumerate() {
            let key = (event.prompt, si);
            let positions: Vec<usize> = slot.range.clone().collect();
            let ctx = match zero_context {
                Some(z) => z,
                None => {
                    let at = match trigger_rows.get(&ei) {
                        Some(&v) => v,
                        None => {
                            let v = attn.mean(&mut g, &[event.marker()])?;
                            trigger_rows.insert(ei, v);
                            v
                        }
                    };
                    let as_ = match slot_rows.get(&key) {
                        Some(&v) => v,
                        None => {
                            let v = attn.mean(&mut g, &positions)?;
                            slot_rows.insert(key, v);
                            v
                        }
                    };
                    let prod = g.mul(at, as_)?;
                    let p = g.softmax_rows(prod)?;
                    g.matmul(p, h_en)?
                }
            };
            let hs = match slot_states.get(&key) {
                Some(&v) => v,
                None => {
                    let v = g.mean_rows(h_de, &positions)?;
                    slot_states.insert(key, v);
                    v
                }
            };
            let cat = g.concat_cols(&[hs, ctx])?;
            let pre = g.matmul(cat, w1)?;
            let enhanced = g.tanh(pre);
            let mut heads = [w_start, w_end].into_iter().map(|w| {
                let phi = g.mul_row(enhanced, w)?;
                let logits = g.matmul_nt(phi, h_de)?;
                let masked = g.add(logits, mask)?;
                g.softmax_rows(masked)
            });
            let start = heads.next().expect("two heads")?;
            let end = heads.next().expect("two heads")?;
            slots.push(SlotNode {
                event: ei,
                prompt: event.prompt,
                slot: si,
                role: slot.role.clone(),
                start,
                end,
            });
        }
    }

    Ok(DocForward {
        graph: g,
        plan,
        h_en,
        h_de,
        slots,
    })
}
