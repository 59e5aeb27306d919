use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, AssembledInput};
use crate::corpus::{Corpus, Span, TemplateRegistry};
use crate::error::{Error, Result};
use crate::matching::{optimal_assignment, slot_loss, NULL_SPAN};
use crate::model::{forward_document, DocForward, Model, ModelConfig, Vocab};
use crate::nn::{Adam, AdamConfig, Gradients, LrSchedule, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: f64,
    pub cross_attn_lr_mult: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 4,
            lr: 1e-3,
            warmup_ratio: 0.1,
            max_grad_norm: 5.0,
            cross_attn_lr_mult: 1.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            problems.push(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio));
        }
        if !(self.max_grad_norm > 0.0) {
            problems.push(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        if !(self.cross_attn_lr_mult > 0.0 && self.cross_attn_lr_mult.is_finite()) {
            problems.push(format!("cross_attn_lr_mult must be positive, got {}", self.cross_attn_lr_mult));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Summed target NLL of one document, plus the gold spans that had no slot.
pub struct DocLoss {
    pub loss: NodeId,
    pub dropped: usize,
}

/// Hungarian targets for every slot of a forward pass, in slot order, and
/// the number of gold spans left unmatched.
pub fn assign_targets(fwd: &DocForward, inp: &AssembledInput) -> Result<(Vec<Span>, usize)> {
    let mut groups: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in fwd.slots.iter().enumerate() {
        groups.entry((s.event, s.role.as_str())).or_default().push(i);
    }
    let mut targets = vec![NULL_SPAN; fwd.slots.len()];
    for ((event, role), members) in &groups {
        let golds: Vec<Span> = inp.events[*event]
            .gold
            .iter()
            .filter(|g| g.role == *role)
            .map(|g| g.span)
            .collect();
        let views: Vec<(&[f64], &[f64])> = members
            .iter()
            .map(|&i| (fwd.probs(fwd.slots[i].start), fwd.probs(fwd.slots[i].end)))
            .collect();
        let assignment = optimal_assignment(&views, &golds)?;
        for (&i, &target) in members.iter().zip(&assignment.targets) {
            targets[i] = target;
        }
    }
    Ok((targets, surplus_golds(inp)))
}

/// Sum of slot losses against fixed targets; `None` without slots.
pub fn loss_with_targets(fwd: &mut DocForward, targets: &[Span]) -> Result<Option<NodeId>> {
    if fwd.slots.is_empty() {
        return Ok(None);
    }
    let mut terms = Vec::with_capacity(targets.len());
    for (i, &target) in targets.iter().enumerate() {
        let (start, end) = (fwd.slots[i].start, fwd.slots[i].end);
        terms.push(slot_loss(&mut fwd.graph, start, end, target)?);
    }
    Ok(Some(fwd.graph.sum(&terms)?))
}

/// Builds the matching loss on top of a recorded forward pass; `None` when
/// the document has no slots to supervise.
pub fn document_loss(fwd: &mut DocForward, inp: &AssembledInput) -> Result<Option<DocLoss>> {
    let (targets, dropped) = assign_targets(fwd, inp)?;
    Ok(loss_with_targets(fwd, &targets)?.map(|loss| DocLoss { loss, dropped }))
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Gold spans never supervised because their (event, role) had too few slots.
    pub dropped_golds: usize,
    pub last_loss: Option<f64>,
}

/// Trains a freshly initialized model. `on_step` sees every optimizer step.
pub fn train(
    corpus: &Corpus,
    reg: &TemplateRegistry,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    corpus.validate(reg)?;
    let vocab = Vocab::build(corpus, reg, model_config.max_markers);
    let mut model = Model::new(model_config.clone(), vocab, config.seed)?;
    let cross: Vec<_> = model
        .params
        .ids()
        .filter(|&id| model.params.name(id).contains("cross_attn"))
        .collect();
    for id in cross {
        model.params.set_lr_mult(id, config.cross_attn_lr_mult)?;
    }
    let inputs = corpus
        .documents
        .iter()
        .map(|d| assemble(d, reg, &model.config.assembly()))
        .collect::<Result<Vec<_>>>()?;

    let schedule = LrSchedule::new(config.lr, config.warmup_ratio, config.steps);
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            clip_norm: Some(config.max_grad_norm),
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let dropped_golds: usize = inputs.iter().map(surplus_golds).sum();
    let mut last_loss = None;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(inputs.len()) {
            if order.is_empty() {
                order = (0..inputs.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(order.pop().expect("refilled above"));
        }
        let mut grads = Gradients::zeros_like(&model.params);
        let mut loss_sum = 0.0;
        for &i in &batch {
            let mut fwd = forward_document(&model, &inputs[i]).map_err(|e| at_step(step, e))?;
            let Some(doc) = document_loss(&mut fwd, &inputs[i])? else { continue };
            loss_sum += fwd.graph.value(doc.loss).scalar();
            let g = fwd.graph.backward(doc.loss).map_err(|e| at_step(step, e))?;
            grads.add_assign(&g);
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at step {step}")));
        }
        let lr = schedule.at(step);
        adam.step(&mut model.params, &grads, lr);
        last_loss = Some(loss);
        on_step(&StepLog { step, loss, lr });
    }
    if dropped_golds > 0 {
        log::warn!("{dropped_golds} gold spans had no free slot during training");
    }
    Ok(TrainOutcome {
        model,
        dropped_golds,
        last_loss,
    })
}

/// Gold arguments that cannot be matched because their (event, role) group
/// has fewer slots than gold spans.
pub fn surplus_golds(inp: &AssembledInput) -> usize {
    let mut total = 0;
    for event in &inp.events {
        let slots = &inp.prompts[event.prompt].slots;
        let mut by_role: BTreeMap<&str, usize> = BTreeMap::new();
        for g in &event.gold {
            *by_role.entry(g.role.as_str()).or_default() += 1;
        }
        for (role, golds) in by_role {
            let have = slots.iter().filter(|s| s.role == role).count();
            total += golds.saturating_sub(have);
        }
    }
    total
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step}")),
        other => other,
    }
}
