use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{assign_targets, loss_with_targets};
use crate::assembly::assemble;
use crate::corpus::{Argument, Corpus, Document, Event, Span, TemplateRegistry};
use crate::error::{Error, Result};
use crate::model::{forward_with, Model, ModelConfig, Vocab};
use crate::nn::{grad_check_with, GradCheckReport};

pub const GRAD_CHECK_EPS: f64 = 1e-5;

pub fn toy_registry() -> TemplateRegistry {
    TemplateRegistry::from_json_str(
        r#"{"Conflict.Attack": "«role:Attacker» attacked «role:Target» at «role:Place»",
            "Life.Die": "«role:Victim» died at «role:Place» by «role:Killer»"}"#,
    )
    .expect("toy templates parse")
}

/// Two overlapping events in a short document.
pub fn toy_document() -> Document {
    let tokens = "militants shelled the market in Aden and three shoppers died there"
        .split(' ')
        .map(String::from)
        .collect();
    let arg = |role: &str, s: usize, e: usize| Argument {
        role: role.into(),
        span: Span::new(s, e),
    };
    Document {
        doc_id: "toy".into(),
        tokens,
        events: vec![
            Event {
                event_id: "attack".into(),
                event_type: "Conflict.Attack".into(),
                trigger: Span::new(1, 2),
                arguments: vec![arg("Attacker", 0, 1), arg("Target", 2, 4), arg("Place", 5, 6)],
            },
            Event {
                event_id: "death".into(),
                event_type: "Life.Die".into(),
                trigger: Span::new(9, 10),
                arguments: vec![arg("Victim", 7, 9), arg("Place", 5, 6), arg("Killer", 0, 1)],
            },
        ],
    }
}

/// Small configuration exercising every model component, including the
/// decoder-side bias.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        ffn_dim: 12,
        encoder_layers: 2,
        decoder_layers: 1,
        gamma: 0.5,
        bias_in_decoder: true,
        d1: 40,
        d2: 40,
        max_len: 80,
        max_markers: 4,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the full extraction loss on the toy document,
/// with bias parameters set to random non-zero values.
pub fn model_grad_check(config: &ModelConfig, seed: u64, per_param: usize) -> Result<GradCheckReport> {
    let reg = toy_registry();
    let doc = toy_document();
    let corpus = Corpus::new(vec![doc.clone()]);
    let vocab = Vocab::build(&corpus, &reg, config.max_markers);
    let mut model = Model::new(config.clone(), vocab, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for name in model.bias_param_names() {
        let id = model.params.id(&name).expect("listed by the model");
        for v in model.params.get_mut(id).data.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let inp = assemble(&doc, &reg, &model.config.assembly())?;
    let targets = {
        let fwd = forward_with(&model, &model.params, &inp)?;
        assign_targets(&fwd, &inp)?.0
    };
    grad_check_with(&model.params, GRAD_CHECK_EPS, per_param, seed, |p| {
        let mut fwd = forward_with(&model, p, &inp)?;
        let loss = loss_with_targets(&mut fwd, &targets)?.ok_or_else(|| Error::Empty("toy document has no slots".into()))?;
        Ok((fwd.graph, loss))
    })
}
