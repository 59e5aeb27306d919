//! Seeded synthetic corpus for desk-scale training runs.
//!
//! Documents are filler words with planted triggers; each event's arguments
//! are short entity spans placed within `max_distance` tokens of its trigger.
//! Entity words are drawn from a per-role lexicon, trigger words from a
//! per-type lexicon, so a small model can learn the mapping.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Argument, Corpus, Document, Event, Span, Template, TemplateRegistry};
use crate::error::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 64;
const DOCUMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub name: String,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub documents: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Inclusive document length range in tokens.
    pub min_len: usize,
    pub max_len: usize,
    /// `(event count, weight)` pairs.
    pub event_counts: Vec<(usize, f64)>,
    pub types: Vec<TypeSpec>,
    /// Inclusive range of arguments per event.
    pub min_args: usize,
    pub max_args: usize,
    pub max_arg_len: usize,
    /// Probability that an event after the first reuses an earlier argument span.
    pub overlap_prob: f64,
    /// Maximum distance in tokens between a trigger and its planted arguments.
    pub max_distance: usize,
    /// Entity words per role lexicon.
    pub entity_words: usize,
    /// Trigger words per event type.
    pub trigger_words: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let ty = |name: &str, template: &str| TypeSpec {
            name: name.into(),
            template: template.into(),
        };
        GenConfig {
            documents: 50,
            vocab_size: 40,
            min_len: 24,
            max_len: 40,
            event_counts: vec![(1, 0.4), (2, 0.35), (3, 0.25)],
            types: vec![
                ty("Attack", "«role:Attacker» attacked «role:Target» at «role:Place» ."),
                ty("Death", "Death of «role:Victim» at «role:Place» ."),
                ty("Transport", "«role:Agent» moved «role:Artifact» to «role:Place» ."),
                ty("Arrest", "«role:Jailer» arrested «role:Detainee» in «role:Place» ."),
            ],
            min_args: 1,
            max_args: 2,
            max_arg_len: 2,
            overlap_prob: 0.3,
            max_distance: 4,
            entity_words: 6,
            trigger_words: 2,
        }
    }
}

impl GenConfig {
    pub fn registry(&self) -> Result<TemplateRegistry> {
        let mut reg = TemplateRegistry::new();
        for spec in &self.types {
            reg.insert(Template::parse(&spec.name, &spec.template)?)?;
        }
        Ok(reg)
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InfeasibleConfig(m));
        if self.types.is_empty() {
            return fail("no event types".into());
        }
        if self.vocab_size == 0 || self.entity_words == 0 || self.trigger_words == 0 {
            return fail("lexicon sizes must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.min_args > self.max_args || self.max_arg_len == 0 {
            return fail("bad argument range".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_prob) {
            return fail(format!("overlap probability {} outside [0, 1]", self.overlap_prob));
        }
        if self.event_counts.is_empty()
            || self.event_counts.iter().any(|&(_, w)| !(w >= 0.0 && w.is_finite()))
            || self.event_counts.iter().all(|&(_, w)| w == 0.0)
        {
            return fail("event-count distribution needs non-negative finite weights".into());
        }
        let max_events = self
            .event_counts
            .iter()
            .filter(|&&(_, w)| w > 0.0)
            .map(|&(k, _)| k)
            .max()
            .unwrap_or(0);
        let footprint = max_events * (1 + self.max_args * self.max_arg_len);
        if footprint > self.min_len {
            return fail(format!(
                "{max_events} events with up to {} argument tokens each need {footprint} tokens, \
                 documents may have only {}",
                self.max_args * self.max_arg_len,
                self.min_len
            ));
        }
        Ok(())
    }

    fn sample_event_count(&self, rng: &mut impl Rng) -> usize {
        let total: f64 = self.event_counts.iter().map(|&(_, w)| w).sum();
        let mut x = rng.random::<f64>() * total;
        for &(k, w) in &self.event_counts {
            if x < w {
                return k;
            }
            x -= w;
        }
        self.event_counts.iter().rev().find(|&&(_, w)| w > 0.0).map_or(0, |&(k, _)| k)
    }
}

/// Deterministic in `(config, seed)`; every returned document validates
/// against `config.registry()`.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Corpus> {
    config.check()?;
    let reg = config.registry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(config.documents);
    for i in 0..config.documents {
        let doc_id = format!("syn{i:04}");
        let doc = (0..DOCUMENT_ATTEMPTS)
            .find_map(|_| try_document(config, &reg, &doc_id, &mut rng))
            .ok_or_else(|| {
                Error::InfeasibleConfig(format!("could not place arguments for `{doc_id}`"))
            })?;
        documents.push(doc);
    }
    Ok(Corpus::new(documents))
}

fn lexeme(label: &str, j: usize) -> String {
    let stem: String = label
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    format!("{stem}{j}")
}

fn try_document(
    config: &GenConfig,
    reg: &TemplateRegistry,
    doc_id: &str,
    rng: &mut ChaCha8Rng,
) -> Option<Document> {
    let len = rng.random_range(config.min_len..=config.max_len);
    let k = config.sample_event_count(rng);
    let mut tokens: Vec<String> = (0..len)
        .map(|_| format!("w{}", rng.random_range(0..config.vocab_size)))
        .collect();
    let mut used = vec![false; len];

    let mut positions: Vec<usize> = (0..len).collect();
    positions.shuffle(rng);
    let mut triggers: Vec<usize> = positions.into_iter().take(k).collect();
    if triggers.len() < k {
        return None;
    }
    triggers.sort_unstable();
    for &t in &triggers {
        used[t] = true;
    }

    let mut events: Vec<Event> = Vec::with_capacity(k);
    for (idx, &t) in triggers.iter().enumerate() {
        let spec = config.types.choose(rng)?;
        let template = reg.get(&spec.name)?;
        tokens[t] = lexeme(&spec.name, rng.random_range(0..config.trigger_words));

        let roles = template.roles();
        let n_args = rng
            .random_range(config.min_args..=config.max_args)
            .min(roles.len());
        let mut chosen: Vec<&str> = roles.choose_multiple(rng, n_args).copied().collect();
        chosen.sort_by_key(|r| roles.iter().position(|x| x == r));

        let mut arguments = Vec::new();
        if idx > 0 && rng.random_bool(config.overlap_prob) {
            let earlier: Vec<&Argument> = events.iter().flat_map(|e| &e.arguments).collect();
            if let Some(shared) = earlier.choose(rng) {
                let role = if template.has_role(&shared.role) {
                    shared.role.clone()
                } else {
                    chosen.first().copied().unwrap_or(roles[0]).to_string()
                };
                chosen.retain(|r| *r != role);
                arguments.push(Argument {
                    role,
                    span: shared.span,
                });
            }
        }

        for role in chosen {
            let span = place_span(config, &used, t, rng)?;
            for p in span.start..span.end {
                used[p] = true;
                tokens[p] = lexeme(role, rng.random_range(0..config.entity_words));
            }
            arguments.push(Argument {
                role: role.to_string(),
                span,
            });
        }
        events.push(Event {
            event_id: format!("e{idx}"),
            event_type: spec.name.clone(),
            trigger: Span::new(t, t + 1),
            arguments,
        });
    }
    if k >= 2 && config.overlap_prob >= 1.0 && !has_shared_span(&events) {
        return None;
    }
    Some(Document {
        doc_id: doc_id.to_string(),
        tokens,
        events,
    })
}

fn place_span(config: &GenConfig, used: &[bool], trigger: usize, rng: &mut ChaCha8Rng) -> Option<Span> {
    let len = used.len();
    let lo = trigger.saturating_sub(config.max_distance);
    let hi = (trigger + config.max_distance).min(len - 1);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let width = rng.random_range(1..=config.max_arg_len);
        let start = rng.random_range(lo..=hi);
        let end = start + width;
        if end > len || end - 1 > hi {
            continue;
        }
        if used[start..end].iter().all(|u| !u) {
            return Some(Span::new(start, end));
        }
    }
    None
}

fn has_shared_span(events: &[Event]) -> bool {
    events.iter().enumerate().any(|(i, a)| {
        events[i + 1..].iter().any(|b| {
            a.arguments
                .iter()
                .any(|x| b.arguments.iter().any(|y| x.span == y.span))
        })
    })
}
