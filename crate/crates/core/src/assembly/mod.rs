//! Model input construction: trigger-marked context, the deduplicated
//! multi-event prompt, their concatenation with index maps, dependency
//! categories and the dynamic-window plan.

mod dependency;
mod window;

use std::ops::Range;

use serde::Serialize;

pub use dependency::{build_dependency_matrix, Dependency, DependencyMatrix, Regions};
pub use window::{merge_windows, plan_windows, CellEntry, MergeEntry, Pass, Window, WindowPlan};

use crate::corpus::template::event_type_tokens;
use crate::corpus::{Document, Event, Span, TemplateRegistry};
use crate::error::{Error, Result};

/// Sequence-start token; position 0 doubles as the empty-span anchor.
pub const START_TOKEN: &str = "<s>";

pub fn trigger_open(i: usize) -> String {
    format!("<t{i}>")
}

pub fn trigger_close(i: usize) -> String {
    format!("</t{i}>")
}

pub fn type_open(i: usize) -> String {
    format!("<e{i}>")
}

pub fn type_close(i: usize) -> String {
    format!("</e{i}>")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssemblyConfig {
    /// Emit one prompt per event even when types repeat.
    pub duplicate_same_type: bool,
    /// Number of distinct marker pairs in the vocabulary.
    pub max_markers: usize,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            duplicate_same_type: false,
            max_markers: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TriggerMarks {
    /// Index of the event in the source document.
    pub event: usize,
    /// Position of the opening marker.
    pub open: usize,
    /// Position of the closing marker.
    pub close: usize,
}

impl TriggerMarks {
    pub fn region(&self) -> Range<usize> {
        self.open..self.close + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedContext {
    pub tokens: Vec<String>,
    /// In occurrence order; marker pair `i` wraps `triggers[i]`.
    pub triggers: Vec<TriggerMarks>,
    /// Marked-sequence position of every document token.
    pub positions: Vec<usize>,
}

/// Wraps every trigger as `<t_i> trigger </t_i>`, numbering by occurrence.
pub fn mark_triggers(doc: &Document) -> Result<MarkedContext> {
    let mut order: Vec<usize> = (0..doc.events.len()).collect();
    order.sort_by_key(|&i| (doc.events[i].trigger.start, doc.events[i].trigger.end));
    for w in order.windows(2) {
        let (a, b) = (&doc.events[w[0]], &doc.events[w[1]]);
        if a.trigger.overlaps(&b.trigger) {
            return Err(Error::OverlappingTriggers {
                doc_id: doc.doc_id.clone(),
                first: a.event_id.clone(),
                second: b.event_id.clone(),
            });
        }
    }

    let mut tokens = Vec::with_capacity(doc.tokens.len() + 2 * order.len());
    let mut positions = Vec::with_capacity(doc.tokens.len());
    let mut triggers = Vec::with_capacity(order.len());
    let mut next = order.iter().peekable();
    let mut open_marker: Option<(usize, usize)> = None;
    for (i, token) in doc.tokens.iter().enumerate() {
        if let Some(&&ev) = next.peek() {
            if doc.events[ev].trigger.start == i {
                open_marker = Some((ev, tokens.len()));
                tokens.push(trigger_open(triggers.len()));
                next.next();
            }
        }
        positions.push(tokens.len());
        tokens.push(token.clone());
        if let Some((ev, open)) = open_marker {
            if doc.events[ev].trigger.end == i + 1 {
                tokens.push(trigger_close(triggers.len()));
                triggers.push(TriggerMarks {
                    event: ev,
                    open,
                    close: tokens.len() - 1,
                });
                open_marker = None;
            }
        }
    }
    Ok(MarkedContext {
        tokens,
        triggers,
        positions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotRegion {
    pub role: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRegion {
    pub event_type: String,
    /// Whole prompt including the type markers.
    pub range: Range<usize>,
    pub slots: Vec<SlotRegion>,
    /// Indices (into the event list given to [`build_prompt`]) served by this prompt.
    pub events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub tokens: Vec<String>,
    pub prompts: Vec<PromptRegion>,
    /// Prompt index for every input event.
    pub event_prompt: Vec<usize>,
}

/// `<e_i> type tokens </e_i> template` for each distinct event type (or each
/// event when `duplicate_same_type`), in first-occurrence order.
pub fn build_prompt(
    events: &[&Event],
    reg: &TemplateRegistry,
    duplicate_same_type: bool,
) -> Result<BuiltPrompt> {
    let mut tokens = Vec::new();
    let mut prompts: Vec<PromptRegion> = Vec::new();
    let mut event_prompt = Vec::with_capacity(events.len());
    for (ei, event) in events.iter().enumerate() {
        if !duplicate_same_type {
            if let Some(p) = prompts.iter().position(|p| p.event_type == event.event_type) {
                prompts[p].events.push(ei);
                event_prompt.push(p);
                continue;
            }
        }
        let template = reg.require(&event.event_type)?;
        let index = prompts.len();
        let start = tokens.len();
        tokens.push(type_open(index));
        tokens.extend(event_type_tokens(&event.event_type));
        tokens.push(type_close(index));
        let offset = tokens.len();
        tokens.extend(template.tokens.iter().map(|t| t.text.clone()));
        let slots = template
            .slots
            .iter()
            .map(|s| SlotRegion {
                role: s.role.clone(),
                range: s.range.start + offset..s.range.end + offset,
            })
            .collect();
        prompts.push(PromptRegion {
            event_type: event.event_type.clone(),
            range: start..tokens.len(),
            slots,
            events: vec![ei],
        });
        event_prompt.push(index);
    }
    Ok(BuiltPrompt {
        tokens,
        prompts,
        event_prompt,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldArgument {
    pub role: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRegion {
    pub event_id: String,
    pub event_type: String,
    /// Opening marker through closing marker.
    pub trigger: Range<usize>,
    pub prompt: usize,
    /// Gold arguments in assembled coordinates.
    pub gold: Vec<GoldArgument>,
}

impl EventRegion {
    /// Position of the opening marker, which stands in for the trigger.
    pub fn marker(&self) -> usize {
        self.trigger.start
    }
}

/// `[<s>] + marked context + prompt`, with every index map the model needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssembledInput {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub context: Range<usize>,
    /// Events in trigger-occurrence order.
    pub events: Vec<EventRegion>,
    pub prompts: Vec<PromptRegion>,
    /// Assembled position of each document token.
    pub doc_positions: Vec<usize>,
}

impl AssembledInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn regions(&self) -> Regions {
        Regions {
            len: self.len(),
            triggers: self.events.iter().map(|e| e.trigger.clone()).collect(),
            prompts: self.prompts.iter().map(|p| p.range.clone()).collect(),
            event_prompt: self.events.iter().map(|e| Some(e.prompt)).collect(),
        }
    }

    pub fn to_assembled_span(&self, span: Span) -> Span {
        Span::new(
            self.doc_positions[span.start],
            self.doc_positions[span.end - 1] + 1,
        )
    }

    /// Maps an assembled span back to document tokens; spans covering only
    /// markers map to `None`.
    pub fn to_doc_span(&self, span: Span) -> Option<Span> {
        let before = |p: usize| self.doc_positions.partition_point(|&q| q < p);
        let doc = Span::new(before(span.start), before(span.end));
        (!doc.is_empty()).then_some(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assembled input always serializes")
    }
}

pub fn assemble(doc: &Document, reg: &TemplateRegistry, config: &AssemblyConfig) -> Result<AssembledInput> {
    if doc.events.len() > config.max_markers {
        return Err(Error::TooManyEvents {
            doc_id: doc.doc_id.clone(),
            events: doc.events.len(),
            max: config.max_markers,
        });
    }
    let marked = mark_triggers(doc)?;
    let ordered: Vec<&Event> = marked.triggers.iter().map(|t| &doc.events[t.event]).collect();
    let prompt = build_prompt(&ordered, reg, config.duplicate_same_type)?;

    let context = 1..1 + marked.tokens.len();
    let offset = context.end;
    let mut tokens = Vec::with_capacity(offset + prompt.tokens.len());
    tokens.push(START_TOKEN.to_string());
    tokens.extend(marked.tokens);
    tokens.extend(prompt.tokens);

    let doc_positions: Vec<usize> = marked.positions.iter().map(|p| p + 1).collect();
    let reindex = |s: Span| Span::new(doc_positions[s.start], doc_positions[s.end - 1] + 1);

    let events = marked
        .triggers
        .iter()
        .enumerate()
        .map(|(i, marks)| {
            let event = ordered[i];
            EventRegion {
                event_id: event.event_id.clone(),
                event_type: event.event_type.clone(),
                trigger: marks.open + 1..marks.close + 2,
                prompt: prompt.event_prompt[i],
                gold: event
                    .arguments
                    .iter()
                    .map(|a| GoldArgument {
                        role: a.role.clone(),
                        span: reindex(a.span),
                    })
                    .collect(),
            }
        })
        .collect();
    let prompts = prompt
        .prompts
        .into_iter()
        .map(|p| PromptRegion {
            range: p.range.start + offset..p.range.end + offset,
            slots: p
                .slots
                .into_iter()
                .map(|s| SlotRegion {
                    role: s.role,
                    range: s.range.start + offset..s.range.end + offset,
                })
                .collect(),
            ..p
        })
        .collect();

    Ok(AssembledInput {
        doc_id: doc.doc_id.clone(),
        tokens,
        context,
        events,
        prompts,
        doc_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Argument, TemplateRegistry};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn event(id: &str, ty: &str, t: (usize, usize), args: &[(&str, usize, usize)]) -> Event {
        Event {
            event_id: id.into(),
            event_type: ty.into(),
            trigger: Span::new(t.0, t.1),
            arguments: args
                .iter()
                .map(|&(r, s, e)| Argument {
                    role: r.into(),
                    span: Span::new(s, e),
                })
                .collect(),
        }
    }

    fn registry() -> TemplateRegistry {
        TemplateRegistry::from_json_str(
            r#"{"Death": "Death of «role:Anatomical Entity».",
                "Attack": "«role:Attacker» attacked «role:Target» at «role:Place»."}"#,
        )
        .unwrap()
    }

    #[test]
    fn no_events_leaves_tokens_unchanged() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("a b c"),
            events: vec![],
        };
        let m = mark_triggers(&doc).unwrap();
        assert_eq!(m.tokens, doc.tokens);
        assert!(m.triggers.is_empty());
    }

    #[test]
    fn single_trigger_is_wrapped() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("government bombarding areas"),
            events: vec![event("e", "Attack", (1, 2), &[])],
        };
        let m = mark_triggers(&doc).unwrap();
        assert_eq!(m.tokens, toks("government <t0> bombarding </t0> areas"));
        assert_eq!(m.triggers[0].open, 1);
        assert_eq!(m.positions, [0, 2, 4]);
    }

    #[test]
    fn marker_offsets_match_rescan() {
        // events listed out of order; numbering must follow occurrence
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("a b c d e f g h"),
            events: vec![
                event("late", "Attack", (5, 7), &[]),
                event("early", "Death", (1, 2), &[]),
            ],
        };
        let m = mark_triggers(&doc).unwrap();
        // brute-force: find markers by scanning the output
        let find = |s: &str| m.tokens.iter().position(|t| t == s).unwrap();
        assert_eq!(m.triggers[0].open, find("<t0>"));
        assert_eq!(m.triggers[0].close, find("</t0>"));
        assert_eq!(m.triggers[1].open, find("<t1>"));
        assert_eq!(m.triggers[1].close, find("</t1>"));
        assert_eq!(doc.events[m.triggers[0].event].event_id, "early");
        assert_eq!(m.triggers[1].open, 5 + 2);
        for (i, &p) in m.positions.iter().enumerate() {
            assert_eq!(m.tokens[p], doc.tokens[i]);
        }
    }

    #[test]
    fn overlapping_triggers_rejected() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("a b c d"),
            events: vec![event("x", "Attack", (0, 2), &[]), event("y", "Death", (1, 3), &[])],
        };
        assert!(matches!(mark_triggers(&doc), Err(Error::OverlappingTriggers { .. })));
    }

    #[test]
    fn single_event_prompt_layout() {
        let e = event("e", "Death", (0, 1), &[]);
        let p = build_prompt(&[&e], &registry(), false).unwrap();
        assert_eq!(p.tokens, toks("<e0> Death </e0> Death of Anatomical Entity ."));
        assert_eq!(p.prompts[0].slots[0].range, 5..7);
        assert_eq!(p.prompts[0].slots[0].role, "Anatomical Entity");
    }

    #[test]
    fn same_type_prompts_are_shared_unless_duplicated() {
        let a = event("a", "Death", (0, 1), &[]);
        let b = event("b", "Death", (2, 3), &[]);
        let shared = build_prompt(&[&a, &b], &registry(), false).unwrap();
        assert_eq!(shared.prompts.len(), 1);
        assert_eq!(shared.prompts[0].events, [0, 1]);
        assert_eq!(shared.event_prompt, [0, 0]);

        let dup = build_prompt(&[&a, &b], &registry(), true).unwrap();
        assert_eq!(dup.prompts.len(), 2);
        assert_eq!(dup.event_prompt, [0, 1]);
        assert!(dup.tokens.contains(&"<e1>".to_string()));
    }

    #[test]
    fn missing_template_is_an_error() {
        let e = event("e", "Nope", (0, 1), &[]);
        assert!(matches!(
            build_prompt(&[&e], &registry(), false),
            Err(Error::MissingTemplate(_))
        ));
    }

    #[test]
    fn empty_event_document_is_context_only() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("a b"),
            events: vec![],
        };
        let inp = assemble(&doc, &registry(), &AssemblyConfig::default()).unwrap();
        assert_eq!(inp.tokens, toks("<s> a b"));
        assert!(inp.prompts.is_empty());
        assert_eq!(inp.context, 1..3);
    }

    #[test]
    fn shared_argument_figure_one_style() {
        // "the government was bombarding areas , killing civilians"
        let doc = Document {
            doc_id: "fig1".into(),
            tokens: toks("the government was bombarding areas , killing civilians"),
            events: vec![
                event("atk", "Attack", (3, 4), &[("Attacker", 1, 2), ("Place", 4, 5)]),
                event("die", "Death", (6, 7), &[("Anatomical Entity", 7, 8)]),
                event("atk2", "Attack", (2, 3), &[("Attacker", 1, 2)]),
            ],
        };
        let inp = assemble(&doc, &registry(), &AssemblyConfig::default()).unwrap();
        assert_eq!(inp.prompts.len(), 2);
        let slots: usize = inp.prompts.iter().map(|p| p.slots.len()).sum();
        assert!(slots >= 4);
        // occurrence order: atk2 (pos 2), atk (3), die (6)
        let ids: Vec<_> = inp.events.iter().map(|e| e.event_id.as_str()).collect();
        assert_eq!(ids, ["atk2", "atk", "die"]);
        assert_eq!(inp.events[0].prompt, inp.events[1].prompt);
        // the shared span lands at the same assembled position for both events
        let a = inp.events[0].gold[0].span;
        let b = inp.events[1].gold[0].span;
        assert_eq!(a, b);
        assert_eq!(inp.tokens[a.start], "government");
        // manual index check: <s> the government <t0> was </t0> <t1> bombarding </t1> ...
        assert_eq!(a, Span::new(2, 3));
        assert_eq!(inp.events[0].trigger, 3..6);
        assert_eq!(inp.events[1].trigger, 6..9);
        for (i, e) in inp.events.iter().enumerate() {
            assert_eq!(inp.tokens[e.marker()], format!("<t{i}>"));
        }
    }

    #[test]
    fn assembly_is_deterministic_and_spans_round_trip() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: toks("x y z w v"),
            events: vec![event("a", "Attack", (1, 2), &[("Target", 2, 5)])],
        };
        let a = assemble(&doc, &registry(), &AssemblyConfig::default()).unwrap();
        let b = assemble(&doc, &registry(), &AssemblyConfig::default()).unwrap();
        assert_eq!(a, b);
        let g = a.events[0].gold[0].span;
        assert_eq!(a.to_doc_span(g), Some(Span::new(2, 5)));
        assert_eq!(a.to_assembled_span(Span::new(2, 5)), g);
        // a span made only of markers maps to nothing
        assert_eq!(a.to_doc_span(Span::new(a.events[0].trigger.start, a.events[0].trigger.start + 1)), None);
        assert!(a.to_json().contains("\"doc_positions\""));
    }
}
