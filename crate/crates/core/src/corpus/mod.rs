//! Annotated documents, JSONL ingestion and validation.
//!
//! All spans are half-open word-token intervals `[start, end)`.

mod synth;
pub(crate) mod template;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use synth::{generate_synthetic, GenConfig, TypeSpec};
pub use template::{load_templates, Slot, Template, TemplateRegistry, TemplateToken};

use crate::error::{Error, Result};

/// Half-open token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub role: String,
    #[serde(flatten)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub event_type: String,
    pub trigger: Span,
    #[serde(default)]
    pub arguments: Vec<Argument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl Document {
    pub fn event(&self, event_id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    /// Copy of this document that keeps only the events selected by `keep`.
    pub fn with_events(&self, keep: impl Fn(&Event) -> bool) -> Document {
        Document {
            doc_id: self.doc_id.clone(),
            tokens: self.tokens.clone(),
            events: self.events.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Structural invariants only: span ranges and event-id uniqueness.
    pub fn check_structure(&self) -> Result<()> {
        let len = self.tokens.len();
        let mut seen = HashSet::new();
        for event in &self.events {
            if !seen.insert(event.event_id.as_str()) {
                return Err(Error::DuplicateEventId {
                    doc_id: self.doc_id.clone(),
                    event_id: event.event_id.clone(),
                });
            }
            let spans = std::iter::once(event.trigger).chain(event.arguments.iter().map(|a| a.span));
            for span in spans {
                if span.start >= span.end || span.end > len {
                    return Err(Error::SpanOutOfRange {
                        doc_id: self.doc_id.clone(),
                        start: span.start,
                        end: span.end,
                        len,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One invariant violation found by [`validate_document`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SpanOutOfRange { event_id: String, span: Span, len: usize },
    DuplicateEventId { event_id: String },
    UnknownEventType { event_id: String, event_type: String },
    UnknownRole { event_id: String, event_type: String, role: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SpanOutOfRange { event_id, span, len } => {
                write!(f, "event `{event_id}`: span {span} invalid for {len} tokens")
            }
            Violation::DuplicateEventId { event_id } => write!(f, "duplicate event id `{event_id}`"),
            Violation::UnknownEventType { event_id, event_type } => {
                write!(f, "event `{event_id}`: no template for type `{event_type}`")
            }
            Violation::UnknownRole { event_id, event_type, role } => {
                write!(f, "event `{event_id}`: role `{role}` not in template for `{event_type}`")
            }
        }
    }
}

/// Checks every document/event invariant plus role membership in the registry,
/// reporting all violations at once.
pub fn validate_document(doc: &Document, reg: &TemplateRegistry) -> Result<()> {
    let mut violations = Vec::new();
    let len = doc.tokens.len();
    let mut seen = HashSet::new();
    for event in &doc.events {
        if !seen.insert(event.event_id.as_str()) {
            violations.push(Violation::DuplicateEventId {
                event_id: event.event_id.clone(),
            });
        }
        let spans = std::iter::once(event.trigger).chain(event.arguments.iter().map(|a| a.span));
        for span in spans {
            if span.start >= span.end || span.end > len {
                violations.push(Violation::SpanOutOfRange {
                    event_id: event.event_id.clone(),
                    span,
                    len,
                });
            }
        }
        match reg.get(&event.event_type) {
            None => violations.push(Violation::UnknownEventType {
                event_id: event.event_id.clone(),
                event_type: event.event_type.clone(),
            }),
            Some(template) => {
                for arg in &event.arguments {
                    if !template.has_role(&arg.role) {
                        violations.push(Violation::UnknownRole {
                            event_id: event.event_id.clone(),
                            event_type: event.event_type.clone(),
                            role: arg.role.clone(),
                        });
                    }
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(violations))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn validate(&self, reg: &TemplateRegistry) -> Result<()> {
        self.documents.iter().try_for_each(|d| validate_document(d, reg))
    }

    /// Parses JSONL text; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut documents = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            doc.check_structure()?;
            documents.push(doc);
        }
        Ok(Corpus { documents })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("documents always serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_jsonl(&text)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(corpus.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(line: &str) -> Document {
        serde_json::from_str(line).unwrap()
    }

    fn registry() -> TemplateRegistry {
        TemplateRegistry::from_json_str(
            r#"{"Attack": "«role:Attacker» attacked «role:Target» at «role:Place»"}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_text_is_empty_corpus() {
        assert!(Corpus::from_jsonl("").unwrap().is_empty());
        assert!(Corpus::from_jsonl("\n\n").unwrap().is_empty());
    }

    #[test]
    fn trigger_past_end_names_document() {
        let line = r#"{"doc_id":"d7","tokens":["a","b"],"events":[{"event_id":"e","event_type":"Attack","trigger":{"start":1,"end":3},"arguments":[]}]}"#;
        match Corpus::from_jsonl(line) {
            Err(Error::SpanOutOfRange { doc_id, end, .. }) => {
                assert_eq!(doc_id, "d7");
                assert_eq!(end, 3);
            }
            other => panic!("expected span error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line_number() {
        let text = "{\"doc_id\":\"a\",\"tokens\":[]}\n{not json}\n";
        match Corpus::from_jsonl(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_event_id_rejected() {
        let line = r#"{"doc_id":"d","tokens":["a","b"],"events":[
            {"event_id":"e","event_type":"Attack","trigger":{"start":0,"end":1}},
            {"event_id":"e","event_type":"Attack","trigger":{"start":1,"end":2}}]}"#
            .replace('\n', "");
        assert!(matches!(
            Corpus::from_jsonl(&line),
            Err(Error::DuplicateEventId { .. })
        ));
    }

    #[test]
    fn unknown_role_is_reported() {
        let d = doc(
            r#"{"doc_id":"d","tokens":["a","b","c"],"events":[{"event_id":"e","event_type":"Attack","trigger":{"start":0,"end":1},"arguments":[{"role":"Victim","start":1,"end":2}]}]}"#,
        );
        match validate_document(&d, &registry()) {
            Err(Error::Invalid(v)) => {
                assert_eq!(v.len(), 1);
                assert!(matches!(&v[0], Violation::UnknownRole { role, .. } if role == "Victim"));
            }
            other => panic!("expected role violation, got {other:?}"),
        }
    }

    #[test]
    fn zero_event_document_is_valid() {
        let d = doc(r#"{"doc_id":"d","tokens":["a"],"events":[]}"#);
        validate_document(&d, &registry()).unwrap();
    }

    #[test]
    fn nested_argument_spans_are_valid() {
        let d = doc(
            r#"{"doc_id":"d","tokens":["a","b","c","d","e","f","g"],"events":[{"event_id":"e","event_type":"Attack","trigger":{"start":0,"end":1},"arguments":[{"role":"Attacker","start":2,"end":6},{"role":"Target","start":3,"end":4}]}]}"#,
        );
        validate_document(&d, &registry()).unwrap();
    }

    #[test]
    fn every_violation_is_collected() {
        let d = doc(
            r#"{"doc_id":"d","tokens":["a","b"],"events":[{"event_id":"e","event_type":"Nope","trigger":{"start":0,"end":5}},{"event_id":"e","event_type":"Attack","trigger":{"start":0,"end":1},"arguments":[{"role":"X","start":0,"end":1}]}]}"#,
        );
        match validate_document(&d, &registry()) {
            Err(Error::Invalid(v)) => assert_eq!(v.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_documents_round_trip_in_order() {
        let corpus = Corpus::new(
            (0..3)
                .map(|i| Document {
                    doc_id: format!("doc{i}"),
                    tokens: vec!["x".into(), "y".into(), format!("t{i}")],
                    events: vec![Event {
                        event_id: format!("ev{i}"),
                        event_type: "Attack".into(),
                        trigger: Span::new(2, 3),
                        arguments: vec![Argument {
                            role: "Target".into(),
                            span: Span::new(0, 2),
                        }],
                    }],
                })
                .collect(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.documents[2].doc_id, "doc2");
    }
}
