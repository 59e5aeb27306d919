use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::assemble;
use crate::corpus::{Corpus, Document, Span, TemplateRegistry};
use crate::error::{Error, Result};
use crate::model::{best_span, forward_document, Model};

/// How events of one document are fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All events in one assembled input.
    Multi,
    /// One assembled input per event.
    SingleLoop,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Multi => "multi",
            Mode::SingleLoop => "single_loop",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(Mode::Multi),
            "single_loop" | "single" => Ok(Mode::SingleLoop),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected multi or single_loop)"))),
        }
    }
}

/// One extracted argument in document coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub event_id: String,
    pub role: String,
    pub start: usize,
    pub end: usize,
}

impl Prediction {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// Distributions and decision for one (event, slot) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotPrediction {
    pub event_id: String,
    pub role: String,
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    /// Chosen span in assembled coordinates; `(0, 0)` means no argument.
    pub span: Span,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentPrediction {
    pub predictions: Vec<Prediction>,
    pub slots: Vec<SlotPrediction>,
    pub encoder_passes: usize,
}

/// Extracts arguments for every event of `doc`.
pub fn predict(model: &Model, reg: &TemplateRegistry, doc: &Document, mode: Mode) -> Result<DocumentPrediction> {
    let mut out = DocumentPrediction {
        predictions: Vec::new(),
        slots: Vec::new(),
        encoder_passes: 0,
    };
    if doc.events.is_empty() {
        return Ok(out);
    }
    let units: Vec<Document> = match mode {
        Mode::Multi => vec![doc.clone()],
        Mode::SingleLoop => doc
            .events
            .iter()
            .map(|e| doc.with_events(|x| x.event_id == e.event_id))
            .collect(),
    };
    let mut seen = HashSet::new();
    for unit in &units {
        let inp = assemble(unit, reg, &model.config.assembly())?;
        let fwd = forward_document(model, &inp)?;
        out.encoder_passes += fwd.encoder_passes();
        for s in &fwd.slots {
            let start = fwd.probs(s.start);
            let end = fwd.probs(s.end);
            let (span, score) = best_span(start, end, inp.context.clone(), model.config.max_span)?;
            let event_id = inp.events[s.event].event_id.clone();
            if !span.is_empty() {
                if let Some(d) = inp.to_doc_span(span) {
                    let p = Prediction {
                        doc_id: doc.doc_id.clone(),
                        event_id: event_id.clone(),
                        role: s.role.clone(),
                        start: d.start,
                        end: d.end,
                    };
                    if seen.insert(p.clone()) {
                        out.predictions.push(p);
                    }
                }
            }
            out.slots.push(SlotPrediction {
                event_id,
                role: s.role.clone(),
                start_probs: start.to_vec(),
                end_probs: end.to_vec(),
                span,
                score,
            });
        }
    }
    Ok(out)
}

/// Predictions for every document, in corpus order.
pub fn predict_corpus(model: &Model, reg: &TemplateRegistry, corpus: &Corpus, mode: Mode) -> Result<Vec<Prediction>> {
    let mut all = Vec::new();
    for doc in &corpus.documents {
        all.extend(predict(model, reg, doc, mode)?.predictions);
    }
    Ok(all)
}

/// Gold arguments of a corpus in prediction form.
pub fn gold_predictions(corpus: &Corpus) -> Vec<Prediction> {
    corpus
        .documents
        .iter()
        .flat_map(|d| {
            d.events.iter().flat_map(move |e| {
                e.arguments.iter().map(move |a| Prediction {
                    doc_id: d.doc_id.clone(),
                    event_id: e.event_id.clone(),
                    role: a.role.clone(),
                    start: a.span.start,
                    end: a.span.end,
                })
            })
        })
        .collect()
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    let mut s = String::new();
    for p in preds {
        s.push_str(&serde_json::to_string(p).expect("predictions always serialize"));
        s.push('\n');
    }
    s
}

pub fn predictions_from_jsonl(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
