use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::predict::Prediction;
use crate::corpus::{Corpus, Span};
use crate::error::{Error, Result};

/// Precision, recall and F1 from raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(correct, predicted), ratio(correct, gold));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf {
            precision: p,
            recall: r,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    WrongSpan,
    Partial,
    Overlap,
    OverExtraction,
    UnderExtraction,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::WrongSpan,
        ErrorCategory::Partial,
        ErrorCategory::Overlap,
        ErrorCategory::OverExtraction,
        ErrorCategory::UnderExtraction,
    ];
}

/// Why a (prediction, gold) pair is not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotAnError {
    BothEmpty,
    ExactMatch,
}

/// Places a (prediction, gold) pair in one of the five error categories.
/// `None` stands for the empty span.
pub fn classify_error(pred: Option<Span>, gold: Option<Span>) -> std::result::Result<ErrorCategory, NotAnError> {
    let pred = pred.filter(|s| !s.is_empty());
    let gold = gold.filter(|s| !s.is_empty());
    match (pred, gold) {
        (None, None) => Err(NotAnError::BothEmpty),
        (Some(_), None) => Ok(ErrorCategory::OverExtraction),
        (None, Some(_)) => Ok(ErrorCategory::UnderExtraction),
        (Some(p), Some(g)) if p == g => Err(NotAnError::ExactMatch),
        (Some(p), Some(g)) if !p.overlaps(&g) => Ok(ErrorCategory::WrongSpan),
        (Some(p), Some(g)) if p.contains(&g) || g.contains(&p) => Ok(ErrorCategory::Partial),
        _ => Ok(ErrorCategory::Overlap),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub wrong_span: usize,
    pub partial: usize,
    pub overlap: usize,
    pub over_extraction: usize,
    pub under_extraction: usize,
}

impl ErrorCounts {
    fn add(&mut self, c: ErrorCategory) {
        *match c {
            ErrorCategory::WrongSpan => &mut self.wrong_span,
            ErrorCategory::Partial => &mut self.partial,
            ErrorCategory::Overlap => &mut self.overlap,
            ErrorCategory::OverExtraction => &mut self.over_extraction,
            ErrorCategory::UnderExtraction => &mut self.under_extraction,
        } += 1;
    }

    pub fn total(&self) -> usize {
        self.wrong_span + self.partial + self.overlap + self.over_extraction + self.under_extraction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: String,
    pub documents: usize,
    pub arg_c: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub arg_i: Prf,
    pub arg_c: Prf,
    pub buckets: Vec<BucketMetrics>,
    pub errors: ErrorCounts,
}

/// Per-event predicted and gold `(role, span)` lists.
type EventTable<'a> = BTreeMap<(&'a str, &'a str), (Vec<(&'a str, Span)>, Vec<(&'a str, Span)>)>;

fn event_table<'a>(preds: &'a [Prediction], gold: &'a Corpus) -> Result<(EventTable<'a>, HashMap<&'a str, usize>)> {
    let mut table: EventTable = BTreeMap::new();
    let mut event_counts = HashMap::new();
    for doc in &gold.documents {
        event_counts.insert(doc.doc_id.as_str(), doc.events.len());
        for e in &doc.events {
            let entry = table.entry((doc.doc_id.as_str(), e.event_id.as_str())).or_default();
            entry.1.extend(e.arguments.iter().map(|a| (a.role.as_str(), a.span)));
        }
    }
    for p in preds {
        let Some(entry) = table.get_mut(&(p.doc_id.as_str(), p.event_id.as_str())) else {
            if !event_counts.contains_key(p.doc_id.as_str()) {
                return Err(Error::UnknownDocument(p.doc_id.clone()));
            }
            return Err(Error::UnknownEvent {
                doc_id: p.doc_id.clone(),
                event_id: p.event_id.clone(),
            });
        };
        entry.0.push((p.role.as_str(), p.span()));
    }
    Ok((table, event_counts))
}

/// Size of the multiset intersection of `a` and `b`.
fn multiset_matches<T: Ord + Clone>(a: &[T], b: &[T]) -> usize {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for x in b {
        *counts.entry(x.clone()).or_default() += 1;
    }
    let mut hits = 0;
    for x in a {
        if let Some(c) = counts.get_mut(x) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

/// Errors for one (event, role): exact matches are removed, the rest are
/// paired greedily by largest overlap, and leftovers count as over- or
/// under-extraction.
fn role_errors(mut preds: Vec<Span>, mut golds: Vec<Span>, counts: &mut ErrorCounts) {
    preds.sort_unstable_by_key(|s| (s.start, s.end));
    golds.sort_unstable_by_key(|s| (s.start, s.end));
    preds.retain(|p| match golds.iter().position(|g| g == p) {
        Some(i) => {
            golds.remove(i);
            false
        }
        None => true,
    });
    let overlap = |a: &Span, b: &Span| a.end.min(b.end).saturating_sub(a.start.max(b.start));
    loop {
        let best = preds
            .iter()
            .enumerate()
            .flat_map(|(i, p)| golds.iter().enumerate().map(move |(j, g)| (overlap(p, g), i, j)))
            .max_by_key(|&(o, i, j)| (o, std::cmp::Reverse((i, j))));
        let Some((_, i, j)) = best else { break };
        let (p, g) = (preds.remove(i), golds.remove(j));
        if let Ok(c) = classify_error(Some(p), Some(g)) {
            counts.add(c);
        }
    }
    for p in preds {
        counts.add(classify_error(Some(p), None).expect("non-empty prediction"));
    }
    for g in golds {
        counts.add(classify_error(None, Some(g)).expect("non-empty gold"));
    }
}

/// Five-category error counts over every (event, role) of the gold corpus.
pub fn error_report(preds: &[Prediction], gold: &Corpus) -> Result<ErrorCounts> {
    let (table, _) = event_table(preds, gold)?;
    let mut counts = ErrorCounts::default();
    for (p, g) in table.values() {
        let mut roles: BTreeMap<&str, (Vec<Span>, Vec<Span>)> = BTreeMap::new();
        for &(r, s) in p {
            roles.entry(r).or_default().0.push(s);
        }
        for &(r, s) in g {
            roles.entry(r).or_default().1.push(s);
        }
        for (_, (ps, gs)) in roles {
            role_errors(ps, gs, &mut counts);
        }
    }
    Ok(counts)
}

/// Micro-averaged Arg-I / Arg-C scores, bucketed Arg-C by document event
/// count, and error counts.
pub fn evaluate(preds: &[Prediction], gold: &Corpus) -> Result<Metrics> {
    let (table, event_counts) = event_table(preds, gold)?;
    let mut totals = [0usize; 3]; // arg-i correct, arg-c correct, predicted
    let mut gold_total = 0;
    let mut buckets: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for ((doc_id, _), (p, g)) in &table {
        let spans = |v: &[(&str, Span)]| v.iter().map(|x| (x.1.start, x.1.end)).collect::<Vec<_>>();
        let labeled = |v: &[(&str, Span)]| v.iter().map(|x| (x.0.to_string(), x.1.start, x.1.end)).collect::<Vec<_>>();
        let arg_i = multiset_matches(&spans(p), &spans(g));
        let arg_c = multiset_matches(&labeled(p), &labeled(g));
        totals[0] += arg_i;
        totals[1] += arg_c;
        totals[2] += p.len();
        gold_total += g.len();
        let bucket = if event_counts[doc_id] > 1 { "#E>1" } else { "#E=1" };
        let b = buckets.entry(bucket).or_default();
        b[0] += arg_c;
        b[1] += p.len();
        b[2] += g.len();
    }
    let mut bucket_docs: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &gold.documents {
        if !doc.events.is_empty() {
            *bucket_docs.entry(if doc.events.len() > 1 { "#E>1" } else { "#E=1" }).or_default() += 1;
        }
    }
    let buckets = buckets
        .into_iter()
        .map(|(name, c)| BucketMetrics {
            bucket: name.to_string(),
            documents: bucket_docs.get(name).copied().unwrap_or(0),
            arg_c: Prf::from_counts(c[0], c[1], c[2]),
        })
        .collect();
    Ok(Metrics {
        arg_i: Prf::from_counts(totals[0], totals[2], gold_total),
        arg_c: Prf::from_counts(totals[1], totals[2], gold_total),
        buckets,
        errors: error_report(preds, gold)?,
    })
}
