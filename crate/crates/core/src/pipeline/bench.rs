use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::predict::{predict, Mode};
use crate::corpus::{generate_synthetic, Corpus, Document, GenConfig, TemplateRegistry};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchBucket {
    pub events: usize,
    pub docs: usize,
    pub mode: Mode,
    /// Mean wall time per document, in seconds.
    pub mean_seconds: f64,
    /// Mean encoder passes per document.
    pub encoder_passes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub warmup: usize,
    pub buckets: Vec<BenchBucket>,
}

impl BenchReport {
    pub fn bucket(&self, events: usize, mode: Mode) -> Option<&BenchBucket> {
        self.buckets.iter().find(|b| b.events == events && b.mode == mode)
    }
}

/// Times both inference modes on documents grouped by event count. Each
/// repeat runs every document of the bucket once; `warmup` extra rounds run
/// first and are not timed.
pub fn bench(model: &Model, reg: &TemplateRegistry, docs: &[Document], repeats: usize, warmup: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        groups.entry(d.events.len()).or_default().push(d);
    }
    if groups.is_empty() {
        return Err(Error::Empty("no documents to benchmark".into()));
    }
    let mut buckets = Vec::new();
    for (&events, group) in &groups {
        for mode in [Mode::Multi, Mode::SingleLoop] {
            let mut passes = 0;
            for d in group {
                passes += predict(model, reg, d, mode)?.encoder_passes;
            }
            for _ in 0..warmup {
                for d in group {
                    predict(model, reg, d, mode)?;
                }
            }
            let start = Instant::now();
            for _ in 0..repeats {
                for d in group {
                    std::hint::black_box(predict(model, reg, d, mode)?);
                }
            }
            let total = start.elapsed().as_secs_f64();
            buckets.push(BenchBucket {
                events,
                docs: group.len(),
                mode,
                mean_seconds: total / (repeats * group.len()) as f64,
                encoder_passes: passes as f64 / group.len() as f64,
            });
        }
    }
    Ok(BenchReport { repeats, warmup, buckets })
}

/// `docs_per_bucket` synthetic documents with exactly `k` events for every
/// `k` in `event_counts`, plus the registry they validate against.
pub fn bench_documents(event_counts: &[usize], docs_per_bucket: usize, seed: u64) -> Result<(Corpus, TemplateRegistry)> {
    let mut documents = Vec::new();
    let base = GenConfig::default();
    for (i, &k) in event_counts.iter().enumerate() {
        let footprint = k * (1 + base.max_args * base.max_arg_len);
        let min_len = footprint.max(base.min_len);
        let config = GenConfig {
            documents: docs_per_bucket,
            event_counts: vec![(k, 1.0)],
            min_len,
            max_len: min_len + 16,
            ..base.clone()
        };
        let corpus = generate_synthetic(&config, seed.wrapping_add(i as u64))?;
        for mut d in corpus.documents {
            d.doc_id = format!("k{k}-{}", d.doc_id);
            documents.push(d);
        }
    }
    Ok((Corpus::new(documents), base.registry()?))
}
