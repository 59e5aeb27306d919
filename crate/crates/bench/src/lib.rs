//! Shared setup for the criterion benchmarks in `benches/`.

use deeia::corpus::{Corpus, TemplateRegistry};
use deeia::model::{Model, ModelConfig, Vocab};
use deeia::pipeline::bench_documents;

/// Event counts timed by the inference benchmark.
pub const EVENT_COUNTS: [usize; 4] = [1, 2, 4, 8];

/// An untrained default-size model and a few synthetic documents per event
/// count. Timing does not depend on the weights.
pub fn fixture(docs_per_bucket: usize, seed: u64) -> (Model, Corpus, TemplateRegistry) {
    let (corpus, reg) = bench_documents(&EVENT_COUNTS, docs_per_bucket, seed).expect("synthetic documents");
    let config = ModelConfig::default();
    let vocab = Vocab::build(&corpus, &reg, config.max_markers);
    let model = Model::new(config, vocab, seed).expect("default config is valid");
    (model, corpus, reg)
}
