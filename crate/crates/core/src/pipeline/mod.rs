//! Training, inference, evaluation and benchmarking.

mod bench;
mod eval;
mod gradcheck;
mod predict;
mod train;

pub use bench::{bench, bench_documents, BenchBucket, BenchReport};
pub use eval::{classify_error, error_report, evaluate, BucketMetrics, ErrorCategory, ErrorCounts, Metrics, NotAnError, Prf};
pub use gradcheck::{grad_check_config, model_grad_check, toy_document, toy_registry, GRAD_CHECK_EPS};
pub use predict::{
    gold_predictions, predict, predict_corpus, predictions_from_jsonl, predictions_to_jsonl, DocumentPrediction, Mode,
    Prediction, SlotPrediction,
};
pub use train::{
    assign_targets, document_loss, loss_with_targets, surplus_golds, train, DocLoss, StepLog, TrainConfig, TrainOutcome,
};
