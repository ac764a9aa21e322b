//! Dataset records and generation, training, evaluation and benchmarking.

mod bench;
mod dataset;
mod eval;
mod gradsuite;
mod sample;
mod train;

#[cfg(test)]
mod tests;

pub use bench::{bench, median, BenchConfig, BenchReport};
pub use dataset::{
    generate_dataset, Dataset, DatasetManifest, GenConfig, ManifestEntry, PoseRanges, ShapeRange, Split,
    SplitFractions, MANIFEST_FILE,
};
pub use eval::{evaluate, evaluate_predictions, CurveSet, EvaluationReport, SampleScores, Scores, REPORT_FILE};
pub use gradsuite::{gradient_suite, suite_names, SuiteRow, GRAD_STEP, GRAD_TOLERANCE};
pub use sample::{DrapeSample, SAMPLE_MAGIC, SAMPLE_VERSION};
pub use train::{
    mean_e_dist, prepare_all, sample_gradients, train, EpochRecord, LogRecord, PreparedSample, TrainConfig,
    TrainOutcome, TrainSummary, BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG,
};
