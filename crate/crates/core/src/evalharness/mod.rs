//! Downstream evaluation: ridge regression with k-fold cross-validation,
//! baselines and ablation variants.

mod ablation;
mod cv;
mod metrics;
mod pipeline;
mod report;
mod ridge;

pub use ablation::{Variant, VariantSettings};
pub use cv::{complement, gather, k_folds, ridge_cv, ridge_ten_fold, MetricsReport, DEFAULT_FOLDS};
pub use metrics::{metrics, Metrics};
pub use pipeline::{
    build_prompt_inputs, direct_features, encode_cells, encode_text, evaluate_task, random_embeddings, CellStage,
    EncodedCells, EvalConfig, Experiment, FoldedEval, Formation, PipelineConfig,
};
pub use report::{markdown, read_csv, write_csv, ReportRow};
pub use ridge::Ridge;
