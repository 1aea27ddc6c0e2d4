//! Evaluation metrics for generated day sets.

mod diversity;
mod knn;
mod report;
mod sam;
mod wasserstein;

pub use diversity::{distinct_n, real_score};
pub use knn::{knn_analysis, knn_csv, KnnRecord, KnnSample};
pub use report::{
    conditional_day_id, evaluate, parse_conditional_day_id, EvalOptions, EvalReport, SAM90_THRESHOLD,
};
pub use sam::{alignment_cost, sam_distance, sam_tokens, INDEL_COST, SUBSTITUTION_COST};
pub use wasserstein::{wasserstein, wasserstein_1d, wasserstein_with_bin_minutes, WdMode};
