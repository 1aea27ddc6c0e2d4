//! Conditional generation of daily activity plans with a Transformer CVAE.
//!
//! Days are 288 five-minute bins over twelve activity classes. The crate covers
//! log preprocessing, plausibility rules, the model and its training loop,
//! constrained generation and the evaluation metrics.

pub mod activity;
pub mod dataset;
pub mod error;
pub mod generate;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rules;

pub use activity::{
    ActivityClass, ConditionMask, DailySequence, Interval, BIN_MINUTES, MASK_ID, NUM_CLASSES, SEQ_LEN,
    VOCAB_SIZE,
};
pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_HEADER};
pub use error::{Error, Result};
pub use generate::{export_plan, generate, parse_plan, GenerationMode, GenerationRequest};
pub use metrics::{EvalOptions, EvalReport, WdMode};
pub use rules::{check_plausibility, PlausibilityReport, PlausibilityRuleSet, RuleKind, Violation};
