//! Evaluation protocols: metrics, splits, transfer settings, ablation.

pub mod metrics;
pub mod settings;
pub mod split;

pub use metrics::{balanced_accuracy, predict_labels, Confusion};
pub use settings::{
    attention_report, run_ablation, run_one_one_same, run_transfer, select_courses,
    train_transfer, AblationRow, AblationTable, AttentionRow, AttentionSummary, EvalResult,
    ExperimentReport, Population, RunConfig, Selection, SettingKind, SettingRow, TransferModel,
    TransferSetting, SETTINGS,
};
pub use split::{stratified_kfold, stratified_split};
