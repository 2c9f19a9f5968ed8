//! Synthetic data, ablations, clicks-to-quality and the annotation budget.

pub mod ablation;
pub mod budget;
pub mod clicks;
pub mod dataset;
pub mod synth;

pub use ablation::{
    config_diff, mean_val_iou, run_ablation, AblationAxis, AblationOptions, AblationReport,
    AblationRow,
};
pub use budget::{budget_report, fmt_num, BudgetModel, BudgetReport, BudgetRow};
pub use clicks::{
    clicks_for, clicks_to_quality, ClicksReport, PUBLISHED_CLICKS_AT_85, PUBLISHED_IOU_AT_4,
};
pub use dataset::{dataset_hash, list_ids, load_dataset, load_sample, write_dataset};
pub use synth::{generate_samples, ShapeKind, SynthConfig};

/// Generate a dataset and write it under `root`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    root: &std::path::Path,
) -> crate::Result<Vec<crate::trainer::Sample>> {
    let samples = generate_samples(cfg)?;
    write_dataset(root, &samples)?;
    Ok(samples)
}
