//! Synthetic benchmark: datasets of oracle renders, pose-estimation runs over
//! reference/query pairs, accuracy reports and ablation sweeps.

mod ablate;
mod baselines;
mod dataset;
mod eval;

pub use ablate::{
    ablate, ablation_csv, render_ablation_table, write_ablation, SweepGrid, SweepPoint, SweepResult,
    ABLATION_HEADER,
};
pub use baselines::{PaperRow, PAPER_LARGE_DELTA, PAPER_TABLE1, PAPER_TABLE3_N, PAPER_TABLE4_M, PAPER_TABLE5_T};
pub use dataset::{
    generate_dataset, Dataset, DatasetSpec, EvalPair, Manifest, ManifestObject, ManifestView,
};
pub use eval::{
    elevation_inits, estimate_pairs, evaluate, evaluate_with, records_from_estimates,
    render_summary, report_csv, write_report, Aggregates, ElevationInit, EvalConfig, EvalRecord,
    EvalReport, SubsetAccuracy, DELTA_SUBSETS, REPORT_HEADER,
};
