//! Experiment orchestration: run configs, the end-to-end pipeline, and
//! metric report assembly.

mod config;
mod report;
mod run;

pub use config::{
    BinsConfig, DatasetConfig, MethodConfig, MethodKind, MetricName, OodConfig, RunConfig,
    SizeStudyConfig, TrainSettings, TuneConfig,
};
pub use report::{
    quantile_linear, read_report_csv, summarize, write_report_csv, write_summary_csv,
    MetricReport, MetricRow, SummaryRow,
};
pub use run::{
    build_dataset, emit_curves, evaluate, load_methods, ood_filename, predict_methods, prepare,
    prediction_filename, read_prediction_files, resolve_out_dir, run, run_size_study,
    split_dataset, train_methods, write_prediction_files, write_shift_summary, MethodPredictions,
    Prepared, TrainedMethod,
};
