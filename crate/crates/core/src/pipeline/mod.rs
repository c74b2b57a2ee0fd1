//! End-to-end orchestration: data, training, distillation, evaluation and
//! reports.

mod artifacts;
mod config;
mod eval;
mod report;
mod suite;
mod train;

pub use artifacts::{
    load_student, load_teacher, meta_path, read_meta, report_row, save_student, save_teacher, student_meta,
    teacher_meta, Architecture, ModelMeta,
};
pub use config::{DataConfig, EvalConfig, ExperimentConfig, Objective, OptimConfig, SEED_ENV};
pub use eval::{evaluate, robust_subset, Evaluation};
pub use report::{
    bar_chart_svg, bar_groups, median, read_rows, render, write_report, BarGroup, Format, ReportRow,
    from_csv, from_json, sorted, to_csv, to_json, to_markdown, RECIPE_ORDER, SCHEMA_VERSION,
};
pub use suite::{cell_id, run_cell, run_suite, Cell, CellDone, SuiteConfig, SuiteGroup};
pub use train::{
    distill, finetune_teacher, load_data, load_splits, student_config, teacher_config, teacher_outputs,
    train_baseline, EpochLog, Splits, TrainLog,
};
