//! Training, cross-validation, evaluation, and learning-curve export.

pub mod config;
pub mod cv;
pub mod data;
pub mod eval;
pub mod fit;

pub use config::{SelectionMode, Task, TrainConfig};
pub use cv::{
    cross_validate, cross_validate_jobs, cross_validate_multiclass, cross_validate_multiclass_jobs,
    write_fold_report, write_multiclass_report, write_multiclass_summary, write_summary, CvOutcome,
    EvalReport, FoldEval, MulticlassFold, MulticlassOutcome, MulticlassReport,
};
pub use data::{
    build_subject_slices, choose_slices, class_target, collect_multiclass_set, collect_task_set,
    filter_task, selection_rng, synth_cohort, SliceSet, SubjectSlices,
};
pub use eval::{evaluate, evaluate_multiclass, predict_positive, subject_majority_accuracy, Confusion, Evaluation};
pub use fit::{export_curves, read_curves, train, LearningCurve};
