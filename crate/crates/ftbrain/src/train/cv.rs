//! Subject-wise k-fold cross-validation and the run reports it produces.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataio::kfold_subject_split;
use crate::error::{Error, Result};
use crate::model::{build_model, transfer_conv_weights, Head, Model, ModelSpec};

use super::config::{Task, TrainConfig};
use super::data::{collect_multiclass_set, collect_task_set, filter_task, SubjectSlices};
use super::eval::{evaluate, evaluate_multiclass, Confusion};
use super::fit::{train, LearningCurve};

/// One cross-validation round scored on its held-out subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldEval {
    pub fold: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Aggregate over all folds; spreads are sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub folds: Vec<FoldEval>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_sensitivity: f64,
    pub std_sensitivity: f64,
    pub mean_specificity: f64,
    pub std_specificity: f64,
}

/// Everything a cross-validation run leaves behind.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    /// One learning curve per fold, in fold order.
    pub curves: Vec<LearningCurve>,
    /// The trained fold models, in fold order.
    pub models: Vec<Model>,
}

/// Mean and sample (n-1) standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `work` for folds 0..k, on `jobs` threads when asked. Results come
/// back in fold order and the lowest failing fold wins error reporting, so
/// the outcome does not depend on thread timing.
fn run_folds<T: Send>(k: usize, jobs: usize, work: &(impl Fn(usize) -> Result<T> + Sync)) -> Result<Vec<T>> {
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    if jobs == 1 || k < 2 {
        return (0..k).map(work).collect();
    }
    let jobs = jobs.min(k);
    let mut slots: Vec<Option<Result<T>>> = (0..k).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j..k).step_by(jobs).map(|f| (f, work(f))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (f, r) in h.join().expect("fold worker panicked") {
                slots[f] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every fold visited")).collect()
}

/// Runs `cfg.k_folds` independent trainings over the subjects that belong
/// to `task`. Fold i seeds everything with `cfg.seed + i`; the fold's
/// held-out subjects double as its validation set for the learning curve.
/// `pretrained` conv weights, when given, replace the fresh stack before
/// each fold trains.
pub fn cross_validate(
    subjects: &[SubjectSlices],
    task: Task,
    spec: &ModelSpec,
    pretrained: Option<&Model>,
    cfg: &TrainConfig,
) -> Result<CvOutcome> {
    cross_validate_jobs(subjects, task, spec, pretrained, cfg, 1)
}

/// [`cross_validate`] with folds spread over `jobs` worker threads. Folds
/// are independent, so any job count gives bit-identical results.
pub fn cross_validate_jobs(
    subjects: &[SubjectSlices],
    task: Task,
    spec: &ModelSpec,
    pretrained: Option<&Model>,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CvOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let picked = filter_task(subjects, task);
    if picked.is_empty() {
        return Err(Error::Data(format!("no subjects carry the classes of task {task}")));
    }
    let ids: Vec<_> = picked.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
    let plan = kfold_subject_split(&ids, cfg.k_folds, cfg.seed)?;
    plan.verify_disjoint()?;

    let input = (spec.input_h, spec.input_w);
    let work = |f: usize| -> Result<(FoldEval, LearningCurve, Model)> {
        let at_fold = |e: Error| Error::Train(format!("fold {f}: {e}"));
        let fold_cfg = TrainConfig { seed: cfg.seed.wrapping_add(f as u64), ..cfg.clone() };
        let mut model = build_model(spec, fold_cfg.seed)?;
        if let Some(src) = pretrained {
            transfer_conv_weights(src, &mut model)?;
        }
        let (train_ids, test_ids) = plan.split(f);
        let train_set = collect_task_set(&picked, &train_ids, task, input)?;
        let test_set = collect_task_set(&picked, test_ids, task, input)?;
        let curve = train(&mut model, &train_set, &test_set, &fold_cfg).map_err(at_fold)?;
        let ev = evaluate(&model, &test_set).map_err(at_fold)?;
        let fold = FoldEval {
            fold: f,
            confusion: ev.confusion,
            accuracy: ev.accuracy,
            sensitivity: ev.sensitivity,
            specificity: ev.specificity,
        };
        Ok((fold, curve, model))
    };
    let rows = run_folds(cfg.k_folds, jobs, &work)?;

    let mut folds = Vec::with_capacity(rows.len());
    let mut curves = Vec::with_capacity(rows.len());
    let mut models = Vec::with_capacity(rows.len());
    for (fold, curve, model) in rows {
        folds.push(fold);
        curves.push(curve);
        models.push(model);
    }
    let col = |get: fn(&FoldEval) -> f64| -> Vec<f64> { folds.iter().map(get).collect() };
    let (mean_accuracy, std_accuracy) = mean_std(&col(|f| f.accuracy));
    let (mean_sensitivity, std_sensitivity) = mean_std(&col(|f| f.sensitivity));
    let (mean_specificity, std_specificity) = mean_std(&col(|f| f.specificity));
    Ok(CvOutcome {
        report: EvalReport {
            task,
            folds,
            mean_accuracy,
            std_accuracy,
            mean_sensitivity,
            std_sensitivity,
            mean_specificity,
            std_specificity,
        },
        curves,
        models,
    })
}

/// One 3-way cross-validation round; multi-class runs report accuracy only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MulticlassFold {
    pub fold: usize,
    pub accuracy: f64,
}

/// Aggregate 3-way report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MulticlassReport {
    pub folds: Vec<MulticlassFold>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// 3-way cross-validation outcome.
#[derive(Debug, Clone)]
pub struct MulticlassOutcome {
    pub report: MulticlassReport,
    pub curves: Vec<LearningCurve>,
    pub models: Vec<Model>,
}

/// Like [`cross_validate`], but over all three classes with the softmax
/// head. Folds stay subject-wise and class-stratified.
pub fn cross_validate_multiclass(
    subjects: &[SubjectSlices],
    spec: &ModelSpec,
    pretrained: Option<&Model>,
    cfg: &TrainConfig,
) -> Result<MulticlassOutcome> {
    cross_validate_multiclass_jobs(subjects, spec, pretrained, cfg, 1)
}

/// [`cross_validate_multiclass`] with folds spread over `jobs` threads.
pub fn cross_validate_multiclass_jobs(
    subjects: &[SubjectSlices],
    spec: &ModelSpec,
    pretrained: Option<&Model>,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<MulticlassOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if spec.head != Head::Softmax3Way {
        return Err(Error::Config("3-way cross-validation needs the softmax-3way head".into()));
    }
    let all: Vec<&SubjectSlices> = subjects.iter().collect();
    if all.is_empty() {
        return Err(Error::Data("no subjects to cross-validate".into()));
    }
    let ids: Vec<_> = all.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
    let plan = kfold_subject_split(&ids, cfg.k_folds, cfg.seed)?;
    plan.verify_disjoint()?;

    let input = (spec.input_h, spec.input_w);
    let work = |f: usize| -> Result<(MulticlassFold, LearningCurve, Model)> {
        let at_fold = |e: Error| Error::Train(format!("fold {f}: {e}"));
        let fold_cfg = TrainConfig { seed: cfg.seed.wrapping_add(f as u64), ..cfg.clone() };
        let mut model = build_model(spec, fold_cfg.seed)?;
        if let Some(src) = pretrained {
            transfer_conv_weights(src, &mut model)?;
        }
        let (train_ids, test_ids) = plan.split(f);
        let train_set = collect_multiclass_set(&all, &train_ids, input)?;
        let test_set = collect_multiclass_set(&all, test_ids, input)?;
        let curve = train(&mut model, &train_set, &test_set, &fold_cfg).map_err(at_fold)?;
        let accuracy = evaluate_multiclass(&model, &test_set).map_err(at_fold)?;
        Ok((MulticlassFold { fold: f, accuracy }, curve, model))
    };
    let rows = run_folds(cfg.k_folds, jobs, &work)?;

    let mut folds = Vec::with_capacity(rows.len());
    let mut curves = Vec::with_capacity(rows.len());
    let mut models = Vec::with_capacity(rows.len());
    for (fold, curve, model) in rows {
        folds.push(fold);
        curves.push(curve);
        models.push(model);
    }
    let (mean_accuracy, std_accuracy) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(MulticlassOutcome {
        report: MulticlassReport { folds, mean_accuracy, std_accuracy },
        curves,
        models,
    })
}

/// Per-fold metrics as `fold,acc,sens,spec` rows.
pub fn write_fold_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("fold,acc,sens,spec\n");
    for f in &report.folds {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", f.fold, f.accuracy, f.sensitivity, f.specificity));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-fold accuracies as `fold,acc` rows.
pub fn write_multiclass_report(report: &MulticlassReport, path: &Path) -> Result<()> {
    let mut out = String::from("fold,acc\n");
    for f in &report.folds {
        out.push_str(&format!("{},{:.6}\n", f.fold, f.accuracy));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    task: &'a str,
    mean_acc: f64,
    std_acc: f64,
    seed: u64,
    config: &'a TrainConfig,
}

fn write_summary_doc(task: &str, mean_acc: f64, std_acc: f64, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let doc = Summary { task, mean_acc, std_acc, seed: cfg.seed, config: cfg };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// JSON digest of a run: headline numbers plus the exact configuration.
pub fn write_summary(report: &EvalReport, cfg: &TrainConfig, path: &Path) -> Result<()> {
    write_summary_doc(&report.task.to_string(), report.mean_accuracy, report.std_accuracy, cfg, path)
}

/// JSON digest of a 3-way run.
pub fn write_multiclass_summary(report: &MulticlassReport, cfg: &TrainConfig, path: &Path) -> Result<()> {
    write_summary_doc("3way", report.mean_accuracy, report.std_accuracy, cfg, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FreezeGroup, Head};
    use crate::train::config::SelectionMode;
    use crate::train::data::{build_subject_slices, synth_cohort};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            seed: 1,
            freeze_group: FreezeGroup::All,
            images_per_subject: 8,
            selection_mode: SelectionMode::Entropy,
            k_folds: 5,
        }
    }

    fn tiny_subjects(cfg: &TrainConfig) -> Vec<SubjectSlices> {
        let volumes = synth_cohort(5, (16, 16, 16), 33).unwrap();
        build_subject_slices(&volumes, cfg, (16, 16)).unwrap()
    }

    #[test]
    fn five_folds_end_to_end_and_deterministic() {
        let cfg = tiny_cfg();
        let spec = ModelSpec::tiny();
        let subjects = tiny_subjects(&cfg);
        let out = cross_validate(&subjects, Task::AdVsNc, &spec, None, &cfg).unwrap();

        assert_eq!(out.report.folds.len(), 5);
        assert_eq!(out.curves.len(), 5);
        assert_eq!(out.models.len(), 5);
        for (f, fold) in out.report.folds.iter().enumerate() {
            assert_eq!(fold.fold, f);
            // 5 subjects per class, 5 folds: one AD and one NC held out, 8 slices each.
            assert_eq!(fold.confusion.total(), 16);
            for r in [fold.accuracy, fold.sensitivity, fold.specificity] {
                assert!((0.0..=1.0).contains(&r));
            }
            assert_eq!(fold.accuracy, fold.confusion.accuracy());
            assert_eq!(fold.sensitivity, fold.confusion.sensitivity());
            assert_eq!(fold.specificity, fold.confusion.specificity());
        }
        for curve in &out.curves {
            assert_eq!(curve.epochs(), 3);
            assert!(curve.train_loss.iter().chain(&curve.val_loss).all(|l| l.is_finite()));
        }
        let accs: Vec<f64> = out.report.folds.iter().map(|f| f.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / 5.0;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
        assert_eq!(out.report.mean_accuracy, mean);
        assert_eq!(out.report.std_accuracy, var.sqrt());

        let again = cross_validate(&subjects, Task::AdVsNc, &spec, None, &cfg).unwrap();
        assert_eq!(again.report, out.report);
        for (a, b) in again.curves.iter().zip(&out.curves) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fold_failures_name_the_fold() {
        let cfg = TrainConfig { lr: 1e12, epochs: 20, ..tiny_cfg() };
        let subjects = tiny_subjects(&cfg);
        let err = cross_validate(&subjects, Task::AdVsNc, &ModelSpec::tiny(), None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Train(_)), "{err}");
        assert!(err.to_string().contains("fold 0"), "{err}");
    }

    #[test]
    fn worker_threads_do_not_change_results() {
        let cfg = TrainConfig { epochs: 2, ..tiny_cfg() };
        let spec = ModelSpec::tiny();
        let subjects = tiny_subjects(&cfg);
        let one = cross_validate_jobs(&subjects, Task::AdVsNc, &spec, None, &cfg, 1).unwrap();
        let three = cross_validate_jobs(&subjects, Task::AdVsNc, &spec, None, &cfg, 3).unwrap();
        assert_eq!(one.report, three.report);
        assert_eq!(one.curves, three.curves);
        for (a, b) in one.models.iter().zip(&three.models) {
            assert_eq!(a.head.weights.data(), b.head.weights.data());
        }
        let err = cross_validate_jobs(&subjects, Task::AdVsNc, &spec, None, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn pretrained_stack_survives_frozen_folds_exactly() {
        let cfg = TrainConfig { freeze_group: FreezeGroup::G4, ..tiny_cfg() };
        let spec = ModelSpec::tiny();
        let subjects = tiny_subjects(&cfg);
        let source = build_model(&ModelSpec { head: Head::Softmax3Way, ..ModelSpec::tiny() }, 404).unwrap();
        let out = cross_validate(&subjects, Task::MciVsNc, &spec, Some(&source), &cfg).unwrap();
        // The tiny spec's whole conv stack sits inside the G4 prefix, so
        // every fold model must still hold the source weights bit for bit.
        for model in &out.models {
            for (a, b) in model.convs.iter().zip(&source.convs) {
                assert_eq!(a.kernels.data(), b.kernels.data());
                assert_eq!(a.bias.data(), b.bias.data());
            }
        }
        // Heads start from fold seeds, not the source head.
        let fresh = build_model(&spec, cfg.seed).unwrap();
        assert_ne!(out.models[0].head.weights.data(), fresh.head.weights.data());
    }

    #[test]
    fn report_files_round_trip() {
        let cfg = tiny_cfg();
        let spec = ModelSpec::tiny();
        let subjects = tiny_subjects(&cfg);
        let out = cross_validate(&subjects, Task::AdVsMci, &spec, None, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let folds_csv = dir.path().join("folds.csv");
        let summary_json = dir.path().join("summary.json");
        write_fold_report(&out.report, &folds_csv).unwrap();
        write_summary(&out.report, &cfg, &summary_json).unwrap();

        let text = fs::read_to_string(&folds_csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("fold,acc,sens,spec"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 5);
        for (i, row) in rows.iter().enumerate() {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 4);
            assert_eq!(cols[0].parse::<usize>().unwrap(), i);
            let acc: f64 = cols[1].parse().unwrap();
            assert!((acc - out.report.folds[i].accuracy).abs() < 1e-6);
        }

        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary_json).unwrap()).unwrap();
        assert_eq!(doc["task"], "ad-mci");
        assert_eq!(doc["seed"], 1);
        assert_eq!(doc["config"]["epochs"], 3);
        assert_eq!(doc["config"]["selection_mode"], "entropy");
        assert!((doc["mean_acc"].as_f64().unwrap() - out.report.mean_accuracy).abs() < 1e-12);
        assert!(doc["std_acc"].is_number());
    }

    #[test]
    fn three_way_folds_report_accuracy_only() {
        let cfg = tiny_cfg();
        let spec = ModelSpec { head: Head::Softmax3Way, ..ModelSpec::tiny() };
        let subjects = tiny_subjects(&cfg);
        let out = cross_validate_multiclass(&subjects, &spec, None, &cfg).unwrap();
        assert_eq!(out.report.folds.len(), 5);
        for (f, fold) in out.report.folds.iter().enumerate() {
            assert_eq!(fold.fold, f);
            assert!((0.0..=1.0).contains(&fold.accuracy));
        }
        let accs: Vec<f64> = out.report.folds.iter().map(|f| f.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / 5.0;
        assert_eq!(out.report.mean_accuracy, mean);

        // The sigmoid-head spec is refused for the 3-way problem.
        assert!(cross_validate_multiclass(&subjects, &ModelSpec::tiny(), None, &cfg).is_err());

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("folds.csv");
        let json = dir.path().join("summary.json");
        write_multiclass_report(&out.report, &csv).unwrap();
        write_multiclass_summary(&out.report, &cfg, &json).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().next(), Some("fold,acc"));
        assert_eq!(text.lines().count(), 6);
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(doc["task"], "3way");
        assert!((doc["mean_acc"].as_f64().unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn third_class_subjects_are_left_out() {
        // MCI subjects exist in the cohort but must not leak into AD-vs-NC.
        let cfg = tiny_cfg();
        let subjects = tiny_subjects(&cfg);
        let picked = filter_task(&subjects, Task::AdVsNc);
        assert_eq!(picked.len(), 10);
        let out = cross_validate(&subjects, Task::AdVsNc, &ModelSpec::tiny(), None, &cfg).unwrap();
        // Confusion totals account for every AD and NC slice and nothing more.
        let total: usize = out.report.folds.iter().map(|f| f.confusion.total()).sum();
        assert_eq!(total, 10 * 8);
    }
}
