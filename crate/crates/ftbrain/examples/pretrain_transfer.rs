//! Source-task pretraining and conv-stack transfer.
//!
//! A small model first learns a synthetic blob-counting task, then its conv
//! stack is copied into a fresh classifier that fine-tunes on the target
//! cohort with the whole stack frozen (group g4). A scratch model gets the
//! identical budget for comparison. With this little data and training the
//! carried-over features usually win.
//!
//! ```bash
//! cargo run --example pretrain_transfer
//! ```

use std::time::Instant;

use ftbrain::dataio::kfold_subject_split;
use ftbrain::model::{
    build_model, pretrain_source, transfer_conv_weights, FreezeGroup, Model, ModelSpec,
    SourceTaskConfig,
};
use ftbrain::train::{
    build_subject_slices, collect_task_set, evaluate, filter_task, synth_cohort, train, Task,
    TrainConfig,
};

fn main() -> ftbrain::Result<()> {
    let src_cfg = SourceTaskConfig {
        train_per_class: 32,
        val_per_class: 8,
        epochs: 12,
        target_accuracy: 0.95,
        ..SourceTaskConfig::desk()
    };
    let mut source = build_model(&ModelSpec::desk_source(), src_cfg.seed)?;
    let t0 = Instant::now();
    let report = pretrain_source(&mut source, &src_cfg)?;
    println!(
        "source task: val acc {:.3} after {} epochs ({:.1}s)",
        report.val_accuracy.last().unwrap(),
        report.epochs_run,
        t0.elapsed().as_secs_f64()
    );

    let cohort = synth_cohort(8, (48, 64, 64), 33)?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        seed: 4,
        k_folds: 2,
        ..TrainConfig::desk()
    };

    let spec = ModelSpec::desk();
    let input = (spec.input_h, spec.input_w);
    let subjects = build_subject_slices(&cohort, &cfg, input)?;
    let task_subjects = filter_task(&subjects, Task::AdVsNc);
    let ids: Vec<_> = task_subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
    let plan = kfold_subject_split(&ids, cfg.k_folds, cfg.seed)?;
    let (train_ids, test_ids) = plan.split(0);
    let train_set = collect_task_set(&task_subjects, &train_ids, Task::AdVsNc, input)?;
    let test_set = collect_task_set(&task_subjects, test_ids, Task::AdVsNc, input)?;
    println!(
        "target task: {} training slices, {} test slices, {} epochs",
        train_set.len(),
        test_set.len(),
        cfg.epochs
    );

    let run = |name: &str, source: Option<&Model>| -> ftbrain::Result<()> {
        let t0 = Instant::now();
        let mut model = build_model(&spec, cfg.seed)?;
        let arm_cfg = match source {
            Some(src) => {
                transfer_conv_weights(src, &mut model)?;
                TrainConfig { freeze_group: FreezeGroup::G4, ..cfg.clone() }
            }
            None => cfg.clone(),
        };
        train(&mut model, &train_set, &test_set, &arm_cfg)?;
        let ev = evaluate(&model, &test_set)?;
        println!(
            "{name}: accuracy {:.3}, sensitivity {:.3}, specificity {:.3} ({:.1}s)",
            ev.accuracy,
            ev.sensitivity,
            ev.specificity,
            t0.elapsed().as_secs_f64()
        );
        Ok(())
    };
    run("scratch        ", None)?;
    run("transfer + g4  ", Some(&source))?;
    Ok(())
}
