//! The whole pipeline in one program: synthesize, select, pretrain,
//! transfer, cross-validate, report, and trend-check the learning curve.
//!
//! This is the library-level equivalent of
//! `ftbrain synth && ftbrain pretrain && ftbrain train`; artifacts land
//! under the output directory like a CLI run's.
//!
//! ```bash
//! cargo run --example full_pipeline [out_dir]
//! ```

use std::path::PathBuf;

use ftbrain::dataio::save_volume;
use ftbrain::model::{
    build_model, pretrain_source, save_checkpoint, FreezeGroup, ModelSpec, SourceTaskConfig,
};
use ftbrain::stats::mann_kendall;
use ftbrain::train::{
    build_subject_slices, cross_validate, export_curves, synth_cohort, write_fold_report,
    write_summary, Task, TrainConfig,
};

fn main() -> ftbrain::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-out/full_pipeline".into())
        .into();
    for sub in ["volumes", "checkpoints", "reports", "curves"] {
        std::fs::create_dir_all(out.join(sub))?;
    }

    // 1. Cohort.
    let cohort = synth_cohort(6, (32, 64, 64), 77)?;
    for v in &cohort {
        save_volume(&out.join("volumes").join(v.standard_filename()), v)?;
    }
    println!("[1/5] wrote {} volumes", cohort.len());

    // 2. Source-task pretraining.
    let src_cfg = SourceTaskConfig {
        train_per_class: 24,
        val_per_class: 8,
        epochs: 10,
        target_accuracy: 0.95,
        ..SourceTaskConfig::desk()
    };
    let mut source = build_model(&ModelSpec::desk_source(), src_cfg.seed)?;
    let report = pretrain_source(&mut source, &src_cfg)?;
    save_checkpoint(&source, report.epochs_run, src_cfg.seed, &out.join("checkpoints/pretrained.mnet"))?;
    println!(
        "[2/5] pretrained {} epochs, source val acc {:.3}",
        report.epochs_run,
        report.val_accuracy.last().unwrap()
    );

    // 3. Slice selection (entropy picks happen inside).
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        lr: 1e-3,
        seed: 1,
        k_folds: 3,
        freeze_group: FreezeGroup::G4,
        ..TrainConfig::desk()
    };
    let spec = ModelSpec::desk();
    let subjects = build_subject_slices(&cohort, &cfg, (spec.input_h, spec.input_w))?;
    println!("[3/5] kept {} slices per subject by entropy", cfg.images_per_subject);

    // 4. Cross-validated fine-tuning on the frozen stack.
    let outcome = cross_validate(&subjects, Task::AdVsNc, &spec, Some(&source), &cfg)?;
    write_fold_report(&outcome.report, &out.join("reports/fold_report.csv"))?;
    write_summary(&outcome.report, &cfg, &out.join("reports/summary.json"))?;
    for (f, (curve, model)) in outcome.curves.iter().zip(&outcome.models).enumerate() {
        export_curves(curve, &out.join(format!("curves/fold{f}.csv")))?;
        save_checkpoint(model, cfg.epochs, cfg.seed + f as u64, &out.join(format!("checkpoints/fold{f}.mnet")))?;
    }
    println!(
        "[4/5] {} folds: mean accuracy {:.3} (std {:.3})",
        cfg.k_folds, outcome.report.mean_accuracy, outcome.report.std_accuracy
    );

    // 5. Trend check on fold 0's training loss: converging means falling.
    let series: Vec<f64> = outcome.curves[0].train_loss.iter().map(|&v| v as f64).collect();
    let trend = mann_kendall(&series)?;
    println!(
        "[5/5] fold 0 train-loss trend: S {} p {:.4} ({})",
        trend.s,
        trend.p_two_sided,
        if trend.s < 0 { "falling" } else { "not falling" }
    );
    println!("artifacts under {}", out.display());
    Ok(())
}
