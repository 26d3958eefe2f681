//! Subject-wise stratified k-fold cross-validation.
//!
//! Subjects are dealt into folds per class, every fold trains a fresh model
//! on the remaining subjects, and no subject ever contributes slices to
//! both sides. The example runs 3 folds on a small cohort and prints the
//! per-fold table plus the aggregate.
//!
//! ```bash
//! cargo run --example cross_validation
//! ```

use ftbrain::model::ModelSpec;
use ftbrain::train::{build_subject_slices, cross_validate, synth_cohort, Task, TrainConfig};

fn main() -> ftbrain::Result<()> {
    let cohort = synth_cohort(6, (32, 64, 64), 21)?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        seed: 9,
        k_folds: 3,
        ..TrainConfig::desk()
    };
    let spec = ModelSpec::desk();
    let subjects = build_subject_slices(&cohort, &cfg, (spec.input_h, spec.input_w))?;

    println!("task ad-nc, 6 subjects per class, {} folds", cfg.k_folds);
    let outcome = cross_validate(&subjects, Task::AdVsNc, &spec, None, &cfg)?;

    println!("fold  tp  fp  tn  fn   acc    sens   spec");
    for f in &outcome.report.folds {
        println!(
            "{:>4} {:>3} {:>3} {:>3} {:>3}  {:.3}  {:.3}  {:.3}",
            f.fold, f.confusion.tp, f.confusion.fp, f.confusion.tn, f.confusion.fn_,
            f.accuracy, f.sensitivity, f.specificity
        );
    }
    let r = &outcome.report;
    println!("mean  accuracy {:.3} (std {:.3})", r.mean_accuracy, r.std_accuracy);
    println!("mean  sensitivity {:.3}, specificity {:.3}", r.mean_sensitivity, r.mean_specificity);

    // Every fold also leaves a learning curve and a trained model behind.
    for (f, curve) in outcome.curves.iter().enumerate() {
        println!(
            "fold {f} loss: train {:.4} -> {:.4}, val {:.4} -> {:.4}",
            curve.train_loss[0],
            curve.train_loss[curve.epochs() - 1],
            curve.val_loss[0],
            curve.val_loss[curve.epochs() - 1]
        );
    }
    Ok(())
}
