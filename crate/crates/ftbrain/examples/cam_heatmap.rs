//! Class activation maps: where the classifier looks.
//!
//! Uses the pooled-feature head (cam_head), whose class weights project
//! straight back onto the final conv feature map. The example trains a
//! small model, queries a held-out slice, and writes a red-tinted overlay
//! plus the raw heatmap values.
//!
//! ```bash
//! cargo run --example cam_heatmap [out_dir]
//! ```

use std::path::PathBuf;

use ftbrain::cam::{compute_cam, export_heatmap_csv, overlay};
use ftbrain::dataio::{kfold_subject_split, Label, Plane};
use ftbrain::model::{build_model, ModelSpec};
use ftbrain::train::{
    build_subject_slices, collect_task_set, filter_task, synth_cohort, train, Task, TrainConfig,
};

fn main() -> ftbrain::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-out/cam_heatmap".into())
        .into();
    std::fs::create_dir_all(&out)?;

    let spec = ModelSpec::desk_cam();
    let input = (spec.input_h, spec.input_w);
    let cohort = synth_cohort(6, (32, 64, 64), 13)?;
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 16,
        lr: 3e-3,
        seed: 2,
        k_folds: 2,
        ..TrainConfig::desk()
    };

    let subjects = build_subject_slices(&cohort, &cfg, input)?;
    let task_subjects = filter_task(&subjects, Task::AdVsNc);
    let ids: Vec<_> = task_subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
    let plan = kfold_subject_split(&ids, cfg.k_folds, cfg.seed)?;
    let (train_ids, test_ids) = plan.split(0);
    let train_set = collect_task_set(&task_subjects, &train_ids, Task::AdVsNc, input)?;
    let val_set = collect_task_set(&task_subjects, test_ids, Task::AdVsNc, input)?;

    let mut model = build_model(&spec, cfg.seed)?;
    let curve = train(&mut model, &train_set, &val_set, &cfg)?;
    println!(
        "trained {} epochs, final train loss {:.4}",
        curve.epochs(),
        curve.train_loss[curve.epochs() - 1]
    );

    // Query: a central slice of a held-out positive subject.
    let held_out = task_subjects
        .iter()
        .find(|s| test_ids.contains(&s.subject_id) && s.label == Label::Ad)
        .expect("test fold holds both classes");
    let slice = &held_out.slices[held_out.slices.len() / 2];
    let image = Plane::new(input.0, input.1, slice.pixels.data.clone())?;

    let map = compute_cam(&model, &image, 0)?;
    println!(
        "subject {}, slice {}: peak attention at row {}, col {} of {}x{}",
        held_out.subject_id, slice.slice_index, map.peak.0, map.peak.1, map.h, map.w
    );
    println!("(the class signal is the central cavity, so the peak should sit mid-image)");

    let ppm = out.join("cam_overlay.ppm");
    overlay(&image, &map, &ppm)?;
    export_heatmap_csv(&map, &out.join("cam_values.csv"))?;
    println!("overlay written to {}", ppm.display());
    Ok(())
}
