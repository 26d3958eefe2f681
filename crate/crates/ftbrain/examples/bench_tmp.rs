//! Scratch pilot for transfer-arm settings. Not part of the suite.

use std::time::Instant;

use ftbrain::dataio::kfold_subject_split;
use ftbrain::dataio::Volume;
use ftbrain::model::{build_model, pretrain_source, transfer_conv_weights, Model, ModelSpec, SourceTaskConfig};
use ftbrain::train::{
    build_subject_slices, collect_task_set, evaluate, filter_task, train, SelectionMode, Task,
    TrainConfig,
};

fn one_arm(volumes: &[Volume], cfg: &TrainConfig, pretrained: Option<&Model>, spec: &ModelSpec) -> (f64, f64) {
    let t0 = Instant::now();
    let input = (spec.input_h, spec.input_w);
    let subjects = build_subject_slices(volumes, cfg, input).unwrap();
    let task_subjects = filter_task(&subjects, Task::AdVsNc);
    let ids: Vec<_> = task_subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
    let plan = kfold_subject_split(&ids, cfg.k_folds, cfg.seed).unwrap();
    let (train_ids, test_ids) = plan.split(0);
    let train_set = collect_task_set(&task_subjects, &train_ids, Task::AdVsNc, input).unwrap();
    let test_set = collect_task_set(&task_subjects, test_ids, Task::AdVsNc, input).unwrap();
    let mut model = build_model(spec, cfg.seed).unwrap();
    if let Some(src) = pretrained {
        transfer_conv_weights(src, &mut model).unwrap();
    }
    train(&mut model, &train_set, &test_set, cfg).unwrap();
    let ev = evaluate(&model, &test_set).unwrap();
    (ev.confusion.accuracy(), t0.elapsed().as_secs_f64())
}

fn main() {
    let spec = ModelSpec::desk();
    let src_spec = ModelSpec::desk_source();
    let mut src = build_model(&src_spec, 11).unwrap();
    let t0 = Instant::now();
    let rep = pretrain_source(&mut src, &SourceTaskConfig::desk()).unwrap();
    println!(
        "pretrain: {:.1}s, {} epochs, val acc {:.3}",
        t0.elapsed().as_secs_f64(),
        rep.epochs_run,
        rep.val_accuracy.last().unwrap()
    );

    let base = TrainConfig {
        batch_size: 25,
        lr: 1e-3,
        k_folds: 5,
        selection_mode: SelectionMode::Entropy,
        ..TrainConfig::desk()
    };

    for s in [1u64, 2, 3] {
        let t0 = Instant::now();
        let vols = ftbrain::train::synth_cohort(30, (96, 64, 64), 100 + s).unwrap();
        println!("seed {s} synth (96,64,64): {:.1}s", t0.elapsed().as_secs_f64());

        type Arm = (&'static str, usize, usize, SelectionMode, bool, f64);
        let arms: [Arm; 9] = [
            ("scratch8  e1", 1, 8, SelectionMode::Entropy, false, 1e-3),
            ("scratch8  e2", 2, 8, SelectionMode::Entropy, false, 1e-3),
            ("scratch8  e3", 3, 8, SelectionMode::Entropy, false, 1e-3),
            ("scratch8  e3 lr3e-4", 3, 8, SelectionMode::Entropy, false, 3e-4),
            ("pret8  g4 e2", 2, 8, SelectionMode::Entropy, true, 1e-3),
            ("pret8  g4 e3", 3, 8, SelectionMode::Entropy, true, 1e-3),
            ("scratch32 e2", 2, 32, SelectionMode::Entropy, false, 1e-3),
            ("pret32 g4 e2", 2, 32, SelectionMode::Entropy, true, 1e-3),
            ("random8   e2", 2, 8, SelectionMode::Random, false, 1e-3),
        ];
        for (name, epochs, ips, mode, pret, lr) in arms {
            let cfg = TrainConfig {
                epochs,
                images_per_subject: ips,
                selection_mode: mode,
                seed: s,
                lr,
                freeze_group: if pret { ftbrain::model::FreezeGroup::G4 } else { ftbrain::model::FreezeGroup::All },
                ..base.clone()
            };
            let (acc, secs) = one_arm(&vols, &cfg, pret.then_some(&src), &spec);
            println!("seed {s} {name}: acc {acc:.3} ({secs:.1}s)");
        }
    }
}
