//! Subcommand bodies. Each writing command creates its output directory,
//! drops a manifest.json echoing the full resolved configuration, and keeps
//! wall-clock time out of every artifact.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::cam::{compute_cam, export_heatmap_csv, overlay};
use crate::dataio::{
    extract_axial, identity_from_path, kfold_subject_split, load_volume, normalize, read_pgm,
    resize_bilinear, save_volume, write_manifest, write_pgm, FoldPlan, ManifestRow, Volume,
};
use crate::entropy::rank_slices;
use crate::error::{Error, Result};
use crate::model::{
    build_model, load_checkpoint, pretrain_source, read_checkpoint_meta, save_checkpoint, Head,
    ModelSpec, SourceTaskConfig,
};
use crate::numcore::Tensor;
use crate::stats::mann_kendall;
use crate::train::{
    build_subject_slices, choose_slices, collect_multiclass_set, collect_task_set,
    cross_validate_jobs, cross_validate_multiclass_jobs, evaluate, evaluate_multiclass,
    export_curves, filter_task, read_curves, selection_rng, subject_majority_accuracy,
    synth_cohort, write_fold_report, write_multiclass_report, write_multiclass_summary,
    write_summary, SelectionMode, SubjectSlices,
};

use super::{Preset, Resolved, TaskChoice};

fn require_data(res: &Resolved) -> Result<&Path> {
    res.data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --data or data_dir in the config".into()))
}

fn mvol_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("mvol"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .mvol volumes in {}", dir.display())));
    }
    Ok(paths)
}

fn load_volumes(dir: &Path) -> Result<Vec<Volume>> {
    mvol_paths(dir)?.iter().map(|p| load_volume(p)).collect()
}

fn write_json(path: &Path, doc: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(doc)? + "\n")?;
    Ok(())
}

/// The configuration echo every writing command leaves next to its outputs.
fn write_run_manifest(res: &Resolved, command: &str, args: serde_json::Value) -> Result<()> {
    fs::create_dir_all(&res.out_dir)?;
    let doc = json!({
        "command": command,
        "seed": res.train.seed,
        "preset": res.preset.to_string(),
        "task": res.task.to_string(),
        "jobs": res.jobs,
        "data_dir": res.data_dir,
        "args": args,
        "train": res.train,
    });
    write_json(&res.out_dir.join("manifest.json"), &doc)
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("dims {s:?} must be z,y,x")));
    }
    let mut v = [0usize; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::Config(format!("dims component {p:?} is not a positive integer")))?;
    }
    Ok((v[0], v[1], v[2]))
}

/// The model head follows the task; everything else comes from the preset.
fn target_spec(preset: Preset, task: TaskChoice, cam_head: bool) -> ModelSpec {
    let head = match task {
        TaskChoice::Binary(_) => Head::SigmoidBinary,
        TaskChoice::ThreeWay => Head::Softmax3Way,
    };
    ModelSpec { head, cam_head, ..preset.spec() }
}

fn write_plan(plan: &FoldPlan, seed: u64, path: &Path) -> Result<()> {
    write_json(path, &json!({"k": plan.k, "seed": seed, "folds": plan.folds}))
}

pub fn synth(res: &Resolved, subjects: usize, dims: &str) -> Result<()> {
    let dims = parse_dims(dims)?;
    let volumes = synth_cohort(subjects, dims, res.train.seed)?;
    let vol_dir = res.out_dir.join("volumes");
    fs::create_dir_all(&vol_dir)?;
    for v in &volumes {
        save_volume(v, &vol_dir.join(v.standard_filename()))?;
    }
    write_run_manifest(res, "synth", json!({"subjects": subjects, "dims": dims}))?;
    println!(
        "wrote {} volumes ({}x{}x{}) to {}",
        volumes.len(),
        dims.0,
        dims.1,
        dims.2,
        vol_dir.display()
    );
    Ok(())
}

pub fn select(res: &Resolved, k: Option<usize>) -> Result<()> {
    let data = require_data(res)?;
    let k = k.unwrap_or(res.train.images_per_subject);
    if k == 0 {
        return Err(Error::Config("select needs k >= 1".into()));
    }
    let volumes = load_volumes(data)?;
    let slice_dir = res.out_dir.join("slices");
    fs::create_dir_all(&slice_dir)?;
    let mut rng = selection_rng(res.train.seed);
    let mut rows = Vec::new();
    for v in &volumes {
        let mut records = extract_axial(v);
        for rec in &mut records {
            normalize(rec);
        }
        if res.train.selection_mode == SelectionMode::Random {
            // Random picks skip the ranking, but the manifest still carries
            // each slice's entropy. Ranking does not touch the rng.
            rank_slices(&mut records)?;
        }
        let chosen = choose_slices(&mut records, k, res.train.selection_mode, &mut rng)?;
        for rec in &records {
            if !chosen.contains(&rec.slice_index) {
                continue;
            }
            let name = format!("{}_{:03}.pgm", v.subject_id, rec.slice_index);
            write_pgm(&rec.pixels, &slice_dir.join(&name))?;
            rows.push(ManifestRow {
                subject_id: rec.subject_id.clone(),
                label: rec.label,
                slice_index: rec.slice_index,
                entropy_bits: rec.entropy_bits,
                path: format!("slices/{name}"),
            });
        }
    }
    write_manifest(&rows, &res.out_dir.join("slices.csv"))?;
    write_run_manifest(
        res,
        "select",
        json!({"k": k, "mode": res.train.selection_mode.to_string()}),
    )?;
    println!(
        "selected {} slices from {} volumes into {}",
        rows.len(),
        volumes.len(),
        res.out_dir.display()
    );
    Ok(())
}

pub fn split(res: &Resolved) -> Result<()> {
    let data = require_data(res)?;
    let paths = mvol_paths(data)?;
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        ids.push(identity_from_path(p)?);
    }
    let plan = kfold_subject_split(&ids, res.train.k_folds, res.train.seed)?;
    plan.verify_disjoint()?;
    let fold_dir = res.out_dir.join("folds");
    fs::create_dir_all(&fold_dir)?;
    write_plan(&plan, res.train.seed, &fold_dir.join("plan.json"))?;
    write_run_manifest(res, "split", json!({"subjects": ids.len()}))?;
    println!(
        "planned {} folds over {} subjects into {}",
        plan.k,
        ids.len(),
        fold_dir.join("plan.json").display()
    );
    Ok(())
}

pub fn pretrain(res: &Resolved) -> Result<()> {
    let spec = res.preset.source_spec();
    let base = SourceTaskConfig::desk();
    let scfg = SourceTaskConfig {
        epochs: res.explicit.epochs.unwrap_or(base.epochs),
        batch_size: res.explicit.batch_size.unwrap_or(base.batch_size),
        lr: res.explicit.lr.unwrap_or(base.lr),
        seed: res.train.seed,
        ..base
    };
    let mut model = build_model(&spec, res.train.seed)?;
    let report = pretrain_source(&mut model, &scfg)?;
    let ckpt_dir = res.out_dir.join("checkpoints");
    let report_dir = res.out_dir.join("reports");
    fs::create_dir_all(&ckpt_dir)?;
    fs::create_dir_all(&report_dir)?;
    let ckpt = ckpt_dir.join("pretrained.mnet");
    save_checkpoint(&model, report.epochs_run, res.train.seed, &ckpt)?;
    write_json(
        &report_dir.join("pretrain.json"),
        &json!({
            "epochs_run": report.epochs_run,
            "final_train_loss": report.train_loss.last(),
            "final_val_accuracy": report.val_accuracy.last(),
            "train_loss": report.train_loss,
            "val_accuracy": report.val_accuracy,
        }),
    )?;
    write_run_manifest(res, "pretrain", json!({"checkpoint": ckpt}))?;
    println!(
        "pretrained {} epochs, val accuracy {:.3}, checkpoint {}",
        report.epochs_run,
        report.val_accuracy.last().copied().unwrap_or(0.0),
        ckpt.display()
    );
    Ok(())
}

pub fn train_run(res: &Resolved, pretrained: Option<&Path>, cam_head: bool) -> Result<()> {
    let data = require_data(res)?;
    let volumes = load_volumes(data)?;
    let spec = target_spec(res.preset, res.task, cam_head);
    let source = match pretrained {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
            let meta = read_checkpoint_meta(p)?;
            if meta.spec.blocks != spec.blocks
                || (meta.spec.input_h, meta.spec.input_w) != (spec.input_h, spec.input_w)
            {
                return Err(Error::Config(format!(
                    "checkpoint {} was built for a different topology than preset {}",
                    p.display(),
                    res.preset
                )));
            }
            Some(load_checkpoint(p, &meta.spec)?)
        }
        None => None,
    };
    let subjects = build_subject_slices(&volumes, &res.train, (spec.input_h, spec.input_w))?;
    for d in ["folds", "checkpoints", "reports", "curves"] {
        fs::create_dir_all(res.out_dir.join(d))?;
    }
    write_run_manifest(res, "train", json!({"pretrained": pretrained, "cam_head": cam_head}))?;

    let (curves, models) = match res.task {
        TaskChoice::Binary(task) => {
            let out =
                cross_validate_jobs(&subjects, task, &spec, source.as_ref(), &res.train, res.jobs)?;
            let picked = filter_task(&subjects, task);
            let ids: Vec<_> = picked.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
            let plan = kfold_subject_split(&ids, res.train.k_folds, res.train.seed)?;
            write_plan(&plan, res.train.seed, &res.out_dir.join("folds/plan.json"))?;
            write_fold_report(&out.report, &res.out_dir.join("reports/fold_report.csv"))?;
            write_summary(&out.report, &res.train, &res.out_dir.join("reports/summary.json"))?;
            println!(
                "task {task}: accuracy {:.3} +/- {:.3}, sensitivity {:.3}, specificity {:.3} over {} folds",
                out.report.mean_accuracy,
                out.report.std_accuracy,
                out.report.mean_sensitivity,
                out.report.mean_specificity,
                res.train.k_folds
            );
            (out.curves, out.models)
        }
        TaskChoice::ThreeWay => {
            let out = cross_validate_multiclass_jobs(
                &subjects,
                &spec,
                source.as_ref(),
                &res.train,
                res.jobs,
            )?;
            let ids: Vec<_> = subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
            let plan = kfold_subject_split(&ids, res.train.k_folds, res.train.seed)?;
            write_plan(&plan, res.train.seed, &res.out_dir.join("folds/plan.json"))?;
            write_multiclass_report(&out.report, &res.out_dir.join("reports/fold_report.csv"))?;
            write_multiclass_summary(&out.report, &res.train, &res.out_dir.join("reports/summary.json"))?;
            println!(
                "task 3way: accuracy {:.3} +/- {:.3} over {} folds",
                out.report.mean_accuracy, out.report.std_accuracy, res.train.k_folds
            );
            (out.curves, out.models)
        }
    };
    for (f, curve) in curves.iter().enumerate() {
        export_curves(curve, &res.out_dir.join(format!("curves/fold{f}.csv")))?;
    }
    for (f, model) in models.iter().enumerate() {
        let seed = res.train.seed.wrapping_add(f as u64);
        save_checkpoint(model, res.train.epochs, seed, &res.out_dir.join(format!("checkpoints/fold{f}.mnet")))?;
    }
    Ok(())
}

pub fn eval_run(res: &Resolved, checkpoint: &Path, subject_vote: bool) -> Result<()> {
    let data = require_data(res)?;
    if !checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let meta = read_checkpoint_meta(checkpoint)?;
    let model = load_checkpoint(checkpoint, &meta.spec)?;
    let volumes = load_volumes(data)?;
    let input = (meta.spec.input_h, meta.spec.input_w);
    let subjects = build_subject_slices(&volumes, &res.train, input)?;

    let (doc, headline) = match res.task {
        TaskChoice::Binary(task) => {
            if meta.spec.head != Head::SigmoidBinary {
                return Err(Error::Config(format!(
                    "checkpoint {} has a 3-class head, task {task} is binary",
                    checkpoint.display()
                )));
            }
            let picked = filter_task(&subjects, task);
            if picked.is_empty() {
                return Err(Error::Data(format!("no subjects carry the classes of task {task}")));
            }
            let ids: BTreeSet<String> = picked.iter().map(|s| s.subject_id.clone()).collect();
            let set = collect_task_set(&picked, &ids, task, input)?;
            let ev = evaluate(&model, &set)?;
            let vote = match subject_vote {
                true => Some(subject_majority_accuracy(&model, &set)?),
                false => None,
            };
            let headline = format!(
                "task {task}: accuracy {:.3}, sensitivity {:.3}, specificity {:.3} over {} slices{}",
                ev.accuracy,
                ev.sensitivity,
                ev.specificity,
                set.len(),
                vote.map(|v| format!(", subject vote {v:.3}")).unwrap_or_default()
            );
            let doc = json!({
                "task": task.to_string(),
                "checkpoint": checkpoint,
                "subjects": ids.len(),
                "slices": set.len(),
                "confusion": ev.confusion,
                "accuracy": ev.accuracy,
                "sensitivity": ev.sensitivity,
                "specificity": ev.specificity,
                "subject_vote_accuracy": vote,
            });
            (doc, headline)
        }
        TaskChoice::ThreeWay => {
            if meta.spec.head != Head::Softmax3Way {
                return Err(Error::Config(format!(
                    "checkpoint {} has a binary head, task 3way needs three classes",
                    checkpoint.display()
                )));
            }
            if subject_vote {
                return Err(Error::Config("subject voting applies to binary tasks".into()));
            }
            let all: Vec<&SubjectSlices> = subjects.iter().collect();
            let ids: BTreeSet<String> = all.iter().map(|s| s.subject_id.clone()).collect();
            let set = collect_multiclass_set(&all, &ids, input)?;
            let acc = evaluate_multiclass(&model, &set)?;
            let headline =
                format!("task 3way: accuracy {acc:.3} over {} slices", set.len());
            let doc = json!({
                "task": "3way",
                "checkpoint": checkpoint,
                "subjects": ids.len(),
                "slices": set.len(),
                "accuracy": acc,
            });
            (doc, headline)
        }
    };
    let report_dir = res.out_dir.join("reports");
    fs::create_dir_all(&report_dir)?;
    write_json(&report_dir.join("eval.json"), &doc)?;
    write_run_manifest(
        res,
        "eval",
        json!({"checkpoint": checkpoint, "subject_vote": subject_vote}),
    )?;
    println!("{headline}");
    Ok(())
}

pub fn cam_run(
    res: &Resolved,
    checkpoint: &Path,
    image: &Path,
    class: Option<usize>,
    csv: bool,
) -> Result<()> {
    for (p, what) in [(checkpoint, "checkpoint"), (image, "image")] {
        if !p.is_file() {
            return Err(Error::Config(format!("{what} {} does not exist", p.display())));
        }
    }
    let meta = read_checkpoint_meta(checkpoint)?;
    let model = load_checkpoint(checkpoint, &meta.spec)?;
    let mut plane = read_pgm(image)?;
    let input = (meta.spec.input_h, meta.spec.input_w);
    if (plane.h, plane.w) != input {
        plane = resize_bilinear(&plane, input.0, input.1)?;
    }
    let x = Tensor::from_vec(&[1, 1, plane.h, plane.w], plane.data.clone())?;
    let probs = model.forward(&x)?;
    let class_index = match class {
        Some(c) => c,
        None => {
            // Predicted class: the lone unit for a binary head, the first
            // argmax for softmax.
            let row = probs.data();
            let mut arg = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[arg] {
                    arg = j;
                }
            }
            arg
        }
    };
    let map = compute_cam(&model, &plane, class_index)?;
    let prob = probs.data()[class_index];
    let cam_dir = res.out_dir.join("cams");
    fs::create_dir_all(&cam_dir)?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("slice");
    let ppm = cam_dir.join(format!("{stem}_cam.ppm"));
    overlay(&plane, &map, &ppm)?;
    let csv_path = match csv {
        true => {
            let p = cam_dir.join(format!("{stem}_cam.csv"));
            export_heatmap_csv(&map, &p)?;
            Some(p)
        }
        false => None,
    };
    write_run_manifest(
        res,
        "cam",
        json!({
            "checkpoint": checkpoint,
            "image": image,
            "class": class_index,
            "requested_class": class,
            "csv": csv_path,
        }),
    )?;
    println!(
        "class {class_index} (p={prob:.4}), peak at ({}, {}), overlay {}",
        map.peak.0,
        map.peak.1,
        ppm.display()
    );
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("value {t:?} is not a number"))))
        .collect()
}

fn read_series(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    if !path.is_file() {
        return Err(Error::Config(format!("series file {} does not exist", path.display())));
    }
    let bad = |msg: String| Error::Format { path: path.into(), msg };
    let text = fs::read_to_string(path)?;
    match column {
        None => text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.parse::<f64>().map_err(|_| bad(format!("line {l:?} is not a number"))))
            .collect(),
        Some(col) => {
            let mut lines = text.lines();
            let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
            let idx = header
                .split(',')
                .position(|h| h.trim() == col)
                .ok_or_else(|| bad(format!("no column {col:?} in header {header:?}")))?;
            lines
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let cell = l
                        .split(',')
                        .nth(idx)
                        .ok_or_else(|| bad(format!("row {l:?} lacks column {col:?}")))?;
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(format!("cell {cell:?} is not a number")))
                })
                .collect()
        }
    }
}

pub fn trend_run(values: Option<&str>, file: Option<&Path>, column: Option<&str>) -> Result<()> {
    let series = match (values, file) {
        (Some(v), None) => parse_values(v)?,
        (None, Some(f)) => read_series(f, column)?,
        _ => return Err(Error::Config("trend needs either --values or --file".into())),
    };
    let result = mann_kendall(&series)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

pub fn curves_run(file: &Path) -> Result<()> {
    if !file.is_file() {
        return Err(Error::Config(format!("curve file {} does not exist", file.display())));
    }
    let curve = read_curves(file)?;
    let n = curve.epochs();
    let mut min_idx = 0usize;
    for (i, &v) in curve.val_loss.iter().enumerate() {
        if v < curve.val_loss[min_idx] {
            min_idx = i;
        }
    }
    let doc = json!({
        "epochs": n,
        "first_train_loss": curve.train_loss.first(),
        "final_train_loss": curve.train_loss.last(),
        "first_val_loss": curve.val_loss.first(),
        "final_val_loss": curve.val_loss.last(),
        "min_val_loss": curve.val_loss.get(min_idx),
        "min_val_epoch": if n > 0 { Some(min_idx + 1) } else { None },
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
