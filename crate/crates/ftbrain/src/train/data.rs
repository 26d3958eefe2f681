//! Dataset assembly: synthetic cohorts, per-subject slice selection, and
//! the flat slice sets the trainer consumes.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{extract_axial, normalize, resize_bilinear, synth_generate, Label, SliceRecord, Volume};
use crate::entropy::{rank_slices, select_top_k};
use crate::error::{Error, Result};

use super::config::{SelectionMode, Task, TrainConfig};

/// Decorrelates the slice-selection draw from streams seeded directly with
/// the run seed (model init, shuffling).
const SELECT_SALT: u64 = 0x53454C43;

/// The slices kept for one subject, already sized for the network input.
#[derive(Debug, Clone)]
pub struct SubjectSlices {
    pub subject_id: String,
    pub label: Label,
    pub slices: Vec<SliceRecord>,
}

/// Flat per-slice training material. `labels` holds the binary target,
/// `subjects` the owning subject of every row for disjointness checks.
#[derive(Debug, Clone)]
pub struct SliceSet {
    pub h: usize,
    pub w: usize,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
    pub subjects: Vec<String>,
}

impl SliceSet {
    pub fn new(h: usize, w: usize) -> Self {
        SliceSet { h, w, images: Vec::new(), labels: Vec::new(), subjects: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Vec<f32>, label: u8, subject: String) -> Result<()> {
        if image.len() != self.h * self.w {
            return Err(Error::Shape(format!(
                "slice for {subject} has {} pixels, set holds {}x{}",
                image.len(),
                self.h,
                self.w
            )));
        }
        self.images.push(image);
        self.labels.push(label);
        self.subjects.push(subject);
        Ok(())
    }

    /// Distinct subject ids present in the set.
    pub fn subject_ids(&self) -> BTreeSet<&str> {
        self.subjects.iter().map(String::as_str).collect()
    }
}

/// Deterministic cohort of `per_class` subjects per class, ids `ad000`,
/// `mci000`, `nc000`, ... Each subject's anatomy seed comes from one
/// ChaCha8 stream over the cohort seed.
pub fn synth_cohort(per_class: usize, dims: (usize, usize, usize), seed: u64) -> Result<Vec<Volume>> {
    if per_class == 0 {
        return Err(Error::Config("cohort needs at least one subject per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut volumes = Vec::with_capacity(3 * per_class);
    for label in Label::ALL {
        for i in 0..per_class {
            let subject_seed = rand::Rng::gen::<u64>(&mut rng);
            let mut v = synth_generate(label, subject_seed, dims)?;
            v.subject_id = format!("{}{:03}", label.as_str().to_lowercase(), i);
            volumes.push(v);
        }
    }
    Ok(volumes)
}

/// The selection stream for `seed`. One stream serves a whole cohort; draw
/// from it in volume order so runs stay reproducible.
pub fn selection_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ SELECT_SALT)
}

/// Chooses `k` slice indices from one subject's normalized records. Entropy
/// mode ranks in place (filling `entropy_bits`) and keeps the top k; random
/// mode draws without replacement from `rng` and expects records in z
/// order, untouched.
pub fn choose_slices(
    records: &mut [SliceRecord],
    k: usize,
    mode: SelectionMode,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>> {
    match mode {
        SelectionMode::Entropy => {
            let ranking = rank_slices(records)?;
            select_top_k(&ranking, k)
        }
        SelectionMode::Random => {
            if k > records.len() {
                let who = records.first().map(|r| r.subject_id.as_str()).unwrap_or("(empty)");
                return Err(Error::Config(format!(
                    "subject {who} has {} slices, cannot pick {k}",
                    records.len()
                )));
            }
            Ok(rand::seq::index::sample(rng, records.len(), k).into_iter().collect())
        }
    }
}

/// Picks `cfg.images_per_subject` slices from every volume and resizes them
/// to `input` (h, w). Entropy mode keeps the top-ranked slices; random mode
/// draws uniformly without replacement from one stream seeded by
/// `cfg.seed`, consumed in volume order.
pub fn build_subject_slices(volumes: &[Volume], cfg: &TrainConfig, input: (usize, usize)) -> Result<Vec<SubjectSlices>> {
    cfg.validate()?;
    let mut rng = selection_rng(cfg.seed);
    let mut out = Vec::with_capacity(volumes.len());
    for v in volumes {
        let mut records = extract_axial(v);
        for rec in &mut records {
            normalize(rec);
        }
        let chosen = choose_slices(&mut records, cfg.images_per_subject, cfg.selection_mode, &mut rng)?;
        let mut slices = Vec::with_capacity(chosen.len());
        for mut rec in records {
            if !chosen.contains(&rec.slice_index) {
                continue;
            }
            if (rec.pixels.h, rec.pixels.w) != input {
                rec.pixels = resize_bilinear(&rec.pixels, input.0, input.1)?;
            }
            slices.push(rec);
        }
        out.push(SubjectSlices { subject_id: v.subject_id.clone(), label: v.label, slices });
    }
    Ok(out)
}

/// Subjects whose class participates in `task`.
pub fn filter_task(subjects: &[SubjectSlices], task: Task) -> Vec<&SubjectSlices> {
    subjects.iter().filter(|s| task.target(s.label).is_some()).collect()
}

/// Class index for the 3-way problem, in `Label::ALL` order.
pub fn class_target(label: Label) -> u8 {
    match label {
        Label::Ad => 0,
        Label::Mci => 1,
        Label::Nc => 2,
    }
}

/// Flattens the named subjects into one slice set with binary targets.
pub fn collect_task_set(
    subjects: &[&SubjectSlices],
    ids: &BTreeSet<String>,
    task: Task,
    input: (usize, usize),
) -> Result<SliceSet> {
    let mut set = SliceSet::new(input.0, input.1);
    for sub in subjects {
        if !ids.contains(&sub.subject_id) {
            continue;
        }
        let Some(target) = task.target(sub.label) else {
            return Err(Error::Data(format!(
                "subject {} has class {} outside task {task}",
                sub.subject_id, sub.label
            )));
        };
        for rec in &sub.slices {
            set.push(rec.pixels.data.clone(), target, sub.subject_id.clone())?;
        }
    }
    Ok(set)
}

/// Flattens the named subjects into one slice set with 3-way class targets.
pub fn collect_multiclass_set(
    subjects: &[&SubjectSlices],
    ids: &BTreeSet<String>,
    input: (usize, usize),
) -> Result<SliceSet> {
    let mut set = SliceSet::new(input.0, input.1);
    for sub in subjects {
        if !ids.contains(&sub.subject_id) {
            continue;
        }
        for rec in &sub.slices {
            set.push(rec.pixels.data.clone(), class_target(sub.label), sub.subject_id.clone())?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::rank_slices as rank_oracle;

    fn desk_cfg(mode: SelectionMode, seed: u64) -> TrainConfig {
        TrainConfig { selection_mode: mode, seed, ..TrainConfig::desk() }
    }

    #[test]
    fn cohort_is_deterministic_and_well_named() {
        let a = synth_cohort(2, (16, 16, 16), 7).unwrap();
        let b = synth_cohort(2, (16, 16, 16), 7).unwrap();
        assert_eq!(a.len(), 6);
        let ids: Vec<_> = a.iter().map(|v| v.subject_id.as_str()).collect();
        assert_eq!(ids, ["ad000", "ad001", "mci000", "mci001", "nc000", "nc001"]);
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.subject_id, vb.subject_id);
            assert_eq!(va.label, vb.label);
            assert_eq!(va.plane_f32(8), vb.plane_f32(8));
        }
        let c = synth_cohort(2, (16, 16, 16), 8).unwrap();
        assert_ne!(a[0].plane_f32(8), c[0].plane_f32(8));
        assert!(synth_cohort(0, (16, 16, 16), 7).is_err());
    }

    #[test]
    fn entropy_selection_matches_an_independent_ranking() {
        let volumes = synth_cohort(1, (24, 32, 32), 41).unwrap();
        let subjects = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Entropy, 0), (32, 32)).unwrap();
        for (v, sub) in volumes.iter().zip(&subjects) {
            let mut records = extract_axial(v);
            for rec in &mut records {
                normalize(rec);
            }
            let ranking = rank_oracle(&mut records).unwrap();
            let expect: BTreeSet<usize> = ranking.entries.iter().take(8).map(|e| e.0).collect();
            let got: BTreeSet<usize> = sub.slices.iter().map(|r| r.slice_index).collect();
            assert_eq!(got, expect, "subject {}", sub.subject_id);
            assert_eq!(sub.slices.len(), 8);
            // Flat boundary slices carry no information and never win.
            assert!(!got.contains(&0) && !got.contains(&23));
        }
    }

    #[test]
    fn random_selection_is_seeded_and_without_replacement() {
        let volumes = synth_cohort(2, (24, 16, 16), 5).unwrap();
        let a = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Random, 3), (16, 16)).unwrap();
        let b = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Random, 3), (16, 16)).unwrap();
        let c = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Random, 4), (16, 16)).unwrap();
        let picks = |subs: &[SubjectSlices]| -> Vec<Vec<usize>> {
            subs.iter().map(|s| s.slices.iter().map(|r| r.slice_index).collect()).collect()
        };
        assert_eq!(picks(&a), picks(&b));
        assert_ne!(picks(&a), picks(&c));
        for sub in &a {
            let idx: BTreeSet<usize> = sub.slices.iter().map(|r| r.slice_index).collect();
            assert_eq!(idx.len(), 8, "duplicate picks for {}", sub.subject_id);
            assert!(idx.iter().all(|&i| i < 24));
        }
    }

    #[test]
    fn slices_are_resized_to_the_network_input() {
        let volumes = synth_cohort(1, (16, 48, 40), 2).unwrap();
        let subjects = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Entropy, 0), (32, 32)).unwrap();
        for sub in &subjects {
            for rec in &sub.slices {
                assert_eq!((rec.pixels.h, rec.pixels.w), (32, 32));
                assert!(rec.pixels.data.iter().all(|p| (0.0..=1.0).contains(p) && p.is_finite()));
            }
        }
    }

    #[test]
    fn task_filter_and_targets() {
        let volumes = synth_cohort(2, (16, 16, 16), 9).unwrap();
        let subjects = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Entropy, 0), (16, 16)).unwrap();

        let picked = filter_task(&subjects, Task::AdVsNc);
        assert_eq!(picked.len(), 4);
        assert!(picked.iter().all(|s| s.label != Label::Mci));

        let ids: BTreeSet<String> = picked.iter().map(|s| s.subject_id.clone()).collect();
        let set = collect_task_set(&picked, &ids, Task::AdVsNc, (16, 16)).unwrap();
        assert_eq!(set.len(), 4 * 8);
        for (label, subject) in set.labels.iter().zip(&set.subjects) {
            assert_eq!(*label == 1, subject.starts_with("ad"), "{subject}");
        }

        // MCI is the positive class when AD sits the task out.
        let picked = filter_task(&subjects, Task::MciVsNc);
        let ids: BTreeSet<String> = picked.iter().map(|s| s.subject_id.clone()).collect();
        let set = collect_task_set(&picked, &ids, Task::MciVsNc, (16, 16)).unwrap();
        for (label, subject) in set.labels.iter().zip(&set.subjects) {
            assert_eq!(*label == 1, subject.starts_with("mci"), "{subject}");
        }

        // Subsetting by id keeps only the named subjects.
        let one: BTreeSet<String> = ["mci000".to_string()].into();
        let set = collect_task_set(&picked, &one, Task::MciVsNc, (16, 16)).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.subject_ids().len(), 1);

        // A subject from outside the task is rejected, not mislabeled.
        let all: Vec<&SubjectSlices> = subjects.iter().collect();
        let all_ids: BTreeSet<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
        assert!(collect_task_set(&all, &all_ids, Task::AdVsNc, (16, 16)).is_err());
    }

    #[test]
    fn multiclass_targets_follow_the_class_order() {
        let volumes = synth_cohort(1, (16, 16, 16), 10).unwrap();
        let subjects = build_subject_slices(&volumes, &desk_cfg(SelectionMode::Entropy, 0), (16, 16)).unwrap();
        let all: Vec<&SubjectSlices> = subjects.iter().collect();
        let ids: BTreeSet<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
        let set = collect_multiclass_set(&all, &ids, (16, 16)).unwrap();
        assert_eq!(set.len(), 3 * 8);
        for (label, subject) in set.labels.iter().zip(&set.subjects) {
            let expect = if subject.starts_with("ad") {
                0
            } else if subject.starts_with("mci") {
                1
            } else {
                2
            };
            assert_eq!(*label, expect, "{subject}");
        }
    }
}
