//! Slice-level evaluation: confusion matrices, the derived rates, and the
//! optional subject-level majority vote.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Head, Model};
use crate::numcore::Tensor;

use super::data::SliceSet;

/// Forward passes run in batches of this many slices.
const EVAL_CHUNK: usize = 64;

/// Binary counts; positive is the class coded 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        rate(self.tp + self.tn, self.total())
    }

    /// TP / (TP + FN).
    pub fn sensitivity(&self) -> f64 {
        rate(self.tp, self.tp + self.fn_)
    }

    /// TN / (TN + FP).
    pub fn specificity(&self) -> f64 {
        rate(self.tn, self.tn + self.fp)
    }
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One test set scored: the counts plus the rates derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl From<Confusion> for Evaluation {
    fn from(confusion: Confusion) -> Self {
        Evaluation {
            confusion,
            accuracy: confusion.accuracy(),
            sensitivity: confusion.sensitivity(),
            specificity: confusion.specificity(),
        }
    }
}

fn batch_tensor(set: &SliceSet, idx: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * set.h * set.w);
    for &i in idx {
        data.extend_from_slice(&set.images[i]);
    }
    Tensor::from_vec(&[idx.len(), 1, set.h, set.w], data).expect("slice set rows hold h*w pixels")
}

fn check_set(model: &Model, set: &SliceSet, head: Head) -> Result<()> {
    if model.spec.head != head {
        return Err(Error::Config(format!(
            "evaluation for this task needs the {} head",
            serde_json::to_string(&head).unwrap_or_default().trim_matches('"')
        )));
    }
    if set.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    if (set.h, set.w) != (model.spec.input_h, model.spec.input_w) {
        return Err(Error::Shape(format!(
            "test set holds {}x{} slices, model wants {}x{}",
            set.h, set.w, model.spec.input_h, model.spec.input_w
        )));
    }
    Ok(())
}

/// Per-slice positive/negative decisions; probability 0.5 counts as
/// positive so the decision rule has no dead zone.
pub fn predict_positive(model: &Model, set: &SliceSet) -> Result<Vec<bool>> {
    check_set(model, set, Head::SigmoidBinary)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut preds = Vec::with_capacity(set.len());
    for batch in idx.chunks(EVAL_CHUNK) {
        let probs = model.forward(&batch_tensor(set, batch))?;
        preds.extend(probs.data().iter().map(|&p| p >= 0.5));
    }
    Ok(preds)
}

fn tally(preds: &[bool], labels: &[u8]) -> Result<Confusion> {
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("binary evaluation got label {l}")));
    }
    let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&pred, &label) in preds.iter().zip(labels) {
        match (pred, label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Scores every slice independently against its binary target.
pub fn evaluate(model: &Model, set: &SliceSet) -> Result<Evaluation> {
    let preds = predict_positive(model, set)?;
    Ok(tally(&preds, &set.labels)?.into())
}

/// Accuracy of the argmax decision for the 3-class head. Multi-class runs
/// report no sensitivity or specificity, so this returns the accuracy only.
pub fn evaluate_multiclass(model: &Model, set: &SliceSet) -> Result<f64> {
    check_set(model, set, Head::Softmax3Way)?;
    let classes = model.spec.head.out_units();
    if let Some(l) = set.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for batch in idx.chunks(EVAL_CHUNK) {
        let probs = model.forward(&batch_tensor(set, batch))?;
        for (row, &i) in batch.iter().enumerate() {
            let row = &probs.data()[row * classes..(row + 1) * classes];
            // First maximum wins, so ties resolve to the lowest class index.
            let mut arg = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[arg] {
                    arg = j;
                }
            }
            correct += (arg == set.labels[i] as usize) as usize;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

fn vote_tally(subjects: &[String], preds: &[bool], labels: &[u8]) -> Result<(usize, usize)> {
    // (positive votes, slices, subject label) per subject.
    let mut by: BTreeMap<&str, (usize, usize, u8)> = BTreeMap::new();
    for ((subject, &pred), &label) in subjects.iter().zip(preds).zip(labels) {
        let e = by.entry(subject).or_insert((0, 0, label));
        if e.2 != label {
            return Err(Error::Data(format!("subject {subject} carries both labels")));
        }
        e.0 += pred as usize;
        e.1 += 1;
    }
    let correct = by
        .values()
        .filter(|(pos, n, label)| {
            // Vote ties resolve positive, matching the slice-level rule.
            let majority = 2 * pos >= *n;
            majority == (*label == 1)
        })
        .count();
    Ok((correct, by.len()))
}

/// Subject-level accuracy: each subject takes the majority vote of its
/// slice decisions. A diagnostic aggregate, kept out of the standard
/// slice-level reports.
pub fn subject_majority_accuracy(model: &Model, set: &SliceSet) -> Result<f64> {
    let preds = predict_positive(model, set)?;
    let (correct, total) = vote_tally(&set.subjects, &preds, &set.labels)?;
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};

    /// Head zeroed out: every logit is 0, every probability exactly 0.5
    /// (or uniform for softmax), regardless of the input image.
    fn indifferent_model(spec: &ModelSpec) -> Model {
        let mut model = build_model(spec, 1).unwrap();
        model.head.weights.data_mut().fill(0.0);
        model.head.bias.data_mut().fill(0.0);
        model
    }

    fn set_of(spec: &ModelSpec, labels: &[u8]) -> SliceSet {
        let mut set = SliceSet::new(spec.input_h, spec.input_w);
        for (i, &l) in labels.iter().enumerate() {
            let pix = vec![0.1 * (i % 7) as f32 / 7.0; spec.input_h * spec.input_w];
            set.push(pix, l, format!("s{i:02}")).unwrap();
        }
        set
    }

    #[test]
    fn tally_matches_the_hand_worked_counts() {
        // 9 true positives, 1 missed positive, 8 true negatives, 2 false alarms.
        let preds: Vec<bool> = [vec![true; 9], vec![false; 1], vec![false; 8], vec![true; 2]].concat();
        let labels: Vec<u8> = [vec![1; 10], vec![0; 10]].concat();
        let c = tally(&preds, &labels).unwrap();
        assert_eq!(c, Confusion { tp: 9, fp: 2, tn: 8, fn_: 1 });
        assert_eq!(c.sensitivity(), 0.90);
        assert_eq!(c.specificity(), 0.80);
        assert_eq!(c.accuracy(), 0.85);
        let ev: Evaluation = c.into();
        assert_eq!(ev.accuracy, c.accuracy());
        assert!(tally(&[true], &[2]).is_err());
    }

    #[test]
    fn probability_exactly_half_predicts_positive() {
        let spec = ModelSpec::tiny();
        let model = indifferent_model(&spec);
        let set = set_of(&spec, &[1, 1, 0, 0, 0]);
        let ev = evaluate(&model, &set).unwrap();
        // Every slice lands exactly on the 0.5 boundary and must go positive.
        assert_eq!(ev.confusion, Confusion { tp: 2, fp: 3, tn: 0, fn_: 0 });
        assert_eq!(ev.sensitivity, 1.0);
        assert_eq!(ev.specificity, 0.0);
        assert_eq!(ev.accuracy, 0.4);
    }

    #[test]
    fn empty_sets_and_head_mismatches_are_rejected() {
        let spec = ModelSpec::tiny();
        let model = indifferent_model(&spec);
        let empty = SliceSet::new(spec.input_h, spec.input_w);
        assert!(matches!(evaluate(&model, &empty), Err(Error::Data(_))));

        let source_spec = ModelSpec { head: crate::model::Head::Softmax3Way, ..ModelSpec::tiny() };
        let source = build_model(&source_spec, 1).unwrap();
        let set = set_of(&spec, &[1, 0]);
        assert!(matches!(evaluate(&source, &set), Err(Error::Config(_))));
        assert!(matches!(evaluate_multiclass(&model, &set), Err(Error::Config(_))));
    }

    #[test]
    fn multiclass_accuracy_counts_argmax_hits() {
        let spec = ModelSpec { head: crate::model::Head::Softmax3Way, ..ModelSpec::tiny() };
        let model = indifferent_model(&spec);
        // Uniform probabilities: argmax lands on class 0 every time.
        let set = set_of(&spec, &[0, 0, 1, 2]);
        assert_eq!(evaluate_multiclass(&model, &set).unwrap(), 0.5);
        let bad = set_of(&spec, &[0, 3]);
        assert!(evaluate_multiclass(&model, &bad).is_err());
    }

    #[test]
    fn majority_vote_flips_subjects_with_mostly_wrong_slices() {
        let subjects: Vec<String> =
            ["a", "a", "a", "b", "b", "b", "c", "c"].iter().map(|s| s.to_string()).collect();
        let preds = [true, true, false, false, false, true, true, false];
        let labels = [1, 1, 1, 0, 0, 0, 0, 0];
        // a: 2/3 positive, label 1, correct. b: 1/3 positive, label 0,
        // correct. c: 1/2 positive, tie goes positive, label 0, wrong.
        let (correct, total) = vote_tally(&subjects, &preds, &labels).unwrap();
        assert_eq!((correct, total), (2, 3));

        let mixed = [1, 0, 1, 0, 0, 0, 0, 0];
        assert!(vote_tally(&subjects, &preds, &mixed).is_err());
    }

    #[test]
    fn subject_vote_runs_end_to_end() {
        let spec = ModelSpec::tiny();
        let model = indifferent_model(&spec);
        // All slices predict positive, so exactly the positive subjects score.
        let mut set = set_of(&spec, &[1, 1, 0, 0, 0]);
        set.subjects = ["p0", "p0", "n0", "n0", "n1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(subject_majority_accuracy(&model, &set).unwrap(), 1.0 / 3.0);
    }
}
