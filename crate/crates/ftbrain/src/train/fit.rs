//! The binary training loop: seeded shuffling, Adam on the trainable
//! parameters, frozen-prefix feature caching, and learning-curve export.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{apply_freeze, Head, Model, Trace};
use crate::numcore::{ops, AdamConfig, AdamState, Tensor};

use super::config::TrainConfig;
use super::data::SliceSet;

/// Decorrelates epoch shuffling from streams seeded directly with the run
/// seed (model init draws from that one).
const SHUFFLE_SALT: u64 = 0x53485546;

/// Frozen-prefix features are cached in memory; above this many floats the
/// cache is skipped and frozen layers are recomputed instead.
const CACHE_CAP_FLOATS: usize = 1 << 26;

/// Per-epoch mean losses, one entry per epoch in run order.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub train_loss: Vec<f32>,
    pub val_loss: Vec<f32>,
}

impl LearningCurve {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Batch source for one slice set. When the freeze group pins a conv
/// prefix, features at the freeze boundary are computed once and batches
/// resume from there; otherwise batches are built from raw pixels.
struct Feed<'a> {
    set: &'a SliceSet,
    /// Conv prefix the cached features start after; 0 means raw pixels.
    prefix: usize,
    feat_shape: (usize, usize, usize),
    cached: Vec<Vec<f32>>,
}

impl<'a> Feed<'a> {
    fn raw(set: &'a SliceSet) -> Feed<'a> {
        Feed { set, prefix: 0, feat_shape: (1, set.h, set.w), cached: Vec::new() }
    }

    fn build(model: &Model, set: &'a SliceSet, prefix: usize, chunk: usize) -> Result<Feed<'a>> {
        if prefix == 0 {
            return Ok(Feed::raw(set));
        }
        let (c, h, w) = boundary_shape(model, set, prefix)?;
        if set.len().saturating_mul(c * h * w) > CACHE_CAP_FLOATS {
            return Ok(Feed::raw(set));
        }
        let mut cached = Vec::with_capacity(set.len());
        let idx: Vec<usize> = (0..set.len()).collect();
        for batch in idx.chunks(chunk.max(1)) {
            let x = batch_pixels(set, batch);
            let feats = model.forward_prefix(&x, prefix)?;
            let plane = c * h * w;
            for i in 0..batch.len() {
                cached.push(feats.data()[i * plane..(i + 1) * plane].to_vec());
            }
        }
        Ok(Feed { set, prefix, feat_shape: (c, h, w), cached })
    }

    fn trace(&self, model: &Model, batch: &[usize]) -> Result<Trace> {
        if self.prefix == 0 {
            model.trace(&batch_pixels(self.set, batch))
        } else {
            let (c, h, w) = self.feat_shape;
            let mut data = Vec::with_capacity(batch.len() * c * h * w);
            for &i in batch {
                data.extend_from_slice(&self.cached[i]);
            }
            let x = Tensor::from_vec(&[batch.len(), c, h, w], data)?;
            model.trace_from(&x, self.prefix)
        }
    }
}

fn batch_pixels(set: &SliceSet, idx: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * set.h * set.w);
    for &i in idx {
        data.extend_from_slice(&set.images[i]);
    }
    Tensor::from_vec(&[idx.len(), 1, set.h, set.w], data).expect("slice set rows hold h*w pixels")
}

/// Activation shape right after the frozen conv prefix, probed with one image.
fn boundary_shape(model: &Model, set: &SliceSet, prefix: usize) -> Result<(usize, usize, usize)> {
    let probe = batch_pixels(set, &[0]);
    let out = model.forward_prefix(&probe, prefix)?;
    let s = out.shape();
    Ok((s[1], s[2], s[3]))
}

fn check_input(model: &Model, set: &SliceSet, name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Data(format!("{name} set is empty")));
    }
    let want = (model.spec.input_h, model.spec.input_w);
    if (set.h, set.w) != want {
        return Err(Error::Shape(format!(
            "{name} set holds {}x{} slices, model wants {}x{}",
            set.h, set.w, want.0, want.1
        )));
    }
    Ok(())
}

/// Cross-entropy of the head's probabilities against integer targets:
/// binary targets for the sigmoid head, class indices for the softmax head.
fn head_loss(head: Head, probs: &Tensor<f32>, labels: &[u8]) -> Result<(f32, Tensor<f32>)> {
    match head {
        Head::SigmoidBinary => ops::bce_loss(probs, labels),
        Head::Softmax3Way => {
            let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            ops::cce_loss(probs, &idx)
        }
    }
}

/// Mean loss of `model` over a whole set, forward only.
fn mean_loss(model: &Model, feed: &Feed, chunk: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..feed.set.len()).collect();
    let mut sum = 0f64;
    for batch in idx.chunks(chunk.max(1)) {
        let trace = feed.trace(model, batch)?;
        let labels: Vec<u8> = batch.iter().map(|&i| feed.set.labels[i]).collect();
        let (loss, _) = head_loss(model.spec.head, &trace.probs, &labels)?;
        sum += loss as f64 * batch.len() as f64;
    }
    Ok(sum / feed.set.len() as f64)
}

/// Trains `model` on `train_set`, scoring `val_set` once per epoch. Labels
/// are binary targets for the sigmoid head, class indices for the softmax
/// head. The two sets must come from disjoint subjects; Adam updates only
/// the parameters the freeze group leaves trainable. Aborts with a
/// diagnostic as soon as a loss turns non-finite.
pub fn train(model: &mut Model, train_set: &SliceSet, val_set: &SliceSet, cfg: &TrainConfig) -> Result<LearningCurve> {
    cfg.validate()?;
    check_input(model, train_set, "training")?;
    check_input(model, val_set, "validation")?;
    if let Some(id) = train_set.subject_ids().intersection(&val_set.subject_ids()).next() {
        return Err(Error::Data(format!("subject {id} appears in both training and validation sets")));
    }

    let mask = apply_freeze(model, cfg.freeze_group);
    let prefix = cfg.freeze_group.frozen_conv_prefix(&model.spec);
    let train_feed = Feed::build(model, train_set, prefix, cfg.batch_size)?;
    let val_feed = Feed::build(model, val_set, prefix, cfg.batch_size)?;

    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut states: Vec<AdamState<f32>> =
        model.params().iter().map(|p| AdamState::new(p.numel())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut curve = LearningCurve { train_loss: Vec::with_capacity(cfg.epochs), val_loss: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        for batch in order.chunks(cfg.batch_size) {
            let trace = train_feed.trace(model, batch)?;
            let labels: Vec<u8> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grad) = head_loss(model.spec.head, &trace.probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "training loss became non-finite at epoch {epoch} (lr {:e}); lower the learning rate",
                    cfg.lr
                )));
            }
            model.backward(&trace, &grad, &mask)?;
            for (i, p) in model.params_mut().into_iter().enumerate() {
                if mask[i] {
                    states[i].step(p, &adam_cfg);
                }
            }
            model.clear_grads();
            loss_sum += loss as f64 * batch.len() as f64;
        }
        let train_loss = (loss_sum / train_set.len() as f64) as f32;
        let val_loss = mean_loss(model, &val_feed, cfg.batch_size)? as f32;
        if !val_loss.is_finite() {
            return Err(Error::Train(format!("validation loss became non-finite at epoch {epoch}")));
        }
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
    }
    Ok(curve)
}

/// Writes `epoch,train_loss,val_loss` rows, one per epoch, 1-based epoch
/// numbers. Losses carry 9 significant digits so reading them back
/// recovers the exact f32 values.
pub fn export_curves(curve: &LearningCurve, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in curve.train_loss.iter().zip(&curve.val_loss).enumerate() {
        out.push_str(&format!("{},{:.8e},{:.8e}\n", i + 1, t, v));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV written by `export_curves`.
pub fn read_curves(path: &Path) -> Result<LearningCurve> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("epoch,train_loss,val_loss") => {}
        other => return Err(bad(format!("bad curve header {other:?}"))),
    }
    let mut curve = LearningCurve { train_loss: Vec::new(), val_loss: Vec::new() };
    for (row, line) in lines.enumerate() {
        let mut cols = line.split(',');
        let (Some(e), Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad(format!("row {} needs 3 columns: {line:?}", row + 1)));
        };
        if e.parse::<usize>() != Ok(row + 1) {
            return Err(bad(format!("row {} has epoch column {e:?}", row + 1)));
        }
        let parse = |s: &str| s.parse::<f32>().map_err(|_| bad(format!("bad loss {s:?} in row {}", row + 1)));
        curve.train_loss.push(parse(t)?);
        curve.val_loss.push(parse(v)?);
    }
    Ok(curve)
}
