//! Source-task pretraining: learn generic features on a synthetic 3-class
//! shape task, then carry the conv stack over to the target model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::net::Model;
use crate::model::spec::Head;
use crate::numcore::ops;
use crate::numcore::{AdamConfig, AdamState, Tensor};

/// Source-task knobs. Classes are fixed: an image shows one, two, or three
/// dark blobs on a bright noisy plate and the network names the count.
#[derive(Debug, Clone)]
pub struct SourceTaskConfig {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop once validation accuracy reaches this level.
    pub target_accuracy: f64,
}

impl SourceTaskConfig {
    pub fn desk() -> Self {
        SourceTaskConfig {
            train_per_class: 64,
            val_per_class: 16,
            epochs: 30,
            batch_size: 24,
            lr: 1e-3,
            seed: 11,
            target_accuracy: 0.98,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub epochs_run: usize,
}

/// One source image: `blobs + 1` gaussian dips on a plate at 0.75 with
/// uniform noise, clamped to [0,1]. Blob centers repel each other so counts
/// stay visually distinct.
pub fn source_task_image(class: usize, seed: u64, h: usize, w: usize) -> Result<Vec<f32>> {
    if class >= 3 {
        return Err(Error::Config(format!("source task has classes 0..3, got {class}")));
    }
    if h < 8 || w < 8 {
        return Err(Error::Config(format!("source image {h}x{w} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dim = h.min(w) as f32;

    let count = class + 1;
    let mut centers: Vec<(f32, f32)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0;
        loop {
            let cy = (0.2 + 0.6 * rng.gen::<f32>()) * h as f32;
            let cx = (0.2 + 0.6 * rng.gen::<f32>()) * w as f32;
            let clear = centers
                .iter()
                .all(|&(y, x)| ((cy - y).powi(2) + (cx - x).powi(2)).sqrt() > 0.28 * min_dim);
            attempts += 1;
            if clear || attempts > 100 {
                centers.push((cy, cx));
                break;
            }
        }
    }
    let params: Vec<(f32, f32, f32, f32)> = centers
        .into_iter()
        .map(|(cy, cx)| {
            let sigma = (0.05 + 0.05 * rng.gen::<f32>()) * min_dim;
            let depth = 0.5 + 0.2 * rng.gen::<f32>();
            (cy, cx, sigma, depth)
        })
        .collect();

    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.75 + 0.1 * (rng.gen::<f32>() - 0.5);
            for &(cy, cx, sigma, depth) in &params {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                v -= depth * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(pixels)
}

fn batch_tensor(images: &[Vec<f32>], idx: &[usize], h: usize, w: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        data.extend_from_slice(&images[i]);
    }
    Tensor::from_vec(&[idx.len(), 1, h, w], data).expect("image planes have h*w pixels")
}

/// Trains `model` on the source task. Returns per-epoch loss and validation
/// accuracy; stops early once `target_accuracy` is reached.
pub fn pretrain_source(model: &mut Model, cfg: &SourceTaskConfig) -> Result<PretrainReport> {
    if model.spec.head != Head::Softmax3Way {
        return Err(Error::Config("source task needs the softmax-3way head".into()));
    }
    if cfg.train_per_class == 0 || cfg.val_per_class == 0 || cfg.epochs == 0 || cfg.batch_size == 0
    {
        return Err(Error::Config("source task sizes must be positive".into()));
    }
    let (h, w) = (model.spec.input_h, model.spec.input_w);

    // All image seeds come from one stream, train set first.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen_set = |per_class: usize| -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
        let mut images = Vec::with_capacity(3 * per_class);
        let mut labels = Vec::with_capacity(3 * per_class);
        for class in 0..3 {
            for _ in 0..per_class {
                images.push(source_task_image(class, seed_rng.gen(), h, w)?);
                labels.push(class);
            }
        }
        Ok((images, labels))
    };
    let (train_images, train_labels) = gen_set(cfg.train_per_class)?;
    let (val_images, val_labels) = gen_set(cfg.val_per_class)?;

    let mask = vec![true; model.param_len()];
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut states: Vec<AdamState<f32>> =
        model.params().iter().map(|p| AdamState::new(p.numel())).collect();
    let mut order: Vec<usize> = (0..train_images.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));

    let mut report = PretrainReport { train_loss: Vec::new(), val_accuracy: Vec::new(), epochs_run: 0 };
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch_tensor(&train_images, chunk, h, w);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let trace = model.trace(&x)?;
            let (loss, grad) = ops::cce_loss(&trace.probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!("pretrain diverged at epoch {epoch}")));
            }
            model.backward(&trace, &grad, &mask)?;
            for (param, state) in model.params_mut().into_iter().zip(&mut states) {
                state.step(param, &adam_cfg);
            }
            model.clear_grads();
            loss_sum += loss as f64;
            batches += 1;
        }
        report.train_loss.push(loss_sum / batches as f64);

        let all: Vec<usize> = (0..val_images.len()).collect();
        let probs = model.forward(&batch_tensor(&val_images, &all, h, w))?;
        let mut hits = 0usize;
        for (row, &want) in probs.data().chunks(3).zip(&val_labels) {
            let got = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("probability rows have 3 entries");
            hits += usize::from(got == want);
        }
        let acc = hits as f64 / val_labels.len() as f64;
        report.val_accuracy.push(acc);
        report.epochs_run = epoch + 1;
        if acc >= cfg.target_accuracy {
            break;
        }
    }
    Ok(report)
}

/// Copies every conv layer from `src` into `dst`; the classifier stays as
/// built. Layer counts and shapes must agree.
pub fn transfer_conv_weights(src: &Model, dst: &mut Model) -> Result<()> {
    if src.convs.len() != dst.convs.len() {
        return Err(Error::Shape(format!(
            "conv stack mismatch: source has {}, target has {}",
            src.convs.len(),
            dst.convs.len()
        )));
    }
    for (i, (s, d)) in src.convs.iter().zip(dst.convs.iter_mut()).enumerate() {
        if s.kernels.shape() != d.kernels.shape() {
            return Err(Error::Shape(format!(
                "conv{i} kernels {:?} do not fit target {:?}",
                s.kernels.shape(),
                d.kernels.shape()
            )));
        }
        d.kernels.data_mut().copy_from_slice(s.kernels.data());
        d.bias.data_mut().copy_from_slice(s.bias.data());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::build_model;
    use crate::model::spec::ModelSpec;

    fn variance(data: &[f32]) -> f64 {
        let n = data.len() as f64;
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
        data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn source_images_are_deterministic_and_in_range() {
        let a = source_task_image(1, 42, 32, 32).unwrap();
        let b = source_task_image(1, 42, 32, 32).unwrap();
        assert_eq!(a, b);
        let c = source_task_image(1, 43, 32, 32).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(source_task_image(3, 1, 32, 32).is_err());

        // More blobs remove more bright mass.
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        let means: Vec<f32> = (0..3)
            .map(|class| {
                let imgs: Vec<f32> =
                    (0..12).map(|s| mean(&source_task_image(class, s, 32, 32).unwrap())).collect();
                mean(&imgs)
            })
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn pretrain_requires_softmax_head() {
        let mut binary = build_model(&ModelSpec::desk(), 0).unwrap();
        assert!(pretrain_source(&mut binary, &SourceTaskConfig::desk()).is_err());
    }

    #[test]
    fn transfer_copies_convs_and_rejects_mismatch() {
        let src = build_model(&ModelSpec::desk_source(), 3).unwrap();
        let mut dst = build_model(&ModelSpec::desk_cam(), 4).unwrap();
        let head_before = dst.head.weights.data().to_vec();
        transfer_conv_weights(&src, &mut dst).unwrap();
        for (s, d) in src.convs.iter().zip(&dst.convs) {
            assert_eq!(s.kernels.data(), d.kernels.data());
            assert_eq!(s.bias.data(), d.bias.data());
        }
        assert_eq!(dst.head.weights.data(), head_before.as_slice());

        let mut tiny = build_model(&ModelSpec::tiny(), 5).unwrap();
        assert!(transfer_conv_weights(&src, &mut tiny).is_err());
    }

    #[test]
    fn pretrain_learns_the_source_task() {
        let spec = ModelSpec::desk_source();
        let cfg = SourceTaskConfig {
            train_per_class: 48,
            val_per_class: 8,
            target_accuracy: 0.92,
            ..SourceTaskConfig::desk()
        };

        let mut model = build_model(&spec, 101).unwrap();
        let init_var = variance(model.convs[0].kernels.data());
        let report = pretrain_source(&mut model, &cfg).unwrap();
        let last_acc = *report.val_accuracy.last().unwrap();
        assert!(last_acc > 0.9, "val accuracy {last_acc} after {} epochs", report.epochs_run);
        assert!(report.epochs_run <= 50);

        // Features moved: first-layer filter variance changed and stays
        // above a degeneracy floor.
        let post_var = variance(model.convs[0].kernels.data());
        assert!(post_var > 1e-4, "filters collapsed: {post_var}");
        assert!((post_var - init_var).abs() > 0.0);
    }

    #[test]
    fn pretrain_is_seed_deterministic() {
        let spec = ModelSpec::desk_source();
        let cfg = SourceTaskConfig {
            train_per_class: 6,
            val_per_class: 3,
            epochs: 3,
            target_accuracy: 1.1, // unreachable, always runs all epochs
            ..SourceTaskConfig::desk()
        };
        let mut a = build_model(&spec, 101).unwrap();
        let ra = pretrain_source(&mut a, &cfg).unwrap();
        let mut b = build_model(&spec, 101).unwrap();
        let rb = pretrain_source(&mut b, &cfg).unwrap();
        assert_eq!(ra.epochs_run, 3);
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.val_accuracy, rb.val_accuracy);
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let spec = ModelSpec::desk_source();
        let mut model = build_model(&spec, 7).unwrap();
        let cfg = SourceTaskConfig {
            train_per_class: 8,
            val_per_class: 4,
            epochs: 6,
            lr: 1e8,
            ..SourceTaskConfig::desk()
        };
        match pretrain_source(&mut model, &cfg) {
            Err(Error::Train(msg)) => assert!(msg.contains("diverged")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
