//! Class activation maps for the pooled-feature head, plus heatmap
//! overlay export.

use std::fs;
use std::path::Path;

use crate::dataio::image_io::write_ppm;
use crate::dataio::{resize_bilinear, Plane};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::Tensor;

/// Red tint strength in overlays.
const OVERLAY_ALPHA: f32 = 0.5;

/// Attention map for one class over one query image, at input resolution.
/// Values sit in [0, 1]; the maximum is exactly 1 unless the map is
/// identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
    pub class_index: usize,
    /// (row, col) of the first maximum in row-major order.
    pub peak: (usize, usize),
}

/// Weighted sum of feature channels for one class, negatives clipped to 0.
/// `feats` is [channels, plane] row-major, `weights` is [channels, classes].
fn class_map(feats: &[f32], plane: usize, channels: usize, weights: &[f32], classes: usize, class_index: usize) -> Vec<f32> {
    let mut map = vec![0f32; plane];
    for k in 0..channels {
        let wk = weights[k * classes + class_index];
        let f = &feats[k * plane..(k + 1) * plane];
        for (m, &v) in map.iter_mut().zip(f) {
            *m += wk * v;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    map
}

/// Scales so the maximum is exactly 1; an all-zero map stays zero.
/// Returns the values and the peak position. Idempotent.
fn normalize_peak(mut values: Vec<f32>, w: usize) -> (Vec<f32>, (usize, usize)) {
    let mut arg = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[arg] {
            arg = i;
        }
    }
    let m = values[arg];
    if m > 0.0 {
        for v in &mut values {
            *v /= m;
        }
    }
    (values, (arg / w, arg % w))
}

/// Projects the classifier weights for `class_index` back onto the final
/// conv block's feature map, clips negatives, upsamples bilinearly to the
/// input resolution, and max-normalizes.
pub fn compute_cam(model: &Model, image: &Plane, class_index: usize) -> Result<Heatmap> {
    if !model.spec.cam_head {
        return Err(Error::Config("activation maps need a model built with cam_head".into()));
    }
    let classes = model.spec.head.out_units();
    if class_index >= classes {
        return Err(Error::Config(format!("class index {class_index} out of range for {classes} classes")));
    }
    let (h, w) = (model.spec.input_h, model.spec.input_w);
    if (image.h, image.w) != (h, w) {
        return Err(Error::Shape(format!("query image is {}x{}, model wants {h}x{w}", image.h, image.w)));
    }

    let x = Tensor::from_vec(&[1, 1, h, w], image.data.clone())?;
    let trace = model.trace(&x)?;
    let feats = trace.final_feature_map();
    let s = feats.shape().to_vec();
    let (channels, fh, fw) = (s[1], s[2], s[3]);
    let low = class_map(feats.data(), fh * fw, channels, model.head.weights.data(), classes, class_index);

    let up = if (fh, fw) == (h, w) {
        Plane::new(fh, fw, low)?
    } else {
        resize_bilinear(&Plane::new(fh, fw, low)?, h, w)?
    };
    let (values, peak) = normalize_peak(up.data, w);
    Ok(Heatmap { h, w, values, class_index, peak })
}

/// Alpha-blends pure red over the grayscale image, weighted per pixel by
/// the heatmap, and writes a binary PPM. Hotter means redder; a zero map
/// reproduces the grayscale image in all three channels.
pub fn overlay(image: &Plane, map: &Heatmap, path: &Path) -> Result<()> {
    if (image.h, image.w) != (map.h, map.w) {
        return Err(Error::Shape(format!(
            "overlay dims disagree: image {}x{}, heatmap {}x{}",
            image.h, image.w, map.h, map.w
        )));
    }
    let n = image.data.len();
    let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&gray, &heat) in image.data.iter().zip(&map.values) {
        let a = OVERLAY_ALPHA * heat;
        r.push(gray + a * (1.0 - gray));
        g.push(gray * (1.0 - a));
        b.push(gray * (1.0 - a));
    }
    write_ppm(
        &Plane::new(image.h, image.w, r)?,
        &Plane::new(image.h, image.w, g)?,
        &Plane::new(image.h, image.w, b)?,
        path,
    )
}

/// Raw heatmap values as CSV, one row per image row, 9 significant digits.
pub fn export_heatmap_csv(map: &Heatmap, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in map.values.chunks(map.w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BlockPlan, Head, ModelSpec};
    use crate::train::{train, SliceSet, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam_spec() -> ModelSpec {
        ModelSpec {
            input_h: 32,
            input_w: 32,
            input_channels: 1,
            blocks: vec![BlockPlan { convs: 1, width: 6 }, BlockPlan { convs: 1, width: 12 }],
            fc_width: 12,
            head: Head::SigmoidBinary,
            cam_head: true,
        }
    }

    fn flat_image(spec: &ModelSpec, level: f32) -> Plane {
        Plane::new(spec.input_h, spec.input_w, vec![level; spec.input_h * spec.input_w]).unwrap()
    }

    #[test]
    fn hand_worked_weighted_sum() {
        // f1 lights the top-left cell, f2 the bottom-right; weights 2 and 1.
        let feats = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let map = class_map(&feats, 4, 2, &[2.0, 1.0], 1, 0);
        assert_eq!(map, vec![2.0, 0.0, 0.0, 1.0]);
        let (values, peak) = normalize_peak(map, 2);
        assert_eq!(values, vec![1.0, 0.0, 0.0, 0.5]);
        assert_eq!(peak, (0, 0));

        // Negative contributions clip to zero before normalization.
        let map = class_map(&feats, 4, 2, &[-2.0, 1.0], 1, 0);
        assert_eq!(map, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let raw = vec![0.25, 3.5, 0.0, 1.75];
        let (once, peak) = normalize_peak(raw, 2);
        assert_eq!(peak, (0, 1));
        assert_eq!(once.iter().cloned().fold(0f32, f32::max), 1.0);
        let (twice, peak2) = normalize_peak(once.clone(), 2);
        assert_eq!(peak2, peak);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&once), bits(&twice));
    }

    #[test]
    fn zero_class_weights_give_a_zero_map() {
        let spec = cam_spec();
        let mut model = build_model(&spec, 8).unwrap();
        model.head.weights.data_mut().fill(0.0);
        let map = compute_cam(&model, &flat_image(&spec, 0.6), 0).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
        assert_eq!(map.peak, (0, 0));
        assert_eq!((map.h, map.w), (32, 32));
    }

    #[test]
    fn doubling_classifier_weights_leaves_the_map_bitwise_unchanged() {
        let spec = cam_spec();
        let mut model = build_model(&spec, 21).unwrap();
        let mut noisy = flat_image(&spec, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in noisy.data.iter_mut() {
            *p = rng.gen_range(0.0..1.0);
        }
        let a = compute_cam(&model, &noisy, 0).unwrap();
        for v in model.head.weights.data_mut() {
            *v *= 2.0;
        }
        let b = compute_cam(&model, &noisy, 0).unwrap();
        assert_eq!(a.peak, b.peak);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.values), bits(&b.values));
    }

    #[test]
    fn upsampled_peak_stays_inside_the_hot_cell_footprint() {
        // 4x4 map with one hot cell, everything else well below it.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut low: Vec<f32> = (0..16).map(|_| rng.gen_range(0.0..0.3f32)).collect();
        let (hy, hx) = (2, 1);
        low[hy * 4 + hx] = 1.0;
        let up = resize_bilinear(&Plane::new(4, 4, low).unwrap(), 16, 16).unwrap();
        let (_, peak) = normalize_peak(up.data, 16);
        // Scale factor 4: destination pixels 4j..4j+3 map back into cell j.
        assert!((4 * hy..4 * hy + 4).contains(&peak.0), "peak row {}", peak.0);
        assert!((4 * hx..4 * hx + 4).contains(&peak.1), "peak col {}", peak.1);
    }

    #[test]
    fn rejects_wrong_models_and_classes() {
        let cam = build_model(&cam_spec(), 2).unwrap();
        let dense_spec = ModelSpec { cam_head: false, ..cam_spec() };
        let dense = build_model(&dense_spec, 2).unwrap();
        let img = flat_image(&cam_spec(), 0.5);
        assert!(matches!(compute_cam(&dense, &img, 0), Err(Error::Config(_))));
        assert!(matches!(compute_cam(&cam, &img, 1), Err(Error::Config(_))));
        let small = Plane::new(16, 16, vec![0.0; 256]).unwrap();
        assert!(matches!(compute_cam(&cam, &small, 0), Err(Error::Shape(_))));
    }

    /// Positive images carry one bright blob on a dark noisy plate;
    /// negatives are plate only. Blob centers are constrained to `boxes`
    /// when given, otherwise free.
    fn blob_image(rng: &mut ChaCha8Rng, center: Option<(usize, usize)>) -> (Vec<f32>, (usize, usize)) {
        let (h, w) = (32, 32);
        let c = center.unwrap_or_else(|| (rng.gen_range(5..27), rng.gen_range(5..27)));
        let mut pix = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f32 - c.0 as f32).powi(2) + (x as f32 - c.1 as f32).powi(2);
                let blob = 0.8 * (-d2 / 30.0).exp();
                let noise = rng.gen_range(-0.04..0.04f32);
                pix.push((0.12 + blob + noise).clamp(0.0, 1.0));
            }
        }
        (pix, c)
    }

    fn plate_image(rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..32 * 32).map(|_| (0.12 + rng.gen_range(-0.04..0.04f32)).clamp(0.0, 1.0)).collect()
    }

    #[test]
    fn trained_cam_peaks_in_the_signal_quadrant() {
        let spec = cam_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut train_set = SliceSet::new(32, 32);
        let mut val_set = SliceSet::new(32, 32);
        for i in 0..48 {
            let (pos, _) = blob_image(&mut rng, None);
            train_set.push(pos, 1, format!("tp{i:02}")).unwrap();
            train_set.push(plate_image(&mut rng), 0, format!("tn{i:02}")).unwrap();
        }
        for i in 0..8 {
            let (pos, _) = blob_image(&mut rng, None);
            val_set.push(pos, 1, format!("vp{i:02}")).unwrap();
            val_set.push(plate_image(&mut rng), 0, format!("vn{i:02}")).unwrap();
        }
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 16,
            lr: 3e-3,
            seed: 6,
            ..TrainConfig::desk()
        };
        let mut model = build_model(&spec, 60).unwrap();
        let curve = train(&mut model, &train_set, &val_set, &cfg).unwrap();
        assert!(*curve.val_loss.last().unwrap() < 0.3, "cam model did not learn: {:?}", curve.val_loss);

        // Quadrant centers keep a margin from the midlines so the expected
        // peak region is unambiguous.
        let spans = [(5usize, 11usize), (21, 27)];
        let mut hits = 0;
        for trial in 0..20 {
            let (qy, qx) = (trial % 2, (trial / 2) % 2);
            let cy = rng.gen_range(spans[qy].0..spans[qy].1);
            let cx = rng.gen_range(spans[qx].0..spans[qx].1);
            let (pix, _) = blob_image(&mut rng, Some((cy, cx)));
            let map = compute_cam(&model, &Plane::new(32, 32, pix).unwrap(), 0).unwrap();
            let hit = (map.peak.0 >= 16) == (qy == 1) && (map.peak.1 >= 16) == (qx == 1);
            hits += hit as usize;
        }
        assert!(hits >= 16, "peak landed in the signal quadrant only {hits}/20 times");
    }

    #[test]
    fn overlay_blend_is_exact_in_the_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let (h, w) = (4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gray = Plane::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..1.0f32)).collect()).unwrap();
        let heat: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.0..1.0f32)).collect();
        let map = Heatmap { h, w, values: heat.clone(), class_index: 0, peak: (0, 0) };
        let path = dir.path().join("overlay.ppm");
        overlay(&gray, &map, &path).unwrap();

        let bytes = fs::read(&path).unwrap();
        let header = format!("P6\n{w} {h}\n255\n");
        assert_eq!(&bytes[..header.len()], header.as_bytes());
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), h * w * 3);
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        for i in 0..h * w {
            let (g, a) = (gray.data[i], OVERLAY_ALPHA * heat[i]);
            assert_eq!(body[3 * i], quant(g + a * (1.0 - g)), "red pixel {i}");
            assert_eq!(body[3 * i + 1], quant(g * (1.0 - a)), "green pixel {i}");
            assert_eq!(body[3 * i + 2], quant(g * (1.0 - a)), "blue pixel {i}");
        }
    }

    #[test]
    fn zero_and_saturated_overlays_hit_the_closed_forms() {
        let dir = tempfile::tempdir().unwrap();
        let gray = Plane::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let zero = Heatmap { h: 2, w: 2, values: vec![0.0; 4], class_index: 0, peak: (0, 0) };
        let full = Heatmap { h: 2, w: 2, values: vec![1.0; 4], class_index: 0, peak: (0, 0) };

        let path = dir.path().join("zero.ppm");
        overlay(&gray, &zero, &path).unwrap();
        let body = fs::read(&path).unwrap()[11..].to_vec();
        // Zero heat: every channel is the grayscale value.
        for (i, g) in [0u8, 64, 128, 255].iter().enumerate() {
            assert_eq!(&body[3 * i..3 * i + 3], &[*g, *g, *g]);
        }

        let path = dir.path().join("full.ppm");
        overlay(&gray, &full, &path).unwrap();
        let body = fs::read(&path).unwrap()[11..].to_vec();
        // Full heat at alpha 0.5: red half way to saturation, green/blue halved.
        for (i, g) in [0.0f32, 0.25, 0.5, 1.0].iter().enumerate() {
            let r = ((g + 0.5 * (1.0 - g)) * 255.0).round() as u8;
            let gb = ((g * 0.5) * 255.0).round() as u8;
            assert_eq!(&body[3 * i..3 * i + 3], &[r, gb, gb]);
        }

        let narrow = Plane::new(1, 4, vec![0.5; 4]).unwrap();
        assert!(matches!(overlay(&narrow, &zero, &dir.path().join("x.ppm")), Err(Error::Shape(_))));
    }

    #[test]
    fn heatmap_csv_lists_rows_of_values() {
        let dir = tempfile::tempdir().unwrap();
        let map = Heatmap { h: 2, w: 3, values: vec![1.0, 0.5, 0.0, 0.25, 0.125, 1.0], class_index: 0, peak: (0, 0) };
        let path = dir.path().join("map.csv");
        export_heatmap_csv(&map, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2);
        for (r, row) in rows.iter().enumerate() {
            let vals: Vec<f32> = row.split(',').map(|s| s.parse().unwrap()).collect();
            assert_eq!(vals.len(), 3);
            for (c, v) in vals.iter().enumerate() {
                assert_eq!(v.to_bits(), map.values[r * 3 + c].to_bits());
            }
        }
    }
}
