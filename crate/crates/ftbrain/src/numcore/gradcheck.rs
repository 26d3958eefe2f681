//! Central-difference gradient verification for every layer kernel.
//!
//! Each check builds a small random layer instance in f64, takes the scalar
//! loss `sum(output * R)` for a fixed random tensor R (so the upstream
//! gradient is exactly R), and compares the analytic backward pass against
//! symmetric finite differences coordinate by coordinate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::tensor::Tensor;

/// Perturbation half-width for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Denominator floor; below this scale the comparison is absolute.
pub const REL_ERR_FLOOR: f64 = 1e-2;
/// Checks are expected to land well under this bound in f64.
pub const TOLERANCE: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Worst relative error over every coordinate of `values`.
///
/// `loss` is re-evaluated with one coordinate displaced by +/-eps; the
/// closure must treat its argument as the full replacement for `values`.
pub fn central_diff_max<F: FnMut(&[f64]) -> f64>(
    values: &[f64],
    analytic: &[f64],
    eps: f64,
    mut loss: F,
) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut work = values.to_vec();
    let mut worst = 0.0f64;
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let lp = loss(&work);
        work[i] = orig - eps;
        let lm = loss(&work);
        work[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Outcome of one layer/parameter check.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub coords: usize,
}

fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks sit farther than eps
/// from every sample point.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.5);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Distinct values with spacing far above eps, so pooling argmaxes cannot
/// flip under perturbation.
fn rand_tensor_distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        data.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_vec(shape, data).unwrap()
}

/// Run every layer check with one RNG stream. All tensors and the loss
/// weights R derive from `seed`, so a report is reproducible by seed alone.
pub fn run_all(seed: u64) -> Vec<LayerCheck> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let eps = DEFAULT_EPS;
    let mut report = Vec::new();
    let push = |report: &mut Vec<LayerCheck>, name, err, coords| {
        report.push(LayerCheck { name, max_rel_err: err, coords });
    };

    // conv2d
    {
        let (n, c, k, h, w) = (2usize, 3usize, 4usize, 6usize, 6usize);
        let input = rand_tensor(rng, &[n, c, h, w], -1.0, 1.0);
        let kernels = rand_tensor(rng, &[k, c, 3, 3], -0.5, 0.5);
        let bias = rand_tensor(rng, &[k], -0.5, 0.5);
        let r = rand_tensor(rng, &[n, k, h, w], -1.0, 1.0);
        let grads = ops::conv2d_backward(&input, &kernels, &r, true);

        let loss_in = |vals: &[f64]| {
            let x = Tensor::from_vec(&[n, c, h, w], vals.to_vec()).unwrap();
            weighted_sum(&ops::conv2d(&x, &kernels, &bias).unwrap(), &r)
        };
        let e = central_diff_max(input.data(), grads.input.data(), eps, loss_in);
        push(&mut report, "conv2d/input", e, input.numel());

        let loss_k = |vals: &[f64]| {
            let kk = Tensor::from_vec(&[k, c, 3, 3], vals.to_vec()).unwrap();
            weighted_sum(&ops::conv2d(&input, &kk, &bias).unwrap(), &r)
        };
        let e = central_diff_max(kernels.data(), grads.kernels.data(), eps, loss_k);
        push(&mut report, "conv2d/kernels", e, kernels.numel());

        let loss_b = |vals: &[f64]| {
            let bb = Tensor::from_vec(&[k], vals.to_vec()).unwrap();
            weighted_sum(&ops::conv2d(&input, &kernels, &bb).unwrap(), &r)
        };
        let e = central_diff_max(bias.data(), grads.bias.data(), eps, loss_b);
        push(&mut report, "conv2d/bias", e, bias.numel());
    }

    // maxpool2
    {
        let shape = [2usize, 2, 6, 6];
        let input = rand_tensor_distinct(rng, &shape);
        let r = rand_tensor(rng, &[2, 2, 3, 3], -1.0, 1.0);
        let (_, argmax) = ops::maxpool2(&input).unwrap();
        let gi = ops::maxpool2_backward(&r, &argmax, &shape);
        let loss = |vals: &[f64]| {
            let x = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            weighted_sum(&ops::maxpool2(&x).unwrap().0, &r)
        };
        let e = central_diff_max(input.data(), gi.data(), eps, loss);
        push(&mut report, "maxpool2/input", e, input.numel());
    }

    // dense
    {
        let (n, d, u) = (3usize, 10usize, 7usize);
        let input = rand_tensor(rng, &[n, d], -1.0, 1.0);
        let weights = rand_tensor(rng, &[d, u], -0.5, 0.5);
        let bias = rand_tensor(rng, &[u], -0.5, 0.5);
        let r = rand_tensor(rng, &[n, u], -1.0, 1.0);
        let grads = ops::dense_backward(&input, &weights, &r, true);

        let loss_in = |vals: &[f64]| {
            let x = Tensor::from_vec(&[n, d], vals.to_vec()).unwrap();
            weighted_sum(&ops::dense(&x, &weights, &bias).unwrap(), &r)
        };
        let e = central_diff_max(input.data(), grads.input.data(), eps, loss_in);
        push(&mut report, "dense/input", e, input.numel());

        let loss_w = |vals: &[f64]| {
            let ww = Tensor::from_vec(&[d, u], vals.to_vec()).unwrap();
            weighted_sum(&ops::dense(&input, &ww, &bias).unwrap(), &r)
        };
        let e = central_diff_max(weights.data(), grads.weights.data(), eps, loss_w);
        push(&mut report, "dense/weights", e, weights.numel());

        let loss_b = |vals: &[f64]| {
            let bb = Tensor::from_vec(&[u], vals.to_vec()).unwrap();
            weighted_sum(&ops::dense(&input, &weights, &bb).unwrap(), &r)
        };
        let e = central_diff_max(bias.data(), grads.bias.data(), eps, loss_b);
        push(&mut report, "dense/bias", e, bias.numel());
    }

    // relu
    {
        let shape = [4usize, 25];
        let input = rand_tensor_off_kink(rng, &shape);
        let r = rand_tensor(rng, &shape, -1.0, 1.0);
        let out = ops::relu(&input);
        let gi = ops::relu_backward(&out, &r);
        let loss = |vals: &[f64]| {
            let x = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            weighted_sum(&ops::relu(&x), &r)
        };
        let e = central_diff_max(input.data(), gi.data(), eps, loss);
        push(&mut report, "relu/input", e, input.numel());
    }

    // sigmoid
    {
        let shape = [4usize, 25];
        let input = rand_tensor(rng, &shape, -3.0, 3.0);
        let r = rand_tensor(rng, &shape, -1.0, 1.0);
        let out = ops::sigmoid(&input);
        let gi = ops::sigmoid_backward(&out, &r);
        let loss = |vals: &[f64]| {
            let x = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            weighted_sum(&ops::sigmoid(&x), &r)
        };
        let e = central_diff_max(input.data(), gi.data(), eps, loss);
        push(&mut report, "sigmoid/input", e, input.numel());
    }

    // softmax
    {
        let shape = [5usize, 6];
        let input = rand_tensor(rng, &shape, -2.0, 2.0);
        let r = rand_tensor(rng, &shape, -1.0, 1.0);
        let out = ops::softmax(&input).unwrap();
        let gi = ops::softmax_backward(&out, &r);
        let loss = |vals: &[f64]| {
            let x = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            weighted_sum(&ops::softmax(&x).unwrap(), &r)
        };
        let e = central_diff_max(input.data(), gi.data(), eps, loss);
        push(&mut report, "softmax/input", e, input.numel());
    }

    // gap
    {
        let shape = [2usize, 3, 4, 4];
        let input = rand_tensor(rng, &shape, -1.0, 1.0);
        let r = rand_tensor(rng, &[2, 3], -1.0, 1.0);
        let gi = ops::gap_backward(&r, &shape);
        let loss = |vals: &[f64]| {
            let x = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            weighted_sum(&ops::gap(&x).unwrap(), &r)
        };
        let e = central_diff_max(input.data(), gi.data(), eps, loss);
        push(&mut report, "gap/input", e, input.numel());
    }

    // bce: probabilities bounded away from the clamp region
    {
        let n = 12usize;
        let pred = rand_tensor(rng, &[n], 0.05, 0.95);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
        let (_, grad) = ops::bce_loss(&pred, &labels).unwrap();
        let loss = |vals: &[f64]| {
            let p = Tensor::from_vec(&[n], vals.to_vec()).unwrap();
            ops::bce_loss(&p, &labels).unwrap().0
        };
        let e = central_diff_max(pred.data(), grad.data(), eps, loss);
        push(&mut report, "bce/pred", e, pred.numel());
    }

    // cce: rows are positive but unnormalized; the loss only reads the
    // labeled entry, so normalization is not required for the check.
    {
        let (n, k) = (6usize, 3usize);
        let pred = rand_tensor(rng, &[n, k], 0.05, 0.95);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let (_, grad) = ops::cce_loss(&pred, &labels).unwrap();
        let loss = |vals: &[f64]| {
            let p = Tensor::from_vec(&[n, k], vals.to_vec()).unwrap();
            ops::cce_loss(&p, &labels).unwrap().0
        };
        let e = central_diff_max(pred.data(), grad.data(), eps, loss);
        push(&mut report, "cce/pred", e, pred.numel());
    }

    report
}
