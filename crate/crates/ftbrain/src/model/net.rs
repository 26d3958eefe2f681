//! The network: parameter storage, forward tracing, and reverse-mode
//! backward with freeze masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::spec::{FreezeGroup, Head, ModelSpec};
use crate::numcore::ops;
use crate::numcore::Tensor;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernels: Tensor<f32>,
    pub bias: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor<f32>,
    pub bias: Tensor<f32>,
}

/// Parameter order everywhere (masks, optimizer states, checkpoints):
/// conv0.kernels, conv0.bias, .., then fc.weights, fc.bias when present,
/// then head.weights, head.bias.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub convs: Vec<ConvLayer>,
    pub fc: Option<DenseLayer>,
    pub head: DenseLayer,
}

/// Conv stack as an op list; pools close each block.
#[derive(Debug, Clone, Copy, PartialEq)]
enum StackOp {
    Conv(usize),
    Pool,
}

fn op_sequence(spec: &ModelSpec) -> Vec<StackOp> {
    let mut ops = Vec::new();
    let mut conv = 0;
    for b in &spec.blocks {
        for _ in 0..b.convs {
            ops.push(StackOp::Conv(conv));
            conv += 1;
        }
        ops.push(StackOp::Pool);
    }
    ops
}

/// First op index not covered by a frozen prefix of `conv_prefix` conv
/// layers: everything up to that conv, plus any pool that closes the block
/// it ends.
fn op_split(ops: &[StackOp], conv_prefix: usize) -> usize {
    if conv_prefix == 0 {
        return 0;
    }
    ops.iter()
        .position(|op| matches!(op, StackOp::Conv(i) if *i == conv_prefix))
        .unwrap_or(ops.len())
}

/// Activation shape (c, h, w) entering op index `split`.
fn shape_at(spec: &ModelSpec, ops: &[StackOp], split: usize) -> (usize, usize, usize) {
    let shapes = spec.conv_shapes();
    let (mut c, mut h, mut w) = (spec.input_channels, spec.input_h, spec.input_w);
    for op in &ops[..split] {
        match op {
            StackOp::Conv(i) => c = shapes[*i].1,
            StackOp::Pool => {
                h /= 2;
                w /= 2;
            }
        }
    }
    (c, h, w)
}

/// Seeded He-uniform build: each weight tensor draws U(-b, b) with
/// b = sqrt(6 / fan_in) in a fixed order, biases start at zero.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: &[usize], fan_in: usize| -> Tensor<f32> {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| bound * (2.0 * rng.gen::<f32>() - 1.0)).collect();
        Tensor::from_vec(shape, data).expect("shape/data length agree by construction")
    };

    let convs = spec
        .conv_shapes()
        .into_iter()
        .map(|(cin, cout)| ConvLayer {
            kernels: draw(&[cout, cin, 3, 3], cin * 9),
            bias: Tensor::zeros(&[cout]),
        })
        .collect();
    let fc = if spec.cam_head {
        None
    } else {
        let d = spec.flatten_len();
        Some(DenseLayer { weights: draw(&[d, spec.fc_width], d), bias: Tensor::zeros(&[spec.fc_width]) })
    };
    let d = spec.head_in_dim();
    let head = DenseLayer {
        weights: draw(&[d, spec.head.out_units()], d),
        bias: Tensor::zeros(&[spec.head.out_units()]),
    };
    Ok(Model { spec: spec.clone(), convs, fc, head })
}

/// Same tensor layout as [`build_model`], all parameters zero. Checkpoint
/// loading fills it in.
pub(crate) fn alloc_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let convs = spec
        .conv_shapes()
        .into_iter()
        .map(|(cin, cout)| ConvLayer {
            kernels: Tensor::zeros(&[cout, cin, 3, 3]),
            bias: Tensor::zeros(&[cout]),
        })
        .collect();
    let fc = if spec.cam_head {
        None
    } else {
        Some(DenseLayer {
            weights: Tensor::zeros(&[spec.flatten_len(), spec.fc_width]),
            bias: Tensor::zeros(&[spec.fc_width]),
        })
    };
    let head = DenseLayer {
        weights: Tensor::zeros(&[spec.head_in_dim(), spec.head.out_units()]),
        bias: Tensor::zeros(&[spec.head.out_units()]),
    };
    Ok(Model { spec: spec.clone(), convs, fc, head })
}

/// Trainable mask over the model's parameter list: the group's conv prefix
/// is false, everything else true.
pub fn apply_freeze(model: &Model, group: FreezeGroup) -> Vec<bool> {
    let prefix = group.frozen_conv_prefix(&model.spec);
    let mut mask = Vec::with_capacity(model.param_len());
    for i in 0..model.convs.len() {
        mask.push(i >= prefix);
        mask.push(i >= prefix);
    }
    if model.fc.is_some() {
        mask.push(true);
        mask.push(true);
    }
    mask.push(true);
    mask.push(true);
    mask
}

/// Forward activations needed to run the backward pass. `start_op` records
/// where the trace begins when a frozen prefix was precomputed.
pub struct Trace {
    start_op: usize,
    input: Tensor<f32>,
    op_outs: Vec<Tensor<f32>>,
    argmaxes: Vec<Option<Vec<u32>>>,
    head_in: Tensor<f32>,
    pub probs: Tensor<f32>,
}

impl Trace {
    /// Feature map entering the classifier (the last conv block's pooled
    /// output). Only meaningful on a full trace of a cam_head model when
    /// used for activation maps.
    pub fn final_feature_map(&self) -> &Tensor<f32> {
        self.op_outs.last().unwrap_or(&self.input)
    }
}

impl Model {
    pub fn param_len(&self) -> usize {
        2 * self.convs.len() + if self.fc.is_some() { 4 } else { 2 }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.param_len());
        for i in 0..self.convs.len() {
            names.push(format!("conv{i}.kernels"));
            names.push(format!("conv{i}.bias"));
        }
        if self.fc.is_some() {
            names.push("fc.weights".into());
            names.push("fc.bias".into());
        }
        names.push("head.weights".into());
        names.push("head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut ps = Vec::with_capacity(self.param_len());
        for layer in &self.convs {
            ps.push(&layer.kernels);
            ps.push(&layer.bias);
        }
        if let Some(fc) = &self.fc {
            ps.push(&fc.weights);
            ps.push(&fc.bias);
        }
        ps.push(&self.head.weights);
        ps.push(&self.head.bias);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut ps = Vec::with_capacity(self.param_len());
        for layer in &mut self.convs {
            ps.push(&mut layer.kernels);
            ps.push(&mut layer.bias);
        }
        if let Some(fc) = &mut self.fc {
            ps.push(&mut fc.weights);
            ps.push(&mut fc.bias);
        }
        ps.push(&mut self.head.weights);
        ps.push(&mut self.head.bias);
        ps
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        for p in self.params_mut() {
            p.drop_grad();
        }
    }

    /// Runs the first `conv_prefix` conv layers (and the pools closing
    /// them) without recording a trace. The result feeds `trace_from` when
    /// that prefix is frozen.
    pub fn forward_prefix(&self, x: &Tensor<f32>, conv_prefix: usize) -> Result<Tensor<f32>> {
        let ops = op_sequence(&self.spec);
        let split = op_split(&ops, conv_prefix.min(self.spec.total_convs()));
        self.expect_activation(x, &ops, 0)?;
        let mut cur = x.clone();
        for op in &ops[..split] {
            cur = match op {
                StackOp::Conv(i) => {
                    let layer = &self.convs[*i];
                    ops::relu(&ops::conv2d(&cur, &layer.kernels, &layer.bias)?)
                }
                StackOp::Pool => ops::maxpool2(&cur)?.0,
            };
        }
        Ok(cur)
    }

    /// Full forward, returning class probabilities.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.trace(x)?.probs)
    }

    pub fn trace(&self, x: &Tensor<f32>) -> Result<Trace> {
        self.trace_from(x, 0)
    }

    /// Forward from the activation that enters conv layer `start_conv`
    /// (the output of [`Model::forward_prefix`] with the same prefix),
    /// recording everything the backward pass needs.
    pub fn trace_from(&self, x: &Tensor<f32>, start_conv: usize) -> Result<Trace> {
        let ops_seq = op_sequence(&self.spec);
        let start_op = op_split(&ops_seq, start_conv.min(self.spec.total_convs()));
        self.expect_activation(x, &ops_seq, start_op)?;

        let mut op_outs = Vec::with_capacity(ops_seq.len() - start_op);
        let mut argmaxes = Vec::with_capacity(ops_seq.len() - start_op);
        for op in &ops_seq[start_op..] {
            let cur = op_outs.last().unwrap_or(x);
            match op {
                StackOp::Conv(i) => {
                    let layer = &self.convs[*i];
                    op_outs.push(ops::relu(&ops::conv2d(cur, &layer.kernels, &layer.bias)?));
                    argmaxes.push(None);
                }
                StackOp::Pool => {
                    let (out, arg) = ops::maxpool2(cur)?;
                    op_outs.push(out);
                    argmaxes.push(Some(arg));
                }
            }
        }

        let boundary = op_outs.last().unwrap_or(x);
        let n = boundary.shape()[0];
        let head_in = if self.spec.cam_head {
            ops::gap(boundary)?
        } else {
            let flat = boundary.reshape(&[n, self.spec.flatten_len()])?;
            let fc = self.fc.as_ref().expect("non-cam model always has an fc layer");
            ops::relu(&ops::dense(&flat, &fc.weights, &fc.bias)?)
        };
        let logits = ops::dense(&head_in, &self.head.weights, &self.head.bias)?;
        let probs = match self.spec.head {
            Head::SigmoidBinary => ops::sigmoid(&logits),
            Head::Softmax3Way => ops::softmax(&logits)?,
        };
        Ok(Trace { start_op, input: x.clone(), op_outs, argmaxes, head_in, probs })
    }

    /// Accumulates parameter gradients for d(loss)/d(probs), honoring the
    /// trainable mask: masked-out parameters receive no gradient, and the
    /// walk stops below the deepest op that still needs one.
    pub fn backward(&mut self, trace: &Trace, grad_probs: &Tensor<f32>, mask: &[bool]) -> Result<()> {
        if mask.len() != self.param_len() {
            return Err(Error::Config(format!(
                "mask length {} != parameter count {}",
                mask.len(),
                self.param_len()
            )));
        }
        let ops_seq = op_sequence(&self.spec);
        let fc_base = 2 * self.convs.len();
        let head_base = fc_base + if self.fc.is_some() { 2 } else { 0 };

        // Deepest traced conv op with a trainable parameter; below it the
        // chain carries no information anyone will use.
        let lowest = ops_seq
            .iter()
            .enumerate()
            .skip(trace.start_op)
            .find_map(|(j, op)| match op {
                StackOp::Conv(i) if mask[2 * i] || mask[2 * i + 1] => Some(j),
                _ => None,
            });

        let dlogits = match self.spec.head {
            Head::SigmoidBinary => ops::sigmoid_backward(&trace.probs, grad_probs),
            Head::Softmax3Way => ops::softmax_backward(&trace.probs, grad_probs),
        };

        let boundary = trace.op_outs.last().unwrap_or(&trace.input);
        let n = boundary.shape()[0];
        let need_below_head = lowest.is_some()
            || (!self.spec.cam_head && (mask[fc_base] || mask[fc_base + 1]));
        let hg = ops::dense_backward(&trace.head_in, &self.head.weights, &dlogits, need_below_head);
        if mask[head_base] {
            self.head.weights.add_to_grad(hg.weights.data());
        }
        if mask[head_base + 1] {
            self.head.bias.add_to_grad(hg.bias.data());
        }
        if !need_below_head {
            return Ok(());
        }

        let mut g = if self.spec.cam_head {
            if lowest.is_none() {
                return Ok(());
            }
            ops::gap_backward(&hg.input, boundary.shape())
        } else {
            let dfc = ops::relu_backward(&trace.head_in, &hg.input);
            let flat = boundary.reshape(&[n, self.spec.flatten_len()])?;
            let fc = self.fc.as_ref().expect("non-cam model always has an fc layer");
            let fg = ops::dense_backward(&flat, &fc.weights, &dfc, lowest.is_some());
            let fc = self.fc.as_mut().expect("non-cam model always has an fc layer");
            if mask[fc_base] {
                fc.weights.add_to_grad(fg.weights.data());
            }
            if mask[fc_base + 1] {
                fc.bias.add_to_grad(fg.bias.data());
            }
            if lowest.is_none() {
                return Ok(());
            }
            fg.input.reshape(boundary.shape())?
        };

        let lowest = lowest.expect("conv walk only runs when a trainable conv exists");
        for j in (lowest..ops_seq.len()).rev() {
            let r = j - trace.start_op;
            let op_in = if r == 0 { &trace.input } else { &trace.op_outs[r - 1] };
            match ops_seq[j] {
                StackOp::Pool => {
                    let arg = trace.argmaxes[r].as_ref().expect("pool ops record an argmax");
                    g = ops::maxpool2_backward(&g, arg, op_in.shape());
                }
                StackOp::Conv(i) => {
                    let gy = ops::relu_backward(&trace.op_outs[r], &g);
                    let grads =
                        ops::conv2d_backward(op_in, &self.convs[i].kernels, &gy, j > lowest);
                    if mask[2 * i] {
                        self.convs[i].kernels.add_to_grad(grads.kernels.data());
                    }
                    if mask[2 * i + 1] {
                        self.convs[i].bias.add_to_grad(grads.bias.data());
                    }
                    g = grads.input;
                }
            }
        }
        Ok(())
    }

    fn expect_activation(&self, x: &Tensor<f32>, ops_seq: &[StackOp], at: usize) -> Result<()> {
        let (c, h, w) = shape_at(&self.spec, ops_seq, at);
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::Shape(format!(
                "activation shape {shape:?} does not match expected [N, {c}, {h}, {w}]"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{AdamConfig, AdamState};

    fn seeded_input(spec: &ModelSpec, n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * spec.input_channels * spec.input_h * spec.input_w;
        Tensor::from_vec(
            &[n, spec.input_channels, spec.input_h, spec.input_w],
            (0..len).map(|_| rng.gen::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn forward_shapes_and_probability_ranges() {
        let spec = ModelSpec::tiny();
        let model = build_model(&spec, 3).unwrap();
        let x = seeded_input(&spec, 2, 10);
        let probs = model.forward(&x).unwrap();
        assert_eq!(probs.shape(), &[2, 1]);
        assert!(probs.data().iter().all(|p| (0.0..=1.0).contains(p)));

        let spec3 = ModelSpec { head: Head::Softmax3Way, ..ModelSpec::tiny() };
        let model3 = build_model(&spec3, 3).unwrap();
        let probs3 = model3.forward(&x).unwrap();
        assert_eq!(probs3.shape(), &[2, 3]);
        for row in probs3.data().chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let spec = ModelSpec::desk();
        let a = build_model(&spec, 42).unwrap();
        let b = build_model(&spec, 42).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data(), pb.data());
        }
        let c = build_model(&spec, 43).unwrap();
        assert_ne!(a.convs[0].kernels.data(), c.convs[0].kernels.data());

        let x = seeded_input(&spec, 2, 9);
        let p1 = a.forward(&x).unwrap();
        let p2 = b.forward(&x).unwrap();
        assert_eq!(p1.data(), p2.data());
    }

    #[test]
    fn freeze_masks_match_hand_parameter_count() {
        let spec = ModelSpec::desk();
        let model = build_model(&spec, 1).unwrap();
        // Hand count from 3*3*cin*cout + cout per conv layer.
        let conv_params: Vec<usize> =
            spec.conv_shapes().iter().map(|(cin, cout)| 9 * cin * cout + cout).collect();
        let fc_params = spec.flatten_len() * spec.fc_width + spec.fc_width;
        let head_params = spec.fc_width + 1;
        let total: usize = conv_params.iter().sum::<usize>() + fc_params + head_params;
        assert_eq!(model.scalar_count(), total);

        for (group, frozen_convs) in FreezeGroup::ALL.into_iter().zip([0usize, 4, 8, 12, 16]) {
            let mask = apply_freeze(&model, group);
            let trainable: usize = model
                .params()
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(p, _)| p.numel())
                .sum();
            let expect = total - conv_params[..frozen_convs].iter().sum::<usize>();
            assert_eq!(trainable, expect, "{group}");
        }

        let mask_all = apply_freeze(&model, FreezeGroup::All);
        assert!(mask_all.iter().all(|&m| m));
        let mask_g4 = apply_freeze(&model, FreezeGroup::G4);
        assert!(mask_g4[..2 * 16].iter().all(|&m| !m));
        assert!(mask_g4[2 * 16..].iter().all(|&m| m));
    }

    fn train_steps(model: &mut Model, mask: &[bool], steps: usize) {
        let spec = model.spec.clone();
        let mut states: Vec<AdamState<f32>> =
            model.params().iter().map(|p| AdamState::new(p.numel())).collect();
        let cfg = AdamConfig::default();
        for step in 0..steps {
            let x = seeded_input(&spec, 4, 100 + step as u64);
            let labels = [0u8, 1, 1, 0];
            let trace = model.trace(&x).unwrap();
            let (_, grad) = ops::bce_loss(&trace.probs, &labels).unwrap();
            model.backward(&trace, &grad, mask).unwrap();
            for (param, state) in model.params_mut().into_iter().zip(&mut states) {
                state.step(param, &cfg);
            }
            model.clear_grads();
        }
    }

    #[test]
    fn frozen_parameters_stay_bit_identical_through_training() {
        let spec = ModelSpec::desk();
        let mut model = build_model(&spec, 7).unwrap();
        let initial: Vec<Vec<f32>> = model.params().iter().map(|p| p.data().to_vec()).collect();
        let mask = apply_freeze(&model, FreezeGroup::G2);
        train_steps(&mut model, &mask, 3);

        let names = model.param_names();
        for (i, (param, init)) in model.params().iter().zip(&initial).enumerate() {
            if mask[i] {
                assert_ne!(param.data(), init.as_slice(), "{} should have moved", names[i]);
            } else {
                assert_eq!(param.data(), init.as_slice(), "{} should be frozen", names[i]);
            }
        }
    }

    #[test]
    fn head_gradients_flow_under_every_freeze_group() {
        let spec = ModelSpec::desk();
        for group in FreezeGroup::ALL {
            let mut model = build_model(&spec, 5).unwrap();
            let mask = apply_freeze(&model, group);
            let x = seeded_input(&spec, 4, 55);
            let trace = model.trace(&x).unwrap();
            let (_, grad) = ops::bce_loss(&trace.probs, &[0, 1, 0, 1]).unwrap();
            model.backward(&trace, &grad, &mask).unwrap();
            let hw = model.head.weights.grad().expect("head weight grad present");
            assert!(hw.iter().any(|&g| g != 0.0), "{group}");
        }
    }

    #[test]
    fn prefix_forward_plus_trace_from_equals_full_trace() {
        let spec = ModelSpec::desk();
        let model = build_model(&spec, 19).unwrap();
        let x = seeded_input(&spec, 2, 31);
        let full = model.trace(&x).unwrap();
        for prefix in [4usize, 8, 12, 16] {
            let boundary = model.forward_prefix(&x, prefix).unwrap();
            let part = model.trace_from(&boundary, prefix).unwrap();
            assert_eq!(part.probs.data(), full.probs.data(), "prefix {prefix}");
        }
    }

    #[test]
    fn model_backward_matches_finite_differences() {
        // End-to-end check through conv, pool, fc, and sigmoid head. f32
        // centered differences carry a few digits, hence the loose bound.
        let spec = ModelSpec::tiny();
        let mut model = build_model(&spec, 23).unwrap();
        let x = seeded_input(&spec, 3, 77);
        let labels = [1u8, 0, 1];
        let mask = vec![true; model.param_len()];

        let trace = model.trace(&x).unwrap();
        let (_, grad) = ops::bce_loss(&trace.probs, &labels).unwrap();
        model.backward(&trace, &grad, &mask).unwrap();

        let loss_at = |m: &Model| -> f64 {
            let t = m.trace(&x).unwrap();
            let (l, _) = ops::bce_loss(&t.probs, &labels).unwrap();
            l as f64
        };
        let eps = 2e-3f32;
        // Spot-check a few coordinates in every parameter tensor.
        for pi in 0..model.param_len() {
            let analytic: Vec<f32> = model.params()[pi].grad().unwrap().to_vec();
            let count = analytic.len();
            for &ci in &[0usize, count / 2, count - 1] {
                let orig = model.params()[pi].data()[ci];
                model.params_mut()[pi].data_mut()[ci] = orig + eps;
                let up = loss_at(&model);
                model.params_mut()[pi].data_mut()[ci] = orig - eps;
                let down = loss_at(&model);
                model.params_mut()[pi].data_mut()[ci] = orig;
                let numeric = (up - down) / (2.0 * eps as f64);
                let a = analytic[ci] as f64;
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(0.05);
                assert!(err < 3e-2, "param {pi} coord {ci}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn rejects_wrong_input_shape_and_mask_length() {
        let spec = ModelSpec::tiny();
        let mut model = build_model(&spec, 2).unwrap();
        let bad = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        assert!(model.forward(&bad).is_err());

        let x = seeded_input(&spec, 1, 4);
        let trace = model.trace(&x).unwrap();
        let (_, grad) = ops::bce_loss(&trace.probs, &[1]).unwrap();
        assert!(model.backward(&trace, &grad, &[true; 3]).is_err());
    }
}
