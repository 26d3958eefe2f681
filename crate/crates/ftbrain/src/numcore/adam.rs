//! Adam optimizer with bias correction, one state per parameter tensor.

use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    m: Vec<T>,
    v: Vec<T>,
    /// Steps taken; bias correction uses this count.
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(numel: usize) -> Self {
        Self { m: vec![T::zero(); numel], v: vec![T::zero(); numel], t: 0 }
    }

    /// One Adam step: consumes the gradient stored on `param` (no-op when
    /// absent) and updates the parameter data in place.
    pub fn step(&mut self, param: &mut Tensor<T>, cfg: &AdamConfig) {
        let Some(grad) = param.grad() else { return };
        debug_assert_eq!(grad.len(), self.m.len());
        let grad = grad.to_vec();

        self.t += 1;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one = T::one();
        // Correction factors via f64 so long runs keep precision in f32 mode.
        let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(self.t as i32)));
        let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(self.t as i32)));
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.epsilon);

        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let mhat = *m * c1;
            let vhat = *v * c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_almost_lr() {
        // With a unit gradient the bias-corrected first step is
        // lr * 1 / (1 + eps), fractionally under lr itself.
        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        p.add_to_grad(&[1.0]);
        let mut st = AdamState::new(1);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        st.step(&mut p, &cfg);
        assert!((p.data()[0] - 0.9).abs() < 1e-8);
        assert_eq!(st.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_is_not_a_fixed_point_after_momentum() {
        // Momentum keeps pushing briefly after gradients vanish.
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        p.add_to_grad(&[1.0]);
        let mut st = AdamState::new(1);
        let cfg = AdamConfig::default();
        st.step(&mut p, &cfg);
        let after_one = p.data()[0];
        p.reset_grad();
        p.add_to_grad(&[0.0]);
        st.step(&mut p, &cfg);
        assert!(p.data()[0] < after_one);
    }

    #[test]
    fn missing_gradient_is_a_no_op() {
        let mut p = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let mut st = AdamState::new(2);
        st.step(&mut p, &AdamConfig::default());
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(st.steps_taken(), 0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Minimize (x - 3)^2 from x = 0.
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut st = AdamState::new(1);
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        for _ in 0..2000 {
            let g = 2.0 * (p.data()[0] - 3.0);
            p.reset_grad();
            p.add_to_grad(&[g]);
            st.step(&mut p, &cfg);
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3);
    }
}
