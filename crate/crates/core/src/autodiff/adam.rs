use super::tensor::{Result, Tensor, TensorError};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients stored on `params`.
    ///
    /// Any non-finite gradient aborts the step before a single parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(TensorError::Shape("adam: parameter set changed between steps".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(TensorError::NonFiniteGradient { param: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Tensor {
        let mut t = Tensor::parameter(vec![values.len()], values.to_vec()).unwrap();
        t.grad_mut().copy_from_slice(grads);
        t
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(&[1.0, -2.0, 0.5], &[3.0, -0.2, 7.0]);
        let mut adam = AdamState::new(5e-4);
        adam.step(&mut [&mut p]).unwrap();
        let expect = [1.0 - 5e-4, -2.0 + 5e-4, 0.5 - 5e-4];
        for (a, e) in p.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(&[1.0, 2.0], &[0.0, 0.0]);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // g = 0.5 twice, lr = 0.1
        // m1 = 0.05, v1 = 0.00025, m1_hat = 0.5, v1_hat = 0.25, step1 = 0.1*0.5/(0.5+1e-8)
        // m2 = 0.095, v2 = 0.00049975, m2_hat = 0.095/0.19 = 0.5, v2_hat = 0.00049975/0.001999 = 0.25
        let mut p = param(&[0.0], &[0.5]);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut p]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        let s1 = 0.1 * 0.5 / (0.5 + 1e-8);
        let v2_hat: f64 = 0.000_499_75 / (1.0 - 0.999f64.powi(2));
        let s2 = 0.1 * (0.095 / 0.19) / (v2_hat.sqrt() + 1e-8);
        assert!((p.data()[0] + s1 + s2).abs() < 1e-12);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = param(&[1.0], &[f64::NAN]);
        let mut adam = AdamState::new(1e-3);
        assert_eq!(adam.step(&mut [&mut p]), Err(TensorError::NonFiniteGradient { param: 0 }));
        assert_eq!(p.data(), &[1.0]);
    }
}
