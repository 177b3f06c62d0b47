//! Central finite differences for checking the hand-written reverse passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Mode};
use super::tensor::{Result, Tensor};

pub const FD_STEP: f64 = 1e-6;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_error_with_floor(analytic, numeric, 0.0)
}

/// `||a - b|| / max(||a||, ||b||, floor)`. The floor keeps gradients that are
/// zero by construction (a bias feeding a batch normalization) from turning
/// finite-difference round-off into a relative error of one.
pub fn relative_error_with_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = l2(analytic).max(l2(numeric)).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Central-difference gradient of `f` over `len` coordinates. `f(i, delta)`
/// must evaluate the loss with coordinate `i` shifted by `delta` and leave
/// the state unchanged afterwards.
pub fn numeric_gradient(len: usize, step: f64, mut f: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..len).map(|i| (f(i, step) - f(i, -step)) / (2.0 * step)).collect()
}

/// Relative errors of one layer's gradients: the input first, then each
/// parameter tensor in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub input: f64,
    pub params: Vec<f64>,
}

impl LayerCheck {
    pub fn worst(&self) -> f64 {
        self.params.iter().copied().fold(self.input, f64::max)
    }
}

/// Checks `layer` on the scalar loss `sum(w * layer(x))` with fixed random `w`.
pub fn check_layer(layer: &mut Layer, input: &Tensor, mode: Mode, step: f64, seed: u64) -> Result<LayerCheck> {
    let out = layer.forward(input, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |t: &Tensor| t.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

    for p in layer.params_mut() {
        p.zero_grad();
    }
    let gx = layer.backward(&Tensor::new(out.shape().to_vec(), w.clone())?)?;
    let analytic_params: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad().unwrap_or(&[]).to_vec()).collect();

    let mut x = input.clone();
    let numeric_x = numeric_gradient(x.numel(), step, |i, d| {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + d;
        let v = loss(&layer.forward(&x, mode).expect("shapes fixed"));
        x.data_mut()[i] = orig;
        v
    });
    let mut params = Vec::new();
    for (pi, analytic) in analytic_params.iter().enumerate() {
        let numeric = numeric_gradient(analytic.len(), step, |i, d| {
            let orig = layer.params()[pi].data()[i];
            layer.params_mut()[pi].data_mut()[i] = orig + d;
            let v = loss(&layer.forward(input, mode).expect("shapes fixed"));
            layer.params_mut()[pi].data_mut()[i] = orig;
            v
        });
        params.push(relative_error(analytic, &numeric));
    }
    layer.clear_cache();
    Ok(LayerCheck { input: relative_error(gx.data(), &numeric_x), params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let x = [1.0, -2.0, 0.5];
        let g = numeric_gradient(3, 1e-5, |i, d| {
            let mut y = x;
            y[i] += d;
            y.iter().map(|v| v * v).sum()
        });
        assert!(relative_error(&[2.0, -4.0, 1.0], &g) < 1e-9);
    }

    #[test]
    fn relative_error_of_zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
