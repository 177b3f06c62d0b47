use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::C64;

fn transform(x: &[C64], inverse: bool) -> Vec<C64> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(x.len()) } else { planner.plan_fft_forward(x.len()) };
    let mut buf = x.to_vec();
    fft.process(&mut buf);
    let s = 1.0 / (x.len() as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

/// Forward DFT scaled by `1/sqrt(M)`, i.e. `X_k = M^{-1/2} sum_n x_n e^{-2 pi j k n / M}`.
pub fn unitary_dft(x: &[C64]) -> Vec<C64> {
    if x.is_empty() {
        return Vec::new();
    }
    transform(x, false)
}

/// Inverse of [`unitary_dft`].
pub fn unitary_idft(x: &[C64]) -> Vec<C64> {
    if x.is_empty() {
        return Vec::new();
    }
    transform(x, true)
}

/// Unnormalized two-dimensional DFT on a row-major `rows x cols` grid with
/// cached plans.
#[derive(Clone)]
pub struct Dft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft2d").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Dft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, grid: &mut [C64], inverse: bool) {
        assert_eq!(grid.len(), self.len(), "grid size does not match the planned transform");
        let (row_plan, col_plan) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        row_plan.process(grid);
        let mut column = vec![C64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = grid[r * self.cols + c];
            }
            col_plan.process(&mut column);
            for r in 0..self.rows {
                grid[r * self.cols + c] = column[r];
            }
        }
    }

    /// `X[k1,k2] = sum x[n1,n2] e^{-2 pi j (k1 n1 / rows + k2 n2 / cols)}`, in place.
    pub fn forward(&self, grid: &mut [C64]) {
        self.run(grid, false);
    }

    /// Same as [`Dft2d::forward`] with `+j` in the exponent; no scaling.
    pub fn inverse(&self, grid: &mut [C64]) {
        self.run(grid, true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_sqr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn impulse_maps_to_constant() {
        let mut e0 = vec![C64::new(0.0, 0.0); 4];
        e0[0] = C64::new(1.0, 0.0);
        for v in unitary_dft(&e0) {
            assert!((v - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        for (n, seed) in [(1, 1), (7, 2), (64, 3), (256, 4)] {
            let x = random_vec(n, seed);
            let fx = unitary_dft(&x);
            assert!((norm_sqr(&fx).sqrt() - norm_sqr(&x).sqrt()).abs() < 1e-12);
            let back = unitary_idft(&fx);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_dim_matches_direct_sum() {
        let (rows, cols) = (4, 6);
        let x = random_vec(rows * cols, 9);
        let mut grid = x.clone();
        Dft2d::new(rows, cols).forward(&mut grid);
        for k1 in 0..rows {
            for k2 in 0..cols {
                let mut acc = C64::new(0.0, 0.0);
                for n1 in 0..rows {
                    for n2 in 0..cols {
                        let ph = -2.0 * std::f64::consts::PI * ((k1 * n1) as f64 / rows as f64 + (k2 * n2) as f64 / cols as f64);
                        acc += x[n1 * cols + n2] * C64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - grid[k1 * cols + k2]).norm() < 1e-12);
            }
        }
    }
}
