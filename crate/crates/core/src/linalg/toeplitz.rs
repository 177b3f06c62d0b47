use serde::{Deserialize, Serialize};

use super::{Dft2d, HermitianMatrix, LinalgError, Result, C64};

/// Uniform rectangular array with `nv` vertical and `nh` horizontal
/// elements. Spacings are in wavelengths. Element `(iv, ih)` sits at flat
/// index `iv * nh + ih`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UraGeometry {
    pub nv: usize,
    pub nh: usize,
    pub spacing_v: f64,
    pub spacing_h: f64,
}

impl UraGeometry {
    pub fn new(nv: usize, nh: usize, spacing_v: f64, spacing_h: f64) -> Result<Self> {
        if nv == 0 || nh == 0 {
            return Err(LinalgError::Geometry(format!("antenna counts must be >= 1, got {nv}x{nh}")));
        }
        if !(spacing_v > 0.0 && spacing_h > 0.0) {
            return Err(LinalgError::Geometry(format!(
                "spacings must be positive, got {spacing_v} and {spacing_h}"
            )));
        }
        Ok(Self { nv, nh, spacing_v, spacing_h })
    }

    /// 4 x 16 array, one wavelength vertically and half a wavelength horizontally.
    pub fn default_array() -> Self {
        Self { nv: 4, nh: 16, spacing_v: 1.0, spacing_h: 0.5 }
    }

    pub fn n(&self) -> usize {
        self.nv * self.nh
    }

    /// Length of the doubled two-axis frequency grid, `4N`.
    pub fn grid_len(&self) -> usize {
        4 * self.n()
    }
}

/// `Q = Q_v kron Q_h`, where `Q_v` holds the first `nv` columns of the
/// unitary `2nv`-point DFT (likewise horizontally). Applied through a
/// zero-padded two-dimensional FFT instead of a dense `4N x N` matrix.
#[derive(Debug, Clone)]
pub struct QOperator {
    geo: UraGeometry,
    dft: Dft2d,
}

impl QOperator {
    pub fn new(geo: UraGeometry) -> Self {
        Self { geo, dft: Dft2d::new(2 * geo.nv, 2 * geo.nh) }
    }

    pub fn geometry(&self) -> &UraGeometry {
        &self.geo
    }

    fn check(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(LinalgError::Dimension { expected, got });
        }
        Ok(())
    }

    /// `Q x`, length `4N`.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        let (nv, nh) = (self.geo.nv, self.geo.nh);
        self.check(x.len(), nv * nh)?;
        let cols = 2 * nh;
        let mut grid = vec![C64::new(0.0, 0.0); self.geo.grid_len()];
        for iv in 0..nv {
            grid[iv * cols..iv * cols + nh].copy_from_slice(&x[iv * nh..(iv + 1) * nh]);
        }
        self.dft.forward(&mut grid);
        let s = 1.0 / (self.geo.grid_len() as f64).sqrt();
        grid.iter_mut().for_each(|v| *v *= s);
        Ok(grid)
    }

    /// `Q^H w`, length `N`.
    pub fn apply_adjoint(&self, w: &[C64]) -> Result<Vec<C64>> {
        let (nv, nh) = (self.geo.nv, self.geo.nh);
        self.check(w.len(), self.geo.grid_len())?;
        let mut grid = w.to_vec();
        self.dft.inverse(&mut grid);
        let s = 1.0 / (self.geo.grid_len() as f64).sqrt();
        let cols = 2 * nh;
        let mut out = Vec::with_capacity(nv * nh);
        for iv in 0..nv {
            out.extend(grid[iv * cols..iv * cols + nh].iter().map(|v| v * s));
        }
        Ok(out)
    }

    #[inline]
    fn lag_index(&self, i: usize, j: usize) -> usize {
        let (nv, nh) = (self.geo.nv, self.geo.nh);
        let dv = (i / nh + 2 * nv - j / nh) % (2 * nv);
        let dh = (i % nh + 2 * nh - j % nh) % (2 * nh);
        dv * 2 * nh + dh
    }

    /// `Q^H diag(c) Q`. Entry `(i, j)` depends only on the per-axis index
    /// differences, so the whole matrix comes from one `4N`-point inverse FFT of `c`.
    pub fn covariance(&self, c: &[f64]) -> Result<HermitianMatrix> {
        self.check(c.len(), self.geo.grid_len())?;
        if let Some((index, &value)) = c.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(LinalgError::NonPositiveWeight { index, value });
        }
        let mut grid: Vec<C64> = c.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.dft.inverse(&mut grid);
        let s = 1.0 / self.geo.grid_len() as f64;
        let n = self.geo.n();
        let mut m = HermitianMatrix::zeros(n);
        let data = m.as_mut_slice();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = grid[self.lag_index(i, j)] * s;
            }
        }
        Ok(m)
    }

    /// Adjoint of [`QOperator::covariance`] under the real Frobenius inner
    /// product: returns `Re diag(Q G Q^H)`. For a scalar loss with matrix
    /// gradient `G` (`dL = Re tr(G^H dC)`), this is `dL/dc`.
    pub fn project(&self, g: &HermitianMatrix) -> Result<Vec<f64>> {
        let n = self.geo.n();
        self.check(g.dim(), n)?;
        let mut grid = vec![C64::new(0.0, 0.0); self.geo.grid_len()];
        let data = g.as_slice();
        for i in 0..n {
            for j in 0..n {
                grid[self.lag_index(i, j)] += data[i * n + j];
            }
        }
        self.dft.forward(&mut grid);
        let s = 1.0 / self.geo.grid_len() as f64;
        Ok(grid.iter().map(|v| v.re * s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn q_is_partial_isometry_with_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for geo in [UraGeometry::new(2, 2, 1.0, 0.5).unwrap(), UraGeometry::default_array()] {
            let q = QOperator::new(geo);
            let x = random_vec(geo.n(), &mut rng);
            let w = random_vec(geo.grid_len(), &mut rng);
            let lhs = inner(&q.apply(&x).unwrap(), &w);
            let rhs = inner(&x, &q.apply_adjoint(&w).unwrap());
            assert!((lhs - rhs).norm() < 1e-12);
            let back = q.apply_adjoint(&q.apply(&x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_weights_give_identity() {
        let geo = UraGeometry::default_array();
        let c = QOperator::new(geo).covariance(&vec![1.0; geo.grid_len()]).unwrap();
        assert!(c.frobenius_distance(&HermitianMatrix::identity(geo.n())) < 1e-10);
    }

    #[test]
    fn rejects_non_positive_weight() {
        let geo = UraGeometry::new(1, 2, 1.0, 0.5).unwrap();
        let err = QOperator::new(geo).covariance(&[1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(err, LinalgError::NonPositiveWeight { index: 1, value: 0.0 });
    }

    #[test]
    fn project_is_adjoint_of_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let geo = UraGeometry::new(3, 5, 1.0, 0.5).unwrap();
        let q = QOperator::new(geo);
        let c: Vec<f64> = (0..geo.grid_len()).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut g = HermitianMatrix::zeros(geo.n());
        for _ in 0..3 {
            let v = random_vec(geo.n(), &mut rng);
            g.add_outer(&v, rng.random_range(-1.0..1.0));
        }
        let cov = q.covariance(&c).unwrap();
        let lhs: f64 = cov.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (b.conj() * a).re).sum();
        let rhs: f64 = c.iter().zip(q.project(&g).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
