use super::{HermitianMatrix, LinalgError, Result, C64};

/// Lower-triangular factor `L` with `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // row-major, only the lower triangle is meaningful
    l: Vec<C64>,
}

impl Cholesky {
    /// Fails with the index of the first pivot that is not strictly positive.
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = a.as_slice().to_vec();
        for j in 0..n {
            let mut d = l[j * n + j].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = C64::new(djj, 0.0);
            let inv = 1.0 / djj;
            for i in j + 1..n {
                let (head, tail) = l.split_at_mut(i * n);
                let row_j = &head[j * n..j * n + j];
                let row_i = &mut tail[..n];
                let mut s = row_i[j];
                for k in 0..j {
                    s -= row_i[k] * row_j[k].conj();
                }
                row_i[j] = s * inv;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                l[i * n + j] = C64::new(0.0, 0.0);
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor(&self) -> &[C64] {
        &self.l
    }

    /// `log det A = 2 sum log L_ii`
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].re.ln()).sum::<f64>() * 2.0
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Dimension { expected: n, got: b.len() });
        }
        let mut z = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: C64 = row.iter().zip(&z[..i]).map(|(a, b)| a * b).sum();
            z[i] = (z[i] - s) / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * z[k];
            }
            z[i] = s / self.l[i * n + i].re;
        }
        Ok(z)
    }

    /// `A^{-1}` from `L^{-H} L^{-1}`.
    pub fn inverse(&self) -> HermitianMatrix {
        let n = self.n;
        // W = L^{-1}, lower triangular, row-major
        let mut w = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            w[j * n + j] = C64::new(1.0 / self.l[j * n + j].re, 0.0);
            for i in j + 1..n {
                let mut s = C64::new(0.0, 0.0);
                for k in j..i {
                    s += self.l[i * n + k] * w[k * n + j];
                }
                w[i * n + j] = -s / self.l[i * n + i].re;
            }
        }
        // (W^H W)_{ij} = sum_{k >= max(i,j)} conj(W_ki) W_kj
        let mut inv = HermitianMatrix::zeros(n);
        let out = inv.as_mut_slice();
        for i in 0..n {
            for j in 0..=i {
                let mut s = C64::new(0.0, 0.0);
                for k in i..n {
                    s += w[k * n + i].conj() * w[k * n + j];
                }
                out[i * n + j] = s;
                out[j * n + i] = s.conj();
            }
        }
        inv
    }
}

/// Solves `A x = b` for Hermitian positive-definite `A`.
pub fn hpd_solve(a: &HermitianMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if b.len() != a.dim() {
        return Err(LinalgError::Dimension { expected: a.dim(), got: b.len() });
    }
    Cholesky::new(a)?.solve(b)
}
