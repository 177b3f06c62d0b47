use crate::linalg::{ComplexVec, Dft2d, UraGeometry, C64};

/// Unit-norm two-axis DFT atoms on an oversampled grid:
/// `a_(kv,kh)[iv, ih] = exp(2 pi j (kv iv / Mv + kh ih / Mh)) / sqrt(N)` with
/// `Mv = o nv`, `Mh = o nh`. The default `o = 2` gives `4N` atoms.
#[derive(Debug, Clone)]
pub struct OmpDictionary {
    geo: UraGeometry,
    per_axis: usize,
    dft: Dft2d,
}

impl OmpDictionary {
    /// `per_axis` is the oversampling factor along each array axis.
    pub fn new(geo: UraGeometry, per_axis: usize) -> Self {
        let per_axis = per_axis.max(1);
        Self { geo, per_axis, dft: Dft2d::new(per_axis * geo.nv, per_axis * geo.nh) }
    }

    pub fn geometry(&self) -> &UraGeometry {
        &self.geo
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn len(&self) -> usize {
        self.per_axis * self.per_axis * self.geo.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn grid_dims(&self) -> (usize, usize) {
        (self.per_axis * self.geo.nv, self.per_axis * self.geo.nh)
    }

    pub fn atom(&self, k: usize) -> ComplexVec {
        let (mv, mh) = self.grid_dims();
        let (kv, kh) = (k / mh, k % mh);
        let s = 1.0 / (self.geo.n() as f64).sqrt();
        let mut out = Vec::with_capacity(self.geo.n());
        for iv in 0..self.geo.nv {
            for ih in 0..self.geo.nh {
                let phase = 2.0 * std::f64::consts::PI * ((kv * iv) as f64 / mv as f64 + (kh * ih) as f64 / mh as f64);
                out.push(C64::from_polar(s, phase));
            }
        }
        out
    }

    /// `a_k^H r` for every atom, through one zero-padded 2-D FFT.
    pub fn correlations(&self, r: &[C64]) -> Vec<C64> {
        let (_, mh) = self.grid_dims();
        let nh = self.geo.nh;
        let mut grid = vec![C64::new(0.0, 0.0); self.len()];
        for iv in 0..self.geo.nv {
            grid[iv * mh..iv * mh + nh].copy_from_slice(&r[iv * nh..(iv + 1) * nh]);
        }
        self.dft.forward(&mut grid);
        let s = 1.0 / (self.geo.n() as f64).sqrt();
        grid.iter_mut().for_each(|v| *v *= s);
        grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpOutcome {
    pub estimate: ComplexVec,
    /// Number of atoms in the genie-selected iterate.
    pub sparsity: usize,
}

fn sq_dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Orthogonal matching pursuit with least-squares refits; the genie returns
/// the iterate `k in 1..=k_max` closest to `h_true`. Iteration also stops
/// once the selected atoms span the observation space.
pub fn genie_omp_estimate(dict: &OmpDictionary, y: &[C64], h_true: &[C64], k_max: usize) -> OmpOutcome {
    let k_max = if k_max > dict.len() {
        log::warn!("OMP iteration limit {k_max} exceeds {} atoms; clamping", dict.len());
        dict.len()
    } else {
        k_max
    };
    let n = y.len();
    let mut basis: Vec<ComplexVec> = Vec::new();
    let mut chosen = vec![false; dict.len()];
    let mut estimate = vec![C64::new(0.0, 0.0); n];
    let mut residual = y.to_vec();
    let mut best = OmpOutcome { estimate: estimate.clone(), sparsity: 0 };
    let mut best_err = f64::INFINITY;

    for k in 1..=k_max {
        let corr = dict.correlations(&residual);
        let pick = corr
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen[*i])
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(i, _)| i);
        let Some(pick) = pick else { break };
        chosen[pick] = true;

        // modified Gram-Schmidt against the current basis, applied twice
        let mut u = dict.atom(pick);
        for _ in 0..2 {
            for b in &basis {
                let p: C64 = b.iter().zip(&u).map(|(x, y)| x.conj() * y).sum();
                u.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-10 {
            break;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        let coef: C64 = u.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
        for ((e, r), a) in estimate.iter_mut().zip(residual.iter_mut()).zip(&u) {
            *e += coef * a;
            *r -= coef * a;
        }
        basis.push(u);

        let err = sq_dist(h_true, &estimate);
        if err < best_err {
            best_err = err;
            best = OmpOutcome { estimate: estimate.clone(), sparsity: k };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_are_unit_norm_and_correlations_match_inner_products() {
        let geo = UraGeometry::new(2, 4, 1.0, 0.5).unwrap();
        for o in [2, 4] {
            let d = OmpDictionary::new(geo, o);
            assert_eq!(d.len(), o * o * 8);
            let r: ComplexVec = (0..8).map(|i| C64::new(i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.1)).collect();
            let corr = d.correlations(&r);
            for k in 0..d.len() {
                let a = d.atom(k);
                let norm: f64 = a.iter().map(|v| v.norm_sqr()).sum();
                assert!((norm - 1.0).abs() < 1e-12);
                let direct: C64 = a.iter().zip(&r).map(|(x, y)| x.conj() * y).sum();
                assert!((direct - corr[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn one_sparse_recovery() {
        let geo = UraGeometry::default_array();
        let d = OmpDictionary::new(geo, 2);
        let y: ComplexVec = d.atom(37).iter().map(|v| v * C64::new(1.5, -0.5)).collect();
        let out = genie_omp_estimate(&d, &y, &y, 128);
        assert_eq!(out.sparsity, 1);
        assert!(sq_dist(&out.estimate, &y).sqrt() <= 1e-10);
    }
}
