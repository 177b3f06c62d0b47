//! Sum-of-paths channel synthesis on a uniform rectangular array.
//!
//! A channel is `h = sum_l g_l exp(-2 pi j f_c tau_l)` with
//! `g_l = a_l * steer(az_l, el_l)`. Each realization picks a cluster
//! direction (the user's position as seen from the array), scatters `L`
//! paths around it, draws delays uniformly over the delay spread, and gives
//! the paths exponentially decaying powers normalized to sum to one.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, HermitianMatrix, QOperator, UraGeometry, C64};

/// Array response towards azimuth `az` and elevation `el` (radians). The
/// phase of element `(iv, ih)` is `2 pi (d_v iv sin(el) + d_h ih cos(el) sin(az))`.
pub fn steering_vector(geo: &UraGeometry, azimuth: f64, elevation: f64) -> Vec<C64> {
    let uv = geo.spacing_v * elevation.sin();
    let uh = geo.spacing_h * elevation.cos() * azimuth.sin();
    let mut out = Vec::with_capacity(geo.n());
    for iv in 0..geo.nv {
        for ih in 0..geo.nh {
            out.push(C64::from_polar(1.0, 2.0 * PI * (uv * iv as f64 + uh * ih as f64)));
        }
    }
    out
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Complex amplitude before the delay phase.
    pub gain: C64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Seconds.
    pub delay: f64,
}

/// `sum_l gain_l steer(az_l, el_l) exp(-2 pi j f_c tau_l)`
pub fn superpose_paths(geo: &UraGeometry, carrier_hz: f64, paths: &[Path]) -> Vec<C64> {
    let mut h = vec![C64::new(0.0, 0.0); geo.n()];
    for p in paths {
        let phase = C64::from_polar(1.0, -2.0 * PI * (carrier_hz * p.delay).fract());
        let coef = p.gain * phase;
        for (hi, a) in h.iter_mut().zip(steering_vector(geo, p.azimuth, p.elevation)) {
            *hi += coef * a;
        }
    }
    h
}

/// Parameters of one multipath scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tag: String,
    pub geo: UraGeometry,
    pub carrier_hz: f64,
    pub path_min: usize,
    pub path_max: usize,
    pub los_probability: f64,
    /// Share of the total power carried by the direct path under LOS.
    pub los_power: f64,
    /// Cluster-centre azimuth range (radians), drawn uniformly per channel.
    pub azimuth_range: (f64, f64),
    /// Cluster-centre elevation range (radians), drawn uniformly per channel.
    pub elevation_range: (f64, f64),
    /// Standard deviation of per-path azimuth offsets around the centre.
    pub azimuth_spread: f64,
    pub elevation_spread: f64,
    /// Seconds.
    pub delay_spread: f64,
    /// Path power is proportional to `exp(-decay_rate * tau / delay_spread)`.
    pub decay_rate: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.path_min < 1 || self.path_max < self.path_min {
            return Err(format!("invalid path range [{}, {}]", self.path_min, self.path_max));
        }
        if !(self.carrier_hz > 0.0) {
            return Err("carrier frequency must be positive".into());
        }
        if self.azimuth_spread < 0.0 || self.elevation_spread < 0.0 || self.delay_spread < 0.0 {
            return Err("spreads must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.los_probability) || !(0.0..1.0).contains(&self.los_power) {
            return Err("LOS probability and power share must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Draws the path list of one channel realization.
    pub fn draw_paths<R: Rng>(&self, rng: &mut R) -> Vec<Path> {
        let az0 = rng.random_range(self.azimuth_range.0..=self.azimuth_range.1);
        let el0 = rng.random_range(self.elevation_range.0..=self.elevation_range.1);
        let los = rng.random::<f64>() < self.los_probability;
        // LOS channels draw from the lower half of the path-count range
        let mid = (self.path_min + self.path_max) / 2;
        let count = if los {
            rng.random_range(self.path_min..=mid)
        } else {
            rng.random_range(mid.max(self.path_min)..=self.path_max)
        };
        let mut paths = Vec::with_capacity(count);
        let mut powers = Vec::with_capacity(count);
        for l in 0..count {
            let direct = los && l == 0;
            let (az, el, delay) = if direct {
                (az0, el0, 0.0)
            } else {
                let da: f64 = rng.sample(StandardNormal);
                let de: f64 = rng.sample(StandardNormal);
                let delay = rng.random_range(0.0..=self.delay_spread);
                (az0 + self.azimuth_spread * da, el0 + self.elevation_spread * de, delay)
            };
            let rel = if self.delay_spread > 0.0 { delay / self.delay_spread } else { 0.0 };
            powers.push((-self.decay_rate * rel).exp());
            paths.push(Path { gain: C64::new(0.0, 0.0), azimuth: az, elevation: el, delay });
        }
        let scattered: f64 = powers.iter().skip(usize::from(los)).sum();
        for (l, (p, w)) in paths.iter_mut().zip(&powers).enumerate() {
            let share = if los {
                if l == 0 {
                    self.los_power
                } else {
                    (1.0 - self.los_power) * w / scattered.max(f64::MIN_POSITIVE)
                }
            } else {
                w / powers.iter().sum::<f64>()
            };
            p.gain = C64::new(share.sqrt(), 0.0);
        }
        // a lone LOS path carries all the power
        if los && count == 1 {
            paths[0].gain = C64::new(1.0, 0.0);
        }
        paths
    }

    pub fn generate_channel<R: Rng>(&self, rng: &mut R) -> Vec<C64> {
        let paths = self.draw_paths(rng);
        superpose_paths(&self.geo, self.carrier_hz, &paths)
    }
}

/// Zero-mean complex Gaussian channels with a known block-Toeplitz
/// covariance `C0 = Q^H diag(c0) Q`: a handful of strong grid directions on
/// top of a small white floor, scaled so that `tr C0 = N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    pub tag: String,
    pub geo: UraGeometry,
    pub directions: usize,
    pub floor: f64,
    pub seed: u64,
}

impl GaussianConfig {
    /// Grid weights `c0` (length `4N`, mean one).
    pub fn weights(&self) -> Vec<f64> {
        let m = self.geo.grid_len();
        let mut rng = super::stream_rng(self.seed, super::streams::PRIOR, 0);
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < self.directions.min(m) {
            let k = rng.random_range(0..m);
            if !chosen.contains(&k) {
                chosen.push(k);
            }
        }
        let spike = (m as f64 * (1.0 - self.floor)) / chosen.len().max(1) as f64;
        let mut c = vec![self.floor; m];
        for k in chosen {
            c[k] += spike;
        }
        c
    }

    pub fn covariance(&self) -> HermitianMatrix {
        QOperator::new(self.geo)
            .covariance(&self.weights())
            .expect("floor keeps every weight positive")
    }

    /// Sampler holding the Cholesky factor of `C0`.
    pub fn sampler(&self) -> GaussianSampler {
        let chol = Cholesky::new(&self.covariance()).expect("C0 is positive definite");
        GaussianSampler { chol }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    chol: Cholesky,
}

impl GaussianSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<C64> {
        let n = self.chol.dim();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w: Vec<C64> = (0..n)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re * s, im * s)
            })
            .collect();
        let l = self.chol.factor();
        (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * w[k]).sum()).collect()
    }
}

/// A named family of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    Multipath(ScenarioConfig),
    Gaussian(GaussianConfig),
}

pub const PRESET_NAMES: [&str; 3] = ["A", "B", "G"];

impl Scenario {
    /// Shipped presets: `A` (narrow spread, few paths), `B` (wide spread,
    /// many paths) and `G` (Gaussian with known covariance).
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let geo = UraGeometry::default_array();
        let deg = PI / 180.0;
        match name {
            "A" => Some(Scenario::Multipath(ScenarioConfig {
                tag: "A".into(),
                geo,
                carrier_hz: 2.18e9,
                path_min: 4,
                path_max: 12,
                los_probability: 0.4,
                los_power: 0.5,
                azimuth_range: (-60.0 * deg, 60.0 * deg),
                elevation_range: (-20.0 * deg, -5.0 * deg),
                azimuth_spread: 3.0 * deg,
                elevation_spread: 1.5 * deg,
                delay_spread: 300e-9,
                decay_rate: 3.0,
                seed,
            })),
            "B" => Some(Scenario::Multipath(ScenarioConfig {
                tag: "B".into(),
                geo,
                carrier_hz: 2.18e9,
                path_min: 10,
                path_max: 30,
                los_probability: 0.2,
                los_power: 0.3,
                azimuth_range: (-60.0 * deg, 60.0 * deg),
                elevation_range: (-20.0 * deg, 0.0),
                azimuth_spread: 10.0 * deg,
                elevation_spread: 4.0 * deg,
                delay_spread: 600e-9,
                decay_rate: 2.0,
                seed,
            })),
            "G" => Some(Scenario::Gaussian(GaussianConfig {
                tag: "G".into(),
                geo,
                directions: 8,
                floor: 0.02,
                seed,
            })),
            _ => None,
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            Scenario::Multipath(c) => &c.tag,
            Scenario::Gaussian(c) => &c.tag,
        }
    }

    pub fn geometry(&self) -> UraGeometry {
        match self {
            Scenario::Multipath(c) => c.geo,
            Scenario::Gaussian(c) => c.geo,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Scenario::Multipath(c) => c.seed,
            Scenario::Gaussian(c) => c.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_is_all_ones() {
        let geo = UraGeometry::default_array();
        for v in steering_vector(&geo, 0.0, 0.0) {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_entries_have_unit_modulus() {
        let geo = UraGeometry::default_array();
        for (az, el) in [(0.3, -0.2), (-1.2, 0.7), (1.5, 1.5)] {
            for v in steering_vector(&geo, az, el) {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_phase_table() {
        // d_v = 1, d_h = 0.5, az = 30 deg, el = 30 deg:
        // u_v = sin(30) = 0.5, u_h = 0.5 cos(30) sin(30) = sqrt(3)/8
        let geo = UraGeometry::new(2, 2, 1.0, 0.5).unwrap();
        let a = steering_vector(&geo, PI / 6.0, PI / 6.0);
        let uh = 3f64.sqrt() / 8.0;
        let expect = [0.0, 2.0 * PI * uh, PI, PI + 2.0 * PI * uh];
        for (v, ph) in a.iter().zip(expect) {
            assert!((v - C64::from_polar(1.0, ph)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_static_path() {
        let geo = UraGeometry::default_array();
        let p = Path { gain: C64::new(1.0, 0.0), azimuth: 0.0, elevation: 0.0, delay: 0.0 };
        for v in superpose_paths(&geo, 2.18e9, &[p]) {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let fc = 2.18e9;
        let p = Path { delay: 0.5 / fc, ..p };
        for v in superpose_paths(&geo, fc, &[p]) {
            assert!((v - C64::new(-1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn path_powers_sum_to_one() {
        let Some(Scenario::Multipath(cfg)) = Scenario::preset("A", 3) else { unreachable!() };
        let mut rng = super::super::stream_rng(3, 1, 0);
        for _ in 0..200 {
            let paths = cfg.draw_paths(&mut rng);
            let total: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(paths.len() >= cfg.path_min && paths.len() <= cfg.path_max);
        }
    }

    #[test]
    fn gaussian_prior_has_trace_n() {
        let Some(Scenario::Gaussian(cfg)) = Scenario::preset("G", 1) else { unreachable!() };
        let c = cfg.covariance();
        assert!((c.trace().re - cfg.geo.n() as f64).abs() < 1e-9);
        assert!(c.is_hermitian(1e-12));
    }
}
