use std::f64::consts::PI;

use ce_vae_core::channel::{
    add_awgn, generate_samples, generate_split, second_moment, steering_vector, stream_rng, streams, Scenario,
    ScenarioConfig,
};
use ce_vae_core::linalg::{HermitianMatrix, UraGeometry, C64};

fn single_cluster(geo: UraGeometry) -> ScenarioConfig {
    let deg = PI / 180.0;
    ScenarioConfig {
        tag: "one-ring".into(),
        geo,
        carrier_hz: 2.18e9,
        path_min: 1,
        path_max: 1,
        los_probability: 0.0,
        los_power: 0.0,
        azimuth_range: (20.0 * deg, 20.0 * deg),
        elevation_range: (-10.0 * deg, -10.0 * deg),
        azimuth_spread: 5.0 * deg,
        elevation_spread: 2.0 * deg,
        delay_spread: 100e-9,
        decay_rate: 1.0,
        seed: 5,
    }
}

/// `E[a a^H]` for Gaussian azimuth/elevation offsets, by a dense tensor
/// grid over +-6 standard deviations with normal-density weights.
fn quadrature_covariance(cfg: &ScenarioConfig, points: usize) -> HermitianMatrix {
    let n = cfg.geo.n();
    let mut out = HermitianMatrix::zeros(n);
    let nodes: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let x = -6.0 + 12.0 * k as f64 / (points - 1) as f64;
            (x, (-0.5 * x * x).exp())
        })
        .collect();
    let total: f64 = nodes.iter().map(|n| n.1).sum::<f64>().powi(2);
    for &(xa, wa) in &nodes {
        for &(xe, we) in &nodes {
            let az = cfg.azimuth_range.0 + cfg.azimuth_spread * xa;
            let el = cfg.elevation_range.0 + cfg.elevation_spread * xe;
            let a = steering_vector(&cfg.geo, az, el);
            out.add_outer(&a, wa * we / total);
        }
    }
    out
}

fn off_block_diagonal(c: &HermitianMatrix, block: usize) -> Vec<C64> {
    let n = c.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i / block != j / block {
                out.push(c.get(i, j));
            }
        }
    }
    out
}

#[test]
fn single_cluster_covariance_matches_quadrature() {
    let geo = UraGeometry::default_array();
    let cfg = single_cluster(geo);
    let samples = generate_samples(&Scenario::Multipath(cfg.clone()), streams::TRAIN, 0, 50_000).unwrap();
    let empirical = second_moment(&samples);
    let analytic = quadrature_covariance(&cfg, 241);

    let full = empirical.frobenius_distance(&analytic) / analytic.frobenius_norm();
    assert!(full < 0.02, "full relative error {full}");

    let e = off_block_diagonal(&empirical, geo.nh);
    let a = off_block_diagonal(&analytic, geo.nh);
    let num: f64 = e.iter().zip(&a).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    assert!(num / den < 0.02, "off-block relative error {}", num / den);
}

#[test]
fn awgn_power_matches_variance() {
    let h = vec![C64::new(0.0, 0.0); 64];
    for snr in [0.0, 7.0, -5.0] {
        let mut rng = stream_rng(42, streams::EVAL_NOISE, 0);
        let mut acc = 0.0;
        let draws = 100_000 / 64 * 64;
        for _ in 0..draws / 64 {
            let (y, _) = add_awgn(&h, snr, &mut rng);
            acc += y.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        let var = 10f64.powf(-snr / 10.0);
        let est = acc / draws as f64;
        assert!((est / var - 1.0).abs() < 0.01, "snr {snr}: {est} vs {var}");
    }
}

#[test]
fn presets_are_normalized_finite_and_nondegenerate() {
    for name in ["A", "B", "G"] {
        let scenario = Scenario::preset(name, 11).unwrap();
        let [train, val, test] = generate_split(&scenario, 400, 50, 50).unwrap();
        for ds in [&train, &val, &test] {
            assert!((ds.mean_energy() - 1.0).abs() < 1e-6);
            for h in &ds.samples {
                assert!(h.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
                assert!(h.iter().map(|v| v.norm_sqr()).sum::<f64>() > 1e-6);
            }
        }
        assert_ne!(train.samples[0], val.samples[0]);
        assert_ne!(val.samples[0], test.samples[0]);
    }
}

#[test]
fn scenarios_a_and_b_have_distinct_covariances() {
    let a = Scenario::preset("A", 3).unwrap();
    let b = Scenario::preset("B", 3).unwrap();
    let [ta, _, _] = generate_split(&a, 5000, 0, 0).unwrap();
    let [tb, _, _] = generate_split(&b, 5000, 0, 0).unwrap();
    let ca = second_moment(&ta.samples);
    let cb = second_moment(&tb.samples);
    let d = ca.frobenius_distance(&cb) / ca.frobenius_norm();
    assert!(d > 0.1, "relative covariance distance {d}");
}

#[test]
fn generation_is_seed_deterministic() {
    let s = Scenario::preset("A", 9).unwrap();
    let x = generate_samples(&s, streams::TEST, 10, 5).unwrap();
    let y = generate_samples(&s, streams::TEST, 0, 15).unwrap();
    assert_eq!(x[..], y[10..]);
}
