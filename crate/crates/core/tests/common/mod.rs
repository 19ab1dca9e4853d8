#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use resmob::bridge::{BridgeFit, FitFlags, FitMethod};
use resmob::geo::{Patch, PatchMap};
use resmob::pings::{TrackPoint, Trajectory};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn traj(points: Vec<TrackPoint>) -> Trajectory {
    Trajectory { device_id: "d".into(), t0_local: Default::default(), points }
}

pub fn random_track(rng: &mut ChaCha8Rng, n: usize, sigma2: f64, delta2: f64) -> Vec<TrackPoint> {
    let (mut t, mut x, mut y) = (rng.random_range(0.0..1000.0), 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let dt = rng.random_range(5.0..300.0);
            t += dt;
            x += (sigma2 * dt).sqrt() * normal(rng);
            y += (sigma2 * dt).sqrt() * normal(rng);
        }
        out.push(TrackPoint {
            t,
            x: 400_000.0 + x + delta2.sqrt() * normal(rng),
            y: 3_200_000.0 + y + delta2.sqrt() * normal(rng),
        });
    }
    out
}

pub fn regular_track(rng: &mut ChaCha8Rng, n: usize, dt: f64, sigma2: f64, delta2: f64) -> Vec<TrackPoint> {
    let (mut x, mut y) = (0.0, 0.0);
    (0..n)
        .map(|i| {
            if i > 0 {
                x += (sigma2 * dt).sqrt() * normal(rng);
                y += (sigma2 * dt).sqrt() * normal(rng);
            }
            TrackPoint { t: i as f64 * dt, x: x + delta2.sqrt() * normal(rng), y: y + delta2.sqrt() * normal(rng) }
        })
        .collect()
}

pub fn log_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// Log-density of the increments `D·Z` under `D Σ_Z Dᵀ`, with `Σ_Z` assembled
/// entry by entry as `σ² min(t_i, t_s) + δ²·[i = s]`.
pub fn dense_increment_loglik(points: &[TrackPoint], sigma2: f64, delta2: f64) -> f64 {
    let n = points.len();
    let t0 = points[0].t;
    let sigma_z = DMatrix::from_fn(n, n, |i, s| {
        sigma2 * (points[i].t - t0).min(points[s].t - t0) + if i == s { delta2 } else { 0.0 }
    });
    let d = DMatrix::from_fn(n - 1, n, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    });
    let cov = &d * sigma_z * d.transpose();
    let chol = cov.clone().cholesky().expect("positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut total = 0.0;
    for coord in [0, 1] {
        let z = DVector::from_fn(n, |i, _| if coord == 0 { points[i].x } else { points[i].y });
        let q = &d * z;
        let sol = chol.solve(&q);
        total += -0.5 * ((n - 1) as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + q.dot(&sol));
    }
    total
}

pub fn square_city() -> PatchMap {
    let sq = |x0: f64, y0: f64| vec![vec![(x0, y0), (x0 + 1000.0, y0), (x0 + 1000.0, y0 + 1000.0), (x0, y0 + 1000.0)]];
    PatchMap::new(vec![
        Patch::new("A", sq(0.0, 0.0), 100).unwrap(),
        Patch::new("B", sq(1000.0, 0.0), 100).unwrap(),
        Patch::new("C", sq(0.0, 1000.0), 100).unwrap(),
        Patch::new("D", sq(1000.0, 1000.0), 100).unwrap(),
    ])
    .unwrap()
}

pub fn fit(sigma2: f64, delta2: f64, method: FitMethod) -> BridgeFit {
    BridgeFit {
        device_id: "d".into(),
        sigma2,
        delta2,
        method,
        loglik: 0.0,
        n_points: 0,
        flags: FitFlags::default(),
    }
}
