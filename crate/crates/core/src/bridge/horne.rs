use std::f64::consts::PI;

use super::{bridge_variance, BridgeFit, FitFlags, FitMethod};
use crate::error::{Error, Result};
use crate::optimize::maximize_bounded;
use crate::pings::{TrackPoint, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorneOptions {
    /// Search bracket for σ², m²/s.
    pub sigma2_bounds: (f64, f64),
    /// Convergence tolerance on ln σ².
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HorneOptions {
    fn default() -> Self {
        Self {
            sigma2_bounds: (1e-8, 1e4),
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Log-likelihood of σ² from the odd/even split: every second fix is scored
/// against the bridge spanning its two neighbours, so the bridges never overlap.
///
/// An even number of points drops the last one.
pub fn horne_loglik(points: &[TrackPoint], sigma2: f64, delta2: f64) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "bridge likelihood needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = if points.len() % 2 == 0 { points.len() - 1 } else { points.len() };
    let mut ll = 0.0;
    for k in (1..n - 1).step_by(2) {
        let (a, m, b) = (points[k - 1], points[k], points[k + 1]);
        let span = b.t - a.t;
        let frac = (m.t - a.t) / span;
        let var = bridge_variance(span, frac, sigma2, delta2);
        let dx = m.x - (a.x + (b.x - a.x) * frac);
        let dy = m.y - (a.y + (b.y - a.y) * frac);
        ll += -(2.0 * PI * var).ln() - (dx * dx + dy * dy) / (2.0 * var);
    }
    Ok(ll)
}

/// Maximum-likelihood σ² with δ² held fixed, searched over ln σ².
pub fn fit_sigma_horne(traj: &Trajectory, delta2: f64, opts: &HorneOptions) -> Result<BridgeFit> {
    if !(delta2 >= 0.0 && delta2.is_finite()) {
        return Err(Error::Config(format!("delta2 must be finite and nonnegative, got {delta2}")));
    }
    // surfaces the insufficient-data error before optimizing
    horne_loglik(&traj.points, 1.0, delta2)?;
    let (lo, hi) = (opts.sigma2_bounds.0.ln(), opts.sigma2_bounds.1.ln());
    let best = maximize_bounded(
        |u| horne_loglik(&traj.points, u.exp(), delta2).unwrap_or(f64::NEG_INFINITY),
        lo,
        hi,
        opts.tol,
        opts.max_iter,
    );
    let edge = 10.0 * opts.tol;
    Ok(BridgeFit {
        device_id: traj.device_id.clone(),
        sigma2: best.x.exp(),
        delta2,
        method: FitMethod::HorneFixedDelta,
        loglik: best.fx,
        n_points: traj.points.len(),
        flags: FitFlags {
            sigma_at_lower_bound: best.x - lo <= edge,
            sigma_at_upper_bound: hi - best.x <= edge,
            dropped_last_point: traj.points.len() % 2 == 0,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn traj(points: Vec<TrackPoint>) -> Trajectory {
        Trajectory {
            device_id: "t".into(),
            t0_local: NaiveDateTime::default(),
            points,
        }
    }

    fn simulate_bm(seed: u64, n: usize, dt: f64, sigma2: f64) -> Vec<TrackPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (sigma2 * dt).sqrt();
        let (mut x, mut y) = (0.0, 0.0);
        (0..n)
            .map(|i| {
                if i > 0 {
                    x += sd * normal(&mut rng);
                    y += sd * normal(&mut rng);
                }
                TrackPoint { t: i as f64 * dt, x, y }
            })
            .collect()
    }

    #[test]
    fn points_on_the_bridge_mean() {
        let pts = vec![
            TrackPoint { t: 0.0, x: 0.0, y: 0.0 },
            TrackPoint { t: 300.0, x: 50.0, y: 0.0 },
            TrackPoint { t: 600.0, x: 100.0, y: 0.0 },
        ];
        let (s2, d2) = (1.0, 100.0);
        let v = 600.0 * 0.25 * s2 + 0.25 * d2 + 0.25 * d2;
        let ll = horne_loglik(&pts, s2, d2).unwrap();
        assert!((ll - (-(2.0 * PI * v).ln())).abs() < 1e-12);
    }

    #[test]
    fn needs_three_points() {
        let pts = vec![TrackPoint { t: 0.0, x: 0.0, y: 0.0 }, TrackPoint { t: 1.0, x: 0.0, y: 0.0 }];
        assert!(matches!(horne_loglik(&pts, 1.0, 0.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn even_length_ignores_final_point() {
        let mut pts = simulate_bm(3, 9, 60.0, 4.0);
        let odd = horne_loglik(&pts, 4.0, 1.0).unwrap();
        pts.push(TrackPoint { t: 1e6, x: 1e6, y: -1e6 });
        assert_eq!(horne_loglik(&pts, 4.0, 1.0).unwrap(), odd);
    }

    #[test]
    fn true_sigma_beats_neighbours() {
        let pts = simulate_bm(11, 201, 60.0, 4.0);
        let at = |s| horne_loglik(&pts, s, 0.0).unwrap();
        assert!(at(4.0) > at(1.0));
        assert!(at(4.0) > at(16.0));
    }

    #[test]
    fn stationary_fixes_pin_sigma_to_lower_bound() {
        let pts: Vec<TrackPoint> = (0..21).map(|i| TrackPoint { t: i as f64 * 60.0, x: 5.0, y: 5.0 }).collect();
        let fit = fit_sigma_horne(&traj(pts), 100.0, &HorneOptions::default()).unwrap();
        assert!(fit.flags.sigma_at_lower_bound);
        assert!((fit.sigma2 / 1e-8 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn optimum_matches_grid_search() {
        let pts = simulate_bm(5, 301, 45.0, 2.0);
        let fit = fit_sigma_horne(&traj(pts.clone()), 25.0, &HorneOptions::default()).unwrap();
        let (lo, hi) = (1e-8f64.ln(), 1e4f64.ln());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..2000 {
            let u = lo + (hi - lo) * i as f64 / 1999.0;
            let ll = horne_loglik(&pts, u.exp(), 25.0).unwrap();
            if ll > best.0 {
                best = (ll, u);
            }
        }
        // refine the grid optimum with a finer local grid before comparing
        let step = (hi - lo) / 1999.0;
        let mut fine = best;
        for i in 0..=4000 {
            let u = best.1 - step + 2.0 * step * i as f64 / 4000.0;
            let ll = horne_loglik(&pts, u.exp(), 25.0).unwrap();
            if ll > fine.0 {
                fine = (ll, u);
            }
        }
        let rel = (fit.sigma2 - fine.1.exp()).abs() / fine.1.exp();
        assert!(rel < 1e-3, "brent {} grid {}", fit.sigma2, fine.1.exp());
        assert!(fit.loglik >= fine.0 - 1e-9);
    }
}
