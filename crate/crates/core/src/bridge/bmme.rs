//! Brownian motion observed with iid Gaussian location error.
//!
//! Times are rebased to the first fix and positions centred on it, so the latent
//! path starts at the origin: `Z_i = B(t_i) + ξ_i` with `B(0) = 0`.

use std::f64::consts::PI;

use super::{BridgeFit, BridgeMoments, FitFlags, FitMethod};
use crate::error::{Error, Result};
use crate::optimize::maximize_bounded;
use crate::pings::{TrackPoint, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmmeOptions {
    pub sigma2_bounds: (f64, f64),
    pub delta2_bounds: (f64, f64),
    /// Convergence tolerance on the log parameters.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for BmmeOptions {
    fn default() -> Self {
        Self {
            sigma2_bounds: (1e-8, 1e4),
            delta2_bounds: (1e-10, 1e6),
            tol: 1e-6,
            max_outer: 200,
            max_inner: 500,
        }
    }
}

/// Per-axis Gaussian log-likelihood of one coordinate's increments under the
/// tridiagonal covariance `Var = σ²Δt_i + 2δ²`, `Cov(i, i±1) = -δ²`.
fn axis_increment_loglik(increments: &[f64], dts: &[f64], sigma2: f64, delta2: f64) -> f64 {
    // LDLᵀ of the symmetric tridiagonal matrix.
    let off = -delta2;
    let mut ll = 0.0;
    let mut d_prev = 0.0;
    let mut y_prev = 0.0;
    for (i, (&q, &dt)) in increments.iter().zip(dts).enumerate() {
        let diag = sigma2 * dt + 2.0 * delta2;
        let (d, y) = if i == 0 {
            (diag, q)
        } else {
            let l = off / d_prev;
            (diag - l * off, q - l * y_prev)
        };
        ll -= 0.5 * ((2.0 * PI * d).ln() + y * y / d);
        d_prev = d;
        y_prev = y;
    }
    ll
}

/// Log-likelihood of `(σ², δ²)` from the observed increments of both coordinates.
pub fn bmme_increment_loglik(points: &[TrackPoint], sigma2: f64, delta2: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "increment likelihood needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dts: Vec<f64> = points.windows(2).map(|w| w[1].t - w[0].t).collect();
    let dx: Vec<f64> = points.windows(2).map(|w| w[1].x - w[0].x).collect();
    let dy: Vec<f64> = points.windows(2).map(|w| w[1].y - w[0].y).collect();
    Ok(axis_increment_loglik(&dx, &dts, sigma2, delta2) + axis_increment_loglik(&dy, &dts, sigma2, delta2))
}

/// Joint maximum-likelihood `(σ², δ²)` by alternating bounded scalar searches
/// over `ln σ²` and `ln δ²`.
pub fn fit_bmme(traj: &Trajectory, opts: &BmmeOptions) -> Result<BridgeFit> {
    let pts = &traj.points;
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "joint fit needs at least 4 points, got {}",
            pts.len()
        )));
    }
    let (s_lo, s_hi) = (opts.sigma2_bounds.0.ln(), opts.sigma2_bounds.1.ln());
    let (d_lo, d_hi) = (opts.delta2_bounds.0.ln(), opts.delta2_bounds.1.ln());
    let ll = |s: f64, d: f64| bmme_increment_loglik(pts, s.exp(), d.exp()).unwrap_or(f64::NEG_INFINITY);

    // Moment starting values: mean squared displacement per unit time, and the
    // negative lag-one autocovariance of increments for the noise.
    let total_t = pts[pts.len() - 1].t - pts[0].t;
    let msd: f64 = pts
        .windows(2)
        .map(|w| (w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2))
        .sum::<f64>()
        / (2.0 * total_t);
    let lag1: f64 = pts
        .windows(3)
        .map(|w| {
            (w[1].x - w[0].x) * (w[2].x - w[1].x) + (w[1].y - w[0].y) * (w[2].y - w[1].y)
        })
        .sum::<f64>()
        / (2.0 * (pts.len() - 2) as f64);
    let mut s = msd.max(opts.sigma2_bounds.0).ln().clamp(s_lo, s_hi);
    let mut d = (-lag1).max(1.0).ln().clamp(d_lo, d_hi);
    let mut current = ll(s, d);

    for iteration in 1..=opts.max_outer {
        let (s_prev, d_prev) = (s, d);
        let rs = maximize_bounded(|u| ll(u, d), s_lo, s_hi, opts.tol * 0.1, opts.max_inner);
        if rs.fx >= current {
            s = rs.x;
            current = rs.fx;
        }
        let rd = maximize_bounded(|u| ll(s, u), d_lo, d_hi, opts.tol * 0.1, opts.max_inner);
        if rd.fx >= current {
            d = rd.x;
            current = rd.fx;
        }
        // Extrapolate along the last outer move; coordinate ascent crawls along
        // the ridge between the two variances otherwise.
        let (ms, md) = (s - s_prev, d - d_prev);
        if ms != 0.0 || md != 0.0 {
            let line = |h: f64| ll((s + h * ms).clamp(s_lo, s_hi), (d + h * md).clamp(d_lo, d_hi));
            let r = maximize_bounded(line, 0.0, 50.0, opts.tol * 0.1, opts.max_inner);
            if r.fx > current {
                s = (s + r.x * ms).clamp(s_lo, s_hi);
                d = (d + r.x * md).clamp(d_lo, d_hi);
                current = r.fx;
            }
        }
        if (s - s_prev).abs() < opts.tol && (d - d_prev).abs() < opts.tol {
            let edge = 10.0 * opts.tol;
            return Ok(BridgeFit {
                device_id: traj.device_id.clone(),
                sigma2: s.exp(),
                delta2: d.exp(),
                method: FitMethod::BmmeJoint,
                loglik: current,
                n_points: pts.len(),
                flags: FitFlags {
                    sigma_at_lower_bound: s - s_lo <= edge,
                    sigma_at_upper_bound: s_hi - s <= edge,
                    delta_at_lower_bound: d - d_lo <= edge,
                    delta_at_upper_bound: d_hi - d <= edge,
                    dropped_last_point: false,
                },
            });
        }
        if iteration == opts.max_outer {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_outer,
        sigma2: s.exp(),
        delta2: d.exp(),
        loglik: current,
    })
}

/// Conditional law of the latent position, plus whether the observation
/// covariance needed jitter to factorize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmmeConditional {
    pub moments: BridgeMoments,
    pub jittered: bool,
}

fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return false;
        }
        let l = diag.sqrt();
        a[j * n + j] = l;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / l;
        }
    }
    true
}

fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// `Pr(B_t | Z)` by direct Gaussian conditioning on all fixes.
///
/// Fixes with zero variance (the first fix when `δ² = 0`) carry no information
/// about the path and are left out of the conditioning set. If the remaining
/// covariance is still not positive definite it is regularized with a diagonal
/// jitter of `1e-9 · trace / n`.
pub fn bmme_conditional(points: &[TrackPoint], t: f64, sigma2: f64, delta2: f64) -> Result<BmmeConditional> {
    let Some(first) = points.first() else {
        return Err(Error::InsufficientData("no points to condition on".into()));
    };
    let last = points[points.len() - 1];
    if t < first.t || t > last.t {
        return Err(Error::InsufficientData(format!(
            "t={t} outside observed span [{}, {}]",
            first.t, last.t
        )));
    }
    let tau = t - first.t;
    let obs: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| (p.t - first.t, p.x - first.x, p.y - first.y))
        .filter(|(ti, _, _)| sigma2 * ti + delta2 > 0.0)
        .collect();
    let n = obs.len();
    if n == 0 {
        return Ok(BmmeConditional {
            moments: BridgeMoments { mean: (first.x, first.y), var: sigma2 * tau },
            jittered: false,
        });
    }
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for s in 0..n {
            cov[i * n + s] = sigma2 * obs[i].0.min(obs[s].0) + if i == s { delta2 } else { 0.0 };
        }
    }
    let mut l = cov.clone();
    let mut jittered = false;
    if !cholesky_in_place(&mut l, n) {
        let trace: f64 = (0..n).map(|i| cov[i * n + i]).sum();
        let jitter = 1e-9 * trace / n as f64;
        l = cov;
        for i in 0..n {
            l[i * n + i] += jitter;
        }
        if !cholesky_in_place(&mut l, n) {
            return Err(Error::Invariant("observation covariance is not positive definite".into()));
        }
        jittered = true;
    }
    // With L w = Σ12ᵀ and L v = Z: mean = wᵀv, reduction = wᵀw.
    let mut w: Vec<f64> = obs.iter().map(|o| sigma2 * tau.min(o.0)).collect();
    let mut vx: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let mut vy: Vec<f64> = obs.iter().map(|o| o.2).collect();
    forward_solve(&l, n, &mut w);
    forward_solve(&l, n, &mut vx);
    forward_solve(&l, n, &mut vy);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let var = (sigma2 * tau - dot(&w, &w)).max(0.0);
    Ok(BmmeConditional {
        moments: BridgeMoments {
            mean: (first.x + dot(&w, &vx), first.y + dot(&w, &vy)),
            var,
        },
        jittered,
    })
}

/// Linear-time equivalent of [`bmme_conditional`] for many query times:
/// a Kalman filter and RTS smoother over the fixes, then a Brownian bridge
/// between the smoothed states bracketing each query.
#[derive(Debug, Clone)]
pub struct BmmeSmoother {
    times: Vec<f64>,
    mean_x: Vec<f64>,
    mean_y: Vec<f64>,
    var: Vec<f64>,
    /// Covariance between consecutive smoothed states.
    cross: Vec<f64>,
    sigma2: f64,
}

impl BmmeSmoother {
    pub fn new(points: &[TrackPoint], sigma2: f64, delta2: f64) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InsufficientData("no points to smooth".into()));
        }
        let (t0, x0, y0) = (points[0].t, points[0].x, points[0].y);
        let mut pred_var = vec![0.0; n];
        let mut pred_x = vec![0.0; n];
        let mut pred_y = vec![0.0; n];
        let mut filt_var = vec![0.0; n];
        let mut filt_x = vec![0.0; n];
        let mut filt_y = vec![0.0; n];
        for i in 0..n {
            if i > 0 {
                let dt = points[i].t - points[i - 1].t;
                pred_var[i] = filt_var[i - 1] + sigma2 * dt;
                pred_x[i] = filt_x[i - 1];
                pred_y[i] = filt_y[i - 1];
            }
            let innov = pred_var[i] + delta2;
            if innov > 0.0 {
                let gain = pred_var[i] / innov;
                filt_x[i] = pred_x[i] + gain * (points[i].x - x0 - pred_x[i]);
                filt_y[i] = pred_y[i] + gain * (points[i].y - y0 - pred_y[i]);
                filt_var[i] = pred_var[i] * delta2 / innov;
            } else {
                filt_x[i] = pred_x[i];
                filt_y[i] = pred_y[i];
                filt_var[i] = pred_var[i];
            }
        }
        let mut mean_x = filt_x.clone();
        let mut mean_y = filt_y.clone();
        let mut var = filt_var.clone();
        let mut cross = vec![0.0; n.saturating_sub(1)];
        for i in (0..n.saturating_sub(1)).rev() {
            let g = if pred_var[i + 1] > 0.0 { filt_var[i] / pred_var[i + 1] } else { 0.0 };
            mean_x[i] = filt_x[i] + g * (mean_x[i + 1] - pred_x[i + 1]);
            mean_y[i] = filt_y[i] + g * (mean_y[i + 1] - pred_y[i + 1]);
            var[i] = (filt_var[i] + g * g * (var[i + 1] - pred_var[i + 1])).max(0.0);
            cross[i] = g * var[i + 1];
        }
        for m in mean_x.iter_mut() {
            *m += x0;
        }
        for m in mean_y.iter_mut() {
            *m += y0;
        }
        Ok(Self {
            times: points.iter().map(|p| p.t - t0).collect(),
            mean_x,
            mean_y,
            var,
            cross,
            sigma2,
        })
    }

    /// Moments on the bridge segment `k` (between fixes `k` and `k+1`) at
    /// relative position `a ∈ [0, 1]`.
    pub fn segment_moments(&self, k: usize, a: f64) -> BridgeMoments {
        if k + 1 >= self.times.len() {
            let last = self.times.len() - 1;
            return BridgeMoments { mean: (self.mean_x[last], self.mean_y[last]), var: self.var[last] };
        }
        let span = self.times[k + 1] - self.times[k];
        let b = 1.0 - a;
        let var = self.sigma2 * span * a * b
            + b * b * self.var[k]
            + a * a * self.var[k + 1]
            + 2.0 * a * b * self.cross[k];
        BridgeMoments {
            mean: (
                b * self.mean_x[k] + a * self.mean_x[k + 1],
                b * self.mean_y[k] + a * self.mean_y[k + 1],
            ),
            var: var.max(0.0),
        }
    }

    pub fn n_segments(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    /// Moments at `t_since_first` seconds after the first fix.
    pub fn moments_at(&self, t_since_first: f64) -> BridgeMoments {
        let n = self.times.len();
        if n == 1 || t_since_first <= 0.0 {
            return self.segment_moments(0, 0.0);
        }
        let k = match self.times.binary_search_by(|v| v.total_cmp(&t_since_first)) {
            Ok(i) => i.min(n - 2),
            Err(i) => (i - 1).min(n - 2),
        };
        let a = ((t_since_first - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        self.segment_moments(k, a)
    }
}
