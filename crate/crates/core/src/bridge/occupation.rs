use serde::{Deserialize, Serialize};

use super::{bridge_moments, BmmeSmoother, BridgeFit, BridgeMoments, FitMethod};
use crate::error::{Error, Result};
use crate::geo::OccupancyGrid;
use crate::pings::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    Left,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupationOptions {
    /// Upper bound on the quadrature sub-interval, seconds.
    pub time_step: f64,
    pub quadrature: Quadrature,
    /// Bridges longer than this (seconds) get their variance capped.
    pub max_gap: f64,
    /// Variance cap for long gaps, m². `None` uses (patch bbox diagonal / 4)².
    pub gap_var_cap: Option<f64>,
    /// Half-width of the deposition window in standard deviations.
    pub sd_window: f64,
}

impl Default for OccupationOptions {
    fn default() -> Self {
        Self {
            time_step: 30.0,
            quadrature: Quadrature::Left,
            max_gap: 8.0 * 3600.0,
            gap_var_cap: None,
            sd_window: 8.0,
        }
    }
}

/// Expected occupation time of one device as a fraction of its observed span.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMass {
    /// Row-major, same layout as the grid labels.
    pub cells: Vec<f64>,
    /// Mass falling beyond the grid edges.
    pub off_grid: f64,
}

impl OccupationMass {
    pub fn total(&self) -> f64 {
        self.cells.iter().sum::<f64>() + self.off_grid
    }
}

#[inline]
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Deposits an isotropic normal of total `weight` onto the grid. Returns the mass
/// that falls off the grid.
fn deposit<F: FnMut(usize, f64)>(
    grid: &OccupancyGrid,
    m: BridgeMoments,
    weight: f64,
    sd_window: f64,
    scratch: &mut (Vec<f64>, Vec<f64>),
    sink: &mut F,
) -> f64 {
    let h = grid.cell_size;
    let (ox, oy) = grid.origin;
    let sd = m.var.max(0.0).sqrt();
    if sd <= 1e-9 * h {
        return match grid.cell_of(m.mean) {
            Some((c, r)) => {
                sink(r * grid.ncols + c, weight);
                0.0
            }
            None => weight,
        };
    }
    let axis = |origin: f64, n: usize, mean: f64, out: &mut Vec<f64>| -> (usize, f64) {
        out.clear();
        let lo = ((mean - sd_window * sd - origin) / h).floor().max(0.0);
        let hi = ((mean + sd_window * sd - origin) / h).ceil().min(n as f64);
        if hi <= lo {
            let full = phi((origin + n as f64 * h - mean) / sd) - phi((origin - mean) / sd);
            return (0, full.max(0.0));
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let mut prev = phi((origin + lo as f64 * h - mean) / sd);
        let mut sum = 0.0;
        for i in lo..hi {
            let next = phi((origin + (i + 1) as f64 * h - mean) / sd);
            let p = (next - prev).max(0.0);
            out.push(p);
            sum += p;
            prev = next;
        }
        (lo, sum)
    };
    let (px, py) = scratch;
    let (c0, fx) = axis(ox, grid.ncols, m.mean.0, px);
    let (r0, fy) = axis(oy, grid.nrows, m.mean.1, py);
    for (dr, &wy) in py.iter().enumerate() {
        if wy == 0.0 {
            continue;
        }
        let row = (r0 + dr) * grid.ncols + c0;
        for (dc, &wx) in px.iter().enumerate() {
            if wx != 0.0 {
                sink(row + dc, weight * wx * wy);
            }
        }
    }
    weight * (1.0 - fx * fy).max(0.0)
}

/// Streams the occupation density of `traj` onto the grid through `sink(cell, mass)`
/// and returns the off-grid mass. Deposition order is fixed, so any accumulation
/// done by the sink is deterministic.
pub fn occupation_stream<F: FnMut(usize, f64)>(
    traj: &Trajectory,
    fit: &BridgeFit,
    grid: &OccupancyGrid,
    opts: &OccupationOptions,
    mut sink: F,
) -> Result<f64> {
    let pts = &traj.points;
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "occupation mass needs at least 2 points, got {}",
            pts.len()
        )));
    }
    if !(opts.time_step > 0.0 && opts.time_step.is_finite()) {
        return Err(Error::Config(format!("time_step must be positive, got {}", opts.time_step)));
    }
    let total = pts[pts.len() - 1].t - pts[0].t;
    if !(total > 0.0) {
        return Err(Error::InsufficientData("trajectory spans zero time".into()));
    }
    let smoother = match fit.method {
        FitMethod::BmmeJoint => Some(BmmeSmoother::new(pts, fit.sigma2, fit.delta2)?),
        FitMethod::HorneFixedDelta => None,
    };
    let cap = opts
        .gap_var_cap
        .unwrap_or_else(|| (grid.patch_bbox().diagonal() / 4.0).powi(2));
    let offset = match opts.quadrature {
        Quadrature::Left => 0.0,
        Quadrature::Midpoint => 0.5,
    };
    let mut scratch = (Vec::new(), Vec::new());
    let mut off = 0.0;
    for k in 0..pts.len() - 1 {
        let (a, b) = (pts[k], pts[k + 1]);
        let span = b.t - a.t;
        let steps = (span / opts.time_step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let weight = h / total;
        let long_gap = span > opts.max_gap;
        for j in 0..steps {
            let frac = (j as f64 + offset) / steps as f64;
            let mut m = match &smoother {
                Some(s) => s.segment_moments(k, frac),
                None => bridge_moments(
                    (a.x, a.y),
                    (b.x, b.y),
                    a.t,
                    b.t,
                    a.t + frac * span,
                    fit.sigma2,
                    fit.delta2,
                ),
            };
            if long_gap {
                m.var = m.var.min(cap);
            }
            off += deposit(grid, m, weight, opts.sd_window, &mut scratch, &mut sink);
        }
    }
    Ok(off)
}

/// Occupation-time mass of one trajectory on every grid cell: a time-weighted
/// mixture of the bridge position laws, integrated exactly over each cell.
pub fn occupation_mass(
    traj: &Trajectory,
    fit: &BridgeFit,
    grid: &OccupancyGrid,
    opts: &OccupationOptions,
) -> Result<OccupationMass> {
    let mut cells = vec![0.0; grid.len()];
    let off_grid = occupation_stream(traj, fit, grid, opts, |i, w| cells[i] += w)?;
    Ok(OccupationMass { cells, off_grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::FitFlags;
    use crate::geo::{Patch, PatchMap};
    use crate::pings::TrackPoint;

    fn grid(cell: f64) -> OccupancyGrid {
        let sq = |x0: f64, y0: f64, s: f64| vec![vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]];
        let map = PatchMap::new(vec![
            Patch::new("A", sq(0.0, 0.0, 1000.0), 10).unwrap(),
            Patch::new("B", sq(1000.0, 0.0, 1000.0), 10).unwrap(),
        ])
        .unwrap();
        OccupancyGrid::build(&map, cell, 500.0, 10_000_000).unwrap()
    }

    fn fit(sigma2: f64, delta2: f64, method: FitMethod) -> BridgeFit {
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

    fn traj(raw: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory {
            device_id: "d".into(),
            t0_local: Default::default(),
            points: raw.iter().map(|&(t, x, y)| TrackPoint { t, x, y }).collect(),
        }
    }

    #[test]
    fn stationary_point_mass() {
        let g = grid(10.0);
        let t = traj(&[(0.0, 512.0, 498.0), (600.0, 512.0, 498.0)]);
        let m = occupation_mass(&t, &fit(1e-12, 0.0, FitMethod::HorneFixedDelta), &g, &Default::default()).unwrap();
        let (c, r) = g.cell_of((512.0, 498.0)).unwrap();
        assert!(m.cells[r * g.ncols + c] >= 0.999);
    }

    #[test]
    fn total_mass_is_one() {
        let g = grid(25.0);
        let t = traj(&[(0.0, 100.0, 100.0), (900.0, 1500.0, 700.0), (1300.0, 1800.0, 300.0), (4000.0, 200.0, 900.0)]);
        for method in [FitMethod::HorneFixedDelta, FitMethod::BmmeJoint] {
            let m = occupation_mass(&t, &fit(5.0, 100.0, method), &g, &Default::default()).unwrap();
            assert!((m.total() - 1.0).abs() < 1e-9, "{}", m.total());
        }
    }

    #[test]
    fn mass_beyond_grid_is_reported() {
        let g = grid(50.0);
        let t = traj(&[(0.0, -5000.0, -5000.0), (60.0, -5000.0, -5000.0)]);
        let m = occupation_mass(&t, &fit(1.0, 100.0, FitMethod::HorneFixedDelta), &g, &Default::default()).unwrap();
        assert!(m.off_grid > 0.999_999);
        assert!((m.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn long_gap_variance_is_capped() {
        let g = grid(50.0);
        let t = traj(&[(0.0, 500.0, 500.0), (86_400.0, 1500.0, 500.0)]);
        let wide = fit(100.0, 0.0, FitMethod::HorneFixedDelta);
        let capped = occupation_mass(&t, &wide, &g, &Default::default()).unwrap();
        let opts = OccupationOptions { max_gap: f64::INFINITY, ..Default::default() };
        let free = occupation_mass(&t, &wide, &g, &opts).unwrap();
        assert!(capped.off_grid < free.off_grid);
    }

    #[test]
    fn short_trajectory_is_an_error() {
        let g = grid(50.0);
        let t = traj(&[(0.0, 0.0, 0.0)]);
        assert!(occupation_mass(&t, &fit(1.0, 1.0, FitMethod::HorneFixedDelta), &g, &Default::default()).is_err());
    }

    #[test]
    fn cdf_matches_known_values() {
        assert!((phi(0.0) - 0.5).abs() < 1e-16);
        assert!((phi(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!(phi(-40.0) >= 0.0 && phi(-40.0) < 1e-300);
    }
}
