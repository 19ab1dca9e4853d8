//! Brownian-bridge movement model: per-device diffusion fits and occupation-time
//! densities rasterized onto the occupancy grid.

mod bmme;
mod horne;
mod occupation;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bmme::{
    bmme_conditional, bmme_increment_loglik, fit_bmme, BmmeConditional, BmmeOptions, BmmeSmoother,
};
pub use horne::{fit_sigma_horne, horne_loglik, HorneOptions};
pub use occupation::{occupation_mass, occupation_stream, OccupationMass, OccupationOptions, Quadrature};

/// Position distribution of the animal (device) at one instant: isotropic normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeMoments {
    pub mean: (f64, f64),
    /// Per-axis variance in m².
    pub var: f64,
}

/// Moments of a bridge between `z_k` at `t_k` and `z_k1` at `t_k1`, evaluated at `t`,
/// with endpoint location errors of variance `delta2`.
pub fn bridge_moments(
    z_k: (f64, f64),
    z_k1: (f64, f64),
    t_k: f64,
    t_k1: f64,
    t: f64,
    sigma2: f64,
    delta2: f64,
) -> BridgeMoments {
    debug_assert!(t_k1 > t_k && t >= t_k && t <= t_k1);
    let span = t_k1 - t_k;
    let a = (t - t_k) / span;
    BridgeMoments {
        mean: (z_k.0 + (z_k1.0 - z_k.0) * a, z_k.1 + (z_k1.1 - z_k.1) * a),
        var: bridge_variance(span, a, sigma2, delta2),
    }
}

#[inline]
pub(crate) fn bridge_variance(span: f64, a: f64, sigma2: f64, delta2: f64) -> f64 {
    span * a * (1.0 - a) * sigma2 + (1.0 - a) * (1.0 - a) * delta2 + a * a * delta2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// σ² by maximum likelihood with δ² fixed from device specs.
    HorneFixedDelta,
    /// σ² and δ² jointly under Brownian motion with measurement error.
    BmmeJoint,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::HorneFixedDelta => "horne_fixed_delta",
            FitMethod::BmmeJoint => "bmme_joint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "horne_fixed_delta" => Some(Self::HorneFixedDelta),
            "bmme_joint" => Some(Self::BmmeJoint),
            _ => None,
        }
    }
}

/// Diagnostics attached to a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    pub sigma_at_lower_bound: bool,
    pub sigma_at_upper_bound: bool,
    pub delta_at_lower_bound: bool,
    pub delta_at_upper_bound: bool,
    /// The final point of an even-length trajectory was left out of the likelihood.
    pub dropped_last_point: bool,
}

impl FitFlags {
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let pairs = [
            (self.sigma_at_lower_bound, "sigma_at_lower_bound"),
            (self.sigma_at_upper_bound, "sigma_at_upper_bound"),
            (self.delta_at_lower_bound, "delta_at_lower_bound"),
            (self.delta_at_upper_bound, "delta_at_upper_bound"),
            (self.dropped_last_point, "dropped_last_point"),
        ];
        for (on, label) in pairs {
            if on {
                out.push(label);
            }
        }
        out
    }

    fn parse(s: &str) -> Result<Self> {
        let mut f = FitFlags::default();
        for label in s.split('|').filter(|l| !l.is_empty()) {
            match label {
                "sigma_at_lower_bound" => f.sigma_at_lower_bound = true,
                "sigma_at_upper_bound" => f.sigma_at_upper_bound = true,
                "delta_at_lower_bound" => f.delta_at_lower_bound = true,
                "delta_at_upper_bound" => f.delta_at_upper_bound = true,
                "dropped_last_point" => f.dropped_last_point = true,
                other => return Err(Error::Format(format!("unknown fit flag `{other}`"))),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeFit {
    pub device_id: String,
    /// Brownian variance, m²/s.
    pub sigma2: f64,
    /// Location-error variance, m².
    pub delta2: f64,
    pub method: FitMethod,
    pub loglik: f64,
    pub n_points: usize,
    pub flags: FitFlags,
}

/// `device_id,sigma2,delta2,method,loglik,n_points,flags`, ids in order.
pub fn write_fits_csv<W: Write>(fits: &BTreeMap<String, BridgeFit>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "sigma2", "delta2", "method", "loglik", "n_points", "flags"])?;
    for f in fits.values() {
        w.write_record([
            f.device_id.as_str(),
            &f.sigma2.to_string(),
            &f.delta2.to_string(),
            f.method.as_str(),
            &f.loglik.to_string(),
            &f.n_points.to_string(),
            &f.flags.labels().join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fits_csv<R: Read>(input: R) -> Result<BTreeMap<String, BridgeFit>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("bad fit row: {rec:?}"));
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
        let fit = BridgeFit {
            device_id: rec.get(0).ok_or_else(bad)?.to_string(),
            sigma2: num(1)?,
            delta2: num(2)?,
            method: rec.get(3).and_then(FitMethod::parse).ok_or_else(bad)?,
            loglik: num(4)?,
            n_points: rec.get(5).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            flags: FitFlags::parse(rec.get(6).unwrap_or(""))?,
        };
        out.insert(fit.device_id.clone(), fit);
    }
    Ok(out)
}
