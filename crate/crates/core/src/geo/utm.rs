//! UTM forward/inverse on WGS84 using the Krüger n-series (6th order).
//!
//! Northern hemisphere only: false northing is always 0.

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;

/// Largest |lat| accepted by the projection.
pub const MAX_ABS_LAT: f64 = 84.0;

struct Series {
    a_hat: f64,
    e: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn series() -> &'static Series {
    use std::sync::OnceLock;
    static SERIES: OnceLock<Series> = OnceLock::new();
    SERIES.get_or_init(|| {
        let n = WGS84_F / (2.0 - WGS84_F);
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let a_hat = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let e = (WGS84_F * (2.0 - WGS84_F)).sqrt();
        let alpha = [
            n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5
                + 7891.0 / 37800.0 * n6,
            13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
                - 1983433.0 / 1935360.0 * n6,
            61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5
                + 167603.0 / 181440.0 * n6,
            49561.0 / 161280.0 * n4 - 179.0 / 168.0 * n5 + 6601661.0 / 7257600.0 * n6,
            34729.0 / 80640.0 * n5 - 3418889.0 / 1995840.0 * n6,
            212378941.0 / 319334400.0 * n6,
        ];
        let beta = [
            n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 - 81.0 / 512.0 * n5
                + 96199.0 / 604800.0 * n6,
            1.0 / 48.0 * n2 + 1.0 / 15.0 * n3 - 437.0 / 1440.0 * n4 + 46.0 / 105.0 * n5
                - 1118711.0 / 3870720.0 * n6,
            17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 + 5569.0 / 90720.0 * n6,
            4397.0 / 161280.0 * n4 - 11.0 / 504.0 * n5 - 830251.0 / 7257600.0 * n6,
            4583.0 / 161280.0 * n5 - 108847.0 / 3991680.0 * n6,
            20648693.0 / 638668800.0 * n6,
        ];
        Series {
            a_hat,
            e,
            alpha,
            beta,
        }
    })
}

/// Central meridian of a UTM zone, in degrees.
pub fn central_meridian(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

fn check_zone(zone: u8, lat: f64, lon: f64) -> Result<()> {
    if !(1..=60).contains(&zone) {
        return Err(Error::Domain { lat, lon, zone });
    }
    Ok(())
}

fn conformal_tangent(tau: f64, e: f64) -> f64 {
    let tau1 = tau.hypot(1.0);
    let sig = (e * (e * tau / tau1).atanh()).sinh();
    tau * sig.hypot(1.0) - sig * tau1
}

/// Projects geodetic `(lat, lon)` in degrees to UTM `(easting, northing)` in meters.
pub fn latlon_to_utm(lat: f64, lon: f64, zone: u8) -> Result<(f64, f64)> {
    check_zone(zone, lat, lon)?;
    if !lat.is_finite() || !lon.is_finite() || lat.abs() >= MAX_ABS_LAT || lon.abs() > 180.0 {
        return Err(Error::Domain { lat, lon, zone });
    }
    let s = series();
    let phi = lat.to_radians();
    let mut dlam = lon - central_meridian(zone);
    if dlam > 180.0 {
        dlam -= 360.0;
    } else if dlam < -180.0 {
        dlam += 360.0;
    }
    let dlam = dlam.to_radians();

    let tau_p = conformal_tangent(phi.tan(), s.e);
    let xi_p = tau_p.atan2(dlam.cos());
    let eta_p = (dlam.sin() / tau_p.hypot(dlam.cos())).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    Ok((
        FALSE_EASTING + K0 * s.a_hat * eta,
        K0 * s.a_hat * xi,
    ))
}

/// Inverse of [`latlon_to_utm`]: UTM meters back to `(lat, lon)` degrees.
pub fn utm_to_latlon(easting: f64, northing: f64, zone: u8) -> Result<(f64, f64)> {
    check_zone(zone, northing, easting)?;
    if !easting.is_finite() || !northing.is_finite() {
        return Err(Error::Domain {
            lat: northing,
            lon: easting,
            zone,
        });
    }
    let s = series();
    let xi = northing / (K0 * s.a_hat);
    let eta = (easting - FALSE_EASTING) / (K0 * s.a_hat);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }

    let sinh_eta = eta_p.sinh();
    let cos_xi = xi_p.cos();
    let tau_p = xi_p.sin() / sinh_eta.hypot(cos_xi);

    // Newton iteration for the geodetic tangent.
    let e2 = s.e * s.e;
    let mut tau = tau_p;
    for _ in 0..12 {
        let tau1 = tau.hypot(1.0);
        let est = conformal_tangent(tau, s.e);
        let dtau = (tau_p - est) / est.hypot(1.0) * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * tau1);
        tau += dtau;
        if dtau.abs() < 1e-14 * tau.abs().max(1.0) {
            break;
        }
    }
    let lat = tau.atan().to_degrees();
    let lon = central_meridian(zone) + sinh_eta.atan2(cos_xi).to_degrees();
    Ok((lat, lon))
}

/// Zone-bound projector used by the ingest pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtmProjector {
    pub zone: u8,
}

impl UtmProjector {
    pub fn new(zone: u8) -> Result<Self> {
        check_zone(zone, 0.0, 0.0)?;
        Ok(Self { zone })
    }

    pub fn project(&self, lat: f64, lon: f64) -> Result<(f64, f64)> {
        latlon_to_utm(lat, lon, self.zone)
    }

    pub fn unproject(&self, easting: f64, northing: f64) -> Result<(f64, f64)> {
        utm_to_latlon(easting, northing, self.zone)
    }
}
