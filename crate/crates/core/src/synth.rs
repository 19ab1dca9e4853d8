//! Synthetic city: rectangular patches, residents commuting on a daily
//! schedule, GPS pings at Poisson times, and the ground truth needed to score
//! the pipeline against it.
//!
//! A resident's position is its schedule anchor plus an Ornstein–Uhlenbeck
//! deviation, so it wanders like Brownian motion on short scales but stays
//! near home or work. The deviation is simulated exactly at every event time.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Location, Patch, PatchMap, UtmProjector};
use crate::occupancy::{aggregate_matrix, MobilityMatrix, OutsidePolicy};
use crate::pings::{UtcOffset, TIMESTAMP_FORMAT};
use crate::residence::{NightWindow, Residence, ResidenceAssignment, ResidenceMethod};
use crate::rng::{keyed_rng, stream_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    /// Side of each square patch, meters.
    pub patch_size: f64,
    /// South-west corner of the city in UTM meters.
    pub origin: (f64, f64),
    /// Patch populations in row-major order; empty means 1000, 2000, ...
    pub populations: Vec<u64>,
    pub residents: usize,
    pub commuter_fraction: f64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub ping_rate_per_hour: f64,
    /// Per-resident diffusion σ² is drawn uniformly from this range, m²/s.
    pub sigma2_range: (f64, f64),
    /// Mean-reversion time of the deviation around the anchor, seconds.
    pub reversion_time: f64,
    /// GPS error variance added to every ping, m².
    pub gps_delta2: f64,
    /// Home and work anchors keep this distance from patch edges, meters.
    pub anchor_margin: f64,
    /// Step of the dense simulation behind the true occupation fractions, seconds.
    pub truth_dt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 2,
            cols: 2,
            patch_size: 2000.0,
            origin: (498_000.0, 3_213_000.0),
            populations: Vec::new(),
            residents: 200,
            commuter_fraction: 0.6,
            start_date: NaiveDate::from_ymd_opt(2020, 9, 21).expect("valid date"),
            days: 7,
            ping_rate_per_hour: 2.0,
            sigma2_range: (0.5, 3.0),
            reversion_time: 1800.0,
            gps_delta2: 100.0,
            anchor_margin: 300.0,
            truth_dt: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be at least 1");
        }
        if !self.populations.is_empty() && self.populations.len() != self.rows * self.cols {
            return bad("populations must list one value per patch");
        }
        if !(self.patch_size > 2.0 * self.anchor_margin && self.anchor_margin >= 0.0) {
            return bad("patch_size must exceed twice the anchor margin");
        }
        if !(0.0..=1.0).contains(&self.commuter_fraction) {
            return bad("commuter_fraction must be in [0, 1]");
        }
        if self.days == 0 || !(self.ping_rate_per_hour > 0.0) || !(self.truth_dt > 0.0) || !(self.reversion_time > 0.0) {
            return bad("days, ping_rate_per_hour, truth_dt and reversion_time must be positive");
        }
        let (lo, hi) = self.sigma2_range;
        if !(lo > 0.0 && hi >= lo) || !(self.gps_delta2 >= 0.0) {
            return bad("sigma2_range must be positive and ordered; gps_delta2 nonnegative");
        }
        Ok(())
    }

    pub fn population(&self, k: usize) -> u64 {
        self.populations.get(k).copied().unwrap_or(1000 * (k as u64 + 1))
    }

    /// The patch grid; ids are `1001`, `1002`, ... in row-major order from the south-west.
    pub fn patch_map(&self) -> Result<PatchMap> {
        let mut patches = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let k = r * self.cols + c;
                let x0 = self.origin.0 + c as f64 * self.patch_size;
                let y0 = self.origin.1 + r as f64 * self.patch_size;
                let s = self.patch_size;
                let ring = vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)];
                patches.push(Patch::new(format!("{}", 1001 + k), vec![ring], self.population(k))?);
            }
        }
        PatchMap::new(patches)
    }
}

/// One resident's fixed attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentPlan {
    pub device_id: String,
    pub home_patch: String,
    pub home: (f64, f64),
    pub work_patch: Option<String>,
    pub work: Option<(f64, f64)>,
    pub sigma2: f64,
}

const LEAVE_HOME: f64 = 8.0 * 3600.0;
const ARRIVE_WORK: f64 = 8.5 * 3600.0;
const LEAVE_WORK: f64 = 17.5 * 3600.0;
const ARRIVE_HOME: f64 = 18.0 * 3600.0;

impl ResidentPlan {
    /// Schedule anchor at `t` seconds after local midnight of the first day.
    pub fn anchor(&self, t: f64) -> (f64, f64) {
        let Some(work) = self.work else { return self.home };
        let s = t.rem_euclid(86_400.0);
        let lerp = |a: (f64, f64), b: (f64, f64), f: f64| (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
        if s < LEAVE_HOME || s >= ARRIVE_HOME {
            self.home
        } else if s < ARRIVE_WORK {
            lerp(self.home, work, (s - LEAVE_HOME) / (ARRIVE_WORK - LEAVE_HOME))
        } else if s < LEAVE_WORK {
            work
        } else {
            lerp(work, self.home, (s - LEAVE_WORK) / (ARRIVE_HOME - LEAVE_WORK))
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Positions at the sorted times `times`, starting from the stationary law of
/// the deviation.
pub fn simulate_path(plan: &ResidentPlan, times: &[f64], reversion_time: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let theta = 1.0 / reversion_time;
    let stationary = (plan.sigma2 / (2.0 * theta)).sqrt();
    let (mut u, mut v) = (stationary * normal(rng), stationary * normal(rng));
    let mut prev = times.first().copied().unwrap_or(0.0);
    times
        .iter()
        .map(|&t| {
            let h = t - prev;
            if h > 0.0 {
                let decay = (-theta * h).exp();
                let sd = (plan.sigma2 * (1.0 - decay * decay) / (2.0 * theta)).sqrt();
                u = u * decay + sd * normal(rng);
                v = v * decay + sd * normal(rng);
            }
            prev = t;
            let a = plan.anchor(t);
            (a.0 + u, a.1 + v)
        })
        .collect()
}

/// Fractions of `[0, span)` spent in each patch (OUTSIDE last), from a fresh
/// path sampled every `dt` seconds.
pub fn dense_fractions(
    plan: &ResidentPlan,
    map: &PatchMap,
    span: f64,
    dt: f64,
    reversion_time: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let steps = (span / dt).round() as usize;
    let times: Vec<f64> = (0..steps).map(|i| (i as f64 + 0.5) * dt).collect();
    let mut counts = vec![0usize; map.len() + 1];
    for p in simulate_path(plan, &times, reversion_time, rng) {
        match map.locate(p) {
            Location::Patch(k) => counts[k] += 1,
            Location::Outside => counts[map.len()] += 1,
        }
    }
    counts.iter().map(|&c| c as f64 / steps as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPing {
    pub device_id: String,
    pub timestamp_utc: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentTruth {
    #[serde(flatten)]
    pub plan: ResidentPlan,
    /// Time fractions per patch in map order, OUTSIDE last.
    pub fractions: Vec<f64>,
    pub n_pings: usize,
    pub night_pings: usize,
    pub night_pings_at_home: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patch_ids: Vec<String>,
    pub residents: Vec<ResidentTruth>,
}

impl GroundTruth {
    pub fn assignment(&self) -> ResidenceAssignment {
        let mut a = ResidenceAssignment::default();
        for r in &self.residents {
            a.residences.insert(
                r.plan.device_id.clone(),
                Residence { patch_id: r.plan.home_patch.clone(), method: ResidenceMethod::UniqueIntersection },
            );
        }
        a
    }

    /// Mean true fractions by true home.
    pub fn matrix(&self, policy: OutsidePolicy) -> Result<MobilityMatrix> {
        let rows: BTreeMap<String, Vec<f64>> =
            self.residents.iter().map(|r| (r.plan.device_id.clone(), r.fractions.clone())).collect();
        aggregate_matrix(&rows, &self.assignment(), &self.patch_ids, policy)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub map: PatchMap,
    pub pings: Vec<SynthPing>,
    pub truth: GroundTruth,
}

fn uniform_in(rng: &mut ChaCha8Rng, patch: &Patch, margin: f64) -> (f64, f64) {
    let b = patch.bbox();
    (
        rng.random_range(b.xmin + margin..b.xmax - margin),
        rng.random_range(b.ymin + margin..b.ymax - margin),
    )
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Builds the city. Everything depends only on `(cfg, seed)`.
pub fn generate(cfg: &SynthConfig, seed: u64, zone: u8, offset: UtcOffset) -> Result<SynthCity> {
    cfg.validate()?;
    let map = cfg.patch_map()?;
    let projector = UtmProjector::new(zone)?;
    let base = stream_seed(seed, "synth");
    let weights: Vec<f64> = map.patches().iter().map(|p| p.population.max(1) as f64).collect();
    let span = f64::from(cfg.days) * 86_400.0;
    let origin_local = cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let night = NightWindow::default();
    let width = ((cfg.residents.max(1) as f64).log10().floor() as usize + 1).max(4);

    let mut pings = Vec::new();
    let mut residents = Vec::with_capacity(cfg.residents);
    for n in 0..cfg.residents {
        let device_id = format!("dev{:0width$}", n + 1);
        let mut rng = keyed_rng(base, &device_id);
        let home_k = pick_weighted(&mut rng, &weights);
        let home = uniform_in(&mut rng, &map.patches()[home_k], cfg.anchor_margin);
        let commutes = map.len() > 1 && rng.random::<f64>() < cfg.commuter_fraction;
        let (work_patch, work) = if commutes {
            let mut k = rng.random_range(0..map.len() - 1);
            if k >= home_k {
                k += 1;
            }
            (Some(map.patches()[k].id.clone()), Some(uniform_in(&mut rng, &map.patches()[k], cfg.anchor_margin)))
        } else {
            (None, None)
        };
        let (lo, hi) = cfg.sigma2_range;
        let sigma2 = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let plan = ResidentPlan { device_id: device_id.clone(), home_patch: map.patches()[home_k].id.clone(), home, work_patch, work, sigma2 };

        // Poisson ping times at whole seconds.
        let gap = Exp::new(cfg.ping_rate_per_hour / 3600.0).map_err(|e| Error::Config(e.to_string()))?;
        let mut ping_times = Vec::new();
        let mut t = gap.sample(&mut rng);
        while t < span {
            ping_times.push(t.floor());
            t += gap.sample(&mut rng);
        }
        let fractions = dense_fractions(&plan, &map, span, cfg.truth_dt, cfg.reversion_time, &mut rng);
        let positions = simulate_path(&plan, &ping_times, cfg.reversion_time, &mut rng);
        let gps = cfg.gps_delta2.sqrt();
        let (mut night_pings, mut night_home) = (0, 0);
        for (&t, &(x, y)) in ping_times.iter().zip(&positions) {
            let obs = (x + gps * normal(&mut rng), y + gps * normal(&mut rng));
            if night.contains(t.rem_euclid(86_400.0) as u32) {
                night_pings += 1;
                if matches!(map.locate(obs), Location::Patch(k) if k == home_k) {
                    night_home += 1;
                }
            }
            let (lat, lon) = projector.unproject(obs.0, obs.1)?;
            let local = origin_local + Duration::seconds(t as i64);
            pings.push(SynthPing { device_id: device_id.clone(), timestamp_utc: offset.to_utc(local), lat, lon });
        }
        residents.push(ResidentTruth {
            plan,
            fractions,
            n_pings: ping_times.len(),
            night_pings,
            night_pings_at_home: night_home,
        });
    }
    pings.sort_by(|a, b| a.timestamp_utc.cmp(&b.timestamp_utc).then_with(|| a.device_id.cmp(&b.device_id)));
    Ok(SynthCity { truth: GroundTruth { patch_ids: map.ids(), residents }, map, pings })
}

/// Ping CSV in the input schema (`id_adv,timestamp,lat,lon,gender,age`).
pub fn write_pings_csv<W: Write>(pings: &[SynthPing], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id_adv", "timestamp", "lat", "lon", "gender", "age"])?;
    for p in pings {
        w.write_record([
            p.device_id.as_str(),
            &p.timestamp_utc.format(TIMESTAMP_FORMAT).to_string(),
            &format!("{:.8}", p.lat),
            &format!("{:.8}", p.lon),
            "",
            "",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON FeatureCollection in projected meters (`"projected": true`).
pub fn write_patches_geojson<W: Write>(map: &PatchMap, out: W) -> Result<()> {
    let features: Vec<serde_json::Value> = map
        .patches()
        .iter()
        .map(|p| {
            let rings: Vec<Vec<[f64; 2]>> = p.rings.iter().map(|r| r.iter().map(|&(x, y)| [x, y]).collect()).collect();
            serde_json::json!({
                "type": "Feature",
                "properties": { "patch_id": p.id, "population": p.population },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let doc = serde_json::json!({ "type": "FeatureCollection", "projected": true, "features": features });
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}
