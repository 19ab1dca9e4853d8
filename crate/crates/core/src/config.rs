//! Pipeline configuration: one JSON document with a section per stage.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{FitMethod, OccupationOptions, Quadrature};
use crate::error::{Error, Result};
use crate::occupancy::{AlphaMode, Metric, OutsidePolicy};
use crate::pings::{GeoBox, SelectionMode, StudyWindow, HERMOSILLO_OFFSET_SECONDS};
use crate::residence::NightWindow;
use crate::seirs::EpiConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pings: PathBuf,
    pub patches: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { pings: "pings.csv".into(), patches: "patches.geojson".into(), out: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PingsConfig {
    pub utc_offset_hours: f64,
    pub bbox: GeoBox,
    pub windows: Vec<WindowConfig>,
    /// Minimum pings per window part for a device to be kept.
    pub threshold: usize,
    pub selection_mode: SelectionMode,
    /// Minimum points for a trajectory to enter bridge fitting.
    pub min_points_for_bridge: usize,
}

impl Default for PingsConfig {
    fn default() -> Self {
        Self {
            utc_offset_hours: HERMOSILLO_OFFSET_SECONDS as f64 / 3600.0,
            bbox: GeoBox::default(),
            windows: StudyWindow::defaults()
                .into_iter()
                .map(|w| WindowConfig { name: w.name, start: w.start_date, end: w.end_date })
                .collect(),
            threshold: 11,
            selection_mode: SelectionMode::AnyPart,
            min_points_for_bridge: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub zone: u8,
    pub cell_size: f64,
    /// Grid padding around the patch bounding box, meters.
    pub margin: f64,
    pub max_cells: u64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self { zone: 12, cell_size: 50.0, margin: 1000.0, max_cells: crate::geo::DEFAULT_MAX_CELLS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidenceConfig {
    /// Local `HH:MM`.
    pub night_start: String,
    pub night_end: String,
}

impl Default for ResidenceConfig {
    fn default() -> Self {
        Self { night_start: "22:00".into(), night_end: "06:00".into() }
    }
}

fn parse_hhmm(s: &str) -> Result<u32> {
    let bad = || Error::Config(format!("expected HH:MM, got `{s}`"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let (h, m): (u32, u32) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok(h * 3600 + m * 60)
}

impl ResidenceConfig {
    pub fn night(&self) -> Result<NightWindow> {
        Ok(NightWindow { start_second: parse_hhmm(&self.night_start)?, end_second: parse_hhmm(&self.night_end)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub method: FitMethod,
    /// Location-error variance for the fixed-δ method, m².
    pub delta2: f64,
    pub time_step: f64,
    pub quadrature: Quadrature,
    pub max_gap: f64,
    pub gap_var_cap: Option<f64>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        let occ = OccupationOptions::default();
        Self {
            method: FitMethod::HorneFixedDelta,
            delta2: 100.0,
            time_step: occ.time_step,
            quadrature: occ.quadrature,
            max_gap: occ.max_gap,
            gap_var_cap: occ.gap_var_cap,
        }
    }
}

impl BridgeConfig {
    pub fn occupation(&self) -> OccupationOptions {
        OccupationOptions {
            time_step: self.time_step,
            quadrature: self.quadrature,
            max_gap: self.max_gap,
            gap_var_cap: self.gap_var_cap,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyConfig {
    pub outside_policy: OutsidePolicy,
    pub alpha_mode: AlphaMode,
    pub metrics: Vec<String>,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            outside_policy: OutsidePolicy::Renormalize,
            alpha_mode: AlphaMode::TimeShare,
            metrics: vec!["euclidean".into(), "manhattan".into(), "minkowski(3)".into()],
        }
    }
}

impl OccupancyConfig {
    pub fn parsed_metrics(&self) -> Result<Vec<Metric>> {
        self.metrics.iter().map(|m| m.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub pings: PingsConfig,
    pub geo: GeoConfig,
    pub residence: ResidenceConfig,
    pub bridge: BridgeConfig,
    pub occupancy: OccupancyConfig,
    pub epi: EpiConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 20200917,
            paths: PathsConfig::default(),
            pings: PingsConfig::default(),
            geo: GeoConfig::default(),
            residence: ResidenceConfig::default(),
            bridge: BridgeConfig::default(),
            occupancy: OccupancyConfig::default(),
            epi: EpiConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.pings, &mut cfg.paths.patches, &mut cfg.paths.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("geo.cell_size", self.geo.cell_size)?;
        positive("bridge.time_step", self.bridge.time_step)?;
        positive("bridge.max_gap", self.bridge.max_gap)?;
        positive("epi.dt", self.epi.dt)?;
        if !(self.geo.margin >= 0.0) {
            return Err(Error::Config("geo.margin must be nonnegative".into()));
        }
        if !(1..=60).contains(&self.geo.zone) {
            return Err(Error::Config(format!("geo.zone must be in 1..=60, got {}", self.geo.zone)));
        }
        if !(self.bridge.delta2 >= 0.0 && self.bridge.delta2.is_finite()) {
            return Err(Error::Config("bridge.delta2 must be nonnegative".into()));
        }
        if !(self.epi.t_end >= 0.0) {
            return Err(Error::Config("epi.t_end must be nonnegative".into()));
        }
        if self.pings.threshold == 0 {
            return Err(Error::Config("pings.threshold must be at least 1".into()));
        }
        self.windows()?;
        self.residence.night()?;
        self.occupancy.parsed_metrics()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn windows(&self) -> Result<Vec<StudyWindow>> {
        let mut seen = std::collections::BTreeSet::new();
        self.pings
            .windows
            .iter()
            .map(|w| {
                if !seen.insert(w.name.clone()) {
                    return Err(Error::Config(format!("window `{}` defined twice", w.name)));
                }
                StudyWindow::new(w.name.clone(), w.start, w.end)
            })
            .collect()
    }

    pub fn window(&self, name: &str) -> Result<StudyWindow> {
        self.windows()?
            .into_iter()
            .find(|w| w.name == name)
            .ok_or_else(|| Error::Config(format!("unknown window `{name}`")))
    }

    /// The other part of a `<PERIOD>_<PART>` window pair (`FP_FP` ↔ `FP_SP`), if configured.
    pub fn partner_window(&self, name: &str) -> Result<Option<StudyWindow>> {
        let Some((period, part)) = name.rsplit_once('_') else { return Ok(None) };
        let other = match part {
            "FP" => "SP",
            "SP" => "FP",
            _ => return Ok(None),
        };
        let partner = format!("{period}_{other}");
        Ok(self.windows()?.into_iter().find(|w| w.name == partner))
    }

    /// SHA-256 of the canonical JSON form (object keys sorted, no whitespace).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
