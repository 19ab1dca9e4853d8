//! Ping ingestion: CSV parsing, local time, study windows, id selection and
//! per-device trajectories in projected meters.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::UtmProjector;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S UTC";
pub const LOCAL_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Hermosillo keeps UTC-07:00 all year.
pub const HERMOSILLO_OFFSET_SECONDS: i32 = -7 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "12-17")]
    From12To17,
    #[serde(rename = "18-25")]
    From18To25,
    #[serde(rename = "26-40")]
    From26To40,
    #[serde(rename = "41-55")]
    From41To55,
    #[serde(rename = ">55")]
    Over55,
}

impl Gender {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" => Some(Gender::Male),
            "female" => Some(Gender::Female),
            _ => None,
        }
    }
}

impl AgeBand {
    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "12-17" => Some(AgeBand::From12To17),
            "18-25" => Some(AgeBand::From18To25),
            "26-40" => Some(AgeBand::From26To40),
            "41-55" => Some(AgeBand::From41To55),
            ">55" => Some(AgeBand::Over55),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub device_id: String,
    pub timestamp_utc: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub gender: Option<Gender>,
    pub age_band: Option<AgeBand>,
}

/// Geographic acceptance box, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub const WORLD: GeoBox = GeoBox {
        lat_min: -90.0,
        lat_max: 90.0,
        lon_min: -180.0,
        lon_max: 180.0,
    };

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

impl Default for GeoBox {
    /// Hermosillo urban area with a small pad.
    fn default() -> Self {
        GeoBox {
            lat_min: 28.90,
            lat_max: 29.30,
            lon_min: -111.20,
            lon_max: -110.75,
        }
    }
}

/// Per-cause counts of rejected rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReport {
    pub missing_id: u64,
    pub bad_timestamp: u64,
    pub bad_coordinate: u64,
    pub out_of_range: u64,
    pub outside_bbox: u64,
    pub malformed_row: u64,
}

impl RejectReport {
    pub fn total(&self) -> u64 {
        self.missing_id
            + self.bad_timestamp
            + self.bad_coordinate
            + self.out_of_range
            + self.outside_bbox
            + self.malformed_row
    }
}

/// Parses a ping CSV with header columns `id_adv,timestamp,lat,lon[,gender,age]`.
///
/// Bad rows are counted in the [`RejectReport`]; only an unusable header is fatal.
pub fn parse_pings<R: Read>(reader: R, bbox: &GeoBox) -> Result<(Vec<Ping>, RejectReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable ping header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_c, ts_c, lat_c, lon_c) = match (col("id_adv"), col("timestamp"), col("lat"), col("lon")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(Error::Format(format!(
                "ping header must contain id_adv, timestamp, lat, lon; got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )))
        }
    };
    let (gender_c, age_c) = (col("gender"), col("age"));

    let mut pings = Vec::new();
    let mut report = RejectReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            // Malformed quoting or invalid UTF-8 in a single row.
            Err(e) if !e.is_io_error() => {
                report.malformed_row += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_c);
        if id.is_empty() {
            report.missing_id += 1;
            continue;
        }
        let Ok(ts) = NaiveDateTime::parse_from_str(field(ts_c), TIMESTAMP_FORMAT) else {
            report.bad_timestamp += 1;
            continue;
        };
        let (Ok(lat), Ok(lon)) = (field(lat_c).parse::<f64>(), field(lon_c).parse::<f64>()) else {
            report.bad_coordinate += 1;
            continue;
        };
        if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 || lon.abs() > 180.0 {
            report.out_of_range += 1;
            continue;
        }
        if !bbox.contains(lat, lon) {
            report.outside_bbox += 1;
            continue;
        }
        pings.push(Ping {
            device_id: id.to_string(),
            timestamp_utc: ts,
            lat,
            lon,
            gender: gender_c.and_then(|c| Gender::parse(field(c))),
            age_band: age_c.and_then(|c| AgeBand::parse(field(c))),
        });
    }
    Ok((pings, report))
}

/// Fixed offset from UTC to local wall-clock time; no daylight saving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtcOffset {
    pub seconds: i32,
}

impl Default for UtcOffset {
    fn default() -> Self {
        Self {
            seconds: HERMOSILLO_OFFSET_SECONDS,
        }
    }
}

impl UtcOffset {
    pub fn from_hours(hours: f64) -> Self {
        Self {
            seconds: (hours * 3600.0).round() as i32,
        }
    }

    pub fn to_local(&self, utc: NaiveDateTime) -> NaiveDateTime {
        utc + Duration::seconds(i64::from(self.seconds))
    }

    pub fn to_utc(&self, local: NaiveDateTime) -> NaiveDateTime {
        local - Duration::seconds(i64::from(self.seconds))
    }
}

/// Hermosillo local time (UTC-7, never DST).
pub fn to_local(utc: NaiveDateTime) -> NaiveDateTime {
    UtcOffset::default().to_local(utc)
}

/// Named inclusive range of local calendar dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub name: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl StudyWindow {
    pub fn new(name: impl Into<String>, start_date: NaiveDate, end_date: NaiveDate) -> Result<Self> {
        let name = name.into();
        if start_date > end_date {
            return Err(Error::Config(format!(
                "window {name}: start {start_date} after end {end_date}"
            )));
        }
        Ok(Self {
            name,
            start_date,
            end_date,
        })
    }

    pub fn contains(&self, local_date: NaiveDate) -> bool {
        local_date >= self.start_date && local_date <= self.end_date
    }

    /// The six estimation windows used for Hermosillo, 2020.
    pub fn defaults() -> Vec<StudyWindow> {
        let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).expect("valid date");
        [
            ("FP_FP", d(9, 21), d(10, 4)),
            ("FP_SP", d(10, 26), d(11, 8)),
            ("SP_FP", d(9, 21), d(10, 4)),
            ("SP_SP", d(11, 2), d(11, 15)),
            ("TP_FP", d(9, 21), d(10, 11)),
            ("TP_SP", d(10, 12), d(11, 1)),
        ]
        .into_iter()
        .map(|(n, s, e)| StudyWindow {
            name: n.to_string(),
            start_date: s,
            end_date: e,
        })
        .collect()
    }
}

/// Keeps pings whose local date falls inside the window.
pub fn filter_window(pings: &[Ping], window: &StudyWindow, offset: UtcOffset) -> Vec<Ping> {
    pings
        .iter()
        .filter(|p| window.contains(offset.to_local(p.timestamp_utc).date()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// At least `threshold` pings in part 1 or in part 2.
    AnyPart,
    /// At least `threshold` pings in both parts.
    BothParts,
}

pub fn count_by_id(pings: &[Ping]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for p in pings {
        *counts.entry(p.device_id.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Device ids meeting the minimum ping count per part.
pub fn select_ids(
    part1: &[Ping],
    part2: &[Ping],
    threshold: usize,
    mode: SelectionMode,
) -> BTreeSet<String> {
    let threshold = threshold.max(1);
    let qualified = |pings: &[Ping]| -> BTreeSet<String> {
        count_by_id(pings)
            .into_iter()
            .filter(|(_, n)| *n >= threshold)
            .map(|(id, _)| id.to_string())
            .collect()
    };
    let (a, b) = (qualified(part1), qualified(part2));
    match mode {
        SelectionMode::AnyPart => a.union(&b).cloned().collect(),
        SelectionMode::BothParts => a.intersection(&b).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    /// Seconds since the first point.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// One device's time-ordered fixes in projected meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub device_id: String,
    pub t0_local: NaiveDateTime,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Local wall-clock seconds since midnight of point `i`.
    pub fn local_second_of_day(&self, i: usize) -> u32 {
        let base = self.t0_local.num_seconds_from_midnight() as f64;
        ((base + self.points[i].t).rem_euclid(86_400.0)) as u32
    }

    pub fn eligible_for_bridge(&self, min_points: usize) -> bool {
        self.points.len() >= min_points
    }
}

/// Groups pings per device, projects them and collapses equal timestamps to
/// their centroid. Input order does not matter.
pub fn build_trajectories(
    pings: &[Ping],
    projector: &UtmProjector,
    offset: UtcOffset,
) -> Result<BTreeMap<String, Trajectory>> {
    let mut grouped: BTreeMap<&str, Vec<(NaiveDateTime, f64, f64)>> = BTreeMap::new();
    for p in pings {
        let (x, y) = projector.project(p.lat, p.lon)?;
        grouped
            .entry(p.device_id.as_str())
            .or_default()
            .push((p.timestamp_utc, x, y));
    }
    let mut out = BTreeMap::new();
    for (id, mut fixes) in grouped {
        fixes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        let t0 = fixes[0].0;
        let mut points: Vec<TrackPoint> = Vec::with_capacity(fixes.len());
        let mut i = 0;
        while i < fixes.len() {
            let mut j = i;
            let (mut sx, mut sy) = (0.0, 0.0);
            while j < fixes.len() && fixes[j].0 == fixes[i].0 {
                sx += fixes[j].1;
                sy += fixes[j].2;
                j += 1;
            }
            let n = (j - i) as f64;
            points.push(TrackPoint {
                t: (fixes[i].0 - t0).num_seconds() as f64,
                x: sx / n,
                y: sy / n,
            });
            i = j;
        }
        out.insert(
            id.to_string(),
            Trajectory {
                device_id: id.to_string(),
                t0_local: offset.to_local(t0),
                points,
            },
        );
    }
    Ok(out)
}

/// Trajectories with at least `min_points` points, in id order.
pub fn bridge_pool(trajectories: &BTreeMap<String, Trajectory>, min_points: usize) -> Vec<&Trajectory> {
    trajectories
        .values()
        .filter(|t| t.eligible_for_bridge(min_points))
        .collect()
}

/// Writes the trajectory store: `device_id,t_seconds,x_m,y_m`, ids in order.
pub fn write_trajectories<W: Write>(
    trajectories: &BTreeMap<String, Trajectory>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "t_seconds", "x_m", "y_m"])?;
    for traj in trajectories.values() {
        for p in &traj.points {
            w.write_record([
                traj.device_id.as_str(),
                &p.t.to_string(),
                &p.x.to_string(),
                &p.y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory store; `origins` supplies each device's local start time.
pub fn read_trajectories<R: Read>(
    reader: R,
    origins: &BTreeMap<String, NaiveDateTime>,
) -> Result<BTreeMap<String, Trajectory>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: BTreeMap<String, Trajectory> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad trajectory row: {rec:?}")))
        };
        let id = rec.get(0).unwrap_or("").to_string();
        let point = TrackPoint {
            t: parse(1)?,
            x: parse(2)?,
            y: parse(3)?,
        };
        let t0 = *origins
            .get(&id)
            .ok_or_else(|| Error::Format(format!("no trajectory origin recorded for `{id}`")))?;
        let traj = out.entry(id.clone()).or_insert_with(|| Trajectory {
            device_id: id,
            t0_local: t0,
            points: Vec::new(),
        });
        if let Some(last) = traj.points.last() {
            if point.t <= last.t {
                return Err(Error::Format(format!(
                    "trajectory `{}` times not strictly increasing",
                    traj.device_id
                )));
            }
        }
        traj.points.push(point);
    }
    Ok(out)
}
