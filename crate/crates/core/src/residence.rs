//! Residence assignment from ping frequency, night-time pings and patch population.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Location, PatchMap};
use crate::pings::Trajectory;
use crate::rng::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidenceMethod {
    /// Most-pinged patch overall and at night coincide in exactly one patch.
    UniqueIntersection,
    /// Several patches tie in both counts; drawn by population.
    WeightedRandom,
    /// Overall and night maxima are disjoint; drawn from the night set (or overall set).
    Fallback,
}

impl ResidenceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResidenceMethod::UniqueIntersection => "unique_intersection",
            ResidenceMethod::WeightedRandom => "weighted_random",
            ResidenceMethod::Fallback => "fallback",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "unique_intersection" => Some(Self::UniqueIntersection),
            "weighted_random" => Some(Self::WeightedRandom),
            "fallback" => Some(Self::Fallback),
            _ => None,
        }
    }
}

/// Local night interval `[start, end)` in seconds since midnight; wraps past midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_second: u32,
    pub end_second: u32,
}

impl Default for NightWindow {
    /// 22:00 to 06:00.
    fn default() -> Self {
        Self {
            start_second: 22 * 3600,
            end_second: 6 * 3600,
        }
    }
}

impl NightWindow {
    pub fn contains(&self, second_of_day: u32) -> bool {
        if self.start_second <= self.end_second {
            second_of_day >= self.start_second && second_of_day < self.end_second
        } else {
            second_of_day >= self.start_second || second_of_day < self.end_second
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residence {
    pub patch_id: String,
    pub method: ResidenceMethod,
}

fn argmax_set(counts: &BTreeMap<usize, usize>) -> BTreeSet<usize> {
    let best = counts.values().copied().max().unwrap_or(0);
    counts
        .iter()
        .filter(|(_, n)| **n == best && best > 0)
        .map(|(k, _)| *k)
        .collect()
}

/// Population-weighted draw; zero-population patches weigh 1.
fn weighted_pick<R: Rng>(rng: &mut R, candidates: &[usize], map: &PatchMap) -> usize {
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&k| (map.patches()[k].population as f64).max(1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in candidates.iter().zip(&weights) {
        if u < *w {
            return *k;
        }
        u -= w;
    }
    *candidates.last().expect("non-empty candidate set")
}

/// Assigns one device to a residence patch. Returns `None` when every ping is OUTSIDE.
pub fn assign_residence(
    traj: &Trajectory,
    map: &PatchMap,
    seed: u64,
    night: NightWindow,
) -> Option<Residence> {
    let mut all: BTreeMap<usize, usize> = BTreeMap::new();
    let mut nightly: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, p) in traj.points.iter().enumerate() {
        if let Location::Patch(k) = map.locate((p.x, p.y)) {
            *all.entry(k).or_insert(0) += 1;
            if night.contains(traj.local_second_of_day(i)) {
                *nightly.entry(k).or_insert(0) += 1;
            }
        }
    }
    if all.is_empty() {
        return None;
    }
    let s1 = argmax_set(&all);
    let s2 = argmax_set(&nightly);
    let f: Vec<usize> = s1.intersection(&s2).copied().collect();

    let (pool, method) = match f.len() {
        1 => {
            return Some(Residence {
                patch_id: map.patches()[f[0]].id.clone(),
                method: ResidenceMethod::UniqueIntersection,
            })
        }
        0 if !s2.is_empty() => (s2.into_iter().collect::<Vec<_>>(), ResidenceMethod::Fallback),
        0 => (s1.into_iter().collect::<Vec<_>>(), ResidenceMethod::Fallback),
        _ => (f, ResidenceMethod::WeightedRandom),
    };
    let chosen = if pool.len() == 1 {
        pool[0]
    } else {
        let mut rng = keyed_rng(seed, &traj.device_id);
        weighted_pick(&mut rng, &pool, map)
    };
    Some(Residence {
        patch_id: map.patches()[chosen].id.clone(),
        method,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidenceAssignment {
    pub residences: BTreeMap<String, Residence>,
    /// Devices with every ping outside all patches.
    pub unassignable: Vec<String>,
}

impl ResidenceAssignment {
    pub fn get(&self, device_id: &str) -> Option<&Residence> {
        self.residences.get(device_id)
    }

    pub fn len(&self) -> usize {
        self.residences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residences.is_empty()
    }

    pub fn method_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for r in self.residences.values() {
            *out.entry(r.method.as_str()).or_insert(0) += 1;
        }
        out
    }

    /// `device_id,patch_id,method`, ids in order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["device_id", "patch_id", "method"])?;
        for (id, r) in &self.residences {
            w.write_record([id.as_str(), r.patch_id.as_str(), r.method.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut residences = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let (Some(id), Some(patch), Some(method)) = (rec.get(0), rec.get(1), rec.get(2)) else {
                return Err(Error::Format(format!("bad residence row: {rec:?}")));
            };
            let method = ResidenceMethod::parse(method)
                .ok_or_else(|| Error::Format(format!("unknown residence method `{method}`")))?;
            residences.insert(
                id.to_string(),
                Residence {
                    patch_id: patch.to_string(),
                    method,
                },
            );
        }
        Ok(Self {
            residences,
            unassignable: Vec::new(),
        })
    }
}

/// Assigns every device in parallel; the result depends only on the seed.
pub fn assign_all<'a, I>(trajectories: I, map: &PatchMap, seed: u64, night: NightWindow) -> ResidenceAssignment
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let trajs: Vec<&Trajectory> = trajectories.into_iter().collect();
    let results: Vec<(String, Option<Residence>)> = trajs
        .par_iter()
        .map(|t| (t.device_id.clone(), assign_residence(t, map, seed, night)))
        .collect();
    let mut out = ResidenceAssignment::default();
    for (id, r) in results {
        match r {
            Some(r) => {
                out.residences.insert(id, r);
            }
            None => out.unassignable.push(id),
        }
    }
    out.unassignable.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Patch;
    use crate::pings::TrackPoint;
    use chrono::NaiveDate;

    fn square(id: &str, x0: f64, pop: u64) -> Patch {
        Patch::new(id, vec![vec![(x0, 0.0), (x0 + 100.0, 0.0), (x0 + 100.0, 100.0), (x0, 100.0)]], pop).unwrap()
    }

    fn map() -> PatchMap {
        PatchMap::new(vec![square("A", 0.0, 3000), square("B", 200.0, 1000), square("C", 400.0, 500)]).unwrap()
    }

    /// Builds a trajectory starting at local midnight from (hour, patch x-offset) fixes.
    fn traj(id: &str, fixes: &[(f64, f64)]) -> Trajectory {
        let t0 = NaiveDate::from_ymd_opt(2020, 9, 21).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut points: Vec<TrackPoint> = fixes
            .iter()
            .enumerate()
            .map(|(i, &(hour, x))| TrackPoint { t: hour * 3600.0 + i as f64, x: x + 50.0, y: 50.0 })
            .collect();
        points.sort_by(|a, b| a.t.total_cmp(&b.t));
        let base = points[0].t;
        points.iter_mut().for_each(|p| p.t -= base);
        let t0 = t0 + chrono::Duration::seconds(base as i64);
        Trajectory { device_id: id.into(), t0_local: t0, points }
    }

    #[test]
    fn night_window_wraps_midnight() {
        let n = NightWindow::default();
        assert!(n.contains(22 * 3600));
        assert!(n.contains(0));
        assert!(n.contains(6 * 3600 - 1));
        assert!(!n.contains(6 * 3600));
        assert!(!n.contains(21 * 3600 + 3599));
    }

    #[test]
    fn dominant_patch_is_unique_intersection() {
        // 10 pings in A, 4 at night; 2 in B during the day.
        let mut fixes: Vec<(f64, f64)> = vec![(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (23.0, 0.0)];
        fixes.extend((0..6).map(|h| (8.0 + h as f64, 0.0)));
        fixes.extend([(15.0, 200.0), (16.0, 200.0)]);
        let r = assign_residence(&traj("d", &fixes), &map(), 1, NightWindow::default()).unwrap();
        assert_eq!(r, Residence { patch_id: "A".into(), method: ResidenceMethod::UniqueIntersection });
    }

    #[test]
    fn disjoint_maxima_fall_back_to_night_set() {
        // Day max B (3 pings), night max C (2 pings).
        let fixes = [(10.0, 200.0), (11.0, 200.0), (12.0, 200.0), (23.0, 400.0), (2.0, 400.0)];
        let r = assign_residence(&traj("d", &fixes), &map(), 1, NightWindow::default()).unwrap();
        assert_eq!(r, Residence { patch_id: "C".into(), method: ResidenceMethod::Fallback });
    }

    #[test]
    fn all_outside_is_unassignable() {
        let fixes = [(10.0, 1000.0), (23.0, 1000.0)];
        let t = traj("lost", &fixes);
        assert!(assign_residence(&t, &map(), 1, NightWindow::default()).is_none());
        let all = assign_all([&t], &map(), 1, NightWindow::default());
        assert_eq!(all.unassignable, vec!["lost".to_string()]);
    }

    #[test]
    fn tie_breaks_follow_population_weights() {
        // A and B tie in both counts; populations 3000 / 1000.
        let fixes = [(1.0, 0.0), (2.0, 200.0), (12.0, 0.0), (13.0, 200.0)];
        let m = map();
        let draws = 100_000;
        let mut hits_a = 0;
        for s in 0..draws {
            let r = assign_residence(&traj("tie", &fixes), &m, s, NightWindow::default()).unwrap();
            assert_eq!(r.method, ResidenceMethod::WeightedRandom);
            if r.patch_id == "A" {
                hits_a += 1;
            }
        }
        let freq = hits_a as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.01, "A frequency {freq}");
        // chi-square with 1 dof at alpha = 0.01: 6.635
        let expected = [0.75 * draws as f64, 0.25 * draws as f64];
        let observed = [hits_a as f64, (draws - hits_a) as f64];
        let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn zero_population_patch_remains_selectable() {
        let m = PatchMap::new(vec![square("A", 0.0, 0), square("B", 200.0, 0)]).unwrap();
        let fixes = [(1.0, 0.0), (2.0, 200.0)];
        let picks: BTreeSet<String> = (0..200)
            .map(|s| assign_residence(&traj("z", &fixes), &m, s, NightWindow::default()).unwrap().patch_id)
            .collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn assignment_independent_of_order_and_seed_only_moves_ties() {
        let m = map();
        let clear = traj("clear", &[(1.0, 0.0), (2.0, 0.0), (12.0, 200.0)]);
        let clear2 = traj("clear2", &[(1.0, 400.0), (2.0, 400.0)]);
        let tie = traj("tie", &[(1.0, 0.0), (2.0, 200.0), (12.0, 0.0), (13.0, 200.0)]);
        let fwd = assign_all([&clear, &clear2, &tie], &m, 42, NightWindow::default());
        let rev = assign_all([&tie, &clear2, &clear], &m, 42, NightWindow::default());
        assert_eq!(fwd, rev);
        assert_eq!(fwd.get("clear").unwrap().method, ResidenceMethod::UniqueIntersection);
        assert_eq!(fwd.get("clear2").unwrap().method, ResidenceMethod::UniqueIntersection);
        let mut tie_outcomes = BTreeSet::new();
        for seed in 0..64 {
            let other = assign_all([&clear, &clear2, &tie], &m, seed, NightWindow::default());
            assert_eq!(other.get("clear"), fwd.get("clear"));
            assert_eq!(other.get("clear2"), fwd.get("clear2"));
            tie_outcomes.insert(other.get("tie").unwrap().patch_id.clone());
        }
        assert_eq!(tie_outcomes.len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let m = map();
        let a = assign_all([&traj("x", &[(1.0, 0.0)]), &traj("y", &[(1.0, 400.0)])], &m, 3, NightWindow::default());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "device_id,patch_id,method\nx,A,unique_intersection\ny,C,unique_intersection\n");
        assert_eq!(ResidenceAssignment::read_csv(buf.as_slice()).unwrap(), a);
    }
}
