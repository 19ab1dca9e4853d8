//! Patch-level residence-mobility matrices, their (α, p) decomposition, and
//! matrix distances.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bridge::{occupation_stream, BridgeFit, OccupationMass, OccupationOptions};
use crate::error::{Error, Result};
use crate::geo::{Location, OccupancyGrid, OUTSIDE_LABEL};
use crate::pings::Trajectory;
use crate::residence::ResidenceAssignment;

/// Per-patch fractions of one device's time, grid patch order, OUTSIDE last.
pub fn individual_row(mass: &OccupationMass, grid: &OccupancyGrid) -> Vec<f64> {
    let n = grid.n_patches();
    let mut row = vec![0.0; n + 1];
    for (m, label) in mass.cells.iter().zip(grid.labels()) {
        match label {
            Location::Patch(k) => row[*k] += m,
            Location::Outside => row[n] += m,
        }
    }
    row[n] += mass.off_grid;
    row
}

/// Same as `individual_row(occupation_mass(..))` without materializing the cell vector.
pub fn trajectory_row(
    traj: &Trajectory,
    fit: &BridgeFit,
    grid: &OccupancyGrid,
    opts: &OccupationOptions,
) -> Result<Vec<f64>> {
    let n = grid.n_patches();
    let labels = grid.labels();
    let mut row = vec![0.0; n + 1];
    let off = occupation_stream(traj, fit, grid, opts, |i, w| match labels[i] {
        Location::Patch(k) => row[k] += w,
        Location::Outside => row[n] += w,
    })?;
    row[n] += off;
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsidePolicy {
    KeepColumn,
    #[default]
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityMatrix {
    pub patch_ids: Vec<String>,
    /// Whether the last column is OUTSIDE.
    pub outside_column: bool,
    pub rows: Vec<Vec<f64>>,
    /// Number of devices averaged into each row.
    pub contributors: Vec<usize>,
    /// Mean OUTSIDE share per row before any renormalization.
    pub outside_mass: Vec<f64>,
    /// Rows replaced by the identity row (no contributors, or no in-city mass).
    pub identity_rows: Vec<bool>,
}

impl MobilityMatrix {
    pub fn n(&self) -> usize {
        self.patch_ids.len()
    }

    pub fn column_labels(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.patch_ids.iter().map(String::as_str).collect();
        if self.outside_column {
            cols.push(OUTSIDE_LABEL);
        }
        cols
    }

    fn identity_row(&self, i: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.rows[i].len()];
        r[i] = 1.0;
        r
    }

    /// Matrix CSV: `residence,<patch ids...>[,OUTSIDE]`, one row per residence patch.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["residence"];
        header.extend(self.column_labels());
        w.write_record(&header)?;
        for (id, row) in self.patch_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Companion metadata is
    /// not part of the CSV; contributors are set to zero and flags cleared.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let mut cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let outside_column = cols.last().map(String::as_str) == Some(OUTSIDE_LABEL);
        if outside_column {
            cols.pop();
        }
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad matrix entry `{v}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != cols.len() + outside_column as usize {
                return Err(Error::Format(format!("matrix row for `{}` has {} entries", ids.last().unwrap(), row.len())));
            }
            rows.push(row);
        }
        if ids != cols {
            return Err(Error::Format("matrix row labels differ from column labels".into()));
        }
        let n = ids.len();
        let outside_mass = if outside_column { rows.iter().map(|r| r[n]).collect() } else { vec![0.0; n] };
        Ok(Self {
            patch_ids: ids,
            outside_column,
            rows,
            contributors: vec![0; n],
            outside_mass,
            identity_rows: vec![false; n],
        })
    }

    /// Companion JSON: contributors, flags and pre-normalization OUTSIDE mass per row.
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<serde_json::Value> = self
            .patch_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                serde_json::json!({
                    "patch_id": id,
                    "contributors": self.contributors[i],
                    "outside_mass": self.outside_mass[i],
                    "identity_row": self.identity_rows[i],
                })
            })
            .collect();
        let doc = serde_json::json!({ "outside_column": self.outside_column, "rows": rows });
        serde_json::to_writer_pretty(out, &doc)?;
        Ok(())
    }
}

/// Averages device rows by residence patch.
///
/// Device rows use `patch_ids` order with OUTSIDE last. Devices without a
/// residence are skipped. Rows are combined in device-id order, so the result
/// does not depend on how the rows were produced.
pub fn aggregate_matrix(
    rows: &BTreeMap<String, Vec<f64>>,
    assignment: &ResidenceAssignment,
    patch_ids: &[String],
    policy: OutsidePolicy,
) -> Result<MobilityMatrix> {
    let n = patch_ids.len();
    let index: BTreeMap<&str, usize> = patch_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut sums = vec![vec![0.0; n + 1]; n];
    let mut contributors = vec![0usize; n];
    for (device, row) in rows {
        let Some(res) = assignment.get(device) else { continue };
        let &r = index
            .get(res.patch_id.as_str())
            .ok_or_else(|| Error::UnknownPatch(res.patch_id.clone()))?;
        if row.len() != n + 1 {
            return Err(Error::ShapeMismatch(format!(
                "row for `{device}` has {} entries, expected {}",
                row.len(),
                n + 1
            )));
        }
        for (s, v) in sums[r].iter_mut().zip(row) {
            *s += v;
        }
        contributors[r] += 1;
    }
    let mut out = MobilityMatrix {
        patch_ids: patch_ids.to_vec(),
        outside_column: policy == OutsidePolicy::KeepColumn,
        rows: Vec::with_capacity(n),
        contributors,
        outside_mass: vec![0.0; n],
        identity_rows: vec![false; n],
    };
    for (i, sum) in sums.into_iter().enumerate() {
        let c = out.contributors[i];
        let mean: Vec<f64> = sum.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect();
        out.outside_mass[i] = mean[n];
        let row = match policy {
            OutsidePolicy::KeepColumn => {
                let total: f64 = mean.iter().sum();
                if c == 0 || !(total > 0.0) {
                    None
                } else {
                    Some(mean.iter().map(|v| v / total).collect())
                }
            }
            OutsidePolicy::Renormalize => {
                let inside: f64 = mean[..n].iter().sum();
                if c == 0 || !(inside > 0.0) {
                    None
                } else {
                    Some(mean[..n].iter().map(|v| v / inside).collect())
                }
            }
        };
        match row {
            Some(r) => out.rows.push(r),
            None => {
                out.rows.push(vec![0.0; n + out.outside_column as usize]);
                out.rows[i] = out.identity_row(i);
                out.identity_rows[i] = true;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaP {
    pub patch_ids: Vec<String>,
    /// Share of residents' time spent away from home (or share of mobile residents).
    pub alpha: Vec<f64>,
    /// Conditional destination shares for movers; zero diagonal.
    pub p: Vec<Vec<f64>>,
    /// Rows with α = 0, whose p row is all zeros.
    pub inert: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    /// α_i = 1 − P_ii.
    #[default]
    TimeShare,
    /// α_i = fraction of residents whose away share exceeds `threshold`.
    IndividualCount { threshold: f64 },
}

fn check_square(m: &MobilityMatrix) -> Result<()> {
    if m.outside_column {
        return Err(Error::ShapeMismatch("α/p decomposition needs a matrix without the OUTSIDE column".into()));
    }
    let n = m.n();
    if m.rows.len() != n || m.rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch(format!("matrix is not {n}×{n}")));
    }
    Ok(())
}

fn p_rows(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = rows.len();
    let mut p = vec![vec![0.0; n]; n];
    let mut away = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        if row[i] > 1.0 + 1e-9 {
            return Err(Error::Invariant(format!("diagonal entry {i} is {} > 1", row[i])));
        }
        let a = 1.0 - row[i].min(1.0);
        away[i] = a;
        if a > 0.0 {
            for j in 0..n {
                if j != i {
                    p[i][j] = row[j] / a;
                }
            }
        }
    }
    Ok((p, away))
}

/// α_i = 1 − P_ii, p_ij = P_ij / α_i off the diagonal.
pub fn decompose_alpha_p(m: &MobilityMatrix) -> Result<AlphaP> {
    check_square(m)?;
    let (p, alpha) = p_rows(&m.rows)?;
    Ok(AlphaP {
        patch_ids: m.patch_ids.clone(),
        inert: alpha.iter().map(|&a| a == 0.0).collect(),
        alpha,
        p,
    })
}

/// (α, p) with α counted over individuals: the share of each patch's residents
/// whose own away share (1 − time at home) exceeds `threshold`. p is taken from
/// the time shares as in [`decompose_alpha_p`].
pub fn decompose_alpha_p_individual(
    m: &MobilityMatrix,
    device_rows: &BTreeMap<String, Vec<f64>>,
    assignment: &ResidenceAssignment,
    threshold: f64,
) -> Result<AlphaP> {
    check_square(m)?;
    let (p, away) = p_rows(&m.rows)?;
    let n = m.n();
    let index: BTreeMap<&str, usize> = m.patch_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut movers = vec![0usize; n];
    let mut residents = vec![0usize; n];
    for (device, row) in device_rows {
        let Some(res) = assignment.get(device) else { continue };
        let &h = index
            .get(res.patch_id.as_str())
            .ok_or_else(|| Error::UnknownPatch(res.patch_id.clone()))?;
        let total: f64 = row.iter().sum();
        let home = if total > 0.0 { row[h] / total } else { 1.0 };
        residents[h] += 1;
        if 1.0 - home > threshold {
            movers[h] += 1;
        }
    }
    let alpha: Vec<f64> = (0..n)
        .map(|i| {
            if residents[i] == 0 || away[i] == 0.0 {
                0.0
            } else {
                movers[i] as f64 / residents[i] as f64
            }
        })
        .collect();
    let p = p
        .into_iter()
        .zip(&alpha)
        .map(|(row, &a)| if a == 0.0 { vec![0.0; n] } else { row })
        .collect();
    Ok(AlphaP {
        patch_ids: m.patch_ids.clone(),
        inert: alpha.iter().map(|&a| a == 0.0).collect(),
        alpha,
        p,
    })
}

impl AlphaP {
    /// `(1 − α_i)·e_i + α_i·p_i`, row by row.
    pub fn recompose(&self) -> Vec<Vec<f64>> {
        let n = self.alpha.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 1.0 - self.alpha[i] } else { self.alpha[i] * self.p[i][j] })
                    .collect()
            })
            .collect()
    }

    /// `patch_id,alpha,<patch ids...>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["patch_id".to_string(), "alpha".to_string()];
        header.extend(self.patch_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.patch_ids.iter().enumerate() {
            let mut rec = vec![id.clone(), self.alpha[i].to_string()];
            rec.extend(self.p[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let cols: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let (mut ids, mut alpha, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let nums = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad alpha/p entry `{v}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if nums.len() != cols.len() + 1 {
                return Err(Error::Format("alpha/p row length differs from header".into()));
            }
            ids.push(rec.get(0).unwrap_or_default().to_string());
            alpha.push(nums[0]);
            p.push(nums[1..].to_vec());
        }
        if ids != cols {
            return Err(Error::Format("alpha/p row labels differ from column labels".into()));
        }
        Ok(Self { patch_ids: ids, inert: alpha.iter().map(|&a| a == 0.0).collect(), alpha, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Manhattan,
    Minkowski(f64),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Manhattan => write!(f, "manhattan"),
            Metric::Minkowski(p) => write!(f, "minkowski({p})"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// `euclidean`, `manhattan`, `minkowski(p)` or `minkowski:p`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "euclidean" => return Ok(Metric::Euclidean),
            "manhattan" => return Ok(Metric::Manhattan),
            _ => {}
        }
        let arg = s
            .strip_prefix("minkowski(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("minkowski:"))
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))?;
        let p: f64 = arg.parse().map_err(|_| Error::Config(format!("bad minkowski order `{arg}`")))?;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Config(format!("minkowski order must be ≥ 1, got {p}")));
        }
        Ok(Metric::Minkowski(p))
    }
}

/// Entrywise distance between two equally shaped matrices.
pub fn distance(a: &[Vec<f64>], b: &[Vec<f64>], metric: Metric) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch("matrices differ in shape".into()));
    }
    let diffs = a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()));
    Ok(match metric {
        Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Metric::Manhattan => diffs.sum(),
        Metric::Minkowski(p) => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
    })
}

/// [`distance`] after checking both matrices share the same patches and columns.
pub fn matrix_distance(a: &MobilityMatrix, b: &MobilityMatrix, metric: Metric) -> Result<f64> {
    if a.patch_ids != b.patch_ids || a.outside_column != b.outside_column {
        return Err(Error::ShapeMismatch("matrices have different patch orderings or columns".into()));
    }
    distance(&a.rows, &b.rows, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residence::{Residence, ResidenceMethod};

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn assignment(pairs: &[(&str, &str)]) -> ResidenceAssignment {
        let mut a = ResidenceAssignment::default();
        for (d, p) in pairs {
            a.residences.insert(
                d.to_string(),
                Residence { patch_id: p.to_string(), method: ResidenceMethod::UniqueIntersection },
            );
        }
        a
    }

    fn square(rows: Vec<Vec<f64>>) -> MobilityMatrix {
        let n = rows.len();
        MobilityMatrix {
            patch_ids: (0..n).map(|i| format!("p{i}")).collect(),
            outside_column: false,
            rows,
            contributors: vec![1; n],
            outside_mass: vec![0.0; n],
            identity_rows: vec![false; n],
        }
    }

    #[test]
    fn mean_of_two_residents() {
        let mut rows = BTreeMap::new();
        rows.insert("d1".to_string(), vec![1.0, 0.0, 0.0]);
        rows.insert("d2".to_string(), vec![0.5, 0.5, 0.0]);
        let m = aggregate_matrix(&rows, &assignment(&[("d1", "A"), ("d2", "A")]), &ids(&["A", "B"]), OutsidePolicy::Renormalize)
            .unwrap();
        assert_eq!(m.rows[0], vec![0.75, 0.25]);
        assert_eq!(m.contributors, vec![2, 0]);
        assert_eq!(m.rows[1], vec![0.0, 1.0]);
        assert_eq!(m.identity_rows, vec![false, true]);
    }

    #[test]
    fn outside_policies() {
        let mut rows = BTreeMap::new();
        rows.insert("d1".to_string(), vec![0.6, 0.2, 0.2]);
        let a = assignment(&[("d1", "A")]);
        let keep = aggregate_matrix(&rows, &a, &ids(&["A", "B"]), OutsidePolicy::KeepColumn).unwrap();
        assert_eq!(keep.rows[0], vec![0.6, 0.2, 0.2]);
        assert_eq!(keep.rows[1], vec![0.0, 1.0, 0.0]);
        let renorm = aggregate_matrix(&rows, &a, &ids(&["A", "B"]), OutsidePolicy::Renormalize).unwrap();
        assert!((renorm.rows[0][0] - 0.75).abs() < 1e-15);
        assert!((renorm.rows[0][1] - 0.25).abs() < 1e-15);
        assert!((renorm.outside_mass[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unknown_residence_patch_is_an_error() {
        let mut rows = BTreeMap::new();
        rows.insert("d1".to_string(), vec![1.0, 0.0, 0.0]);
        let r = aggregate_matrix(&rows, &assignment(&[("d1", "Z")]), &ids(&["A", "B"]), OutsidePolicy::Renormalize);
        assert!(matches!(r, Err(Error::UnknownPatch(_))));
    }

    #[test]
    fn identity_has_zero_alpha() {
        let ap = decompose_alpha_p(&square(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(ap.alpha, vec![0.0, 0.0]);
        assert_eq!(ap.inert, vec![true, true]);
        assert_eq!(ap.p, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn closed_form_row() {
        let ap = decompose_alpha_p(&square(vec![vec![0.8, 0.2], vec![0.0, 1.0]])).unwrap();
        assert!((ap.alpha[0] - 0.2).abs() < 1e-15);
        assert!((ap.p[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(ap.p[0][0], 0.0);
    }

    #[test]
    fn diagonal_above_one_is_rejected() {
        let r = decompose_alpha_p(&square(vec![vec![1.1, -0.1], vec![0.0, 1.0]]));
        assert!(matches!(r, Err(Error::Invariant(_))));
    }

    #[test]
    fn outside_column_cannot_be_decomposed() {
        let mut m = square(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        m.patch_ids.truncate(2);
        m.outside_column = true;
        assert!(matches!(decompose_alpha_p(&m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn individual_count_alpha() {
        let m = square(vec![vec![0.9, 0.1], vec![0.0, 1.0]]);
        let mut rows = BTreeMap::new();
        rows.insert("a".to_string(), vec![1.0, 0.0, 0.0]);
        rows.insert("b".to_string(), vec![0.8, 0.2, 0.0]);
        let a = assignment(&[("a", "p0"), ("b", "p0")]);
        let ap = decompose_alpha_p_individual(&m, &rows, &a, 0.01).unwrap();
        assert_eq!(ap.alpha, vec![0.5, 0.0]);
        assert!((ap.p[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_distances() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(distance(&a, &b, Metric::Euclidean).unwrap(), 2.0);
        assert_eq!(distance(&a, &b, Metric::Manhattan).unwrap(), 4.0);
        assert!((distance(&a, &b, Metric::Minkowski(3.0)).unwrap() - 4f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0]];
        assert!(matches!(distance(&a, &b, Metric::Manhattan), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("euclidean".parse::<Metric>().unwrap(), Metric::Euclidean);
        assert_eq!("Minkowski(3)".parse::<Metric>().unwrap(), Metric::Minkowski(3.0));
        assert_eq!("minkowski:2.5".parse::<Metric>().unwrap(), Metric::Minkowski(2.5));
        assert!("minkowski(0.5)".parse::<Metric>().is_err());
        assert!("cosine".parse::<Metric>().is_err());
        assert_eq!(Metric::Minkowski(3.0).to_string(), "minkowski(3)");
    }

    #[test]
    fn csv_round_trips() {
        let m = square(vec![vec![0.7, 0.3], vec![0.125, 0.875]]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("residence,p0,p1\n"));
        let back = MobilityMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, m.rows);
        let ap = decompose_alpha_p(&m).unwrap();
        let mut buf = Vec::new();
        ap.write_csv(&mut buf).unwrap();
        assert_eq!(AlphaP::read_csv(buf.as_slice()).unwrap(), ap);
    }
}
