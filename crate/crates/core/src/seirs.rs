//! Multi-patch SEIRS model with residence-time mobility coupling.
//!
//! Residents of patch `k` spend a share `α_k p_kj` of their time in patch `j`
//! and `1 − α_k` at home. Infection happens wherever people are, at the
//! prevalence of the people present there.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::AlphaP;

#[derive(Debug, Clone, PartialEq)]
pub struct SeirsParams {
    pub patch_ids: Vec<String>,
    /// Recruitment, persons/day.
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: Vec<f64>,
    pub psi: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    /// Census populations the scenario was built from.
    pub population: Vec<f64>,
}

impl SeirsParams {
    pub fn n(&self) -> usize {
        self.patch_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let vectors = [
            ("lambda", &self.lambda),
            ("beta", &self.beta),
            ("mu", &self.mu),
            ("gamma", &self.gamma),
            ("tau", &self.tau),
            ("psi", &self.psi),
            ("kappa", &self.kappa),
            ("alpha", &self.alpha),
            ("population", &self.population),
        ];
        for (name, v) in vectors {
            if v.len() != n {
                return Err(Error::ShapeMismatch(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if let Some(x) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, found {x}")));
            }
        }
        if let Some((i, a)) = self.alpha.iter().enumerate().find(|(_, a)| **a > 1.0) {
            return Err(Error::Config(format!("alpha[{i}] = {a} exceeds 1")));
        }
        if self.p.len() != n || self.p.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!("p must be {n}×{n}")));
        }
        for (i, row) in self.p.iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("p row {i} has a negative or non-finite entry")));
            }
            if row[i] != 0.0 {
                return Err(Error::Config(format!("p[{i}][{i}] must be zero")));
            }
            let s: f64 = row.iter().sum();
            if self.alpha[i] > 0.0 && (s - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("p row {i} sums to {s} with alpha > 0")));
            }
        }
        Ok(())
    }
}

/// Compartments per patch, persons.
#[derive(Debug, Clone, PartialEq)]
pub struct SeirsState {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl SeirsState {
    pub fn zeros(n: usize) -> Self {
        Self { s: vec![0.0; n], e: vec![0.0; n], i: vec![0.0; n], r: vec![0.0; n] }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn total(&self, k: usize) -> f64 {
        self.s[k] + self.e[k] + self.i[k] + self.r[k]
    }

    fn flat(&self) -> Vec<f64> {
        [&self.s, &self.e, &self.i, &self.r].into_iter().flatten().copied().collect()
    }

    fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 4;
        Self {
            s: v[..n].to_vec(),
            e: v[n..2 * n].to_vec(),
            i: v[2 * n..3 * n].to_vec(),
            r: v[3 * n..].to_vec(),
        }
    }
}

/// Prevalence among the people present in patch `j`:
/// `((1−α_j)I_j + Σ_k α_k p_kj I_k) / ((1−α_j)N_j + Σ_k α_k p_kj N_k)`, with `N`
/// the live patch totals. An empty patch yields `(0, true)`.
pub fn effective_prevalence(j: usize, state: &SeirsState, params: &SeirsParams) -> (f64, bool) {
    let stay = 1.0 - params.alpha[j];
    let mut num = stay * state.i[j];
    let mut den = stay * state.total(j);
    for k in 0..state.n() {
        let w = params.alpha[k] * params.p[k][j];
        if w != 0.0 {
            num += w * state.i[k];
            den += w * state.total(k);
        }
    }
    if den > 0.0 {
        (num / den, false)
    } else {
        (0.0, true)
    }
}

fn rhs(y: &[f64], params: &SeirsParams, out: &mut [f64]) {
    let n = params.n();
    let state = SeirsState::from_flat(y);
    let prev: Vec<f64> = (0..n).map(|j| effective_prevalence(j, &state, params).0).collect();
    for i in 0..n {
        let (s, e, inf, r) = (state.s[i], state.e[i], state.i[i], state.r[i]);
        let mut force = params.beta[i] * (1.0 - params.alpha[i]) * prev[i];
        for j in 0..n {
            let w = params.alpha[i] * params.p[i][j];
            if w != 0.0 {
                force += w * params.beta[j] * prev[j];
            }
        }
        let infection = s * force;
        out[i] = params.lambda[i] - infection - params.mu[i] * s + params.tau[i] * r;
        out[n + i] = infection - (params.kappa[i] + params.mu[i]) * e;
        out[2 * n + i] = params.kappa[i] * e - (params.gamma[i] + params.psi[i] + params.mu[i]) * inf;
        out[3 * n + i] = params.gamma[i] * inf - (params.tau[i] + params.mu[i]) * r;
    }
}

pub fn derivatives(state: &SeirsState, params: &SeirsParams) -> SeirsState {
    let y = state.flat();
    let mut out = vec![0.0; y.len()];
    rhs(&y, params, &mut out);
    SeirsState::from_flat(&out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeirsTrajectory {
    pub patch_ids: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<SeirsState>,
}

impl SeirsTrajectory {
    /// `t`, then `S_<id>,E_<id>,I_<id>,R_<id>` for each patch.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for id in &self.patch_ids {
            for c in ["S", "E", "I", "R"] {
                header.push(format!("{c}_{id}"));
            }
        }
        w.write_record(&header)?;
        for (t, st) in self.times.iter().zip(&self.states) {
            let mut rec = vec![t.to_string()];
            for k in 0..st.n() {
                for v in [st.s[k], st.e[k], st.i[k], st.r[k]] {
                    rec.push(v.to_string());
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("t") || (header.len() - 1) % 4 != 0 {
            return Err(Error::Format("trajectory header must be `t` then S/E/I/R per patch".into()));
        }
        let patch_ids: Vec<String> = header
            .iter()
            .skip(1)
            .step_by(4)
            .map(|h| h.strip_prefix("S_").unwrap_or(h).to_string())
            .collect();
        let n = patch_ids.len();
        let (mut times, mut states) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let v = rec
                .iter()
                .map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("bad trajectory value `{x}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 4 * n + 1 {
                return Err(Error::Format("trajectory row length differs from header".into()));
            }
            times.push(v[0]);
            let mut st = SeirsState::zeros(n);
            for k in 0..n {
                st.s[k] = v[1 + 4 * k];
                st.e[k] = v[2 + 4 * k];
                st.i[k] = v[3 + 4 * k];
                st.r[k] = v[4 + 4 * k];
            }
            states.push(st);
        }
        Ok(Self { patch_ids, times, states })
    }
}

const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Classical fixed-step RK4 from `t = 0` to `t_end`. Values in `[−1e-9, 0)` are
/// clamped to zero after each step; anything more negative, or non-finite, aborts.
pub fn integrate(params: &SeirsParams, init: &SeirsState, t_end: f64, dt: f64) -> Result<SeirsTrajectory> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Config(format!("need dt > 0 and t_end ≥ 0, got dt={dt}, t_end={t_end}")));
    }
    if init.n() != params.n() {
        return Err(Error::ShapeMismatch(format!("initial state has {} patches, params {}", init.n(), params.n())));
    }
    let mut y = init.flat();
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("initial state must be finite and nonnegative, found {v}")));
    }
    let steps = (t_end / dt).round() as usize;
    let m = y.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(init.clone());
    for step in 1..=steps {
        rhs(&y, params, &mut k1);
        for q in 0..m {
            tmp[q] = y[q] + 0.5 * dt * k1[q];
        }
        rhs(&tmp, params, &mut k2);
        for q in 0..m {
            tmp[q] = y[q] + 0.5 * dt * k2[q];
        }
        rhs(&tmp, params, &mut k3);
        for q in 0..m {
            tmp[q] = y[q] + dt * k3[q];
        }
        rhs(&tmp, params, &mut k4);
        let t = step as f64 * dt;
        for q in 0..m {
            let v = y[q] + dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            if !v.is_finite() {
                return Err(Error::Integration { step, t, reason: format!("non-finite value in component {q}") });
            }
            if v < -NEGATIVE_TOLERANCE {
                return Err(Error::Integration { step, t, reason: format!("component {q} went negative ({v})") });
            }
            y[q] = v.max(0.0);
        }
        times.push(t);
        states.push(SeirsState::from_flat(&y));
    }
    Ok(SeirsTrajectory { patch_ids: params.patch_ids.clone(), times, states })
}

/// Epidemic settings shared by all patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpiConfig {
    pub beta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub tau: f64,
    pub psi: f64,
    /// Natural death rate, 1/day. Recruitment is `mu·N` per patch.
    pub mu: f64,
    pub seed_patches: Vec<String>,
    pub seed_exposed: f64,
    pub seed_infectious: f64,
    pub dt: f64,
    pub t_end: f64,
}

impl Default for EpiConfig {
    fn default() -> Self {
        Self {
            beta: 1.5,
            kappa: 1.0 / 7.0,
            gamma: 1.0 / 14.0,
            tau: 1.0 / 180.0,
            psi: 0.0,
            mu: 0.06 / (1000.0 * 365.0),
            seed_patches: ["2956", "3367", "5734", "6200"].map(String::from).to_vec(),
            seed_exposed: 1.0,
            seed_infectious: 1.0,
            dt: 0.1,
            t_end: 200.0,
        }
    }
}

/// Parameters and initial state for the patches of `ap` with census `population`
/// (same order). Seed patches start with the configured E and I; everyone else is
/// susceptible.
pub fn scenario_from_estimates(ap: &AlphaP, population: &[f64], epi: &EpiConfig) -> Result<(SeirsParams, SeirsState)> {
    let n = ap.patch_ids.len();
    if population.len() != n {
        return Err(Error::ShapeMismatch(format!("{} populations for {n} patches", population.len())));
    }
    let fill = |v: f64| vec![v; n];
    let params = SeirsParams {
        patch_ids: ap.patch_ids.clone(),
        lambda: population.iter().map(|&p| epi.mu * p).collect(),
        beta: fill(epi.beta),
        mu: fill(epi.mu),
        gamma: fill(epi.gamma),
        tau: fill(epi.tau),
        psi: fill(epi.psi),
        kappa: fill(epi.kappa),
        alpha: ap.alpha.clone(),
        p: ap.p.clone(),
        population: population.to_vec(),
    };
    let mut init = SeirsState { s: population.to_vec(), ..SeirsState::zeros(n) };
    for id in &epi.seed_patches {
        let k = ap
            .patch_ids
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| Error::UnknownPatch(id.clone()))?;
        init.e[k] = epi.seed_exposed;
        init.i[k] = epi.seed_infectious;
        init.s[k] = population[k] - init.e[k] - init.i[k] - init.r[k];
        if init.s[k] < 0.0 {
            return Err(Error::Config(format!("seed patch `{id}` has population {} below its seed cases", population[k])));
        }
    }
    params.validate()?;
    Ok((params, init))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    #[default]
    Counts,
    Proportions,
}

impl DiffMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiffMode::Counts => "counts",
            DiffMode::Proportions => "proportions",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceCurves {
    pub mode: DiffMode,
    pub patch_ids: Vec<String>,
    pub times: Vec<f64>,
    /// `per_patch[t][k]`.
    pub per_patch: Vec<Vec<f64>>,
    pub global: Vec<f64>,
}

/// Infection difference A − B per patch and city-wide. Proportions divide by
/// the live patch totals (and the city total for the global curve).
pub fn difference_curves(a: &SeirsTrajectory, b: &SeirsTrajectory, mode: DiffMode) -> Result<DifferenceCurves> {
    if a.patch_ids != b.patch_ids {
        return Err(Error::ShapeMismatch("trajectories cover different patches".into()));
    }
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::ShapeMismatch("trajectories have different time grids".into()));
    }
    let n = a.patch_ids.len();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let mut per_patch = Vec::with_capacity(a.times.len());
    let mut global = Vec::with_capacity(a.times.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let row: Vec<f64> = (0..n)
            .map(|k| match mode {
                DiffMode::Counts => sa.i[k] - sb.i[k],
                DiffMode::Proportions => ratio(sa.i[k], sa.total(k)) - ratio(sb.i[k], sb.total(k)),
            })
            .collect();
        let g = match mode {
            DiffMode::Counts => row.iter().sum(),
            DiffMode::Proportions => {
                let sum = |st: &SeirsState| -> (f64, f64) {
                    (0..n).fold((0.0, 0.0), |(i, t), k| (i + st.i[k], t + st.total(k)))
                };
                let ((ia, na), (ib, nb)) = (sum(sa), sum(sb));
                ratio(ia, na) - ratio(ib, nb)
            }
        };
        per_patch.push(row);
        global.push(g);
    }
    Ok(DifferenceCurves { mode, patch_ids: a.patch_ids.clone(), times: a.times.clone(), per_patch, global })
}

impl DifferenceCurves {
    /// `t,<patch ids...>,global`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.patch_ids.iter().cloned());
        header.push("global".into());
        w.write_record(&header)?;
        for (q, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.per_patch[q].iter().map(|v| v.to_string()));
            rec.push(self.global[q].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
