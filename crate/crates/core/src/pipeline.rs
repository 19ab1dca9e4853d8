//! Pipeline commands. Each reads its upstream artifacts from the output
//! directory, writes its own, and leaves a `<command>.manifest.json` recording
//! the config hash, the sha256 of every file read and written, and counts.
//!
//! Layout under `paths.out`:
//! - `<window>/trajectories.csv`, `ingest.json` (selection counts, rejects, time origins)
//! - `<window>/residence.csv`
//! - `<window>/fits.csv`
//! - `<window>/individual_rows.csv`, `matrix.csv`, `matrix.json`, `alpha_p.csv`
//! - `<window>/seirs.csv`
//! - `distances.csv`, `diff_<a>__<b>_{counts,proportions}.csv`
//! - `synth/truth.json`, `synth/truth_matrix.csv`

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bridge::{fit_bmme, fit_sigma_horne, read_fits_csv, write_fits_csv, BmmeOptions, BridgeFit, FitMethod, HorneOptions};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geo::{load_patches, OccupancyGrid, PatchMap, UtmProjector, OUTSIDE_LABEL};
use crate::occupancy::{
    aggregate_matrix, decompose_alpha_p, decompose_alpha_p_individual, matrix_distance, trajectory_row, AlphaMode,
    AlphaP, MobilityMatrix, OutsidePolicy,
};
use crate::pings::{
    build_trajectories, bridge_pool, filter_window, parse_pings, read_trajectories, select_ids, write_trajectories,
    RejectReport, StudyWindow, Trajectory, UtcOffset,
};
use crate::residence::{assign_all, ResidenceAssignment};
use crate::rng::stream_seed;
use crate::seirs::{difference_curves, integrate, scenario_from_estimates, DiffMode, SeirsTrajectory};
use crate::synth::{generate, write_patches_geojson, write_pings_csv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub window: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    /// sha256 of each file read, keyed by path relative to the output directory
    /// (absolute for files outside it).
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, Value>,
    pub wall_time_seconds: f64,
}

/// What `ingest` records beyond the common manifest fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub window: String,
    pub partner: Option<String>,
    pub pings_in_window: usize,
    pub ids_in_window: usize,
    pub ids_selected: usize,
    pub ids_bridge_eligible: usize,
    pub rejects: RejectReport,
    /// Local start time of each device's trajectory; `t_seconds` counts from here.
    pub origins: BTreeMap<String, NaiveDateTime>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    command: &'static str,
    window: Option<String>,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    counts: BTreeMap<String, Value>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig, command: &'static str, window: Option<&str>) -> Self {
        Self {
            cfg,
            command,
            window: window.map(String::from),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.cfg.paths.out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(self.key(path), sha256_file(path)?);
        Ok(())
    }

    /// Writes `path` atomically through `f` and records its hash.
    fn output<F: FnOnce(&mut BufWriter<File>) -> Result<()>>(&mut self, path: &Path, f: F) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        self.outputs.insert(self.key(path), sha256_file(path)?);
        Ok(())
    }

    fn count(&mut self, name: &str, v: impl Serialize) {
        self.counts.insert(name.to_string(), serde_json::to_value(v).expect("count serializes"));
    }

    fn finish(self, dir: &Path) -> Result<Manifest> {
        let m = Manifest {
            command: self.command.to_string(),
            window: self.window,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            counts: self.counts,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{}.manifest.json", m.command)))?);
        serde_json::to_writer_pretty(&mut w, &m)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(m)
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.paths.out
    }

    pub fn window_dir(&self, window: &str) -> PathBuf {
        self.cfg.paths.out.join(window)
    }

    fn offset(&self) -> UtcOffset {
        UtcOffset::from_hours(self.cfg.pings.utc_offset_hours)
    }

    /// The named windows, or every configured window when `names` is empty.
    pub fn resolve_windows(&self, names: &[String]) -> Result<Vec<StudyWindow>> {
        if names.is_empty() {
            self.cfg.windows()
        } else {
            names.iter().map(|n| self.cfg.window(n)).collect()
        }
    }

    fn require(&self, path: &Path, command: &'static str) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::MissingArtifact { path: path.to_path_buf(), command })
        }
    }

    fn load_map(&self, run: &mut Run) -> Result<PatchMap> {
        let path = &self.cfg.paths.patches;
        if !path.is_file() {
            return Err(Error::Config(format!("patch file {} does not exist", path.display())));
        }
        run.input(path)?;
        load_patches(BufReader::new(File::open(path)?), self.cfg.geo.zone)
    }

    fn load_trajectories(&self, window: &str, run: &mut Run) -> Result<BTreeMap<String, Trajectory>> {
        let dir = self.window_dir(window);
        let (store, manifest) = (dir.join("trajectories.csv"), dir.join("ingest.manifest.json"));
        self.require(&store, "ingest")?;
        self.require(&manifest, "ingest")?;
        run.input(&store)?;
        let record = self.ingest_record(window)?;
        read_trajectories(BufReader::new(File::open(&store)?), &record.origins)
    }

    pub fn ingest_record(&self, window: &str) -> Result<IngestRecord> {
        let path = self.window_dir(window).join("ingest.json");
        self.require(&path, "ingest")?;
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    fn load_residence(&self, window: &str, run: &mut Run) -> Result<ResidenceAssignment> {
        let path = self.window_dir(window).join("residence.csv");
        self.require(&path, "residence")?;
        run.input(&path)?;
        ResidenceAssignment::read_csv(BufReader::new(File::open(path)?))
    }

    fn load_fits(&self, window: &str, run: &mut Run) -> Result<BTreeMap<String, BridgeFit>> {
        let path = self.window_dir(window).join("fits.csv");
        self.require(&path, "fit")?;
        run.input(&path)?;
        read_fits_csv(BufReader::new(File::open(path)?))
    }

    fn load_matrix(&self, window: &str, run: &mut Run) -> Result<MobilityMatrix> {
        let path = self.window_dir(window).join("matrix.csv");
        self.require(&path, "matrix")?;
        run.input(&path)?;
        MobilityMatrix::read_csv(BufReader::new(File::open(path)?))
    }

    fn load_seirs(&self, window: &str, run: &mut Run) -> Result<SeirsTrajectory> {
        let path = self.window_dir(window).join("seirs.csv");
        self.require(&path, "simulate")?;
        run.input(&path)?;
        SeirsTrajectory::read_csv(BufReader::new(File::open(path)?))
    }

    /// Parses the ping file once and writes one trajectory store per window.
    pub fn ingest(&self, windows: &[StudyWindow]) -> Result<Vec<Manifest>> {
        let path = &self.cfg.paths.pings;
        if !path.is_file() {
            return Err(Error::Config(format!("ping file {} does not exist", path.display())));
        }
        let (pings, rejects) = parse_pings(BufReader::new(File::open(path)?), &self.cfg.pings.bbox)?;
        let pings_hash = sha256_file(path)?;
        let projector = UtmProjector::new(self.cfg.geo.zone)?;
        let offset = self.offset();
        let mut manifests = Vec::new();
        for w in windows {
            let mut run = Run::new(&self.cfg, "ingest", Some(&w.name));
            run.inputs.insert(run.key(path), pings_hash.clone());
            let part1 = filter_window(&pings, w, offset);
            let partner = self.cfg.partner_window(&w.name)?;
            let selected = match &partner {
                Some(p) => {
                    let part2 = filter_window(&pings, p, offset);
                    select_ids(&part1, &part2, self.cfg.pings.threshold, self.cfg.pings.selection_mode)
                }
                None => select_ids(&part1, &part1, self.cfg.pings.threshold, self.cfg.pings.selection_mode),
            };
            let kept: Vec<_> = part1.iter().filter(|p| selected.contains(&p.device_id)).cloned().collect();
            let trajectories = build_trajectories(&kept, &projector, offset)?;
            let ids_in_window = crate::pings::count_by_id(&part1).len();
            let eligible = bridge_pool(&trajectories, self.cfg.pings.min_points_for_bridge).len();
            let record = IngestRecord {
                window: w.name.clone(),
                partner: partner.map(|p| p.name),
                pings_in_window: part1.len(),
                ids_in_window,
                ids_selected: trajectories.len(),
                ids_bridge_eligible: eligible,
                rejects: rejects.clone(),
                origins: trajectories.iter().map(|(id, t)| (id.clone(), t.t0_local)).collect(),
            };
            let dir = self.window_dir(&w.name);
            run.output(&dir.join("trajectories.csv"), |f| write_trajectories(&trajectories, f))?;
            run.output(&dir.join("ingest.json"), |f| {
                serde_json::to_writer_pretty(&mut *f, &record)?;
                Ok(f.write_all(b"\n")?)
            })?;
            run.count("pings_parsed", pings.len());
            run.count("pings_rejected", rejects.total());
            run.count("pings_in_window", part1.len());
            run.count("ids_in_window", ids_in_window);
            run.count("ids_selected", trajectories.len());
            run.count("ids_bridge_eligible", eligible);
            manifests.push(run.finish(&dir)?);
        }
        Ok(manifests)
    }

    pub fn residence(&self, window: &str) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "residence", Some(window));
        let map = self.load_map(&mut run)?;
        let trajectories = self.load_trajectories(window, &mut run)?;
        let seed = stream_seed(self.cfg.seed, "residence");
        let assignment = assign_all(trajectories.values(), &map, seed, self.cfg.residence.night()?);
        let dir = self.window_dir(window);
        run.output(&dir.join("residence.csv"), |f| assignment.write_csv(f))?;
        run.count("devices", trajectories.len());
        run.count("assigned", assignment.len());
        run.count("unassignable", assignment.unassignable.len());
        run.count("methods", assignment.method_counts());
        run.finish(&dir)
    }

    pub fn fit(&self, window: &str) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "fit", Some(window));
        let trajectories = self.load_trajectories(window, &mut run)?;
        let pool = bridge_pool(&trajectories, self.cfg.pings.min_points_for_bridge);
        let method = self.cfg.bridge.method;
        let delta2 = self.cfg.bridge.delta2;
        let results: Vec<(String, Result<BridgeFit>)> = pool
            .par_iter()
            .map(|t| {
                let fit = match method {
                    FitMethod::HorneFixedDelta => fit_sigma_horne(t, delta2, &HorneOptions::default()),
                    FitMethod::BmmeJoint => fit_bmme(t, &BmmeOptions::default()),
                };
                (t.device_id.clone(), fit)
            })
            .collect();
        let mut fits = BTreeMap::new();
        let mut failures: BTreeMap<String, String> = BTreeMap::new();
        for (id, r) in results {
            match r {
                Ok(f) => {
                    fits.insert(id, f);
                }
                Err(e) => {
                    failures.insert(id, e.kind().to_string());
                }
            }
        }
        let flagged = fits.values().filter(|f| !f.flags.labels().is_empty()).count();
        let dir = self.window_dir(window);
        run.output(&dir.join("fits.csv"), |f| write_fits_csv(&fits, f))?;
        run.count("method", method.as_str());
        run.count("pool", pool.len());
        run.count("fitted", fits.len());
        run.count("flagged", flagged);
        run.count("failed", failures);
        run.finish(&dir)
    }

    pub fn matrix(&self, window: &str) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "matrix", Some(window));
        let fits = self.load_fits(window, &mut run)?;
        let assignment = self.load_residence(window, &mut run)?;
        let map = self.load_map(&mut run)?;
        let trajectories = self.load_trajectories(window, &mut run)?;
        let grid = OccupancyGrid::build(&map, self.cfg.geo.cell_size, self.cfg.geo.margin, self.cfg.geo.max_cells)?;
        let opts = self.cfg.bridge.occupation();
        let jobs: Vec<(&Trajectory, &BridgeFit)> =
            fits.iter().filter_map(|(id, f)| trajectories.get(id).map(|t| (t, f))).collect();
        let results: Vec<(String, Result<Vec<f64>>)> = jobs
            .par_iter()
            .map(|(t, f)| (t.device_id.clone(), trajectory_row(t, f, &grid, &opts)))
            .collect();
        let mut rows = BTreeMap::new();
        for (id, r) in results {
            rows.insert(id, r?);
        }
        let ids = map.ids();
        let policy = self.cfg.occupancy.outside_policy;
        let matrix = aggregate_matrix(&rows, &assignment, &ids, policy)?;
        // α/p needs the square matrix; it always comes from the renormalized rows.
        let square = match policy {
            OutsidePolicy::Renormalize => matrix.clone(),
            OutsidePolicy::KeepColumn => aggregate_matrix(&rows, &assignment, &ids, OutsidePolicy::Renormalize)?,
        };
        let ap = match self.cfg.occupancy.alpha_mode {
            AlphaMode::TimeShare => decompose_alpha_p(&square)?,
            AlphaMode::IndividualCount { threshold } => {
                decompose_alpha_p_individual(&square, &rows, &assignment, threshold)?
            }
        };
        let dir = self.window_dir(window);
        run.output(&dir.join("individual_rows.csv"), |f| write_rows(&rows, &ids, f))?;
        run.output(&dir.join("matrix.csv"), |f| matrix.write_csv(f))?;
        run.output(&dir.join("matrix.json"), |f| matrix.write_json(f))?;
        run.output(&dir.join("alpha_p.csv"), |f| ap.write_csv(f))?;
        run.count("devices", rows.len());
        run.count("contributors", matrix.contributors.iter().sum::<usize>());
        run.count("identity_rows", matrix.identity_rows.iter().filter(|&&b| b).count());
        run.count("cells", grid.len());
        run.finish(&dir)
    }

    /// Distances between the two parts of each period (`X_FP` vs `X_SP`), or
    /// between an explicit pair of windows.
    pub fn distance(&self, windows: &[String]) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "distance", None);
        let pairs = self.window_pairs(windows)?;
        let metrics = self.cfg.occupancy.parsed_metrics()?;
        let mut table = Vec::new();
        for (label, a, b) in &pairs {
            let (ma, mb) = (self.load_matrix(a, &mut run)?, self.load_matrix(b, &mut run)?);
            let values = metrics.iter().map(|&m| matrix_distance(&ma, &mb, m)).collect::<Result<Vec<_>>>()?;
            table.push((label.clone(), a.clone(), b.clone(), values));
        }
        let path = self.out().join("distances.csv");
        run.output(&path, |f| {
            let mut w = csv::Writer::from_writer(f);
            let mut header = vec!["period".to_string(), "window_a".into(), "window_b".into()];
            header.extend(metrics.iter().map(|m| m.to_string()));
            w.write_record(&header)?;
            for (label, a, b, values) in &table {
                let mut rec = vec![label.clone(), a.clone(), b.clone()];
                rec.extend(values.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        })?;
        run.count("pairs", table.len());
        let out = self.out().to_path_buf();
        run.finish(&out)
    }

    fn window_pairs(&self, windows: &[String]) -> Result<Vec<(String, String, String)>> {
        if !windows.is_empty() {
            if windows.len() != 2 {
                return Err(Error::Config(format!("expected two windows to compare, got {}", windows.len())));
            }
            self.cfg.window(&windows[0])?;
            self.cfg.window(&windows[1])?;
            let label = format!("{} vs {}", windows[0], windows[1]);
            return Ok(vec![(label, windows[0].clone(), windows[1].clone())]);
        }
        let mut pairs = Vec::new();
        for w in self.cfg.windows()? {
            if let Some((period, "FP")) = w.name.rsplit_once('_') {
                if let Some(p) = self.cfg.partner_window(&w.name)? {
                    pairs.push((period.to_string(), w.name.clone(), p.name));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config("no `<PERIOD>_FP`/`<PERIOD>_SP` window pairs configured".into()));
        }
        Ok(pairs)
    }

    pub fn simulate(&self, window: &str) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "simulate", Some(window));
        let path = self.window_dir(window).join("alpha_p.csv");
        self.require(&path, "matrix")?;
        run.input(&path)?;
        let ap = AlphaP::read_csv(BufReader::new(File::open(&path)?))?;
        let map = self.load_map(&mut run)?;
        let population = ap
            .patch_ids
            .iter()
            .map(|id| map.get(id).map(|p| p.population as f64).ok_or_else(|| Error::UnknownPatch(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let (params, init) = scenario_from_estimates(&ap, &population, &self.cfg.epi)?;
        let traj = integrate(&params, &init, self.cfg.epi.t_end, self.cfg.epi.dt)?;
        let dir = self.window_dir(window);
        run.output(&dir.join("seirs.csv"), |f| traj.write_csv(f))?;
        run.count("patches", params.n());
        run.count("steps", traj.times.len().saturating_sub(1));
        run.finish(&dir)
    }

    /// Infection differences between simulations, as counts and as proportions.
    pub fn diff(&self, windows: &[String]) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "diff", None);
        let pairs = self.window_pairs(windows)?;
        for (_, a, b) in &pairs {
            let (ta, tb) = (self.load_seirs(a, &mut run)?, self.load_seirs(b, &mut run)?);
            for mode in [DiffMode::Counts, DiffMode::Proportions] {
                let curves = difference_curves(&ta, &tb, mode)?;
                let path = self.out().join(format!("diff_{a}__{b}_{}.csv", mode.as_str()));
                run.output(&path, |f| curves.write_csv(f))?;
            }
        }
        run.count("pairs", pairs.len());
        let out = self.out().to_path_buf();
        run.finish(&out)
    }

    /// Writes a synthetic city to the configured ping and patch paths, with its
    /// ground truth under `synth/`.
    pub fn synth(&self) -> Result<Manifest> {
        let mut run = Run::new(&self.cfg, "synth", None);
        let city = generate(&self.cfg.synth, self.cfg.seed, self.cfg.geo.zone, self.offset())?;
        run.output(&self.cfg.paths.pings, |f| write_pings_csv(&city.pings, f))?;
        run.output(&self.cfg.paths.patches, |f| write_patches_geojson(&city.map, f))?;
        let dir = self.out().join("synth");
        run.output(&dir.join("truth.json"), |f| {
            serde_json::to_writer_pretty(&mut *f, &city.truth)?;
            Ok(f.write_all(b"\n")?)
        })?;
        let truth = city.truth.matrix(OutsidePolicy::Renormalize)?;
        run.output(&dir.join("truth_matrix.csv"), |f| truth.write_csv(f))?;
        run.count("patches", city.map.len());
        run.count("residents", city.truth.residents.len());
        run.count("pings", city.pings.len());
        run.finish(&dir)
    }

    /// Every per-window stage followed by distance and diff where pairs exist.
    pub fn run_all(&self, windows: &[String]) -> Result<Vec<Manifest>> {
        let ws = self.resolve_windows(windows)?;
        let mut out = self.ingest(&ws)?;
        for w in &ws {
            out.push(self.residence(&w.name)?);
            out.push(self.fit(&w.name)?);
            out.push(self.matrix(&w.name)?);
            out.push(self.simulate(&w.name)?);
        }
        if self.window_pairs(windows).is_ok() {
            out.push(self.distance(windows)?);
            out.push(self.diff(windows)?);
        }
        Ok(out)
    }
}

/// `device_id,<patch ids>,OUTSIDE`.
pub fn write_rows<W: Write>(rows: &BTreeMap<String, Vec<f64>>, patch_ids: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["device_id"];
    header.extend(patch_ids.iter().map(String::as_str));
    header.push(OUTSIDE_LABEL);
    w.write_record(&header)?;
    for (id, row) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable error record for the CLI.
pub fn error_record(e: &Error) -> Value {
    let mut rec = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    if let Error::MissingArtifact { command, path } = e {
        rec["error"]["requires"] = json!(command);
        rec["error"]["path"] = json!(path.display().to_string());
    }
    rec
}
