use std::ffi::{CStr, CString};
use std::ptr;

use resmob::bridge::{fit_bmme, fit_sigma_horne, BmmeOptions, HorneOptions, OccupationOptions};
use resmob::geo::{OccupancyGrid, DEFAULT_MAX_CELLS};
use resmob::occupancy::trajectory_row;
use resmob::pings::{TrackPoint, Trajectory, UtcOffset};
use resmob::seirs::{integrate, SeirsParams, SeirsState};
use resmob::synth::{generate, write_patches_geojson, SynthConfig};
use resmob_ffi::*;

fn last_error() -> String {
    let p = resmob_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn track() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..40).map(|k| 1000.0 + 300.0 * k as f64 + (k % 3) as f64 * 17.0).collect();
    let x: Vec<f64> = (0..40).map(|k| 499_000.0 + 40.0 * (k as f64 * 0.7).sin() + 5.0 * k as f64).collect();
    let y: Vec<f64> = (0..40).map(|k| 3_214_000.0 + 30.0 * (k as f64 * 1.3).cos()).collect();
    (t, x, y)
}

fn core_trajectory() -> Trajectory {
    let (t, x, y) = track();
    let points = (0..t.len()).map(|i| TrackPoint { t: t[i] - t[0], x: x[i], y: y[i] }).collect();
    Trajectory { device_id: String::new(), t0_local: Default::default(), points }
}

fn trajectory() -> *mut ResmobTrajectory {
    let (t, x, y) = track();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { resmob_trajectory_new(t.as_ptr(), x.as_ptr(), y.as_ptr(), t.len(), &mut h) }, ResmobStatus::Ok);
    h
}

#[test]
fn header_declares_every_exported_function() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = std::fs::read_to_string(format!("{dir}/src/lib.rs")).unwrap();
    let header = std::fs::read_to_string(format!("{dir}/include/resmob.h")).unwrap();
    let names: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 20, "{names:?}");
    for name in names {
        let declared = header.contains(&format!(" {name}(")) || header.contains(&format!("*{name}("));
        assert!(declared, "{name} missing from header");
    }
    for handle in ["ResmobTrajectory", "ResmobPatchMap", "ResmobGrid", "ResmobSeirsParams", "ResmobSeirsRun", "ResmobPipeline"] {
        assert!(header.contains(&format!("typedef struct {handle} {handle};")), "{handle} not opaque");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        "#include \"resmob.h\"\nint main(void) { ResmobFit f; (void)f; return resmob_version() == 0 ? RESMOB_STATUS_PANIC : RESMOB_STATUS_OK; }\n",
    )
    .unwrap();
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&main)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(resmob_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn fits_agree_with_the_library() {
    let h = trajectory();
    let core = &core_trajectory();
    let mut f = ResmobFit { method: ResmobFitMethod::BmmeJoint, sigma2: 0.0, delta2: 0.0, loglik: 0.0, flags: 0 };

    assert_eq!(unsafe { resmob_fit(h, ResmobFitMethod::HorneFixedDelta, 25.0, &mut f) }, ResmobStatus::Ok);
    let direct = fit_sigma_horne(core, 25.0, &HorneOptions::default()).unwrap();
    assert_eq!((f.method, f.sigma2, f.delta2, f.loglik), (ResmobFitMethod::HorneFixedDelta, direct.sigma2, 25.0, direct.loglik));

    assert_eq!(unsafe { resmob_fit(h, ResmobFitMethod::BmmeJoint, 0.0, &mut f) }, ResmobStatus::Ok);
    let direct = fit_bmme(core, &BmmeOptions::default()).unwrap();
    assert_eq!((f.sigma2, f.delta2, f.loglik), (direct.sigma2, direct.delta2, direct.loglik));
    unsafe { resmob_trajectory_free(h) };
}

#[test]
fn occupation_row_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("patches.geojson");
    let city = generate(&SynthConfig { residents: 1, ..Default::default() }, 1, 12, UtcOffset::default()).unwrap();
    write_patches_geojson(&city.map, std::fs::File::create(&path).unwrap()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut map = ptr::null_mut();
    assert_eq!(unsafe { resmob_patch_map_load(cpath.as_ptr(), 12, &mut map) }, ResmobStatus::Ok);
    let n = unsafe { resmob_patch_map_len(map) };
    assert_eq!(n, 4);
    assert_eq!(unsafe { resmob_patch_map_locate(map, 499_000.0, 3_214_000.0) }, 0);
    assert_eq!(unsafe { resmob_patch_map_locate(map, 0.0, 0.0) }, -1);
    assert_eq!(unsafe { resmob_patch_map_locate(ptr::null(), 499_000.0, 3_214_000.0) }, -1);

    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { resmob_grid_new(map, 25.0, 200.0, &mut grid) }, ResmobStatus::Ok);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { resmob_grid_new(map, 1e-3, 200.0, &mut bad) }, ResmobStatus::GridTooLarge);
    assert!(bad.is_null());

    let traj = trajectory();
    let mut fit = ResmobFit { method: ResmobFitMethod::BmmeJoint, sigma2: 0.0, delta2: 0.0, loglik: 0.0, flags: 0 };
    assert_eq!(unsafe { resmob_fit(traj, ResmobFitMethod::HorneFixedDelta, 100.0, &mut fit) }, ResmobStatus::Ok);
    let mut row = vec![f64::NAN; n + 1];
    let status = unsafe { resmob_occupation_row(traj, &fit, grid, 60.0, row.as_mut_ptr(), n) };
    assert_eq!(status, ResmobStatus::InvalidArgument);
    assert!(last_error().contains("need 5"));
    assert_eq!(unsafe { resmob_occupation_row(traj, &fit, grid, 60.0, row.as_mut_ptr(), n + 1) }, ResmobStatus::Ok);
    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let core_grid = OccupancyGrid::build(&city.map, 25.0, 200.0, DEFAULT_MAX_CELLS).unwrap();
    let core_traj = &core_trajectory();
    let core_fit = fit_sigma_horne(core_traj, 100.0, &HorneOptions::default()).unwrap();
    let opts = OccupationOptions { time_step: 60.0, ..Default::default() };
    let direct = trajectory_row(core_traj, &core_fit, &core_grid, &opts).unwrap();
    for (a, b) in row.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    unsafe {
        resmob_trajectory_free(traj);
        resmob_grid_free(grid);
        resmob_patch_map_free(map);
    }
}

#[test]
fn distance_and_argument_errors() {
    let a = [0.0, 1.0, 1.0, 0.0];
    let b = [0.5, 0.5, 0.0, 1.0];
    let mut d = -1.0;
    let call = |m, p, d: &mut f64| unsafe { resmob_distance(a.as_ptr(), b.as_ptr(), 2, 2, m, p, d) };
    assert_eq!(call(ResmobMetric::Manhattan, 0.0, &mut d), ResmobStatus::Ok);
    assert!((d - 3.0).abs() < 1e-15);
    assert_eq!(call(ResmobMetric::Euclidean, 0.0, &mut d), ResmobStatus::Ok);
    assert!((d - 2.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(call(ResmobMetric::Minkowski, 3.0, &mut d), ResmobStatus::Ok);
    assert!((d - (0.125f64 * 2.0 + 2.0).cbrt()).abs() < 1e-14);
    assert_eq!(call(ResmobMetric::Minkowski, 0.5, &mut d), ResmobStatus::InvalidArgument);
    assert!(last_error().contains("minkowski"));

    assert_eq!(unsafe { resmob_distance(ptr::null(), b.as_ptr(), 2, 2, ResmobMetric::Manhattan, 0.0, &mut d) }, ResmobStatus::NullPointer);
    let mut h = ptr::null_mut();
    let t = [0.0, 10.0, 5.0];
    assert_eq!(unsafe { resmob_trajectory_new(t.as_ptr(), t.as_ptr(), t.as_ptr(), 3, &mut h) }, ResmobStatus::InvalidArgument);
    assert!(h.is_null());
    assert_eq!(unsafe { resmob_trajectory_new(t.as_ptr(), t.as_ptr(), t.as_ptr(), 2, ptr::null_mut()) }, ResmobStatus::NullPointer);
    let mut f = ResmobFit { method: ResmobFitMethod::BmmeJoint, sigma2: 0.0, delta2: 0.0, loglik: 0.0, flags: 0 };
    assert_eq!(unsafe { resmob_fit(ptr::null(), ResmobFitMethod::BmmeJoint, 0.0, &mut f) }, ResmobStatus::NullPointer);
    assert!(last_error().contains("trajectory"));

    // a two-point track cannot be fitted
    assert_eq!(unsafe { resmob_trajectory_new(t.as_ptr(), t.as_ptr(), t.as_ptr(), 2, &mut h) }, ResmobStatus::Ok);
    assert_eq!(unsafe { resmob_fit(h, ResmobFitMethod::BmmeJoint, 0.0, &mut f) }, ResmobStatus::InsufficientData);
    unsafe {
        resmob_trajectory_free(h);
        resmob_trajectory_free(ptr::null_mut());
        resmob_patch_map_free(ptr::null_mut());
        resmob_seirs_run_free(ptr::null_mut());
        resmob_pipeline_free(ptr::null_mut());
    }
}

#[test]
fn seirs_run_matches_the_library() {
    let pop = [40_000.0, 15_000.0];
    let mu = 0.06 / (1000.0 * 365.0);
    let direct_params = SeirsParams {
        patch_ids: vec!["0".into(), "1".into()],
        lambda: pop.iter().map(|x| mu * x).collect(),
        beta: vec![1.5; 2],
        mu: vec![mu; 2],
        gamma: vec![1.0 / 14.0; 2],
        tau: vec![1.0 / 180.0; 2],
        psi: vec![0.0; 2],
        kappa: vec![1.0 / 7.0; 2],
        alpha: vec![0.3, 0.1],
        p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        population: pop.to_vec(),
    };
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { resmob_seirs_params_new(2, &mut q) }, ResmobStatus::Ok);
    let set = |name: &str, v: &[f64]| {
        let name = CString::new(name).unwrap();
        unsafe { resmob_seirs_params_set(q, name.as_ptr(), v.as_ptr(), v.len()) }
    };
    let flat_p: Vec<f64> = direct_params.p.concat();
    for (name, v) in [
        ("lambda", &direct_params.lambda),
        ("beta", &direct_params.beta),
        ("mu", &direct_params.mu),
        ("gamma", &direct_params.gamma),
        ("tau", &direct_params.tau),
        ("kappa", &direct_params.kappa),
        ("alpha", &direct_params.alpha),
        ("population", &direct_params.population),
        ("p", &flat_p),
    ] {
        assert_eq!(set(name, v), ResmobStatus::Ok, "{name}");
    }
    assert_eq!(set("beta", &[1.0]), ResmobStatus::InvalidArgument);
    assert_eq!(set("delta", &[1.0, 1.0]), ResmobStatus::InvalidArgument);
    assert!(last_error().contains("delta"));

    let init = [39_998.0, 15_000.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { resmob_seirs_integrate(q, init.as_ptr(), 7, 30.0, 0.1, &mut run) }, ResmobStatus::InvalidArgument);
    assert_eq!(unsafe { resmob_seirs_integrate(q, init.as_ptr(), 8, 30.0, 0.1, &mut run) }, ResmobStatus::Ok);

    let state = SeirsState { s: init[..2].to_vec(), e: init[2..4].to_vec(), i: init[4..6].to_vec(), r: init[6..].to_vec() };
    let direct = integrate(&direct_params, &state, 30.0, 0.1).unwrap();
    let len = unsafe { resmob_seirs_run_len(run) };
    assert_eq!(len, direct.times.len());
    let mut buf = [0.0; 8];
    let mut t = 0.0;
    for k in [0, len / 2, len - 1] {
        assert_eq!(unsafe { resmob_seirs_run_node(run, k, &mut t, buf.as_mut_ptr(), 8) }, ResmobStatus::Ok);
        let s = &direct.states[k];
        assert_eq!(t, direct.times[k]);
        assert_eq!(buf.to_vec(), [s.s.clone(), s.e.clone(), s.i.clone(), s.r.clone()].concat());
    }
    assert_eq!(unsafe { resmob_seirs_run_node(run, len, &mut t, buf.as_mut_ptr(), 8) }, ResmobStatus::InvalidArgument);
    unsafe {
        resmob_seirs_run_free(run);
        resmob_seirs_params_free(q);
    }
}

#[test]
fn pipeline_commands_through_a_handle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{
  "seed": 9,
  "paths": {"pings": "pings.csv", "patches": "patches.geojson", "out": "out"},
  "pings": {"windows": [{"name": "W", "start": "2020-09-21", "end": "2020-09-23"}]},
  "epi": {"seed_patches": ["1001"], "t_end": 5},
  "synth": {"residents": 12, "days": 3}
}"#,
    )
    .unwrap();
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_ne!(unsafe { resmob_pipeline_open(missing.as_ptr(), &mut p) }, ResmobStatus::Ok);
    assert!(p.is_null());

    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { resmob_pipeline_open(path.as_ptr(), &mut p) }, ResmobStatus::Ok);
    let cmd = |c: &str, w: Option<&str>| {
        let c = CString::new(c).unwrap();
        let w = w.map(|w| CString::new(w).unwrap());
        unsafe { resmob_pipeline_command(p, c.as_ptr(), w.as_ref().map_or(ptr::null(), |w| w.as_ptr())) }
    };
    assert_eq!(cmd("synth", None), ResmobStatus::Ok);
    assert_eq!(cmd("matrix", Some("W")), ResmobStatus::MissingArtifact);
    assert_eq!(cmd("ingest", Some("X")), ResmobStatus::Config);
    assert_eq!(cmd("launch", None), ResmobStatus::InvalidArgument);
    for c in ["ingest", "residence", "fit", "matrix", "simulate"] {
        assert_eq!(cmd(c, Some("W")), ResmobStatus::Ok, "{c}: {}", last_error());
    }
    assert!(dir.path().join("out/W/seirs.csv").is_file());
    unsafe { resmob_pipeline_free(p) };
}
