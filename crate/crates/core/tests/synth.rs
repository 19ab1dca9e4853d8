use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use resmob::geo::Location;
use resmob::pings::UtcOffset;
use resmob::synth::{generate, write_patches_geojson, write_pings_csv, ResidentPlan, SynthConfig};

fn bytes(cfg: &SynthConfig, seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let city = generate(cfg, seed, 12, UtcOffset::default()).unwrap();
    let (mut pings, mut patches) = (Vec::new(), Vec::new());
    write_pings_csv(&city.pings, &mut pings).unwrap();
    write_patches_geojson(&city.map, &mut patches).unwrap();
    (pings, patches, serde_json::to_vec(&city.truth).unwrap())
}

#[test]
fn four_patch_city_is_byte_identical_across_runs() {
    let cfg = SynthConfig { rows: 2, cols: 2, residents: 200, ..Default::default() };
    let a = bytes(&cfg, 17);
    assert_eq!(a, bytes(&cfg, 17));
    assert_ne!(a.0, bytes(&cfg, 18).0);
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Home until 08:00, straight to work by 08:30, back between 17:30 and 18:00.
fn schedule(plan: &ResidentPlan, t: f64) -> (f64, f64) {
    let Some(work) = plan.work else { return plan.home };
    let h = t.rem_euclid(86_400.0) / 3600.0;
    let mix = |f: f64| (plan.home.0 + f * (work.0 - plan.home.0), plan.home.1 + f * (work.1 - plan.home.1));
    match h {
        h if h < 8.0 => mix(0.0),
        h if h < 8.5 => mix((h - 8.0) / 0.5),
        h if h < 17.5 => mix(1.0),
        h if h < 18.0 => mix((18.0 - h) / 0.5),
        _ => mix(0.0),
    }
}

#[test]
fn truth_fractions_agree_with_a_million_step_simulation() {
    let cfg = SynthConfig { residents: 12, ..Default::default() };
    let city = generate(&cfg, 5, 12, UtcOffset::default()).unwrap();
    let span = f64::from(cfg.days) * 86_400.0;
    let steps = 1_000_000;
    let dt = span / steps as f64;
    let theta = 1.0 / cfg.reversion_time;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut commuters = 0;
    for r in &city.truth.residents {
        commuters += usize::from(r.plan.work.is_some());
        let sd0 = (r.plan.sigma2 / (2.0 * theta)).sqrt();
        let decay = (-theta * dt).exp();
        let sd = (r.plan.sigma2 * (1.0 - decay * decay) / (2.0 * theta)).sqrt();
        let mut dev = [sd0 * normal(&mut rng), sd0 * normal(&mut rng)];
        let mut counts = vec![0usize; city.map.len() + 1];
        for k in 0..steps {
            let t = (k as f64 + 0.5) * dt;
            for d in &mut dev {
                *d = *d * decay + sd * normal(&mut rng);
            }
            let a = schedule(&r.plan, t);
            match city.map.locate((a.0 + dev[0], a.1 + dev[1])) {
                Location::Patch(j) => counts[j] += 1,
                Location::Outside => counts[city.map.len()] += 1,
            }
        }
        for (j, c) in counts.iter().enumerate() {
            let dense = *c as f64 / steps as f64;
            assert!((dense - r.fractions[j]).abs() < 0.01, "{} col {j}: {dense} vs {}", r.plan.device_id, r.fractions[j]);
        }
    }
    assert!(commuters > 0);
}
