use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resmob::seirs::{derivatives, difference_curves, integrate, DiffMode, SeirsParams, SeirsState, SeirsTrajectory};

fn params(alpha: Vec<f64>, p: Vec<Vec<f64>>, population: Vec<f64>) -> SeirsParams {
    let n = alpha.len();
    let mu = 0.06 / (1000.0 * 365.0);
    SeirsParams {
        patch_ids: (0..n).map(|k| format!("{}", 10 + k)).collect(),
        lambda: population.iter().map(|x| mu * x).collect(),
        beta: (0..n).map(|k| 1.5 - 0.1 * k as f64).collect(),
        mu: vec![mu; n],
        gamma: vec![1.0 / 14.0; n],
        tau: vec![1.0 / 180.0; n],
        psi: (0..n).map(|k| 0.001 * k as f64).collect(),
        kappa: vec![1.0 / 7.0; n],
        alpha,
        p,
        population,
    }
}

/// The residence-time system written term by term, with p̃_kj = α_k p_kj.
fn transcribed_rhs(q: &SeirsParams, y: &SeirsState) -> SeirsState {
    let n = q.n();
    let pt = |k: usize, j: usize| q.alpha[k] * q.p[k][j];
    let big_n = |k: usize| y.s[k] + y.e[k] + y.i[k] + y.r[k];
    let ratio = |j: usize| {
        let mut num = (1.0 - q.alpha[j]) * y.i[j];
        let mut den = (1.0 - q.alpha[j]) * big_n(j);
        for k in 0..n {
            num += pt(k, j) * y.i[k];
            den += pt(k, j) * big_n(k);
        }
        num / den
    };
    let mut d = SeirsState::zeros(n);
    for i in 0..n {
        let local = q.beta[i] * (1.0 - q.alpha[i]) * y.s[i] * ratio(i);
        let away: f64 = (0..n).map(|j| q.beta[j] * pt(i, j) * y.s[i] * ratio(j)).sum();
        d.s[i] = q.lambda[i] - local - away - q.mu[i] * y.s[i] + q.tau[i] * y.r[i];
        d.e[i] = local + away - (q.kappa[i] + q.mu[i]) * y.e[i];
        d.i[i] = q.kappa[i] * y.e[i] - (q.gamma[i] + q.psi[i] + q.mu[i]) * y.i[i];
        d.r[i] = q.gamma[i] * y.i[i] - (q.tau[i] + q.mu[i]) * y.r[i];
    }
    d
}

fn assert_close(a: &SeirsState, b: &SeirsState, tol: f64) {
    for (x, y) in [(&a.s, &b.s), (&a.e, &b.e), (&a.i, &b.i), (&a.r, &b.r)] {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() <= tol * v.abs().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn derivatives_match_a_transcription_of_the_system() {
    let q = params(vec![0.5, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![100.0, 100.0]);
    let y = SeirsState { s: vec![80.0, 95.0], e: vec![5.0, 3.0], i: vec![10.0, 0.0], r: vec![5.0, 2.0] };
    assert_close(&derivatives(&y, &q), &transcribed_rhs(&q, &y), 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { rng.random::<f64>() }).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
            })
            .collect();
        let alpha = if n == 1 { vec![0.0] } else { alpha };
        let pop: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..1e5)).collect();
        let q = params(alpha, p, pop.clone());
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { pop.iter().map(|x| rng.random_range(0.0..0.25) * x).collect() };
        let y = SeirsState { s: draw(&mut rng), e: draw(&mut rng), i: draw(&mut rng), r: draw(&mut rng) };
        assert_close(&derivatives(&y, &q), &transcribed_rhs(&q, &y), 1e-12);
    }
}

fn three_patch(scale: f64) -> (SeirsParams, SeirsState) {
    let alpha = [0.4, 0.2, 0.6].iter().map(|a| a * scale).collect();
    let p = vec![vec![0.0, 0.7, 0.3], vec![0.5, 0.0, 0.5], vec![0.2, 0.8, 0.0]];
    let pop = vec![40_000.0, 25_000.0, 10_000.0];
    let mut init = SeirsState { s: pop.clone(), ..SeirsState::zeros(3) };
    init.e[0] = 1.0;
    init.i[0] = 1.0;
    init.s[0] -= 2.0;
    (params(alpha, p, pop), init)
}

#[test]
fn step_halving_shows_fourth_order() {
    let (q, init) = three_patch(1.0);
    let run = |dt: f64| integrate(&q, &init, 60.0, dt).unwrap();
    let (a, b, c) = (run(0.4), run(0.2), run(0.1));
    let gap = |x: &SeirsTrajectory, y: &SeirsTrajectory, stride: usize| {
        x.states
            .iter()
            .enumerate()
            .flat_map(|(k, s)| {
                let t = &y.states[k * stride];
                (0..3).map(move |i| (s.i[i] - t.i[i]).abs().max((s.s[i] - t.s[i]).abs()))
            })
            .fold(0.0, f64::max)
    };
    let ratio = gap(&a, &b, 2) / gap(&b, &c, 2);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn alpha_scaled_scenarios_difference_recomputed_from_raw_trajectories() {
    let (qa, init) = three_patch(1.0);
    let (qb, _) = three_patch(0.5);
    let a = integrate(&qa, &init, 120.0, 0.1).unwrap();
    let b = integrate(&qb, &init, 120.0, 0.1).unwrap();

    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let a_back = SeirsTrajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(a_back, a);

    let counts = difference_curves(&a, &b, DiffMode::Counts).unwrap();
    let props = difference_curves(&a, &b, DiffMode::Proportions).unwrap();
    let mut nonzero = false;
    for (k, (sa, sb)) in a.states.iter().zip(&b.states).enumerate() {
        let mut global = 0.0;
        for i in 0..3 {
            let d = sa.i[i] - sb.i[i];
            global += d;
            nonzero |= d.abs() > 1.0;
            assert!((counts.per_patch[k][i] - d).abs() < 1e-9);
            let na = sa.s[i] + sa.e[i] + sa.i[i] + sa.r[i];
            let nb = sb.s[i] + sb.e[i] + sb.i[i] + sb.r[i];
            assert!((props.per_patch[k][i] - (sa.i[i] / na - sb.i[i] / nb)).abs() < 1e-12);
        }
        assert!((counts.global[k] - global).abs() < 1e-9);
        let tot = |s: &SeirsState| (0..3).map(|i| s.s[i] + s.e[i] + s.i[i] + s.r[i]).sum::<f64>();
        let isum = |s: &SeirsState| s.i.iter().sum::<f64>();
        assert!((props.global[k] - (isum(sa) / tot(sa) - isum(sb) / tot(sb))).abs() < 1e-12);
    }
    assert!(nonzero, "the two scenarios should differ");
}
