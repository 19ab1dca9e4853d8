//! Bounded derivative-free scalar minimization (Brent's method).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` on `[lo, hi]` by golden-section search with parabolic steps.
///
/// Stops when the bracket around the best point is narrower than `2 * tol`
/// (plus a relative term), or after `max_iter` iterations.
pub fn brent_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> ScalarMin
where
    F: FnMut(f64) -> f64,
{
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    const EPS: f64 = 1.0e-11;

    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evaluations = 1;

    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = EPS * x.abs() + tol;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return ScalarMin { x, fx, evaluations, converged: true };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = f(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMin { x, fx, evaluations, converged: false }
}

/// Maximizes `f` on `[lo, hi]`, also checking the bracket endpoints so that
/// monotone objectives land exactly on the boundary.
pub fn maximize_bounded<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> ScalarMin
where
    F: FnMut(f64) -> f64,
{
    let mut neg = |x: f64| {
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { -v }
    };
    let mut best = brent_minimize(&mut neg, lo, hi, tol, max_iter);
    for edge in [lo, hi] {
        let fe = neg(edge);
        best.evaluations += 1;
        if fe < best.fx {
            best.x = edge;
            best.fx = fe;
        }
    }
    best.fx = -best.fx;
    best
}
