//! Numeric integration: adaptive Simpson quadrature and Gauss-Legendre
//! nodes.
//!
//! Adaptive Simpson is the general-purpose route (and the independent check
//! used by the test suites). Gauss-Legendre nodes back the moment
//! computations in [`crate::preference`], where the integrands restricted to
//! one kernel segment are polynomials (Epanechnikov) or analytic (Gaussian)
//! and fixed-order rules are exact to machine precision.

use std::sync::OnceLock;

/// Integrate `f` over `[a, b]` with adaptive Simpson quadrature.
///
/// `tol` is an absolute error target; recursion depth is capped so the
/// routine always terminates, with accuracy degrading gracefully on
/// pathological integrands.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    // Depth 24 resolves features down to (b-a)/2^24 while keeping the
    // worst-case work bounded when `tol` is below what f64 can deliver.
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 24)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        let half = 0.5 * tol;
        simpson_step(f, a, m, fa, flm, fm, left, half, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, half, depth - 1)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], order 64.
///
/// Exact for polynomials up to degree 127.
pub fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| legendre_rule(64))
}

/// Gauss-Legendre nodes and weights on [-1, 1], order 128.
///
/// Exact for polynomials up to degree 255, which covers moment orders up to
/// 253 against a quadratic kernel factor.
pub fn gl128() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| legendre_rule(128))
}

/// Integrate `f` over `[a, b]` with a single fixed Gauss-Legendre rule.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let (nodes, weights) = rule;
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(c + r * x);
    }
    acc * r
}

/// Compute the order-`n` Gauss-Legendre rule by Newton iteration on the
/// Legendre polynomial roots.
fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's asymptotic root estimate, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-15 {
                let (p2, d2) = legendre_eval(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Evaluate the Legendre polynomial `P_n` and its derivative at `x` via the
/// three-term recurrence.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
