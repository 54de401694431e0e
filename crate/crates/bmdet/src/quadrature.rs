//! Quadrature rules used by the log-potential and diagnostic integrals:
//! adaptive Simpson for smooth stretches, tanh-sinh for endpoint
//! singularities, and Golub-Welsch Gauss rules for the test oracles.

use nalgebra::DMatrix;

/// Adaptive Simpson with an absolute error target.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    simpson_step(f, a, b, fa, fm, fb, simpson_rule(a, b, fa, fm, fb), tol, 50)
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
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
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Tanh-sinh quadrature on (a, b). Handles integrable singularities at either
/// endpoint; the integrand is never evaluated at `a` or `b` exactly.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let t_max = 3.7;
    let mut h = 0.5;
    let eval = |t: f64| -> f64 {
        let s = (std::f64::consts::FRAC_PI_2) * t.sinh();
        let x = c + r * s.tanh();
        let w = (std::f64::consts::FRAC_PI_2) * t.cosh() / s.cosh().powi(2);
        if x <= a || x >= b || !w.is_finite() {
            return 0.0;
        }
        let v = f(x);
        if v.is_finite() {
            v * w
        } else {
            0.0
        }
    };
    // level 0
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * h <= t_max {
        let t = k as f64 * h;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut estimate = r * h * sum;
    for _ in 0..7 {
        h *= 0.5;
        // add the new midpoints only
        let mut add = 0.0;
        let mut k = 1;
        while (k as f64) * h <= t_max {
            let t = k as f64 * h;
            add += eval(t) + eval(-t);
            k += 2; // odd multiples are the new nodes
        }
        sum += add;
        let new_estimate = r * h * sum;
        let change = (new_estimate - estimate).abs();
        estimate = new_estimate;
        if change <= tol {
            break;
        }
    }
    estimate
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1],
/// computed by eigendecomposition of the Jacobi matrix.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / ((4.0 * kf * kf - 1.0).sqrt());
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            (x, w)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule with weight
/// `exp(-x^2)` on the real line.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = sqrt_pi * eig.eigenvectors[(0, i)].powi(2);
            (x, w)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Expectation of `f(Z)` for standard normal `Z` by Gauss-Hermite quadrature.
pub fn gauss_hermite_expect<F: Fn(f64) -> f64>(nodes: &[(f64, f64)], f: F) -> f64 {
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .map(|&(x, w)| w * f(std::f64::consts::SQRT_2 * x))
        .sum::<f64>()
        * inv_sqrt_pi
}
