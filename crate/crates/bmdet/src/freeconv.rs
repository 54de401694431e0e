//! Stieltjes transforms of atomic measures and their free additive
//! convolution with a semicircle law.
//!
//! Sign convention: `m(z) = sum_j w_j / (lambda_j - z)`, which maps the upper
//! half-plane into itself (Im m > 0 for Im z > 0). With this convention the
//! convolution `nu ⊞ sc(sigma2)` is characterized by the fixed point
//!
//! ```text
//! m_mu(z) = m_nu(z + sigma2 * m_mu(z))
//! ```
//!
//! For the opposite (literal `1/(z - x)`) convention, negate the transform.

use crate::error::{Error, Result};
use crate::measure::SpectralMeasure;
use crate::quadrature::{adaptive_simpson, tanh_sinh};
use num_complex::Complex64;

/// A point of the upper half-plane used as a Stieltjes argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexPoint {
    pub re: f64,
    pub im: f64,
}

impl ComplexPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::InvalidInput("non-finite Stieltjes argument".into()));
        }
        if im <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "Stieltjes argument needs Im z > 0, got {im}"
            )));
        }
        Ok(ComplexPoint { re, im })
    }

    pub fn as_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

fn transform_at(nu: &SpectralMeasure, z: Complex64) -> Complex64 {
    nu.atoms
        .iter()
        .map(|&(x, w)| Complex64::new(w, 0.0) / (Complex64::new(x, 0.0) - z))
        .sum()
}

fn transform_derivative_at(nu: &SpectralMeasure, z: Complex64) -> Complex64 {
    // d/dz sum w/(x - z) = sum w/(x - z)^2
    nu.atoms
        .iter()
        .map(|&(x, w)| {
            let d = Complex64::new(x, 0.0) - z;
            Complex64::new(w, 0.0) / (d * d)
        })
        .sum()
}

/// Stieltjes transform `m(z) = sum w_j/(lambda_j - z)` at `z` in the upper
/// half-plane. The result has `Im > 0` and modulus at most `1/Im z`.
pub fn stieltjes(nu: &SpectralMeasure, z: ComplexPoint) -> Result<Complex64> {
    for &(x, w) in &nu.atoms {
        if !x.is_finite() || !w.is_finite() {
            return Err(Error::InvalidInput("non-finite atom".into()));
        }
    }
    Ok(transform_at(nu, z.as_complex()))
}

///// `nu ⊞ sc(sigma2)`: measure handle with the fixed-point solver parameters.
#[derive(Debug, Clone)]
pub struct FreeConvolution {
    pub base: SpectralMeasure,
    pub sigma2: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

/// A density value together with an extrapolation-stability flag.
#[derive(Debug, Clone, Copy)]
pub struct DensityEstimate {
    pub value: f64,
    /// False when the epsilon-ladder values were non-monotone beyond
    /// tolerance, i.e. the extrapolation is suspect.
    pub stable: bool,
}

/// Default epsilon ladder for density recovery.
pub const DEFAULT_EPS_LADDER: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

impl FreeConvolution {
    pub fn new(base: SpectralMeasure, sigma2: f64) -> Result<Self> {
        Self::with_solver(base, sigma2, 1e-12, 400)
    }

    pub fn with_solver(
        base: SpectralMeasure,
        sigma2: f64,
        fp_tol: f64,
        fp_max_iter: usize,
    ) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be > 0, got {sigma2}")));
        }
        if !(fp_tol > 0.0 && fp_tol <= 1e-4) {
            return Err(Error::InvalidInput(format!(
                "fp_tol must lie in (0, 1e-4], got {fp_tol}"
            )));
        }
        Ok(FreeConvolution { base: base.normalize(), sigma2, fp_tol, fp_max_iter })
    }

    /// Stieltjes transform of the convolved measure via the subordination
    /// fixed point, solved by damped Picard iteration with Newton polish.
    pub fn subordination(&self, z: ComplexPoint) -> Result<Complex64> {
        let zc = z.as_complex();
        let s2 = self.sigma2;
        let mut m = transform_at(&self.base, zc);
        let mut residual = f64::INFINITY;
        let damping = 0.5;
        for iter in 0..self.fp_max_iter {
            let target = transform_at(&self.base, zc + s2 * m);
            residual = (m - target).norm();
            if residual <= self.fp_tol {
                return Ok(m);
            }
            if residual < 1e-3 {
                // Newton polish on f(m) = m - m_nu(z + s2 m)
                let fp = Complex64::new(1.0, 0.0)
                    - s2 * transform_derivative_at(&self.base, zc + s2 * m);
                let step = (m - target) / fp;
                let cand = m - step;
                if cand.im > 0.0 {
                    m = cand;
                    continue;
                }
            }
            let mut next = (1.0 - damping) * m + damping * target;
            if next.im <= 0.0 {
                next = target; // Herglotz map keeps Im > 0
            }
            m = next;
            let _ = iter;
        }
        // final check after the loop
        let target = transform_at(&self.base, zc + s2 * m);
        residual = residual.min((m - target).norm());
        if residual <= self.fp_tol {
            Ok(m)
        } else {
            Err(Error::Convergence { iterations: self.fp_max_iter, residual })
        }
    }

    /// Density at `x`, recovered as `(1/pi) Im m(x + i eps)` extrapolated
    /// down the epsilon ladder (strictly decreasing, positive).
    pub fn density_at_detailed(&self, x: f64, eps_ladder: &[f64]) -> Result<DensityEstimate> {
        if eps_ladder.is_empty() {
            return Err(Error::InvalidInput("empty epsilon ladder".into()));
        }
        for w in eps_ladder.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidInput("epsilon ladder must be strictly decreasing".into()));
            }
        }
        if eps_ladder[eps_ladder.len() - 1] <= 0.0 {
            return Err(Error::InvalidInput("epsilon ladder must be positive".into()));
        }
        let inv_pi = std::f64::consts::FRAC_1_PI;
        let mut vals = Vec::with_capacity(eps_ladder.len());
        for &eps in eps_ladder {
            let m = self.subordination(ComplexPoint::new(x, eps)?)?;
            vals.push(inv_pi * m.im);
        }
        let value = extrapolate_to_zero(eps_ladder, &vals);
        // Flag non-monotone ladders: in the bulk Im m is smooth in eps, so the
        // ladder should move monotonically; reversals beyond a small tolerance
        // signal an unstable extrapolation (support edges).
        let mut stable = true;
        if vals.len() >= 3 {
            let d1 = vals[1] - vals[0];
            let d2 = vals[2] - vals[1];
            let scale = vals.iter().cloned().fold(1e-12, f64::max);
            if d1 * d2 < 0.0 && d1.abs().min(d2.abs()) > 1e-3 * scale {
                stable = false;
            }
        }
        Ok(DensityEstimate { value: value.max(0.0), stable })
    }

    /// Density at `x` with the default ladder.
    pub fn density_at(&self, x: f64) -> Result<f64> {
        Ok(self.density_at_detailed(x, &DEFAULT_EPS_LADDER)?.value)
    }

    /// Upper bound for the density: `1/(pi sqrt(sigma2))`.
    pub fn density_bound(&self) -> f64 {
        std::f64::consts::FRAC_1_PI / self.sigma2.sqrt()
    }

    /// Interval certain to contain the support: hull of the atoms widened by
    /// the semicircle radius `2 sqrt(sigma2)`, plus padding.
    pub fn support_hull(&self) -> (f64, f64) {
        let r = 2.0 * self.sigma2.sqrt();
        let pad = 1e-3 * (1.0 + r);
        (
            self.base.min_location() - r - pad,
            self.base.max_location() + r + pad,
        )
    }

    /// `\int log|x| d(nu ⊞ sc)(x)` by adaptive quadrature of the recovered
    /// density, with tanh-sinh treatment of the logarithmic singularity at 0.
    pub fn log_potential(&self) -> Result<f64> {
        let (lo, hi) = self.support_hull();
        let dens = |x: f64| self.density_at(x).unwrap_or(0.0);
        let f = |x: f64| {
            if x == 0.0 {
                0.0
            } else {
                x.abs().ln() * dens(x)
            }
        };
        let tol = 2e-7;
        let mut total = 0.0;
        if lo >= 0.0 || hi <= 0.0 {
            // 0 outside (or at the boundary of) the support hull
            if lo == 0.0 || hi == 0.0 {
                total += tanh_sinh(&f, lo, hi, tol);
            } else {
                total += self.piecewise_simpson(&f, lo, hi, tol);
            }
        } else {
            let a0 = (0.5 * self.sigma2.sqrt()).min(-lo).min(hi);
            if lo < -a0 {
                total += self.piecewise_simpson(&f, lo, -a0, tol);
            }
            total += tanh_sinh(&f, -a0, 0.0, tol);
            total += tanh_sinh(&f, 0.0, a0, tol);
            if hi > a0 {
                total += self.piecewise_simpson(&f, a0, hi, tol);
            }
        }
        if !total.is_finite() {
            return Err(Error::Accuracy { achieved: f64::INFINITY, estimate: total });
        }
        Ok(total)
    }

    /// Cut points segmenting the support hull at every atom and bulk edge,
    /// so piecewise quadrature cannot step over an isolated bulk.
    fn cut_points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let r = 2.0 * self.sigma2.sqrt();
        let mut cs = vec![lo, hi];
        for &(a, _) in &self.base.atoms {
            for c in [a - r, a - 0.5 * r, a, a + 0.5 * r, a + r] {
                if c > lo && c < hi {
                    cs.push(c);
                }
            }
        }
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        cs
    }

    fn piecewise_simpson<F: Fn(f64) -> f64>(&self, f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
        let cuts = self.cut_points(lo, hi);
        cuts.windows(2)
            .map(|w| adaptive_simpson(f, w[0], w[1], tol))
            .sum()
    }

    /// Total mass of the recovered density over the support hull; should be 1.
    pub fn total_mass(&self) -> Result<f64> {
        let (lo, hi) = self.support_hull();
        let dens = |x: f64| self.density_at(x).unwrap_or(0.0);
        Ok(self.piecewise_simpson(&dens, lo, hi, 1e-7))
    }

    /// Cumulative distribution on a uniform grid of `n` points over the
    /// support hull, by trapezoid accumulation of the density. Used for
    /// Kolmogorov-Smirnov comparisons against empirical spectra.
    pub fn cdf_grid(&self, n: usize) -> Result<Vec<(f64, f64)>> {
        let (lo, hi) = self.support_hull();
        let n = n.max(16);
        let h = (hi - lo) / (n - 1) as f64;
        let mut dens = Vec::with_capacity(n);
        for i in 0..n {
            dens.push(self.density_at(lo + i as f64 * h)?);
        }
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        out.push((lo, 0.0));
        for i in 1..n {
            acc += 0.5 * (dens[i - 1] + dens[i]) * h;
            out.push((lo + i as f64 * h, acc.min(1.0)));
        }
        Ok(out)
    }
}

/// Polynomial (Richardson) extrapolation of ladder values to eps = 0 by a
/// Neville scheme; with a geometric 3-point ladder this removes the O(eps)
/// and O(eps^2) errors of `Im m(x + i eps)`.
fn extrapolate_to_zero(eps: &[f64], vals: &[f64]) -> f64 {
    let n = eps.len();
    let mut tab = vals.to_vec();
    for level in 1..n {
        for i in (level..n).rev() {
            let e_hi = eps[i - level];
            let e_lo = eps[i];
            tab[i] = (e_hi * tab[i] - e_lo * tab[i - 1]) / (e_hi - e_lo);
        }
    }
    tab[n - 1]
}

/// Diagnostic quadrature of `Im m(u + iv)` over `u in [-window, window]`;
/// tends to pi as the window grows.
pub fn stieltjes_mass_integral(nu: &SpectralMeasure, v: f64, window: f64) -> Result<f64> {
    if !(v > 0.0) || !(window > 0.0) {
        return Err(Error::InvalidInput("need v > 0 and window > 0".into()));
    }
    let f = |u: f64| {
        transform_at(nu, Complex64::new(u, v)).im
    };
    // Segment the axis at the atoms and expand geometrically towards the
    // window edges so the adaptive rule cannot step over a Lorentzian peak.
    let mut cuts: Vec<f64> = vec![-window, window];
    for &(x, _) in &nu.atoms {
        for c in [x - v, x, x + v] {
            if c > -window && c < window {
                cuts.push(c);
            }
        }
    }
    let spread = nu
        .atoms
        .iter()
        .map(|a| a.0.abs())
        .fold(1.0, f64::max)
        + 10.0 * v;
    let mut t = spread;
    while t < window {
        cuts.push(t);
        cuts.push(-t);
        t *= 4.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive_simpson(&f, w[0], w[1], 1e-8);
    }
    Ok(total)
}
