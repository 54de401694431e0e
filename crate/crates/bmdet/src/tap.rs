//! Deterministic TAP-side quantities: the diagonal matrix `D_N(m)`, the
//! correction vector `v`, the variational formula and its branch structure,
//! the full prediction for the conditioned Hessian log-determinant, and the
//! outside-region bound.

use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measure::SpectralMeasure;
use nalgebra::DVector;
use serde::Serialize;

/// How the correction vector `v` aligns with `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyClass {
    ZeroV,
    Parallel,
    Orthogonal,
    Generic,
}

/// Which branch the variational minimizer sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `g* = 1 - Q`; selected exactly when the Plefka condition holds.
    Boundary,
    /// `g*` is the interior fixed point of `F_N` in `(0, 1 - Q)`.
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InsideL,
    OutsideL,
}

/// Numerically safe `atanh`: `0.5 (log1p(t) - log1p(-t))` avoids
/// cancellation as `|t| -> 1`.
pub fn atanh_stable(t: f64) -> f64 {
    0.5 * (t.ln_1p() - (-t).ln_1p())
}

/// A magnetization point `(m, beta, h)` with all derived TAP quantities.
#[derive(Debug, Clone)]
pub struct TapPoint {
    m: DVector<f64>,
    beta: f64,
    h: f64,
    q: f64,
    d_diag: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    x: DVector<f64>,
    mv: f64,
    class: DegeneracyClass,
}

impl TapPoint {
    pub fn new(m: Vec<f64>, beta: f64, h: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
        }
        if !h.is_finite() {
            return Err(Error::Domain("h must be finite".into()));
        }
        if m.is_empty() {
            return Err(Error::Domain("m must be nonempty".into()));
        }
        for (i, &mi) in m.iter().enumerate() {
            if !(mi.abs() < 1.0) {
                return Err(Error::Domain(format!(
                    "coordinate {i}: |m_i| must be < 1, got {mi}"
                )));
            }
        }
        let m = DVector::from_vec(m);
        let norm2 = m.norm_squared();
        if norm2 == 0.0 {
            return Err(Error::Domain("m = 0 is excluded".into()));
        }
        let n = m.len();
        let q = norm2 / n as f64;
        let b2 = beta * beta;
        let d_diag =
            DVector::from_fn(n, |i, _| 1.0 / (1.0 - m[i] * m[i]) + 2.0 * b2 * (1.0 - q));
        let u = DVector::from_fn(n, |i, _| {
            atanh_stable(m[i]) - h + 2.0 * b2 * (1.0 - q) * m[i]
        });
        // v = atanh m - h + 2 beta^2 m (1 + Q) - D m, equivalently
        // u + 4 beta^2 Q m - D m
        let v = DVector::from_fn(n, |i, _| {
            u[i] + 4.0 * b2 * q * m[i] - d_diag[i] * m[i]
        });
        let mv = m.dot(&v);
        let x = &v - (mv / norm2) * &m;
        let dm_norm = DVector::from_fn(n, |i, _| d_diag[i] * m[i]).norm();
        let vnorm = v.norm();
        let class = if vnorm <= 1e-13 * (1.0 + dm_norm) {
            DegeneracyClass::ZeroV
        } else if x.norm() <= 1e-12 * vnorm {
            DegeneracyClass::Parallel
        } else if mv.abs() <= 1e-12 * m.norm() * vnorm {
            DegeneracyClass::Orthogonal
        } else {
            DegeneracyClass::Generic
        };
        Ok(TapPoint { m, beta, h, q, d_diag, u, v, x, mv, class })
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }
    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Overlap `Q = ||m||^2 / N`.
    pub fn q(&self) -> f64 {
        self.q
    }
    /// Diagonal of `D_N(m)`.
    pub fn d_diag(&self) -> &DVector<f64> {
        &self.d_diag
    }
    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }
    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }
    /// Component of `v` orthogonal to `m`.
    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
    /// Inner product `(m, v)`.
    pub fn mv(&self) -> f64 {
        self.mv
    }
    pub fn class(&self) -> DegeneracyClass {
        self.class
    }

    /// Second route to `v`: the per-coordinate identity
    /// `v_i = atanh m_i - h - m_i/(1-m_i^2) + 4 beta^2 Q m_i`.
    pub fn v_per_coordinate(&self) -> DVector<f64> {
        let b2 = self.beta * self.beta;
        DVector::from_fn(self.n(), |i, _| {
            let mi = self.m[i];
            atanh_stable(mi) - self.h - mi / (1.0 - mi * mi) + 4.0 * b2 * self.q * mi
        })
    }

    /// Normalized Plefka statistic `(2 beta^2 / N) sum (1 - m_i^2)^2`;
    /// the condition holds iff the value is at most 1.
    pub fn plefka_lhs(&self) -> f64 {
        let b2 = self.beta * self.beta;
        let s: f64 = self.m.iter().map(|&mi| (1.0 - mi * mi).powi(2)).sum();
        2.0 * b2 * s / self.n() as f64
    }

    /// First pole of `F_N`: `min_i D_i / (2 beta^2)`.
    pub fn first_pole(&self) -> f64 {
        let b2 = self.beta * self.beta;
        self.d_diag.iter().cloned().fold(f64::INFINITY, f64::min) / (2.0 * b2)
    }

    /// Variational objective `R_N(g) = beta^2 g^2 + (1/N) sum log(D_i - 2 beta^2 g)`.
    pub fn variational_objective(&self, g: f64) -> Result<f64> {
        let b2 = self.beta * self.beta;
        let mut acc = 0.0;
        for (i, &d) in self.d_diag.iter().enumerate() {
            let arg = d - 2.0 * b2 * g;
            if arg <= 0.0 {
                return Err(Error::Domain(format!(
                    "log argument {arg} <= 0 at index {i} (g = {g})"
                )));
            }
            acc += arg.ln();
        }
        Ok(b2 * g * g + acc / self.n() as f64)
    }

    /// Fixed-point map `F_N(g) = (1/N) sum 1/(D_i - 2 beta^2 g)`.
    pub fn fixed_point_map(&self, g: f64) -> Result<f64> {
        let b2 = self.beta * self.beta;
        let mut acc = 0.0;
        for (i, &d) in self.d_diag.iter().enumerate() {
            let arg = d - 2.0 * b2 * g;
            if arg == 0.0 {
                return Err(Error::Domain(format!("pole of F_N at index {i} (g = {g})")));
            }
            acc += 1.0 / arg;
        }
        Ok(acc / self.n() as f64)
    }

    fn fixed_point_map_derivative(&self, g: f64) -> f64 {
        let b2 = self.beta * self.beta;
        let s: f64 = self
            .d_diag
            .iter()
            .map(|&d| 1.0 / (d - 2.0 * b2 * g).powi(2))
            .sum();
        2.0 * b2 * s / self.n() as f64
    }

    /// Minimize `R_N` over `(-inf, 1-Q]`. The Plefka condition (within a
    /// 1e-9 tie band) selects the boundary `g = 1 - Q`; otherwise the
    /// minimizer is the interior fixed point of `F_N`, found by safeguarded
    /// bisection plus Newton polish.
    pub fn solve_upsilon(&self) -> Result<VariationalResult> {
        let plefka = self.plefka_lhs();
        let gq = 1.0 - self.q;
        if plefka <= 1.0 + 1e-9 {
            return Ok(VariationalResult {
                g_star: gq,
                upsilon: self.variational_objective(gq)?,
                branch: Branch::Boundary,
                plefka_lhs: plefka,
            });
        }
        // Interior root of H(g) = g - F_N(g) in (0, 1-Q). g = 1-Q is always a
        // fixed point of F_N; with Plefka violated, F'_N(1-Q) > 1 so H is
        // positive just below 1-Q, while H(0) = -F_N(0) < 0.
        let hfun = |g: f64| -> Result<f64> { Ok(g - self.fixed_point_map(g)?) };
        let mut lo = 1e-12 * gq;
        if hfun(lo)? >= 0.0 {
            return Err(Error::Solver(format!(
                "no sign change at lower bracket: H({lo}) >= 0"
            )));
        }
        let mut hi = f64::NAN;
        for k in 1..=48 {
            let cand = gq * (1.0 - 0.5_f64.powi(k));
            if hfun(cand)? > 0.0 {
                hi = cand;
                break;
            }
            lo = cand; // H < 0 here, move the bracket up
        }
        if !hi.is_finite() {
            let samples: Vec<(f64, f64)> = (1..=8)
                .map(|j| {
                    let g = gq * j as f64 / 9.0;
                    (g, hfun(g).unwrap_or(f64::NAN))
                })
                .collect();
            return Err(Error::Solver(format!(
                "bracketing failure for interior root; H samples: {samples:?}"
            )));
        }
        for _ in 0..200 {
            if hi - lo <= 1e-12 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if hfun(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut g = 0.5 * (lo + hi);
        for _ in 0..8 {
            let hval = hfun(g)?;
            if hval.abs() <= 1e-14 {
                break;
            }
            let hp = 1.0 - self.fixed_point_map_derivative(g);
            if hp == 0.0 {
                break;
            }
            let next = g - hval / hp;
            if next > 0.0 && next < gq {
                g = next;
            } else {
                break;
            }
        }
        Ok(VariationalResult {
            g_star: g,
            upsilon: self.variational_objective(g)?,
            branch: Branch::Interior,
            plefka_lhs: plefka,
        })
    }

    /// The rank-one outlier correction
    /// `(1/N) log( ||v||^2/||m||^2 + |(m,v)|/||m||^2 - (m,v)^2/||m||^4 )`.
    pub fn correction_term(&self) -> Result<f64> {
        if self.class == DegeneracyClass::ZeroV {
            return Err(Error::Degenerate("v = 0: correction undefined".into()));
        }
        let arg = correction_argument(&self.m, &self.v);
        if arg <= 0.0 {
            return Err(Error::Degenerate(format!(
                "correction log argument {arg} <= 0"
            )));
        }
        Ok(arg.ln() / self.n() as f64)
    }

    /// Full prediction for `(1/N) log E[|det conditioned Hessian|]`.
    pub fn predict(&self, alpha: f64) -> Result<Prediction> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
        }
        let sol = self.solve_upsilon()?;
        let region = if self.inside_region(alpha) {
            Region::InsideL
        } else {
            Region::OutsideL
        };
        match self.correction_term() {
            Ok(correction) => Ok(Prediction {
                upsilon: sol.upsilon,
                correction,
                total: sol.upsilon + correction,
                region,
                degenerate: false,
            }),
            Err(Error::Degenerate(_)) => Ok(Prediction {
                upsilon: sol.upsilon,
                correction: f64::NEG_INFINITY,
                total: f64::NEG_INFINITY,
                region,
                degenerate: true,
            }),
            Err(e) => Err(e),
        }
    }

    /// `max_i |m_i| <= 1 - exp(-alpha sqrt N)`.
    pub fn inside_region(&self, alpha: f64) -> bool {
        let cutoff = 1.0 - (-alpha * (self.n() as f64).sqrt()).exp();
        self.m.iter().all(|&mi| mi.abs() <= cutoff)
    }

    /// Upper bound valid outside the region:
    /// correction + 2 log(16 beta (1+beta^2)) - (17/N) sum log(1 - m_i^2).
    pub fn outside_bound(&self) -> Result<f64> {
        let correction = self.correction_term()?;
        let b = self.beta;
        let additive = 2.0 * (16.0 * b * (1.0 + b * b)).ln();
        let logs: f64 = self.m.iter().map(|&mi| (1.0 - mi * mi).ln()).sum();
        Ok(correction + additive - 17.0 * logs / self.n() as f64)
    }

    /// Verify the norm bounds `||v|| <= e^{3 alpha sqrt N}` and
    /// `||D||_op <= 2 e^{2 alpha sqrt N}` that hold inside the region for
    /// `N > N0 = (|h| + 3 + 4 beta^2)/alpha^2`.
    pub fn bounds_check(&self, alpha: f64) -> Result<BoundsReport> {
        let n = self.n() as f64;
        let n0 = (self.h.abs() + 3.0 + 4.0 * self.beta * self.beta) / (alpha * alpha);
        if n <= n0 {
            return Err(Error::Precondition(format!(
                "N = {n} must exceed N0 = {n0:.3}"
            )));
        }
        if !self.inside_region(alpha) {
            return Err(Error::Precondition("point is outside L_{alpha,N}".into()));
        }
        let sq = n.sqrt();
        let v_norm = self.v.norm();
        let v_bound = (3.0 * alpha * sq).exp();
        let d_op = self.d_diag.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        let d_bound = 2.0 * (2.0 * alpha * sq).exp();
        Ok(BoundsReport {
            v_norm,
            v_bound,
            v_ok: v_norm <= v_bound,
            d_op,
            d_bound,
            d_ok: d_op <= d_bound,
        })
    }

    /// Empirical spectral measure of `-D_N(m)`: the measure fed to the
    /// free-convolution engine (`Z = GOE - D_N` and `log|.|` is sign-blind,
    /// so the reflected orientation is fixed here once and for all).
    pub fn spectral_measure_neg_d(&self) -> SpectralMeasure {
        SpectralMeasure::empirical(&self.d_diag.iter().map(|&d| -d).collect::<Vec<_>>())
            .expect("nonempty diagonal")
            .normalize()
    }

    /// Free convolution `nu_{-D_N} ⊞ sc(2 beta^2)` whose log-potential equals
    /// the variational value.
    pub fn free_convolution(&self) -> Result<FreeConvolution> {
        FreeConvolution::new(self.spectral_measure_neg_d(), 2.0 * self.beta * self.beta)
    }
}

/// Log argument of the correction term computed from raw vectors; exposed so
/// identity tests can feed constructed `(m, v)` pairs.
pub fn correction_argument(m: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let m2 = m.norm_squared();
    let mv = m.dot(v);
    v.norm_squared() / m2 + mv.abs() / m2 - mv * mv / (m2 * m2)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariationalResult {
    pub g_star: f64,
    pub upsilon: f64,
    pub branch: Branch,
    pub plefka_lhs: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Prediction {
    pub upsilon: f64,
    pub correction: f64,
    pub total: f64,
    pub region: Region,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundsReport {
    pub v_norm: f64,
    pub v_bound: f64,
    pub v_ok: bool,
    pub d_op: f64,
    pub d_bound: f64,
    pub d_ok: bool,
}

/// Uniform magnetization `t` solving the scalar consistency equation
/// `atanh t - t/(1-t^2) + 4 beta^2 t^3 = 0`, which makes `v = 0` exactly
/// (up to root-finder tolerance) for `h = 0`. Returns the positive root
/// when it exists.
pub fn uniform_zero_v_magnetization(beta: f64) -> Result<f64> {
    let b2 = beta * beta;
    let f = |t: f64| atanh_stable(t) - t / (1.0 - t * t) + 4.0 * b2 * t * t * t;
    // f ~ (4 beta^2 - 2/3) t^3 near 0 and -> -inf as t -> 1, so a positive
    // root requires 4 beta^2 > 2/3.
    let mut lo = 1e-6;
    if f(lo) <= 0.0 {
        return Err(Error::Domain(format!(
            "no positive zero-v root for beta = {beta}"
        )));
    }
    let mut hi = 1.0 - 1e-12;
    if f(hi) >= 0.0 {
        return Err(Error::Domain("no sign change before the boundary".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
