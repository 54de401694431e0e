//! Bray-Moore determinant toolkit.
//!
//! The expected absolute determinant of the TAP Hessian, conditioned on the
//! TAP equations holding, admits a variational prediction (the Bray-Moore
//! formula) plus a rank-one outlier correction. This crate evaluates that
//! prediction and validates every ingredient against exact algebraic
//! identities and Monte Carlo sampling of GOE-plus-diagonal random matrices:
//!
//! - [`freeconv`]: Stieltjes transforms of atomic measures, free additive
//!   convolution with the semicircle law, density recovery and the
//!   log-potential integral.
//! - [`tap`]: the deterministic TAP-side quantities (overlap, diagonal
//!   matrix, correction vector, variational solve, region tests).
//! - [`matrix`]: GOE sampling, the conditional-Hessian construction, the
//!   rotation/Laplace/Schur determinant identities and deterministic
//!   rank-perturbation inequality checkers.
//! - [`harness`]: Monte Carlo estimation with bootstrap confidence
//!   intervals, scale calibration, spectral-distribution comparisons and
//!   N-sweeps.
//!
//! A quick taste, mirrored in the guide (`book/`):
//!
//! ```
//! use bmdet::measure::SpectralMeasure;
//! use bmdet::freeconv::FreeConvolution;
//!
//! // Free convolution of a point mass with the unit semicircle: the
//! // log-potential of the semicircle law itself is exactly -1/2.
//! let fc = FreeConvolution::new(SpectralMeasure::dirac(0.0), 1.0).unwrap();
//! let lp = fc.log_potential().unwrap();
//! assert!((lp + 0.5).abs() < 1e-3);
//! ```
//!
//! ```
//! use bmdet::tap::TapPoint;
//!
//! // Uniform magnetization at t = 0.8, beta = 1: the Plefka condition holds
//! // and the variational minimizer sits on the boundary g = 1 - Q.
//! let p = TapPoint::new(vec![0.8; 16], 1.0, 0.0).unwrap();
//! let sol = p.solve_upsilon().unwrap();
//! assert!((sol.g_star - 0.36).abs() < 1e-12);
//! ```

pub mod error;
pub mod freeconv;
pub mod harness;
pub mod matrix;
pub mod measure;
pub mod quadrature;
pub mod rng;
pub mod tap;
pub mod verify;

pub use error::{Error, Result};
