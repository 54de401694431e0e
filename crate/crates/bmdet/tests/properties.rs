//! Randomized invariants via proptest: Herglotz structure of the
//! transform, shift covariance, and moment bounds of atomic measures.

use bmdet::freeconv::{stieltjes, ComplexPoint};
use bmdet::measure::SpectralMeasure;
use bmdet::tap::TapPoint;
use proptest::prelude::*;

fn arb_measure() -> impl Strategy<Value = SpectralMeasure> {
    prop::collection::vec((-8.0..8.0f64, 0.05..1.0f64), 1..6).prop_map(|raw| {
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let atoms: Vec<(f64, f64)> = raw.into_iter().map(|(x, w)| (x, w / total)).collect();
        SpectralMeasure::new(atoms).unwrap().normalize()
    })
}

proptest! {
    #[test]
    fn herglotz_upper_half_plane(nu in arb_measure(), re in -10.0..10.0f64, im in 0.01..5.0f64) {
        let m = stieltjes(&nu, ComplexPoint::new(re, im).unwrap()).unwrap();
        prop_assert!(m.im > 0.0);
        prop_assert!(m.norm() <= 1.0 / im + 1e-12);
    }

    #[test]
    fn transform_shift_covariance(nu in arb_measure(), a in -3.0..3.0f64, re in -10.0..10.0f64, im in 0.1..5.0f64) {
        // m_{nu + a}(z) = m_nu(z - a)
        let shifted = nu.shifted(a);
        let lhs = stieltjes(&shifted, ComplexPoint::new(re, im).unwrap()).unwrap();
        let rhs = stieltjes(&nu, ComplexPoint::new(re - a, im).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn moment_bounds(nu in arb_measure()) {
        // mass is 1, |mean| <= max|atom|, second moment <= max|atom|^2
        let r = nu.atoms.iter().map(|a| a.0.abs()).fold(0.0f64, f64::max);
        let mass: f64 = nu.atoms.iter().map(|a| a.1).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(nu.mean().abs() <= r + 1e-12);
        prop_assert!(nu.second_moment() <= r * r + 1e-12);
        prop_assert!(nu.second_moment() >= nu.mean().powi(2) - 1e-12);
    }

    #[test]
    fn measure_json_roundtrip(nu in arb_measure()) {
        let back = SpectralMeasure::from_json(&nu.to_json()).unwrap();
        prop_assert_eq!(nu.atoms.len(), back.atoms.len());
        for (a, b) in nu.atoms.iter().zip(&back.atoms) {
            prop_assert!((a.0 - b.0).abs() < 1e-15 * (1.0 + a.0.abs()));
            prop_assert!((a.1 - b.1).abs() < 1e-15);
        }
    }

    #[test]
    fn tap_scalars(mvals in prop::collection::vec(-0.95..0.95f64, 2..24), beta in 0.3..2.0f64, h in -0.5..0.5f64) {
        prop_assume!(mvals.iter().any(|&x| x != 0.0));
        let p = TapPoint::new(mvals, beta, h).unwrap();
        // Q in (0, 1); D_i > 0 when Plefka-relevant quantities are sane
        prop_assert!(p.q() > 0.0 && p.q() < 1.0);
        for &d in p.d_diag().iter() {
            prop_assert!(d >= 1.0);
        }
        // x is the projection of v orthogonal to m
        prop_assert!(p.x().dot(p.m()).abs() <= 1e-10 * (1.0 + p.v().norm()) * p.m().norm());
    }
}
