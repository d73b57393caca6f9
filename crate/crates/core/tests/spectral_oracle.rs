mod common;

use common::{bisection_timestep, metzler, rng};
use conecert::spectral::{
    eigensystem, max_timestep, max_widening, strictly_dominant, DEFAULT_GAP_TOL,
};
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn timestep_matches_bisection() {
    let mut r = rng(21);
    for _ in 0..10 {
        let n = r.random_range(2..=5);
        let mut a = metzler(&mut r, n, 0.1, 1.0);
        // Shift to make the matrix Hurwitz; the step bound is shift invariant.
        let spec = strictly_dominant(&a, DEFAULT_GAP_TOL).unwrap().unwrap();
        a -= DMatrix::identity(n, n) * (spec.lambda + 0.5);
        let spec = strictly_dominant(&a, DEFAULT_GAP_TOL).unwrap().unwrap();
        let got = max_timestep(&spec);
        let want = bisection_timestep(&a);
        assert!(
            (got - want).abs() <= 1e-3 * want.max(1e-9),
            "{got} vs {want}"
        );
    }
}

#[test]
fn eigensystem_round_trip() {
    let mut r = rng(22);
    for _ in 0..10 {
        let n = r.random_range(2..=6);
        let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let (mu, v) = eigensystem(&a).unwrap();
        let ac = a.map(|x| Complex::new(x, 0.0));
        let d = DMatrix::from_diagonal(&DVector::from_vec(mu));
        let err = (&ac * &v - &v * d)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }
}

/// `A = S diag(λ, μ…) S⁻¹` with `r = S e₁` and `h = S⁻ᵀ e₁`: the widened
/// operator has eigenvalues `1 − w` and `1 + τ(μ_j − λ)`, so
/// `w_max = 1 − max_j |1 + τ(μ_j − λ)|`.
fn analytic_case(seed: u64, tau: f64) -> (f64, f64) {
    let mut r = rng(seed);
    let n = 4;
    let lambda = 0.5;
    let mus: Vec<f64> = (1..n).map(|_| r.random_range(-3.0..0.0)).collect();
    let mut diag = vec![lambda];
    diag.extend(&mus);
    let s = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| r.random_range(-0.3..0.3));
    let si = s.clone().try_inverse().unwrap();
    let a = &s * DMatrix::from_diagonal(&DVector::from_vec(diag)) * &si;
    let rv = s.column(0).into_owned();
    let h = si.row(0).transpose();
    let got = max_widening(&a, lambda, tau, &rv, &h, DEFAULT_GAP_TOL).unwrap();
    let rho = mus
        .iter()
        .map(|mu| (1.0 + tau * (mu - lambda)).abs())
        .fold(0.0, f64::max);
    (got, 1.0 - rho)
}

#[test]
fn widening_matches_closed_form() {
    for seed in 0..5 {
        let (got, want) = analytic_case(seed, 0.2);
        assert!(
            (got - want).abs() <= 2e-4 * want.max(1e-3),
            "{got} vs {want}"
        );
    }
}

#[test]
fn widening_vanishes_with_the_step() {
    let (w1, _) = analytic_case(3, 1e-2);
    let (w2, _) = analytic_case(3, 1e-4);
    assert!(w2 < w1 && w2 < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn widening_closed_form_prop(seed in 0u64..1000, tau in 0.01f64..0.3) {
        let (got, want) = analytic_case(seed, tau);
        prop_assert!((got - want).abs() <= 2e-4 * want.max(1e-3), "{} vs {}", got, want);
    }

    #[test]
    fn timestep_shift_invariant(seed in 0u64..1000, c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let a = metzler(&mut r, 4, 0.1, 1.0);
        let t0 = max_timestep(&strictly_dominant(&a, DEFAULT_GAP_TOL).unwrap().unwrap());
        let b = &a + DMatrix::identity(4, 4) * c;
        let t1 = max_timestep(&strictly_dominant(&b, DEFAULT_GAP_TOL).unwrap().unwrap());
        prop_assert!((t0 - t1).abs() <= 1e-6 * t0);
    }
}
