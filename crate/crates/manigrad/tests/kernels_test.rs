use manigrad::kernels::{
    besselk, cholesky_with_jitter, correlation_from_gram, legendre_all, legendre_deriv_all,
    ln_gamma, numeric_smoothness_probe, CatalogKernel, CircleMatern, KernelError, SpectralKernel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

// ---------------------------------------------------------------
// ln_gamma

#[test]
fn ln_gamma_known_values() {
    // gamma(1) = gamma(2) = 1, gamma(5) = 24, gamma(1/2) = sqrt(pi),
    // gamma(0.1) = 9.513507698668731
    assert!(ln_gamma(1.0).abs() < 1e-13);
    assert!(ln_gamma(2.0).abs() < 1e-13);
    assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
    assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    assert!((ln_gamma(0.1) - 9.513507698668731f64.ln()).abs() < 1e-11);
}

// ---------------------------------------------------------------
// besselk against an independent quadrature oracle

/// K_nu(x) = int_0^inf exp(-x cosh u) cosh(nu u) du by trapezoid; the
/// integrand is analytic and even around 0, so the rule converges
/// spectrally in the step.
fn besselk_quadrature(nu: f64, x: f64) -> f64 {
    let h = 0.01;
    let mut acc = 0.5 * (-x).exp();
    let mut u = h;
    while u <= 60.0 {
        acc += (-x * u.cosh()).exp() * (nu * u).cosh();
        u += h;
    }
    acc * h
}

#[test]
fn besselk_matches_quadrature() {
    for &nu in &[0.0, 0.3, 0.5, 1.0, 1.7, 2.0, 2.5, 3.9, 5.2] {
        for &x in &[0.1, 0.5, 1.0, 1.9, 2.0, 2.1, 3.0, 5.0, 10.0] {
            let got = besselk(nu, x).unwrap();
            let want = besselk_quadrature(nu, x);
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-9, "K_{}({}) = {:e}, oracle {:e}, rel {:e}", nu, x, got, want, rel);
        }
    }
}

#[test]
fn besselk_half_integer_closed_forms() {
    for &x in &[0.2, 0.7, 1.0, 2.5, 6.0] {
        let base = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        let k12 = besselk(0.5, x).unwrap();
        let k32 = besselk(1.5, x).unwrap();
        let k52 = besselk(2.5, x).unwrap();
        assert!((k12 - base).abs() < 1e-13 * base);
        assert!((k32 - base * (1.0 + 1.0 / x)).abs() < 1e-12 * k32);
        assert!((k52 - base * (1.0 + 3.0 / x + 3.0 / (x * x))).abs() < 1e-12 * k52);
    }
}

#[test]
fn besselk_reference_points() {
    // standard tabulated values
    assert!((besselk(0.0, 1.0).unwrap() - 0.42102443824070834).abs() < 1e-13);
    assert!((besselk(1.0, 1.0).unwrap() - 0.6019072301972346).abs() < 1e-13);
}

#[test]
fn besselk_rejects_bad_arguments() {
    assert!(matches!(besselk(1.0, 0.0), Err(KernelError::BadParam { .. })));
    assert!(matches!(besselk(-1.0, 1.0), Err(KernelError::BadParam { .. })));
}

// ---------------------------------------------------------------
// Legendre polynomials

#[test]
fn legendre_matches_explicit_polynomials() {
    for &x in &[-0.9, -0.4, 0.0, 0.3, 0.77, 1.0] {
        let p = legendre_all(4, x);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!((p[1] - x).abs() < 1e-15);
        assert!((p[2] - (3.0 * x * x - 1.0) / 2.0).abs() < 1e-14);
        assert!((p[3] - (5.0 * x.powi(3) - 3.0 * x) / 2.0).abs() < 1e-14);
        assert!((p[4] - (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0).abs() < 1e-14);
    }
}

#[test]
fn legendre_derivatives_match_finite_differences() {
    let h = 1e-6;
    for &x in &[-0.8, -0.2, 0.4, 0.9] {
        let dp = legendre_deriv_all(6, x);
        let plus = legendre_all(6, x + h);
        let minus = legendre_all(6, x - h);
        for l in 0..=6 {
            let fd = (plus[l] - minus[l]) / (2.0 * h);
            assert!((dp[l] - fd).abs() < 1e-7, "l={} x={}: {} vs {}", l, x, dp[l], fd);
        }
    }
}

#[test]
fn legendre_derivatives_at_endpoints() {
    let at1 = legendre_deriv_all(5, 1.0);
    let atm1 = legendre_deriv_all(5, -1.0);
    for l in 0..=5usize {
        let v = (l * (l + 1)) as f64 / 2.0;
        assert_eq!(at1[l], v);
        let want = if l % 2 == 1 { v } else { -v };
        assert_eq!(atm1[l], want);
    }
}

// ---------------------------------------------------------------
// circle Matern closed forms against the analytic spectrum

/// Normalized spectral sum over the circumference-1 circle spectrum:
/// weights (alpha^2 + (2 pi l)^2)^(-nu - 1/2).
fn circle_spectral_oracle(nu: f64, alpha: f64, h: f64, terms: usize) -> f64 {
    let e = -(nu + 0.5);
    let mut num = (alpha * alpha).powf(e);
    let mut den = num;
    for l in 1..=terms {
        let w = (alpha * alpha + (2.0 * std::f64::consts::PI * l as f64).powi(2)).powf(e);
        num += 2.0 * w * (2.0 * std::f64::consts::PI * l as f64 * h).cos();
        den += 2.0 * w;
    }
    num / den
}

#[test]
fn circle_matern_matches_spectral_sum() {
    for &nu in &[0.5, 1.5, 2.5] {
        for &alpha in &[0.5, 1.0, 5.0] {
            let k = CircleMatern::new(nu, alpha, 1.0).unwrap();
            for &h in &[0.0, 0.07, 0.2, 0.33, 0.5, 0.81] {
                let want = circle_spectral_oracle(nu, alpha, h, 12000);
                let got = k.eval(h);
                let err = (got - want).abs();
                assert!(err < 1e-4, "nu={} alpha={} h={}: {} vs {}", nu, alpha, h, got, want);
            }
        }
    }
}

#[test]
fn circle_matern_value_at_zero_is_sigma2() {
    for &nu in &[0.5, 1.5, 2.5] {
        let k = CircleMatern::new(nu, 2.2, 3.7).unwrap();
        assert!((k.eval(0.0) - 3.7).abs() < 1e-12);
    }
}

#[test]
fn circle_matern_derivatives_match_finite_differences() {
    // interior lags away from the h = 0 and h = 1/2 symmetry points
    let lags = [0.1, 0.23, 0.31, 0.44];
    let cases: [(f64, usize); 3] = [(1.5, 2), (2.5, 2), (2.5, 4)];
    for &(nu, max_order) in &cases {
        let k = CircleMatern::new(nu, 1.3, 0.9).unwrap();
        let h = 1e-5;
        for &s in &lags {
            // first derivative, central
            if max_order >= 1 {
                let fd = (k.eval(s + h) - k.eval(s - h)) / (2.0 * h);
                let got = k.deriv(s, 1);
                assert!((got - fd).abs() < 1e-6 * (1.0 + fd.abs()), "nu={} d1 at {}", nu, s);
            }
            if max_order >= 2 {
                let fd = (k.eval(s + h) - 2.0 * k.eval(s) + k.eval(s - h)) / (h * h);
                let got = k.deriv(s, 2);
                assert!((got - fd).abs() < 1e-4 * (1.0 + fd.abs()), "nu={} d2 at {}", nu, s);
            }
            if max_order >= 3 {
                let fd = (k.deriv(s + h, 2) - k.deriv(s - h, 2)) / (2.0 * h);
                let got = k.deriv(s, 3);
                assert!((got - fd).abs() < 1e-5 * (1.0 + fd.abs()), "nu={} d3 at {}", nu, s);
            }
            if max_order >= 4 {
                let fd = (k.deriv(s + h, 2) - 2.0 * k.deriv(s, 2) + k.deriv(s - h, 2)) / (h * h);
                let got = k.deriv(s, 4);
                assert!((got - fd).abs() < 1e-3 * (1.0 + fd.abs()), "nu={} d4 at {}", nu, s);
            }
        }
    }
}

#[test]
fn circle_matern_slope_vanishes_at_zero_for_smooth_orders() {
    for &nu in &[1.5, 2.5] {
        let k = CircleMatern::new(nu, 0.8, 1.0).unwrap();
        assert!(k.deriv(0.0, 1).abs() < 1e-12, "nu={}: K'(0) = {:e}", nu, k.deriv(0.0, 1));
    }
    // exponential case: one-sided slope is -alpha tanh(alpha/2) sigma2
    let k = CircleMatern::new(0.5, 2.0, 1.0).unwrap();
    let expect = -2.0 * (1.0f64).tanh();
    assert!((k.deriv(0.0, 1) - expect).abs() < 1e-12);
}

#[test]
fn circle_matern_exponential_closed_form() {
    // nu = 1/2 must equal cosh(alpha (h - 1/2)) / cosh(alpha / 2)
    let alpha = 1.7;
    let k = CircleMatern::new(0.5, alpha, 1.0).unwrap();
    for &h in &[0.0, 0.1, 0.25, 0.5] {
        let want = (alpha * (h - 0.5)).cosh() / (alpha / 2.0).cosh();
        assert!((k.eval(h) - want).abs() < 1e-14);
    }
}

#[test]
fn circle_matern_rejects_unsupported_orders() {
    assert!(CircleMatern::new(1.0, 1.0, 1.0).is_err());
    assert!(CircleMatern::new(2.5, 0.0, 1.0).is_err());
    assert!(CircleMatern::new(2.5, 1.0, -1.0).is_err());
}

// ---------------------------------------------------------------
// spectral weight families

#[test]
fn spectral_weights_follow_the_two_laws() {
    let eigenvalues = [0.0, 2.0, 6.0, 12.0];
    let matern = SpectralKernel::Matern { nu: 2.0, alpha: 1.0 };
    let w = matern.weights(&eigenvalues, 2);
    for (i, &l) in eigenvalues.iter().enumerate() {
        assert!((w[i] - (1.0 + l).powf(-3.0)).abs() < 1e-15);
    }
    let rbf = SpectralKernel::Rbf { alpha: 0.7 };
    let w = rbf.weights(&eigenvalues, 2);
    for (i, &l) in eigenvalues.iter().enumerate() {
        assert!((w[i] - (-l / (2.0 * 0.49)).exp()).abs() < 1e-15);
    }
}

#[test]
fn spectral_smoothness_thresholds() {
    // on a surface (p = 2): continuous above 1/2, differentiable above
    // 3/2, twice above 5/2
    let k = |nu| SpectralKernel::Matern { nu, alpha: 1.0 };
    assert!(!k(0.4).smoothness(2, false).msc);
    assert!(k(0.6).smoothness(2, false).msc);
    assert!(!k(1.4).smoothness(2, false).one_msd);
    assert!(k(1.6).smoothness(2, false).one_msd);
    assert!(!k(2.4).smoothness(2, false).two_msd);
    assert!(k(2.6).smoothness(2, false).two_msd);
    // truncation makes everything smooth
    let s = k(0.1).smoothness(2, true);
    assert!(s.msc && s.one_msd && s.two_msd);
    let s = SpectralKernel::Rbf { alpha: 1.0 }.smoothness(2, false);
    assert!(s.msc && s.one_msd && s.two_msd);
}

// ---------------------------------------------------------------
// gram utilities

#[test]
fn correlation_has_unit_diagonal() {
    let g = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]);
    let r = correlation_from_gram(&g).unwrap();
    assert!((r[(0, 0)] - 1.0).abs() < 1e-15);
    assert!((r[(1, 1)] - 1.0).abs() < 1e-15);
    assert!((r[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn correlation_rejects_nonpositive_diagonal() {
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    assert!(matches!(correlation_from_gram(&g), Err(KernelError::BadDiagonal { index: 1 })));
}

#[test]
fn jitter_ladder_rescues_rank_deficiency_and_reports_indefiniteness() {
    // rank-one PSD: plain Cholesky fails, jitter succeeds
    let ones = DMatrix::from_element(3, 3, 1.0);
    let (_, jitter) = cholesky_with_jitter(&ones).unwrap();
    assert!(jitter <= 1e-6);
    // indefinite: every rung fails
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(cholesky_with_jitter(&bad), Err(KernelError::NotPositiveDefinite { .. })));
}

// ---------------------------------------------------------------
// catalog kernels: closed-form spot values and cross-checks

#[test]
fn chordal_matern_origin_limit() {
    let k = CatalogKernel::ChordalMatern { nu: 1.5, alpha: 1.0 };
    // d^nu K_nu(d) -> 2^(nu-1) gamma(nu) as d -> 0
    let want = 2.0f64.powf(0.5) * (ln_gamma(1.5)).exp();
    assert!((k.eval(0.0) - want).abs() < 1e-12);
    // smooth decrease away from zero
    assert!(k.eval(0.1) < k.eval(0.0));
}

#[test]
fn truncated_legendre_matern_is_a_short_sum() {
    let k = CatalogKernel::TruncatedLegendreMatern { t_max: 1, nu: 2.0, alpha: 1.0 };
    let a1 = 3.0f64.powf(-2.5);
    for &t in &[0.0, 0.4, 1.2] {
        let want = 1.0 + a1 * t.cos();
        assert!((k.eval(t) - want).abs() < 1e-14);
    }
}

#[test]
fn bernoulli_matches_the_closed_fourier_sum() {
    // sum_{l>=1} cos(l t) / l^2 = pi^2/6 - pi t / 2 + t^2 / 4 on [0, 2 pi]
    let k = CatalogKernel::Bernoulli { n: 1, alpha: 1.0 };
    let pi = std::f64::consts::PI;
    for &t in &[0.3, 1.0, 2.0, 3.0] {
        let want = 2.0 + 2.0 * (pi * pi / 6.0 - pi * t / 2.0 + t * t / 4.0);
        let got = k.eval(t);
        assert!((got - want).abs() < 1e-4, "t={}: {} vs {}", t, got, want);
    }
}

#[test]
fn circular_matern_agrees_with_the_closed_form_circle_kernel() {
    // catalog angle t corresponds to wrapped distance h = t / (2 pi)
    // on the circumference-1 circle with alpha scaled by 2 pi
    let a = 0.5;
    let nu = 1.5;
    let cat = CatalogKernel::CircularMatern { nu, alpha: a };
    let closed = CircleMatern::new(nu, 2.0 * std::f64::consts::PI * a, 1.0).unwrap();
    let k0 = cat.eval(0.0);
    for &h in &[0.05, 0.17, 0.32, 0.5] {
        let got = cat.eval(2.0 * std::f64::consts::PI * h) / k0;
        let want = closed.eval(h);
        assert!((got - want).abs() < 1e-10, "h={}: {} vs {}", h, got, want);
    }
}

#[test]
fn compact_support_rows_vanish_beyond_the_cutoff() {
    let spherical = CatalogKernel::Spherical { alpha: 1.0 };
    assert!((spherical.eval(0.0) - 1.0).abs() < 1e-15);
    assert_eq!(spherical.eval(1.5), 0.0);
    let askey = CatalogKernel::Askey { tau: 2.0, alpha: 1.0 };
    assert!((askey.eval(0.5) - 0.25).abs() < 1e-15);
    assert_eq!(askey.eval(1.2), 0.0);
    let c2 = CatalogKernel::C2Wendland { tau: 4.0, alpha: 0.5 };
    assert!((c2.eval(1.0) - 3.0 * 0.5f64.powi(4)).abs() < 1e-15);
}

#[test]
fn pointwise_rows_match_their_formulas() {
    let pe = CatalogKernel::PoweredExponential { nu: 1.0, alpha: 2.0 };
    assert!((pe.eval(0.7) - (-1.4f64).exp()).abs() < 1e-15);
    let gc = CatalogKernel::GeneralizedCauchy { nu: 1.0, tau: 2.0, alpha: 1.0 };
    assert!((gc.eval(1.0) - 0.25).abs() < 1e-15);
    let mq = CatalogKernel::Multiquadric { tau: 0.5, alpha: 1.0 };
    assert!((mq.eval(0.0) - 1.0).abs() < 1e-12);
    let sp = CatalogKernel::SinePower { nu: 1.0 };
    assert!((sp.eval(std::f64::consts::PI) - 0.0).abs() < 1e-15);
}

#[test]
fn catalog_validation_enforces_parameter_domains() {
    assert!(CatalogKernel::PoweredExponential { nu: 1.5, alpha: 1.0 }.validate().is_err());
    assert!(CatalogKernel::Multiquadric { tau: 1.0, alpha: 1.0 }.validate().is_err());
    assert!(CatalogKernel::SinePower { nu: 2.0 }.validate().is_err());
    assert!(CatalogKernel::Spherical { alpha: 0.2 }.validate().is_err());
    assert!(CatalogKernel::Askey { tau: 1.5, alpha: 1.0 }.validate().is_err());
    assert!(CatalogKernel::C2Wendland { tau: 3.0, alpha: 1.0 }.validate().is_err());
    assert!(CatalogKernel::C4Wendland { tau: 5.0, alpha: 1.0 }.validate().is_err());
    assert!(CatalogKernel::ChordalMatern { nu: 1.0, alpha: 1.0 }.validate().is_ok());
}

#[test]
fn probe_sees_smoothness_of_two_extreme_rows() {
    // multiquadric is twice mean-square differentiable
    let mq = CatalogKernel::Multiquadric { tau: 0.5, alpha: 1.0 };
    let s = numeric_smoothness_probe(|t| mq.eval(t));
    assert!(s.msc && s.one_msd && s.two_msd);
    // powered exponential with nu = 1 is continuous only
    let pe = CatalogKernel::PoweredExponential { nu: 1.0, alpha: 1.0 };
    let s = numeric_smoothness_probe(|t| pe.eval(t));
    assert!(s.msc && !s.one_msd && !s.two_msd);
}

// ---------------------------------------------------------------
// property tests

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn besselk_satisfies_the_order_recurrence(nu in 0.5f64..3.0, x in 0.5f64..10.0) {
        // K_{nu+1}(x) = K_{nu-1}(x) + (2 nu / x) K_nu(x)
        let km = besselk(nu - 0.5, x).unwrap();
        let k0 = besselk(nu + 0.5, x).unwrap();
        let kp = besselk(nu + 1.5, x).unwrap();
        let want = km + (2.0 * (nu + 0.5) / x) * k0;
        prop_assert!((kp - want).abs() < 1e-10 * kp.abs().max(1e-300));
    }

    #[test]
    fn circle_matern_is_even_and_periodic(
        h in -3.0f64..3.0,
        alpha in 0.2f64..6.0,
        idx in 0usize..3,
    ) {
        let nu = [0.5, 1.5, 2.5][idx];
        let k = CircleMatern::new(nu, alpha, 1.0).unwrap();
        let scale = k.eval(0.0);
        prop_assert!((k.eval(h) - k.eval(-h)).abs() < 1e-12 * scale);
        prop_assert!((k.eval(h) - k.eval(h + 1.0)).abs() < 1e-12 * scale);
        prop_assert!(k.eval(h) <= scale * (1.0 + 1e-12));
    }

    #[test]
    fn ln_gamma_satisfies_the_recurrence(x in 0.05f64..20.0) {
        let lhs = ln_gamma(x + 1.0);
        let rhs = ln_gamma(x) + x.ln();
        prop_assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0));
    }
}
