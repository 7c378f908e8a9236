//! Covariance kernels: spectral Matern and RBF weights, closed-form
//! Matern on the circle, a catalog of isotropic sphere kernels with
//! their smoothness classes, and the special functions they need.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {msg}")]
    BadParam { msg: String },
    #[error("gram matrix not positive definite, jitter escalated to {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("gram matrix has a nonpositive diagonal entry at {index}")]
    BadDiagonal { index: usize },
}

const LANCZOS: [f64; 8] = [
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma domain is x > 0, got {}", x);
    if x < 0.5 {
        // reflection; sin(pi x) > 0 on (0, 1/2)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut a = 0.99999999999980993;
    let t = z + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate() {
        a += c / (z + (i + 1) as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
}

fn sinhc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + z * z / 6.0
    } else {
        z.sinh() / z
    }
}

/// Temme's series for the pair (K_mu, K_{mu+1}) at x <= 2, |mu| <= 1/2.
fn temme_pair(mu: f64, x: f64) -> (f64, f64) {
    let d = (2.0 / x).ln();
    let sigma = mu * d;
    let gm = ((ln_gamma(1.0 - mu) + ln_gamma(1.0 + mu)) / 2.0).exp();
    // oddpart = (ln gamma(1-mu) - ln gamma(1+mu)) / 2; the direct
    // difference cancels near mu = 0, so switch to its zeta series.
    let (ratio, oddpart) = if mu.abs() < 0.01 {
        const EULER: f64 = 0.5772156649015329;
        const ZETA3: f64 = 1.2020569031595943;
        const ZETA5: f64 = 1.0369277551433699;
        const ZETA7: f64 = 1.0083492773819228;
        let m2 = mu * mu;
        let r = EULER + m2 * (ZETA3 / 3.0 + m2 * (ZETA5 / 5.0 + m2 * ZETA7 / 7.0));
        (r, mu * r)
    } else {
        let op = (ln_gamma(1.0 - mu) - ln_gamma(1.0 + mu)) / 2.0;
        (op / mu, op)
    };
    let gam1 = -ratio * sinhc(oddpart) / gm;
    let gam2 = oddpart.cosh() / gm;
    let pm = std::f64::consts::PI * mu;
    let fact = if pm.abs() < 1e-8 { 1.0 + pm * pm / 6.0 } else { pm / pm.sin() };

    let mut f = fact * (gam1 * sigma.cosh() + gam2 * d * sinhc(sigma));
    let mut p = 0.5 * sigma.exp() * ln_gamma(1.0 + mu).exp();
    let mut q = 0.5 * (-sigma).exp() * ln_gamma(1.0 - mu).exp();
    let quarter_x2 = x * x / 4.0;
    let mut c = 1.0;
    let mut sum_k = f;
    let mut sum_k1 = p;
    for k in 1..=500usize {
        let kf = k as f64;
        f = (kf * f + p + q) / (kf * kf - mu * mu);
        p /= kf - mu;
        q /= kf + mu;
        c *= quarter_x2 / kf;
        let dk = c * f;
        let dk1 = c * (p - kf * f);
        sum_k += dk;
        sum_k1 += dk1;
        if dk.abs() < 1e-17 * sum_k.abs() && dk1.abs() < 1e-17 * sum_k1.abs().max(1e-300) {
            break;
        }
    }
    (sum_k, sum_k1 * 2.0 / x)
}

/// Steed continued fraction for (K_mu, K_{mu+1}) at x > 2, |mu| <= 1/2.
fn steed_pair(mu: f64, x: f64) -> (f64, f64) {
    let a1 = 0.25 - mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..=2000usize {
        a -= 2.0 * (i - 1) as f64;
        c = -a * c / i as f64;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-16 {
            break;
        }
    }
    h *= a1;
    let kmu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let kmu1 = kmu * (mu + x + 0.5 - h) / x;
    (kmu, kmu1)
}

/// Modified Bessel function K_nu(x) for nu >= 0, x > 0: Temme series
/// below x = 2, Steed continued fraction above, upward recurrence in
/// the order.
pub fn besselk(nu: f64, x: f64) -> Result<f64, KernelError> {
    if !(x > 0.0) || !nu.is_finite() || nu < 0.0 {
        return Err(KernelError::BadParam {
            msg: format!("besselk needs nu >= 0 and x > 0, got nu = {}, x = {}", nu, x),
        });
    }
    let m = (nu + 0.5).floor() as usize;
    let mu = nu - m as f64;
    let (mut k0, mut k1) = if x <= 2.0 { temme_pair(mu, x) } else { steed_pair(mu, x) };
    if m == 0 {
        return Ok(k0);
    }
    for j in 1..m {
        let next = k0 + (2.0 * (mu + j as f64) / x) * k1;
        k0 = k1;
        k1 = next;
    }
    Ok(k1)
}

/// P_0..P_lmax at x by the three-term recurrence.
pub fn legendre_all(lmax: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(lmax + 1);
    p.push(1.0);
    if lmax == 0 {
        return p;
    }
    p.push(x);
    for l in 1..lmax {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * x * p[l] - lf * p[l - 1]) / (lf + 1.0);
        p.push(next);
    }
    p
}

/// dP_l/dx from (x^2 - 1) P_l' = l (x P_l - P_{l-1}), switching to the
/// exact endpoint values +-l(l+1)/2 when x is within 1e-9 of +-1.
pub fn legendre_deriv_all(lmax: usize, x: f64) -> Vec<f64> {
    if x.abs() > 1.0 - 1e-9 {
        return (0..=lmax)
            .map(|l| {
                let v = (l * (l + 1)) as f64 / 2.0;
                if x > 0.0 || l % 2 == 1 {
                    v
                } else {
                    -v
                }
            })
            .collect();
    }
    let p = legendre_all(lmax, x);
    let denom = x * x - 1.0;
    (0..=lmax)
        .map(|l| if l == 0 { 0.0 } else { l as f64 * (x * p[l] - p[l - 1]) / denom })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessClass {
    pub msc: bool,
    pub one_msd: bool,
    pub two_msd: bool,
}

/// Spectral kernels defined by weights over Laplace-Beltrami
/// eigenvalues.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SpectralKernel {
    Matern { nu: f64, alpha: f64 },
    Rbf { alpha: f64 },
}

impl SpectralKernel {
    pub fn validate(&self) -> Result<(), KernelError> {
        let ok = match *self {
            SpectralKernel::Matern { nu, alpha } => nu > 0.0 && nu.is_finite() && alpha > 0.0 && alpha.is_finite(),
            SpectralKernel::Rbf { alpha } => alpha > 0.0 && alpha.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(KernelError::BadParam { msg: format!("{:?}", self) })
        }
    }

    /// Unnormalized weights a_l: (alpha^2 + lambda_l)^(-nu - p/2) for
    /// the Matern family, exp(-lambda_l / (2 alpha^2)) for the RBF.
    pub fn weights(&self, eigenvalues: &[f64], dim: usize) -> Vec<f64> {
        match *self {
            SpectralKernel::Matern { nu, alpha } => {
                let e = -(nu + dim as f64 / 2.0);
                eigenvalues.iter().map(|&l| (alpha * alpha + l).powf(e)).collect()
            }
            SpectralKernel::Rbf { alpha } => {
                eigenvalues.iter().map(|&l| (-l / (2.0 * alpha * alpha)).exp()).collect()
            }
        }
    }

    /// Mean-square smoothness on a p-dimensional manifold: the Matern
    /// process is continuous when nu > (p-1)/2, once differentiable
    /// when nu > (p+1)/2, twice when nu > (p+3)/2; the RBF is all
    /// three. Any finite truncation is also all three.
    pub fn smoothness(&self, dim: usize, truncated: bool) -> SmoothnessClass {
        if truncated {
            return SmoothnessClass { msc: true, one_msd: true, two_msd: true };
        }
        match *self {
            SpectralKernel::Matern { nu, .. } => {
                let p = dim as f64;
                SmoothnessClass {
                    msc: nu > (p - 1.0) / 2.0,
                    one_msd: nu > (p + 1.0) / 2.0,
                    two_msd: nu > (p + 3.0) / 2.0,
                }
            }
            SpectralKernel::Rbf { .. } => SmoothnessClass { msc: true, one_msd: true, two_msd: true },
        }
    }
}

/// Raw spectral covariance sum_l a_l f_l(x) f_l(y).
pub fn spectral_cov_raw(weights: &[f64], fx: &[f64], fy: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), fx.len());
    debug_assert_eq!(weights.len(), fy.len());
    let mut acc = 0.0;
    for ((&a, &u), &v) in weights.iter().zip(fx).zip(fy) {
        acc += a * u * v;
    }
    acc
}

/// Scaled spectral covariance (sigma2 / c) sum_l a_l f_l(x) f_l(y);
/// pass c = 1 for the raw sum.
pub fn spectral_kernel_eval(weights: &[f64], fx: &[f64], fy: &[f64], sigma2: f64, c: f64) -> f64 {
    sigma2 / c * spectral_cov_raw(weights, fx, fy)
}

/// Volume-averaged trace of the raw kernel for an orthonormal basis:
/// the integral of K(x, x) over the manifold is sum_l a_l, so the
/// average is that sum over the volume. Dividing the raw kernel by
/// this constant calibrates the marginal variance to sigma2.
pub fn volume_average_normalizer(weights: &[f64], volume: f64) -> f64 {
    weights.iter().sum::<f64>() / volume
}

/// Mean diagonal of a Gram matrix; the data-weighted normalizer used
/// by predictive scaling.
pub fn averaged_normalizer(g: &DMatrix<f64>) -> f64 {
    g.diagonal().iter().sum::<f64>() / g.nrows() as f64
}

/// Correlation matrix R_ij = G_ij / sqrt(G_ii G_jj). Errors when a
/// diagonal entry is not strictly positive.
pub fn correlation_from_gram(g: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    let n = g.nrows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let d = g[(i, i)];
        if !(d > 0.0) {
            return Err(KernelError::BadDiagonal { index: i });
        }
        inv_sqrt.push(1.0 / d.sqrt());
    }
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = g[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(r)
}

/// Symmetric Gram matrix from a covariance closure evaluated on the
/// upper triangle.
pub fn gram_from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = f(i, j);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Cholesky with escalating relative jitter 0, 1e-10, 1e-8, 1e-6 on
/// the mean diagonal; returns the factor and the jitter that worked.
pub fn cholesky_with_jitter(
    g: &DMatrix<f64>,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), KernelError> {
    let base = averaged_normalizer(g).abs().max(f64::MIN_POSITIVE);
    let mut max_tried = 0.0;
    for rel in [0.0, 1e-10, 1e-8, 1e-6] {
        let jitter = rel * base;
        max_tried = jitter;
        let mut a = g.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            return Ok((chol, jitter));
        }
    }
    Err(KernelError::NotPositiveDefinite { max_jitter: max_tried })
}

/// Trace density of the spectral Matern on the unit sphere by the
/// addition theorem: sum over degrees l of (2l+1)/(4 pi) times
/// (alpha^2 + l(l+1))^(-nu-1).
pub fn sphere_matern_trace(nu: f64, alpha: f64, lmax: usize) -> f64 {
    let e = -(nu + 1.0);
    let mut acc = 0.0;
    for l in 0..=lmax {
        let lf = l as f64;
        acc += (2.0 * lf + 1.0) / (4.0 * std::f64::consts::PI) * (alpha * alpha + lf * (lf + 1.0)).powf(e);
    }
    acc
}

/// Degree cap that keeps the neglected trace tail below rel_tol of the
/// total: the tail beyond L is about L^(-2 nu) / (2 nu) of the whole
/// for alpha << L.
pub fn sphere_matern_lmax(nu: f64, rel_tol: f64) -> usize {
    let l = (2.0 * nu * rel_tol).powf(-1.0 / (2.0 * nu));
    (l.ceil() as usize).clamp(2000, 200_000)
}

/// Matern on the circumference-1 circle for nu in {1/2, 3/2, 5/2}:
/// polynomial-in-u combinations of cosh u and sinh u with
/// u = alpha (h - 1/2) on the wrapped distance h, normalized so
/// K(0) = sigma2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CircleMatern {
    pub nu: f64,
    pub alpha: f64,
    pub sigma2: f64,
}

impl CircleMatern {
    pub fn new(nu: f64, alpha: f64, sigma2: f64) -> Result<Self, KernelError> {
        let twice = 2.0 * nu;
        let ok = (twice - twice.round()).abs() < 1e-12
            && [1, 3, 5].contains(&(twice.round() as i64))
            && alpha > 0.0
            && alpha.is_finite()
            && sigma2 > 0.0
            && sigma2.is_finite();
        if !ok {
            return Err(KernelError::BadParam {
                msg: format!("circle Matern needs nu in {{1/2, 3/2, 5/2}}, alpha > 0, sigma2 > 0; got nu={}, alpha={}, sigma2={}", nu, alpha, sigma2),
            });
        }
        Ok(CircleMatern { nu, alpha, sigma2 })
    }

    /// Coefficients (c0, c1, c2) of cosh u, u sinh u, u^2 cosh u.
    fn base_coeffs(&self) -> [f64; 3] {
        let a = self.alpha;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let coth = 1.0 / (a / 2.0).tanh();
        match (2.0 * self.nu).round() as i64 {
            1 => [1.0, 0.0, 0.0],
            3 => [2.0 * pi2 / (a * a) * (1.0 + a / 2.0 * coth), -2.0 * pi2 / (a * a), 0.0],
            5 => {
                let pi4 = pi2 * pi2;
                [
                    pi4 / a.powi(4) * (6.0 - a * a / 2.0 + 3.0 * a * coth + a * a * coth * coth),
                    -2.0 * pi4 / a.powi(4) * (3.0 + a * coth),
                    2.0 * pi4 / a.powi(4),
                ]
            }
            _ => unreachable!("validated in new"),
        }
    }

    fn eval_basis(coeffs: &[f64; 3], u: f64, odd: bool) -> f64 {
        if odd {
            coeffs[0] * u.sinh() + coeffs[1] * u * u.cosh() + coeffs[2] * u * u * u.sinh()
        } else {
            coeffs[0] * u.cosh() + coeffs[1] * u * u.sinh() + coeffs[2] * u * u * u.cosh()
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.deriv(h, 0)
    }

    /// n-th derivative in the signed lag h for n <= 4. Differentiating
    /// in u maps (c0, c1, c2) to (c0 + c1, c1 + 2 c2, c2) and swaps
    /// the cosh/sinh basis; wrapping flips the sign of odd orders on
    /// the far half of the circle.
    pub fn deriv(&self, h: f64, order: usize) -> f64 {
        assert!(order <= 4, "circle Matern derivatives implemented through order 4");
        let r = h.rem_euclid(1.0);
        let (hw, sign) = if r <= 0.5 { (r, 1.0) } else { (1.0 - r, -1.0) };
        let u = self.alpha * (hw - 0.5);
        let mut c = self.base_coeffs();
        for _ in 0..order {
            c = [c[0] + c[1], c[1] + 2.0 * c[2], c[2]];
        }
        let normalizer = Self::eval_basis(&self.base_coeffs(), -self.alpha / 2.0, false);
        let parity = if order % 2 == 1 { sign } else { 1.0 };
        self.sigma2 * self.alpha.powi(order as i32) * parity * Self::eval_basis(&c, u, order % 2 == 1)
            / normalizer
    }
}

/// Isotropic kernels on spheres in the geodesic angle t in [0, pi],
/// evaluated exactly as cataloged (no variance normalization).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CatalogKernel {
    ChordalMatern { nu: f64, alpha: f64 },
    CircularMatern { nu: f64, alpha: f64 },
    LegendreMatern { nu: f64, alpha: f64 },
    TruncatedLegendreMatern { t_max: usize, nu: f64, alpha: f64 },
    Bernoulli { n: u32, alpha: f64 },
    PoweredExponential { nu: f64, alpha: f64 },
    GeneralizedCauchy { nu: f64, tau: f64, alpha: f64 },
    Multiquadric { tau: f64, alpha: f64 },
    SinePower { nu: f64 },
    Spherical { alpha: f64 },
    Askey { tau: f64, alpha: f64 },
    C2Wendland { tau: f64, alpha: f64 },
    C4Wendland { tau: f64, alpha: f64 },
}

const INV_PI: f64 = 1.0 / std::f64::consts::PI;

impl CatalogKernel {
    pub fn validate(&self) -> Result<(), KernelError> {
        use CatalogKernel::*;
        let ok = match *self {
            ChordalMatern { nu, alpha } => nu > 0.0 && alpha > 0.0,
            CircularMatern { nu, alpha } => nu > 0.0 && alpha > 0.0,
            LegendreMatern { nu, alpha } => nu > 0.0 && alpha > 0.0,
            TruncatedLegendreMatern { nu, alpha, .. } => nu > 0.0 && alpha > 0.0,
            Bernoulli { n, alpha } => n >= 1 && alpha >= 0.0,
            PoweredExponential { nu, alpha } => nu > 0.0 && nu <= 1.0 && alpha > 0.0,
            GeneralizedCauchy { nu, tau, alpha } => nu > 0.0 && nu <= 1.0 && tau > 0.0 && alpha > 0.0,
            Multiquadric { tau, alpha } => tau > 0.0 && tau < 1.0 && alpha > 0.0,
            SinePower { nu } => nu > 0.0 && nu < 2.0,
            Spherical { alpha } => alpha >= INV_PI,
            Askey { tau, alpha } => tau >= 2.0 && alpha >= INV_PI,
            C2Wendland { tau, alpha } => tau >= 4.0 && alpha >= INV_PI,
            C4Wendland { tau, alpha } => tau >= 6.0 && alpha >= INV_PI,
        };
        let finite = format!("{:?}", self);
        if ok {
            Ok(())
        } else {
            Err(KernelError::BadParam { msg: finite })
        }
    }

    /// Default series length for the three series-defined rows; eval
    /// accepts an override for convergence studies.
    pub fn default_terms(&self) -> usize {
        match self {
            CatalogKernel::CircularMatern { .. } => 200_000,
            CatalogKernel::Bernoulli { .. } => 100_000,
            CatalogKernel::LegendreMatern { .. } => 4000,
            _ => 0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_terms(t, self.default_terms())
    }

    pub fn eval_with_terms(&self, t: f64, terms: usize) -> f64 {
        use CatalogKernel::*;
        debug_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&t));
        match *self {
            ChordalMatern { nu, alpha } => {
                let d = 2.0 * alpha * (t / 2.0).sin();
                if d < 1e-290 {
                    // limit of d^nu K_nu(d) as d -> 0
                    ((nu - 1.0) * std::f64::consts::LN_2 + ln_gamma(nu)).exp()
                } else {
                    let k = besselk(nu, d).expect("validated parameters");
                    (nu * d.ln()).exp() * k
                }
            }
            CircularMatern { nu, alpha } => {
                let e = -(nu + 0.5);
                let mut acc = (alpha * alpha).powf(e);
                for l in 1..=terms {
                    let lf = l as f64;
                    acc += 2.0 * (alpha * alpha + lf * lf).powf(e) * (lf * t).cos();
                }
                acc
            }
            LegendreMatern { nu, alpha } => {
                let e = -(nu + 1.0);
                let p = legendre_all(terms, t.cos());
                let mut acc = 0.0;
                for (l, &pl) in p.iter().enumerate() {
                    let lf = l as f64;
                    acc += (alpha * alpha + lf * (lf + 1.0)).powf(e) * pl;
                }
                acc
            }
            TruncatedLegendreMatern { t_max, nu, alpha } => {
                let e = -(nu + 0.5);
                let p = legendre_all(t_max, t.cos());
                let mut acc = 0.0;
                for (l, &pl) in p.iter().enumerate() {
                    let lf = l as f64;
                    acc += (alpha * alpha + lf * (lf + 1.0)).powf(e) * pl;
                }
                acc
            }
            Bernoulli { n, alpha } => {
                let mut acc = 1.0 + alpha;
                for l in 1..=terms {
                    let lf = l as f64;
                    acc += 2.0 * lf.powi(-2 * n as i32) * (lf * t).cos();
                }
                acc
            }
            PoweredExponential { nu, alpha } => (-((alpha * t).powf(nu))).exp(),
            GeneralizedCauchy { nu, tau, alpha } => (1.0 + (alpha * t).powf(nu)).powf(-tau / nu),
            Multiquadric { tau, alpha } => {
                (1.0 - tau).powf(2.0 * alpha) / (1.0 + tau * tau - 2.0 * tau * t.cos()).powf(alpha)
            }
            SinePower { nu } => 1.0 - (t / 2.0).sin().powf(nu),
            Spherical { alpha } => {
                let cut = (1.0 - alpha * t).max(0.0);
                (1.0 + alpha * t / 2.0) * cut * cut
            }
            Askey { tau, alpha } => (1.0 - alpha * t).max(0.0).powf(tau),
            C2Wendland { tau, alpha } => (1.0 + tau * alpha * t) * (1.0 - alpha * t).max(0.0).powf(tau),
            C4Wendland { tau, alpha } => {
                (1.0 + tau * alpha * t + (tau * tau - 1.0) / 3.0 * (alpha * t) * (alpha * t))
                    * (1.0 - alpha * t).max(0.0).powf(tau)
            }
        }
    }

    /// Smoothness of the associated process: mean-square continuity
    /// and existence of first and second mean-square directional
    /// derivatives.
    pub fn smoothness(&self) -> SmoothnessClass {
        use CatalogKernel::*;
        let (msc, one, two) = match *self {
            ChordalMatern { nu, .. } => (true, nu > 1.0, nu > 2.0),
            CircularMatern { .. } => (true, false, false),
            LegendreMatern { nu, .. } => (nu > 0.5, nu > 1.5, nu > 2.5),
            TruncatedLegendreMatern { .. } => (true, true, true),
            Bernoulli { .. } => (true, false, false),
            PoweredExponential { .. } => (true, false, false),
            GeneralizedCauchy { .. } => (true, false, false),
            Multiquadric { .. } => (true, true, true),
            SinePower { .. } => (true, false, false),
            Spherical { .. } => (true, false, false),
            Askey { .. } => (true, false, false),
            C2Wendland { .. } => (true, true, false),
            C4Wendland { .. } => (true, true, true),
        };
        SmoothnessClass { msc, one_msd: one, two_msd: two }
    }
}

const PROBE_LADDER: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
const PROBE_THIRD_LADDER: [f64; 5] = [2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3];

/// Numeric smoothness verdicts from one-sided difference ladders at
/// the origin. Continuity: the increment at the smallest lag must
/// collapse relative to the largest. First derivative: the first
/// difference quotient must tend to zero (an even C^2 kernel has
/// K'(0) = 0). Second derivative: additionally the third difference
/// quotient, which estimates K'''(0+), must tend to zero. Thresholds
/// carry absolute floors so exactly-smooth kernels pass despite
/// rounding noise. `eval` must accept lags up to 0.06.
pub fn numeric_smoothness_probe(eval: impl Fn(f64) -> f64) -> SmoothnessClass {
    let k0 = eval(0.0);
    let increments: Vec<f64> = PROBE_LADDER.iter().map(|&h| eval(h) - k0).collect();
    let mut scale = k0.abs();
    for (&h, &inc) in PROBE_LADDER.iter().zip(&increments) {
        let _ = h;
        scale = scale.max((k0 + inc).abs());
    }
    let s_first = increments[0].abs();
    let s_last = increments.last().unwrap().abs();
    let msc = s_last <= (1e-6 * scale).max(0.05 * s_first);

    let quotients: Vec<f64> = PROBE_LADDER.iter().zip(&increments).map(|(&h, &inc)| inc / h).collect();
    let dmax = quotients.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    let one_msd = msc && quotients.last().unwrap().abs() <= (1e-7 * scale).max(0.02 * dmax);

    let third = |h: f64| (eval(3.0 * h) - 3.0 * eval(2.0 * h) + 3.0 * eval(h) - k0) / (h * h * h);
    let t_first = third(PROBE_THIRD_LADDER[0]).abs();
    let t_last = third(*PROBE_THIRD_LADDER.last().unwrap()).abs();
    let two_msd = one_msd && t_last <= (1e-4 * scale).max(0.1 * t_first);

    SmoothnessClass { msc, one_msd, two_msd }
}
