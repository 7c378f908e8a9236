//! Covariances involving directional-derivative and curvature
//! processes: spectral sums over eigenfunction gradients, closed
//! forms on the unit sphere, and joint blocks on the circle.

use crate::kernels::{legendre_all, legendre_deriv_all, CircleMatern, KernelError};
use crate::spectral::CircleBasis;
use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffCovError {
    #[error("kernel lacks required smoothness: {msg}")]
    Smoothness { msg: String },
    #[error("near-antipodal pair (sin d = {sind:e}): sphere derivative covariance is singular there")]
    Antipodal { sind: f64 },
    #[error("{0}")]
    Kernel(#[from] KernelError),
}

/// Scaling applied to derivative covariances: raw spectral sums, or
/// the calibrated sigma2 / c factor shared with the field covariance.
#[derive(Debug, Clone, Copy)]
pub enum DerivScale {
    Raw,
    Normalized { sigma2: f64, c: f64 },
}

impl DerivScale {
    pub fn factor(&self) -> f64 {
        match *self {
            DerivScale::Raw => 1.0,
            DerivScale::Normalized { sigma2, c } => sigma2 / c,
        }
    }
}

/// Cov(Z(x), D_V Z(y)) = sum_l a_l f_l(x) <grad f_l(y), V>.
/// `f_at_x[l]` holds f_l(x) and `grad_at_y[l]` holds grad f_l(y).
pub fn spectral_cov_z_dvz(
    weights: &[f64],
    f_at_x: &[f64],
    grad_at_y: &[Vector3<f64>],
    v: &Vector3<f64>,
    scale: DerivScale,
) -> f64 {
    debug_assert_eq!(weights.len(), f_at_x.len());
    debug_assert_eq!(weights.len(), grad_at_y.len());
    let mut acc = 0.0;
    for l in 0..weights.len() {
        acc += weights[l] * f_at_x[l] * grad_at_y[l].dot(v);
    }
    scale.factor() * acc
}

/// Cov(D_V Z(x), D_W Z(y)) = sum_l a_l <grad f_l(x), V> <grad f_l(y), W>.
pub fn spectral_kv(
    weights: &[f64],
    grad_at_x: &[Vector3<f64>],
    v: &Vector3<f64>,
    grad_at_y: &[Vector3<f64>],
    w: &Vector3<f64>,
    scale: DerivScale,
) -> f64 {
    debug_assert_eq!(weights.len(), grad_at_x.len());
    debug_assert_eq!(weights.len(), grad_at_y.len());
    let mut acc = 0.0;
    for l in 0..weights.len() {
        acc += weights[l] * grad_at_x[l].dot(v) * grad_at_y[l].dot(w);
    }
    scale.factor() * acc
}

/// Circle specializations of the spectral sums: a tangent vector is a
/// signed speed, so <grad f_l, V> = v f_l'.
pub fn circle_spectral_cov_z_dvz(
    weights: &[f64],
    basis: &CircleBasis,
    s_x: f64,
    s_y: f64,
    v_y: f64,
    scale: DerivScale,
) -> f64 {
    let mut acc = 0.0;
    for l in 0..weights.len() {
        acc += weights[l] * basis.eval(l, s_x) * v_y * basis.deriv(l, s_y);
    }
    scale.factor() * acc
}

pub fn circle_spectral_kv(
    weights: &[f64],
    basis: &CircleBasis,
    s_x: f64,
    v_x: f64,
    s_y: f64,
    v_y: f64,
    scale: DerivScale,
) -> f64 {
    let mut acc = 0.0;
    for l in 0..weights.len() {
        acc += weights[l] * v_x * basis.deriv(l, s_x) * v_y * basis.deriv(l, s_y);
    }
    scale.factor() * acc
}

/// Covariance of the second-derivative process along speeds u and v:
/// sum_l a_l u^2 f_l''(s_x) v^2 f_l''(s_y).
pub fn circle_spectral_curv_cov(
    weights: &[f64],
    basis: &CircleBasis,
    s_x: f64,
    u_x: f64,
    s_y: f64,
    v_y: f64,
    scale: DerivScale,
) -> f64 {
    let mut acc = 0.0;
    for l in 0..weights.len() {
        acc += weights[l] * u_x * u_x * basis.deriv2(l, s_x) * v_y * v_y * basis.deriv2(l, s_y);
    }
    scale.factor() * acc
}

/// Isotropic kernel on the unit sphere exposing geodesic derivatives.
pub trait SphereKernel {
    fn k(&self, d: f64) -> f64;
    fn k1(&self, d: f64) -> f64;
    fn k2(&self, d: f64) -> f64;
}

/// Truncated Legendre-Matern K(t) = sum_l a_l P_l(cos t) with
/// a_l = (alpha^2 + l(l+1))^(-nu-1/2), and its first two geodesic
/// derivatives. Substituting the Legendre ODE removes every division
/// by sin t: K'(t) = -sin t sum a_l P_l'(u) and
/// K''(t) = u sum a_l P_l'(u) - sum a_l l(l+1) P_l(u) at u = cos t.
#[derive(Debug, Clone)]
pub struct LegendreKernelDerivs {
    weights: Vec<f64>,
}

impl LegendreKernelDerivs {
    pub fn new(t_max: usize, nu: f64, alpha: f64) -> Result<Self, KernelError> {
        if !(nu > 0.0 && nu.is_finite() && alpha > 0.0 && alpha.is_finite()) {
            return Err(KernelError::BadParam {
                msg: format!("Legendre-Matern needs nu > 0 and alpha > 0, got nu={}, alpha={}", nu, alpha),
            });
        }
        let e = -(nu + 0.5);
        let weights = (0..=t_max)
            .map(|l| {
                let lf = l as f64;
                (alpha * alpha + lf * (lf + 1.0)).powf(e)
            })
            .collect();
        Ok(LegendreKernelDerivs { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl SphereKernel for LegendreKernelDerivs {
    fn k(&self, d: f64) -> f64 {
        let p = legendre_all(self.weights.len() - 1, d.cos());
        self.weights.iter().zip(&p).map(|(a, pl)| a * pl).sum()
    }

    fn k1(&self, d: f64) -> f64 {
        let dp = legendre_deriv_all(self.weights.len() - 1, d.cos());
        let s1: f64 = self.weights.iter().zip(&dp).map(|(a, q)| a * q).sum();
        -d.sin() * s1
    }

    fn k2(&self, d: f64) -> f64 {
        let u = d.cos();
        let p = legendre_all(self.weights.len() - 1, u);
        let dp = legendre_deriv_all(self.weights.len() - 1, u);
        let s1: f64 = self.weights.iter().zip(&dp).map(|(a, q)| a * q).sum();
        let s2: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, a)| a * (l * (l + 1)) as f64 * p[l])
            .sum();
        u * s1 - s2
    }
}

const SPHERE_DIAG_SWITCH: f64 = 1e-4;
const SPHERE_ANTIPODE_LIMIT: f64 = 1e-6;

fn sphere_geometry(x: &Vector3<f64>, y: &Vector3<f64>) -> Result<(f64, f64, f64), DiffCovError> {
    let c = x.dot(y).clamp(-1.0, 1.0);
    let sind = (1.0 - c * c).max(0.0).sqrt();
    if sind < SPHERE_ANTIPODE_LIMIT && c < 0.0 {
        return Err(DiffCovError::Antipodal { sind });
    }
    Ok((c, sind, c.acos()))
}

/// Cov(Z(x), D_V Z(y)) on the unit sphere for an isotropic kernel:
/// -K'(d) <x, V_y> / sin d, with the exact zero limit on the
/// diagonal. V_y must be tangent at y.
pub fn sphere_cov_z_dvz(
    kernel: &impl SphereKernel,
    x: &Vector3<f64>,
    y: &Vector3<f64>,
    v_y: &Vector3<f64>,
) -> Result<f64, DiffCovError> {
    let (c, sind, d) = sphere_geometry(x, y)?;
    if sind < SPHERE_DIAG_SWITCH && c > 0.0 {
        return Ok(0.0);
    }
    Ok(-kernel.k1(d) * x.dot(v_y) / sind)
}

/// Cov(D_V Z(x), D_W Z(y)) on the unit sphere:
/// -K'(d) <V_x, W_y> / sin d
///   + (K''(d) - K'(d) c / sin d) <V_x, y> <x, W_y> / sin^2 d,
/// with the diagonal limit -K''(0) <V_x, W_y>.
pub fn sphere_kv(
    kernel: &impl SphereKernel,
    x: &Vector3<f64>,
    v_x: &Vector3<f64>,
    y: &Vector3<f64>,
    w_y: &Vector3<f64>,
) -> Result<f64, DiffCovError> {
    let (c, sind, d) = sphere_geometry(x, y)?;
    if sind < SPHERE_DIAG_SWITCH && c > 0.0 {
        return Ok(-kernel.k2(0.0) * v_x.dot(w_y));
    }
    let k1 = kernel.k1(d);
    let k2 = kernel.k2(d);
    let first = -k1 * v_x.dot(w_y) / sind;
    let second = (k2 - k1 * c / sind) * v_x.dot(y) * x.dot(w_y) / (sind * sind);
    Ok(first + second)
}

/// Joint covariance blocks on the circumference-1 circle for data
/// Z(s_i) and per-target first (and optionally second) derivatives.
/// Stationary calculus: Cov(Z^(m)(s), Z^(n)(s')) = (-1)^m K^(m+n)(s'-s).
pub struct CircleJointBlocks {
    pub zz: DMatrix<f64>,
    /// data x targets, Cov(Z(s_i), Z'(t_j))
    pub zg: DMatrix<f64>,
    /// targets x targets, Cov(Z'(t_i), Z'(t_j))
    pub gg: DMatrix<f64>,
    pub zc: Option<DMatrix<f64>>,
    /// Cov(Z'(t_i), Z''(t_j))
    pub gc: Option<DMatrix<f64>>,
    pub cc: Option<DMatrix<f64>>,
}

/// Cov(Z^(m)(s), Z^(n)(s')) for the circle Matern.
pub fn circle_deriv_cov(kernel: &CircleMatern, m: usize, n: usize, s: f64, s_prime: f64) -> f64 {
    let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
    sign * kernel.deriv(s_prime - s, m + n)
}

pub fn circle_joint_cov(
    kernel: &CircleMatern,
    data: &[f64],
    targets: &[f64],
    curvature: bool,
) -> Result<CircleJointBlocks, DiffCovError> {
    // Matern smoothness on the circle: the derivative process needs
    // nu > 1, the curvature process nu > 2.
    if kernel.nu <= 1.0 {
        return Err(DiffCovError::Smoothness {
            msg: format!("derivative process needs nu > 1 on the circle, kernel has nu = {}", kernel.nu),
        });
    }
    if curvature && kernel.nu <= 2.0 {
        return Err(DiffCovError::Smoothness {
            msg: format!("curvature process needs nu > 2 on the circle, kernel has nu = {}", kernel.nu),
        });
    }
    let n = data.len();
    let t = targets.len();
    let mut zz = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(data[j] - data[i]);
            zz[(i, j)] = v;
            zz[(j, i)] = v;
        }
    }
    let mut zg = DMatrix::zeros(n, t);
    for i in 0..n {
        for j in 0..t {
            zg[(i, j)] = circle_deriv_cov(kernel, 0, 1, data[i], targets[j]);
        }
    }
    let mut gg = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            gg[(i, j)] = circle_deriv_cov(kernel, 1, 1, targets[i], targets[j]);
        }
    }
    let (zc, gc, cc) = if curvature {
        let mut zc = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                zc[(i, j)] = circle_deriv_cov(kernel, 0, 2, data[i], targets[j]);
            }
        }
        let mut gc = DMatrix::zeros(t, t);
        let mut cc = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..t {
                gc[(i, j)] = circle_deriv_cov(kernel, 1, 2, targets[i], targets[j]);
                cc[(i, j)] = circle_deriv_cov(kernel, 2, 2, targets[i], targets[j]);
            }
        }
        (Some(zc), Some(gc), Some(cc))
    } else {
        (None, None, None)
    };
    Ok(CircleJointBlocks { zz, zg, gg, zc, gc, cc })
}
