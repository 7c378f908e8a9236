//! Bayesian hyperparameter inference and posterior prediction. The
//! collapsed model is y ~ N(beta0 1, v (rho R(alpha) + (1-rho) I))
//! with v = sigma2 + tau2 and rho = sigma2 / v; sampling runs a joint
//! random-walk Metropolis step on (ln v, logit rho, ln alpha) with a
//! conjugate Gibbs update for beta0.

use crate::diffcov::{
    circle_joint_cov, sphere_cov_z_dvz, sphere_kv, DiffCovError, LegendreKernelDerivs,
};
use crate::kernels::{correlation_from_gram, CircleMatern, KernelError, SpectralKernel};
use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("data problem: {msg}")]
    Data { msg: String },
    #[error("numerical failure: {msg}")]
    Numerical { msg: String },
    #[error("sampler failed to converge: {msg}")]
    Convergence { msg: String },
    #[error("{0}")]
    Kernel(#[from] KernelError),
    #[error("{0}")]
    DiffCov(#[from] DiffCovError),
}

/// Spectral kernel family with the length-scale left free for
/// sampling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Matern { nu: f64 },
    Rbf,
}

impl KernelFamily {
    pub fn kernel(&self, alpha: f64) -> SpectralKernel {
        match *self {
            KernelFamily::Matern { nu } => SpectralKernel::Matern { nu, alpha },
            KernelFamily::Rbf => SpectralKernel::Rbf { alpha },
        }
    }
}

/// Covariance model at fixed data sites and gradient targets. Raw
/// quantities are unnormalized; the fit works on correlations and the
/// predictive rescales raw covariances by sigma2 over the mean raw
/// data variance.
pub enum GpModel {
    /// Spectral model on a mesh: phi_data holds eigenfunction values
    /// at the data sites (n x L), grad_dot holds <grad f_l(p_j), V_j>
    /// (L x J).
    Mesh {
        family: KernelFamily,
        eigenvalues: Vec<f64>,
        phi_data: DMatrix<f64>,
        grad_dot: DMatrix<f64>,
        volume: f64,
        /// Common factor applied to every spectral weight. Predictions
        /// are invariant to it; it exists so that invariance is
        /// testable through the public API.
        weight_scale: f64,
    },
    /// Isotropic truncated Legendre-Matern on the unit sphere; targets
    /// carry (position, tangent direction).
    Sphere {
        t_max: usize,
        nu: f64,
        data_x: Vec<Vector3<f64>>,
        targets: Vec<(Vector3<f64>, Vector3<f64>)>,
        cos_d: DMatrix<f64>,
    },
    /// Closed-form Matern on the circumference-1 circle; targets carry
    /// (position, signed speed).
    Circle {
        nu: f64,
        data_s: Vec<f64>,
        targets: Vec<(f64, f64)>,
    },
}

impl GpModel {
    pub fn mesh(
        family: KernelFamily,
        eigenvalues: Vec<f64>,
        phi_data: DMatrix<f64>,
        grad_dot: DMatrix<f64>,
        volume: f64,
    ) -> Result<Self, InferenceError> {
        if phi_data.ncols() != eigenvalues.len() || grad_dot.nrows() != eigenvalues.len() {
            return Err(InferenceError::Data {
                msg: format!(
                    "basis size mismatch: {} eigenvalues, phi has {} columns, grad_dot has {} rows",
                    eigenvalues.len(),
                    phi_data.ncols(),
                    grad_dot.nrows()
                ),
            });
        }
        if !(volume > 0.0) {
            return Err(InferenceError::Data { msg: "volume must be positive".into() });
        }
        Ok(GpModel::Mesh { family, eigenvalues, phi_data, grad_dot, volume, weight_scale: 1.0 })
    }

    pub fn with_weight_scale(mut self, c: f64) -> Self {
        if let GpModel::Mesh { weight_scale, .. } = &mut self {
            *weight_scale = c;
        }
        self
    }

    pub fn sphere(
        t_max: usize,
        nu: f64,
        data_x: Vec<Vector3<f64>>,
        targets: Vec<(Vector3<f64>, Vector3<f64>)>,
    ) -> Result<Self, InferenceError> {
        let n = data_x.len();
        let mut cos_d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let c = data_x[i].dot(&data_x[j]).clamp(-1.0, 1.0);
                cos_d[(i, j)] = c;
                cos_d[(j, i)] = c;
            }
        }
        Ok(GpModel::Sphere { t_max, nu, data_x, targets, cos_d })
    }

    pub fn circle(nu: f64, data_s: Vec<f64>, targets: Vec<(f64, f64)>) -> Result<Self, InferenceError> {
        CircleMatern::new(nu, 1.0, 1.0)?;
        Ok(GpModel::Circle { nu, data_s, targets })
    }

    pub fn n(&self) -> usize {
        match self {
            GpModel::Mesh { phi_data, .. } => phi_data.nrows(),
            GpModel::Sphere { data_x, .. } => data_x.len(),
            GpModel::Circle { data_s, .. } => data_s.len(),
        }
    }

    pub fn target_count(&self) -> usize {
        match self {
            GpModel::Mesh { grad_dot, .. } => grad_dot.ncols(),
            GpModel::Sphere { targets, .. } => targets.len(),
            GpModel::Circle { targets, .. } => targets.len(),
        }
    }

    fn sphere_weights(t_max: usize, nu: f64, alpha: f64) -> Vec<f64> {
        let e = -(nu + 0.5);
        (0..=t_max)
            .map(|l| {
                let lf = l as f64;
                (alpha * alpha + lf * (lf + 1.0)).powf(e)
            })
            .collect()
    }

    /// Raw covariance Gram matrix at the data sites.
    pub fn raw_gram(&self, alpha: f64) -> Result<DMatrix<f64>, InferenceError> {
        match self {
            GpModel::Mesh { family, eigenvalues, phi_data, weight_scale, .. } => {
                let w = family.kernel(alpha).weights(eigenvalues, 2);
                let mut scaled = phi_data.clone();
                for (mut col, &a) in scaled.column_iter_mut().zip(&w) {
                    col *= a * weight_scale;
                }
                Ok(&scaled * phi_data.transpose())
            }
            GpModel::Sphere { t_max, nu, cos_d, .. } => {
                let w = Self::sphere_weights(*t_max, *nu, alpha);
                let n = cos_d.nrows();
                let mut g = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = legendre_dot(&w, cos_d[(i, j)]);
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
                Ok(g)
            }
            GpModel::Circle { nu, data_s, .. } => {
                let k = CircleMatern::new(*nu, alpha, 1.0)?;
                let n = data_s.len();
                let mut g = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = k.eval(data_s[j] - data_s[i]);
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
                Ok(g)
            }
        }
    }

    /// Correlation matrix R(alpha) at the data sites.
    pub fn correlation(&self, alpha: f64) -> Result<DMatrix<f64>, InferenceError> {
        match self {
            GpModel::Circle { .. } => self.raw_gram(alpha),
            GpModel::Sphere { t_max, nu, cos_d, .. } => {
                let w = Self::sphere_weights(*t_max, *nu, alpha);
                let k0: f64 = w.iter().sum();
                let n = cos_d.nrows();
                let mut r = DMatrix::zeros(n, n);
                for i in 0..n {
                    r[(i, i)] = 1.0;
                    for j in (i + 1)..n {
                        let v = legendre_dot(&w, cos_d[(i, j)]) / k0;
                        r[(i, j)] = v;
                        r[(j, i)] = v;
                    }
                }
                Ok(r)
            }
            GpModel::Mesh { .. } => {
                let g = self.raw_gram(alpha)?;
                Ok(correlation_from_gram(&g)?)
            }
        }
    }

    /// Raw Cov(Z(x_i), D_V Z(p_j)) for all data points and targets.
    pub fn raw_cross_grad(&self, alpha: f64) -> Result<DMatrix<f64>, InferenceError> {
        match self {
            GpModel::Mesh { family, eigenvalues, phi_data, grad_dot, weight_scale, .. } => {
                let w = family.kernel(alpha).weights(eigenvalues, 2);
                let mut scaled = phi_data.clone();
                for (mut col, &a) in scaled.column_iter_mut().zip(&w) {
                    col *= a * weight_scale;
                }
                Ok(&scaled * grad_dot)
            }
            GpModel::Sphere { t_max, nu, data_x, targets, .. } => {
                let k = LegendreKernelDerivs::new(*t_max, *nu, alpha)?;
                let mut c = DMatrix::zeros(data_x.len(), targets.len());
                for (i, x) in data_x.iter().enumerate() {
                    for (j, (p, v)) in targets.iter().enumerate() {
                        c[(i, j)] = sphere_cov_z_dvz(&k, x, p, v)?;
                    }
                }
                Ok(c)
            }
            GpModel::Circle { nu, data_s, targets } => {
                let k = CircleMatern::new(*nu, alpha, 1.0)?;
                let mut c = DMatrix::zeros(data_s.len(), targets.len());
                for (i, &s) in data_s.iter().enumerate() {
                    for (j, &(t, speed)) in targets.iter().enumerate() {
                        // Cov(Z(s), speed Z'(t)) = speed K'(t - s)
                        c[(i, j)] = speed * k.deriv(t - s, 1);
                    }
                }
                Ok(c)
            }
        }
    }

    /// Raw Var(D_V Z(p_j)) per target.
    pub fn raw_grad_var(&self, alpha: f64) -> Result<Vec<f64>, InferenceError> {
        match self {
            GpModel::Mesh { family, eigenvalues, grad_dot, weight_scale, .. } => {
                let w = family.kernel(alpha).weights(eigenvalues, 2);
                let mut out = vec![0.0; grad_dot.ncols()];
                for (j, slot) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for l in 0..w.len() {
                        let g = grad_dot[(l, j)];
                        acc += w[l] * g * g;
                    }
                    *slot = acc * weight_scale;
                }
                Ok(out)
            }
            GpModel::Sphere { t_max, nu, targets, .. } => {
                let k = LegendreKernelDerivs::new(*t_max, *nu, alpha)?;
                targets
                    .iter()
                    .map(|(p, v)| Ok(sphere_kv(&k, p, v, p, v)?))
                    .collect()
            }
            GpModel::Circle { nu, targets, .. } => {
                let k = CircleMatern::new(*nu, alpha, 1.0)?;
                // Var(speed Z'(t)) = -speed^2 K''(0)
                Ok(targets.iter().map(|&(_, speed)| -speed * speed * k.deriv(0.0, 2)).collect())
            }
        }
    }

    /// Normalizer used when no data constrains the scale: the
    /// volume-averaged raw variance.
    pub fn prior_normalizer(&self, alpha: f64) -> f64 {
        match self {
            GpModel::Mesh { family, eigenvalues, volume, weight_scale, .. } => {
                weight_scale * family.kernel(alpha).weights(eigenvalues, 2).iter().sum::<f64>() / volume
            }
            GpModel::Sphere { t_max, nu, .. } => Self::sphere_weights(*t_max, *nu, alpha).iter().sum(),
            GpModel::Circle { .. } => 1.0,
        }
    }
}

/// sum_l w_l P_l(x) without allocating the Legendre table.
fn legendre_dot(w: &[f64], x: f64) -> f64 {
    let mut acc = w[0];
    if w.len() == 1 {
        return acc;
    }
    let mut pm = 1.0;
    let mut pl = x;
    acc += w[1] * pl;
    for l in 1..w.len() - 1 {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * x * pl - lf * pm) / (lf + 1.0);
        pm = pl;
        pl = next;
        acc += w[l + 1] * pl;
    }
    acc
}

/// Inverse-gamma priors on v and alpha with shape 2, so the prior mean
/// equals the scale parameter; flat Beta(1,1) on rho; flat on beta0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Priors {
    pub v_shape: f64,
    pub v_scale: f64,
    pub alpha_shape: f64,
    pub alpha_scale: f64,
}

impl Priors {
    /// Shape-2 priors with the v scale matched to the sample variance
    /// of the data and the alpha scale to a fifth of the manifold
    /// diameter.
    pub fn matched(y: &[f64], diameter: f64) -> Result<Self, InferenceError> {
        if y.len() < 2 {
            return Err(InferenceError::Data { msg: "need at least two observations".into() });
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        if !(var > 0.0) {
            return Err(InferenceError::Data { msg: "observations are constant; variance prior undefined".into() });
        }
        if !(diameter > 0.0) {
            return Err(InferenceError::Data { msg: "diameter must be positive".into() });
        }
        Ok(Priors { v_shape: 2.0, v_scale: var, alpha_shape: 2.0, alpha_scale: diameter / 5.0 })
    }

    fn log_density(&self, v: f64, rho: f64, alpha: f64) -> f64 {
        if !(v > 0.0 && alpha > 0.0 && rho > 0.0 && rho < 1.0) {
            return f64::NEG_INFINITY;
        }
        log_inv_gamma(v, self.v_shape, self.v_scale) + log_inv_gamma(alpha, self.alpha_shape, self.alpha_scale)
    }
}

fn log_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - crate::kernels::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HyperDraw {
    pub v: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta0: f64,
}

impl HyperDraw {
    pub fn sigma2(&self) -> f64 {
        self.v * self.rho
    }
    pub fn tau2(&self) -> f64 {
        self.v * (1.0 - self.rho)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub initial_scale: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { iterations: 2000, burn_in: 500, thin: 5, target_acceptance: 0.3, initial_scale: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GewekeSummary {
    pub v: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta0: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub draws: Vec<HyperDraw>,
    /// Collapsed log-likelihood at each retained draw.
    pub logliks: Vec<f64>,
    pub acceptance: f64,
    pub final_scale: f64,
    pub geweke: GewekeSummary,
}

struct FactoredState {
    lndet: f64,
    q_yy: f64,
    q_y1: f64,
    q_11: f64,
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    lndet: f64,
}

impl SpdFactor {
    fn new(a: &DMatrix<f64>) -> Option<Self> {
        let fa = to_faer(a);
        let llt = fa.llt(faer::Side::Lower).ok()?;
        let l = llt.L();
        let mut lndet = 0.0;
        for i in 0..a.nrows() {
            lndet += l[(i, i)].ln();
        }
        Some(SpdFactor { llt, lndet: 2.0 * lndet })
    }

    fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let fb = to_faer(b);
        let x = self.llt.solve(&fb);
        DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)])
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let fb = faer::Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.llt.solve(&fb);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }
}

/// Log-likelihood of y under N(beta0 1, v (rho R + (1-rho) I)).
pub fn collapsed_loglik(
    r: &DMatrix<f64>,
    y: &[f64],
    v: f64,
    rho: f64,
    beta0: f64,
) -> Result<f64, InferenceError> {
    let n = y.len();
    if r.nrows() != n {
        return Err(InferenceError::Data { msg: "correlation size does not match data".into() });
    }
    if !(v > 0.0 && (0.0..1.0).contains(&rho)) {
        return Err(InferenceError::Data { msg: format!("invalid v = {}, rho = {}", v, rho) });
    }
    let mut a = r * rho;
    for i in 0..n {
        a[(i, i)] += 1.0 - rho;
    }
    let f = SpdFactor::new(&a)
        .ok_or_else(|| InferenceError::Numerical { msg: "covariance factorization failed".into() })?;
    let resid: Vec<f64> = y.iter().map(|&yi| yi - beta0).collect();
    let w = f.solve_vec(&resid);
    let quad: f64 = resid.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI * v).ln() + f.lndet + quad / v))
}

fn factor_state(a: &DMatrix<f64>, y: &[f64]) -> Option<FactoredState> {
    let f = SpdFactor::new(a)?;
    let ones = vec![1.0; y.len()];
    let ainv_y = f.solve_vec(y);
    let ainv_1 = f.solve_vec(&ones);
    let q_yy: f64 = y.iter().zip(&ainv_y).map(|(a, b)| a * b).sum();
    let q_y1: f64 = ainv_1.iter().zip(y).map(|(a, b)| a * b).sum();
    let q_11: f64 = ainv_1.iter().sum();
    Some(FactoredState { lndet: f.lndet, q_yy, q_y1, q_11 })
}

impl FactoredState {
    fn loglik(&self, n: usize, v: f64, beta0: f64) -> f64 {
        let quad = self.q_yy - 2.0 * beta0 * self.q_y1 + beta0 * beta0 * self.q_11;
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI * v).ln() + self.lndet + quad / v)
    }
}

fn build_marginal(r: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let n = r.nrows();
    let mut a = r * rho;
    for i in 0..n {
        a[(i, i)] += 1.0 - rho;
    }
    a
}

/// Joint random-walk Metropolis over (ln v, logit rho, ln alpha) with
/// conjugate Gibbs updates of beta0 and a global proposal scale
/// adapted toward the target acceptance during burn-in only. Returns
/// every thin-th post-burn-in draw.
pub fn mh_sample(
    model: &GpModel,
    y: &[f64],
    priors: &Priors,
    cfg: &McmcConfig,
    rng: &mut impl Rng,
) -> Result<FitResult, InferenceError> {
    let n = model.n();
    if y.len() != n || n == 0 {
        return Err(InferenceError::Data {
            msg: format!("model has {} sites, data has {} values", n, y.len()),
        });
    }
    if cfg.thin == 0 {
        return Err(InferenceError::Data { msg: "thin must be at least 1".into() });
    }
    if cfg.iterations == 0 {
        return Ok(FitResult {
            draws: Vec::new(),
            logliks: Vec::new(),
            acceptance: 0.0,
            final_scale: cfg.initial_scale,
            geweke: GewekeSummary { v: 0.0, rho: 0.0, alpha: 0.0, beta0: 0.0 },
        });
    }

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut v = priors.v_scale;
    let mut rho = 0.5;
    let mut alpha = priors.alpha_scale;
    let mut beta0 = mean_y;

    let r0 = model.correlation(alpha)?;
    let a0 = build_marginal(&r0, rho);
    let mut state = factor_state(&a0, y)
        .ok_or_else(|| InferenceError::Numerical { msg: "initial covariance factorization failed".into() })?;
    let mut log_post = state.loglik(n, v, beta0)
        + priors.log_density(v, rho, alpha)
        + v.ln()
        + (rho * (1.0 - rho)).ln()
        + alpha.ln();

    // relative per-coordinate proposal widths (ln v, logit rho, ln alpha)
    const REL: [f64; 3] = [1.0, 1.5, 1.0];
    let mut log_scale = cfg.initial_scale.ln();
    let mut accepted_post = 0usize;
    let mut post_iters = 0usize;
    let mut draws = Vec::new();
    let mut logliks = Vec::new();

    for iter in 0..cfg.iterations {
        let scale = log_scale.exp();
        let eps: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let z = [v.ln(), (rho / (1.0 - rho)).ln(), alpha.ln()];
        let zp = [
            z[0] + scale * REL[0] * eps[0],
            z[1] + scale * REL[1] * eps[1],
            z[2] + scale * REL[2] * eps[2],
        ];
        let vp = zp[0].exp();
        let rhop = 1.0 / (1.0 + (-zp[1]).exp());
        let alphap = zp[2].exp();

        let mut accept_prob = 0.0;
        if vp.is_finite() && alphap.is_finite() && rhop > 0.0 && rhop < 1.0 {
            if let Ok(rp) = model.correlation(alphap) {
                let ap = build_marginal(&rp, rhop);
                if let Some(sp) = factor_state(&ap, y) {
                    let lpp = sp.loglik(n, vp, beta0)
                        + priors.log_density(vp, rhop, alphap)
                        + vp.ln()
                        + (rhop * (1.0 - rhop)).ln()
                        + alphap.ln();
                    let log_ratio = lpp - log_post;
                    accept_prob = log_ratio.min(0.0).exp();
                    if rng.gen::<f64>() < accept_prob {
                        v = vp;
                        rho = rhop;
                        alpha = alphap;
                        state = sp;
                        if iter >= cfg.burn_in {
                            accepted_post += 1;
                        }
                    }
                }
            }
        }

        // Gibbs for beta0: flat prior, conditional N(q_y1/q_11, v/q_11).
        let b_mean = state.q_y1 / state.q_11;
        let b_sd = (v / state.q_11).sqrt();
        let e: f64 = StandardNormal.sample(rng);
        beta0 = b_mean + b_sd * e;
        log_post = state.loglik(n, v, beta0)
            + priors.log_density(v, rho, alpha)
            + v.ln()
            + (rho * (1.0 - rho)).ln()
            + alpha.ln();

        if iter < cfg.burn_in {
            let gamma = ((iter + 1) as f64).powf(-0.6);
            log_scale += gamma * (accept_prob - cfg.target_acceptance);
            log_scale = log_scale.clamp((1e-3f64).ln(), (10.0f64).ln());
        } else {
            post_iters += 1;
            if (iter - cfg.burn_in) % cfg.thin == 0 {
                draws.push(HyperDraw { v, rho, alpha, beta0 });
                logliks.push(state.loglik(n, v, beta0));
            }
        }
    }

    if post_iters > 0 && accepted_post == 0 {
        return Err(InferenceError::Convergence {
            msg: format!("all {} post-burn-in proposals were rejected", post_iters),
        });
    }

    let acceptance = if post_iters > 0 { accepted_post as f64 / post_iters as f64 } else { 0.0 };
    let geweke = GewekeSummary {
        v: geweke_z(&draws.iter().map(|d| d.v).collect::<Vec<_>>()),
        rho: geweke_z(&draws.iter().map(|d| d.rho).collect::<Vec<_>>()),
        alpha: geweke_z(&draws.iter().map(|d| d.alpha).collect::<Vec<_>>()),
        beta0: geweke_z(&draws.iter().map(|d| d.beta0).collect::<Vec<_>>()),
    };
    Ok(FitResult { draws, logliks, acceptance, final_scale: log_scale.exp(), geweke })
}

/// Geweke-style location diagnostic: standardized difference between
/// the mean of the first 10% and the last 50% of the chain, with
/// plain (not spectral) variance estimates.
pub fn geweke_z(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 20 {
        return 0.0;
    }
    let a = &chain[..n / 10];
    let b = &chain[n / 2..];
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let denom = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (ma - mb) / denom
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub variance: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Empirical quantile with linear interpolation on a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn summarize(samples: &mut [f64]) -> PredictiveSummary {
    samples.sort_by(|a, b| a.total_cmp(b));
    let (m, var) = mean_var(samples);
    PredictiveSummary { mean: m, variance: var, q025: quantile(samples, 0.025), q975: quantile(samples, 0.975) }
}

/// Posterior predictive for the directional-derivative process at the
/// model's targets: one sample per retained draw per target, from the
/// conditional normal under that draw. The predictive covariance is
/// sigma2 / c_tilde times the raw Gram plus tau2 I, with c_tilde the
/// mean raw data variance, so predictions are invariant to any common
/// rescaling of the spectral weights. With no data the prior
/// predictive is used.
pub fn predictive_gradient(
    model: &GpModel,
    y: &[f64],
    draws: &[HyperDraw],
    rng: &mut impl Rng,
) -> Result<Vec<PredictiveSummary>, InferenceError> {
    let n = model.n();
    let j = model.target_count();
    if y.len() != n {
        return Err(InferenceError::Data { msg: "data length does not match model sites".into() });
    }
    if draws.is_empty() {
        return Err(InferenceError::Data { msg: "no posterior draws supplied".into() });
    }
    let mut samples = vec![Vec::with_capacity(draws.len()); j];

    for draw in draws {
        let kv = model.raw_grad_var(draw.alpha)?;
        if n == 0 {
            let c = model.prior_normalizer(draw.alpha);
            let scale = draw.sigma2() / c;
            for (t, slot) in samples.iter_mut().enumerate() {
                let sd = (scale * kv[t]).max(0.0).sqrt();
                let e: f64 = StandardNormal.sample(rng);
                slot.push(sd * e);
            }
            continue;
        }
        let g = model.raw_gram(draw.alpha)?;
        let c_tilde = g.diagonal().iter().sum::<f64>() / n as f64;
        if !(c_tilde > 0.0) {
            return Err(InferenceError::Numerical { msg: "raw variance normalizer is not positive".into() });
        }
        let scale = draw.sigma2() / c_tilde;
        let mut sigma = g * scale;
        for i in 0..n {
            sigma[(i, i)] += draw.tau2();
        }
        let f = SpdFactor::new(&sigma)
            .ok_or_else(|| InferenceError::Numerical { msg: "predictive covariance factorization failed".into() })?;
        let cross = model.raw_cross_grad(draw.alpha)?;
        let resid: Vec<f64> = y.iter().map(|&yi| yi - draw.beta0).collect();
        let w = f.solve_vec(&resid);
        let sinv_cross = f.solve_mat(&cross);
        for t in 0..j {
            let col = cross.column(t);
            let mu: f64 = scale * col.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let explained: f64 = col.iter().zip(sinv_cross.column(t).iter()).map(|(a, b)| a * b).sum();
            let var = scale * kv[t] - scale * scale * explained;
            let floor = -1e-8 * (scale * kv[t]).abs();
            if var < floor {
                return Err(InferenceError::Numerical {
                    msg: format!("negative predictive variance {:e} at target {}", var, t),
                });
            }
            let sd = var.max(0.0).sqrt();
            let e: f64 = StandardNormal.sample(rng);
            samples[t].push(mu + sd * e);
        }
    }

    Ok(samples.iter_mut().map(|s| summarize(s)).collect())
}

/// Posterior predictive for the joint (gradient, curvature) pair at
/// each target on the circle, one bivariate sample per draw. The
/// kernel is the closed-form circle Matern, which requires nu = 5/2
/// for the curvature process to exist.
pub fn predictive_curvature_circle(
    data_s: &[f64],
    y: &[f64],
    nu: f64,
    targets: &[f64],
    draws: &[HyperDraw],
    rng: &mut impl Rng,
) -> Result<Vec<(PredictiveSummary, PredictiveSummary)>, InferenceError> {
    if data_s.len() != y.len() || data_s.is_empty() {
        return Err(InferenceError::Data { msg: "circle data sites and values must match and be nonempty".into() });
    }
    if draws.is_empty() {
        return Err(InferenceError::Data { msg: "no posterior draws supplied".into() });
    }
    let n = data_s.len();
    let jt = targets.len();
    let mut grad_samples = vec![Vec::with_capacity(draws.len()); jt];
    let mut curv_samples = vec![Vec::with_capacity(draws.len()); jt];

    for draw in draws {
        let kernel = CircleMatern::new(nu, draw.alpha, draw.sigma2())?;
        let blocks = circle_joint_cov(&kernel, data_s, targets, true)?;
        let mut sigma = blocks.zz.clone();
        for i in 0..n {
            sigma[(i, i)] += draw.tau2();
        }
        let f = SpdFactor::new(&sigma)
            .ok_or_else(|| InferenceError::Numerical { msg: "circle covariance factorization failed".into() })?;
        let resid: Vec<f64> = y.iter().map(|&yi| yi - draw.beta0).collect();
        let w = f.solve_vec(&resid);
        let zc = blocks.zc.as_ref().expect("curvature blocks present");
        let gc = blocks.gc.as_ref().expect("curvature blocks present");
        let cc = blocks.cc.as_ref().expect("curvature blocks present");

        for t in 0..jt {
            let bg = blocks.zg.column(t);
            let bc = zc.column(t);
            let mu_g: f64 = bg.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mu_c: f64 = bc.iter().zip(&w).map(|(a, b)| a * b).sum();
            let sg = f.solve_vec(bg.as_slice());
            let sc = f.solve_vec(bc.as_slice());
            let egg: f64 = bg.iter().zip(&sg).map(|(a, b)| a * b).sum();
            let egc: f64 = bg.iter().zip(&sc).map(|(a, b)| a * b).sum();
            let ecc: f64 = bc.iter().zip(&sc).map(|(a, b)| a * b).sum();
            let c00 = blocks.gg[(t, t)] - egg;
            let c01 = gc[(t, t)] - egc;
            let c11 = cc[(t, t)] - ecc;
            // bivariate sample via the 2x2 Cholesky with PSD clamping
            let v00 = c00.max(0.0);
            let l00 = v00.sqrt();
            let l10 = if l00 > 0.0 { c01 / l00 } else { 0.0 };
            let v11 = (c11 - l10 * l10).max(0.0);
            let l11 = v11.sqrt();
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            grad_samples[t].push(mu_g + l00 * e0);
            curv_samples[t].push(mu_c + l10 * e0 + l11 * e1);
        }
    }

    Ok(grad_samples
        .iter_mut()
        .zip(curv_samples.iter_mut())
        .map(|(g, c)| (summarize(g), summarize(c)))
        .collect())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    pub rate: f64,
}

/// Fraction of targets whose true value falls inside the empirical
/// 95% predictive interval.
pub fn coverage_report(truth: &[f64], summaries: &[PredictiveSummary]) -> CoverageReport {
    assert_eq!(truth.len(), summaries.len());
    let covered = truth
        .iter()
        .zip(summaries)
        .filter(|(&t, s)| t >= s.q025 && t <= s.q975)
        .count();
    CoverageReport { covered, total: truth.len(), rate: covered as f64 / truth.len().max(1) as f64 }
}

/// Draws a sample path of the latent field plus nugget at the data
/// sites: y = beta0 + L z + tau e with L the Cholesky factor of the
/// scaled Gram matrix.
pub fn simulate_field(
    model: &GpModel,
    draw: &HyperDraw,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, InferenceError> {
    let n = model.n();
    let g = model.raw_gram(draw.alpha)?;
    let c_tilde = g.diagonal().iter().sum::<f64>() / n as f64;
    let scale = draw.sigma2() / c_tilde;
    let mut sigma = g * scale;
    // tiny relative jitter keeps the factor alive for smooth kernels
    let jitter = 1e-10 * scale * c_tilde;
    for i in 0..n {
        sigma[(i, i)] += jitter;
    }
    let f = SpdFactor::new(&sigma)
        .ok_or_else(|| InferenceError::Numerical { msg: "simulation covariance factorization failed".into() })?;
    let l = f.llt.L();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let tau = draw.tau2().sqrt();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..=i {
            acc += l[(i, k)] * z[k];
        }
        let e: f64 = StandardNormal.sample(rng);
        out[i] = draw.beta0 + acc + tau * e;
    }
    Ok(out)
}

/// Posterior predictive for the field Z itself at held-out vertices,
/// used by the simulate/fit round trips.
pub fn predictive_field(
    model: &GpModel,
    y: &[f64],
    cross_raw: &DMatrix<f64>,
    target_var_raw: &[f64],
    draws: &[HyperDraw],
    rng: &mut impl Rng,
) -> Result<Vec<PredictiveSummary>, InferenceError> {
    let n = model.n();
    let jt = target_var_raw.len();
    if cross_raw.nrows() != n || cross_raw.ncols() != jt {
        return Err(InferenceError::Data { msg: "cross covariance shape mismatch".into() });
    }
    if draws.is_empty() {
        return Err(InferenceError::Data { msg: "no posterior draws supplied".into() });
    }
    let mut samples = vec![Vec::with_capacity(draws.len()); jt];
    for draw in draws {
        let g = model.raw_gram(draw.alpha)?;
        let c_tilde = g.diagonal().iter().sum::<f64>() / n as f64;
        let scale = draw.sigma2() / c_tilde;
        let mut sigma = g * scale;
        for i in 0..n {
            sigma[(i, i)] += draw.tau2();
        }
        let f = SpdFactor::new(&sigma)
            .ok_or_else(|| InferenceError::Numerical { msg: "predictive covariance factorization failed".into() })?;
        let resid: Vec<f64> = y.iter().map(|&yi| yi - draw.beta0).collect();
        let w = f.solve_vec(&resid);
        let sinv_cross = f.solve_mat(cross_raw);
        for t in 0..jt {
            let col = cross_raw.column(t);
            let mu = draw.beta0 + scale * col.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let explained: f64 = col.iter().zip(sinv_cross.column(t).iter()).map(|(a, b)| a * b).sum();
            let var = scale * target_var_raw[t] - scale * scale * explained;
            let sd = var.max(0.0).sqrt();
            let e: f64 = StandardNormal.sample(rng);
            samples[t].push(mu + sd * e);
        }
    }
    Ok(samples.iter_mut().map(|s| summarize(s)).collect())
}
