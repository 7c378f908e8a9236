//! Truncated Laplace-Beltrami spectra: generalized eigensolves of
//! (L, M), the analytic circle basis, a Weyl-law diagnostic, and a
//! checksum-keyed sidecar cache.

use crate::mesh_core::{LaplacianPair, TriangleMesh};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

/// Largest mesh the dense eigensolvers accept.
pub const MAX_EIGEN_VERTICES: usize = 4096;
/// Meshes up to this size use the unblocked solver.
const SMALL_DENSE_LIMIT: usize = 1024;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("requested {requested} modes but the mesh supports at most {capacity}")]
    TooManyModes { requested: usize, capacity: usize },
    #[error("mesh has {n} vertices, eigensolver capacity is {max}")]
    MeshTooLarge { n: usize, max: usize },
    #[error("eigensolve failed: {msg}")]
    Numerical { msg: String },
    #[error("spectrum cache key mismatch: expected {expected}, file has {found}")]
    CacheKeyMismatch { expected: String, found: String },
    #[error("spectrum data malformed: {msg}")]
    BadShape { msg: String },
    #[error("Weyl diagnostic needs at least {need} modes, got {have}")]
    NeedMoreModes { have: usize, need: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// First T+1 Laplace-Beltrami eigenpairs of a mesh. Eigenvalues are
/// ascending with the first at zero for a closed mesh; eigenvector
/// columns are M-orthonormal and sign-fixed so the entry of largest
/// magnitude (lowest index on ties) is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn from_parts(eigenvalues: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self, SpectralError> {
        if eigenvalues.is_empty() || vectors.ncols() != eigenvalues.len() {
            return Err(SpectralError::BadShape {
                msg: format!(
                    "{} eigenvalues against {} eigenvector columns",
                    eigenvalues.len(),
                    vectors.ncols()
                ),
            });
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(SpectralError::BadShape { msg: "eigenvalues not ascending".into() });
        }
        if eigenvalues.iter().any(|&l| !l.is_finite() || l < 0.0) {
            return Err(SpectralError::BadShape { msg: "eigenvalues must be finite and nonnegative".into() });
        }
        Ok(Spectrum { eigenvalues, vectors })
    }

    /// Truncation order T; the basis holds T+1 modes.
    pub fn t(&self) -> usize {
        self.eigenvalues.len() - 1
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
    pub fn value(&self, l: usize, vertex: usize) -> f64 {
        self.vectors[(vertex, l)]
    }
}

fn sign_fix_columns(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn dense_small_eigen(b: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = b.nrows();
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

fn dense_blocked_eigen(b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = b.nrows();
    let a = faer::Mat::from_fn(n, n, |i, j| b[(i, j)]);
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| SpectralError::Numerical { msg: format!("blocked eigensolve: {:?}", e) })?;
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = u[(r, src)];
        }
    }
    Ok((values, vectors))
}

/// Solves L phi = lambda M phi for the lowest t+1 pairs through the
/// symmetric reduction B = M^{-1/2} L M^{-1/2}. Dense direct up to
/// 1024 vertices, blocked dense up to 4096, capacity error beyond.
/// Residuals and M-orthonormality are verified before returning.
pub fn compute_spectrum(lap: &LaplacianPair, t: usize) -> Result<Spectrum, SpectralError> {
    let n = lap.mass.len();
    if n > MAX_EIGEN_VERTICES {
        return Err(SpectralError::MeshTooLarge { n, max: MAX_EIGEN_VERTICES });
    }
    if t + 1 > n {
        return Err(SpectralError::TooManyModes { requested: t + 1, capacity: n });
    }
    if lap.mass.iter().any(|&m| !(m > 0.0)) {
        return Err(SpectralError::Numerical { msg: "mass matrix has nonpositive entries".into() });
    }
    let inv_sqrt_m: Vec<f64> = lap.mass.iter().map(|&m| 1.0 / m.sqrt()).collect();
    let mut b = lap.stiffness.to_dense();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= inv_sqrt_m[i] * inv_sqrt_m[j];
        }
    }
    // Exact symmetrization; assembly rounding leaves ~1e-16 skew.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = avg;
            b[(j, i)] = avg;
        }
    }

    let (values, u) = if n <= SMALL_DENSE_LIMIT {
        dense_small_eigen(b)?
    } else {
        dense_blocked_eigen(&b)?
    };

    let lambda_max = values[t].abs().max(1.0);
    let neg_tol = 1e-8 * lambda_max;
    let mut eigenvalues = Vec::with_capacity(t + 1);
    for &l in values.iter().take(t + 1) {
        if l < -neg_tol {
            return Err(SpectralError::Numerical {
                msg: format!("negative eigenvalue {:e} beyond tolerance", l),
            });
        }
        eigenvalues.push(l.max(0.0));
    }

    // U-orthonormality carries to M-orthonormality of phi = M^{-1/2} u.
    let u_lead = u.columns(0, t + 1).into_owned();
    let gram = u_lead.transpose() * &u_lead;
    for i in 0..=t {
        for j in 0..=t {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > 1e-8 {
                return Err(SpectralError::Numerical {
                    msg: format!("eigenvector gram deviates at ({}, {}) by {:e}", i, j, gram[(i, j)] - target),
                });
            }
        }
    }

    let mut vectors = DMatrix::zeros(n, t + 1);
    for l in 0..=t {
        for r in 0..n {
            vectors[(r, l)] = inv_sqrt_m[r] * u_lead[(r, l)];
        }
    }
    sign_fix_columns(&mut vectors);

    let max_mass = lap.mass.iter().cloned().fold(0.0f64, f64::max);
    let res_tol = 1e-7 * (1.0 + lambda_max) * max_mass.sqrt();
    for l in 0..=t {
        let phi: Vec<f64> = (0..n).map(|r| vectors[(r, l)]).collect();
        let lphi = lap.stiffness.matvec(&phi);
        let mut res = 0.0f64;
        for r in 0..n {
            let d = lphi[r] - eigenvalues[l] * lap.mass[r] * phi[r];
            res += d * d;
        }
        let res = res.sqrt();
        if res > res_tol {
            return Err(SpectralError::Numerical {
                msg: format!("mode {} residual {:e} exceeds {:e}", l, res, res_tol),
            });
        }
    }

    Spectrum::from_parts(eigenvalues, vectors)
}

/// Analytic spectrum of the circumference-1 circle: mode 0 is the
/// constant 1; odd l is sqrt(2) cos(2 pi m s) and even l is
/// sqrt(2) sin(2 pi m s) with frequency m = ceil(l/2), eigenvalue
/// (2 pi m)^2. The basis is orthonormal in L2 of the unit circle.
#[derive(Debug, Clone, Copy)]
pub struct CircleBasis {
    t: usize,
}

impl CircleBasis {
    pub fn new(t: usize) -> Self {
        CircleBasis { t }
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn len(&self) -> usize {
        self.t + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    fn frequency(l: usize) -> f64 {
        ((l + 1) / 2) as f64
    }
    pub fn eigenvalue(&self, l: usize) -> f64 {
        let w = 2.0 * std::f64::consts::PI * Self::frequency(l);
        w * w
    }
    pub fn eval(&self, l: usize, s: f64) -> f64 {
        if l == 0 {
            return 1.0;
        }
        let w = 2.0 * std::f64::consts::PI * Self::frequency(l);
        let r = std::f64::consts::SQRT_2;
        if l % 2 == 1 {
            r * (w * s).cos()
        } else {
            r * (w * s).sin()
        }
    }
    pub fn deriv(&self, l: usize, s: f64) -> f64 {
        if l == 0 {
            return 0.0;
        }
        let w = 2.0 * std::f64::consts::PI * Self::frequency(l);
        let r = std::f64::consts::SQRT_2;
        if l % 2 == 1 {
            -r * w * (w * s).sin()
        } else {
            r * w * (w * s).cos()
        }
    }
    pub fn deriv2(&self, l: usize, s: f64) -> f64 {
        -self.eigenvalue(l) * self.eval(l, s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeylDiagnostic {
    /// Slope of log N(lambda) against log lambda over the upper half
    /// of the spectrum; approximately dim/2 for a genuine manifold
    /// spectrum.
    pub slope: f64,
    pub dimension_estimate: f64,
    pub modes_used: usize,
}

pub fn weyl_diagnostic(eigenvalues: &[f64]) -> Result<WeylDiagnostic, SpectralError> {
    if eigenvalues.len() < 21 {
        return Err(SpectralError::NeedMoreModes { have: eigenvalues.len(), need: 21 });
    }
    let lo = eigenvalues.len() / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (l, &lambda) in eigenvalues.iter().enumerate().skip(lo) {
        if lambda > 0.0 {
            xs.push(lambda.ln());
            ys.push(((l + 1) as f64).ln());
        }
    }
    if xs.len() < 2 {
        return Err(SpectralError::Numerical { msg: "not enough positive eigenvalues for Weyl fit".into() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    let slope = cov / var;
    Ok(WeylDiagnostic { slope, dimension_estimate: 2.0 * slope, modes_used: xs.len() })
}

/// Content hash tying a cached spectrum to the exact mesh bytes and
/// truncation order.
pub fn spectrum_cache_key(mesh: &TriangleMesh, t: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"manigrad-spectrum-v1");
    h.update((mesh.vertex_count() as u64).to_le_bytes());
    h.update((mesh.face_count() as u64).to_le_bytes());
    for v in mesh.vertices() {
        for i in 0..3 {
            h.update(v[i].to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.update((t as u64).to_le_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct SpectrumFile {
    version: u32,
    key: String,
    n: usize,
    t: usize,
    eigenvalues: Vec<f64>,
    /// column-major n x (t+1)
    vectors: Vec<f64>,
}

pub fn save_spectrum(path: impl AsRef<Path>, key: &str, spectrum: &Spectrum) -> Result<(), SpectralError> {
    let file = SpectrumFile {
        version: 1,
        key: key.to_string(),
        n: spectrum.vectors.nrows(),
        t: spectrum.t(),
        eigenvalues: spectrum.eigenvalues.clone(),
        vectors: spectrum.vectors.as_slice().to_vec(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_spectrum(path: impl AsRef<Path>, expected_key: &str) -> Result<Spectrum, SpectralError> {
    let text = std::fs::read_to_string(path)?;
    let file: SpectrumFile = serde_json::from_str(&text)?;
    if file.key != expected_key {
        return Err(SpectralError::CacheKeyMismatch {
            expected: expected_key.to_string(),
            found: file.key,
        });
    }
    if file.vectors.len() != file.n * (file.t + 1) || file.eigenvalues.len() != file.t + 1 {
        return Err(SpectralError::BadShape { msg: "cached spectrum has inconsistent dimensions".into() });
    }
    let vectors = DMatrix::from_vec(file.n, file.t + 1, file.vectors);
    Spectrum::from_parts(file.eigenvalues, vectors)
}
