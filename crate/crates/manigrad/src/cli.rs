//! Batch front-end: spectrum caching, data simulation, hyperparameter
//! fitting, and predictive export. Every run is driven by a JSON
//! config plus an explicit seed; outputs are byte-deterministic for a
//! fixed config and seed.

use crate::geometry::{
    farthest_point_sample, project_reference_field, sample_barycentric, scatter_and_smooth,
    sphere_chart, BaryPoint, GeometryError, SphereField,
};
use crate::inference::{
    mh_sample, predictive_curvature_circle, predictive_gradient, quantile, CoverageReport,
    FitResult, GpModel, HyperDraw, InferenceError, KernelFamily, McmcConfig, PredictiveSummary,
    Priors,
};
use crate::kernels::KernelError;
use crate::mesh_core::{assemble_laplacian, load_ply, write_ply, MeshError, TriangleMesh};
use crate::spectral::{
    compute_spectrum, load_spectrum, save_spectrum, spectrum_cache_key, weyl_diagnostic,
    Spectrum, SpectralError,
};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_CONVERGENCE: i32 = 5;

// Stream salts keep the grid and the predictive sampler decoupled
// from the data-simulation stream under a single user seed.
const GRID_SEED_SALT: u64 = 0x6d67_6772_6964_0001;
const PRED_SEED_SALT: u64 = 0x6d67_7072_6564_0002;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) | CliError::Convergence(m) => m,
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::Numerical { .. } => CliError::Numerical(e.to_string()),
            SpectralError::TooManyModes { .. } | SpectralError::MeshTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::BadParam { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Solve { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Data { .. } => CliError::Data(e.to_string()),
            InferenceError::Convergence { .. } => CliError::Convergence(e.to_string()),
            InferenceError::Kernel(k) => CliError::from(k),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv error: {}", e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "manigrad", version, about = "Gaussian process regression and derivative inference on manifolds")]
pub struct Args {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Compute (or validate) the Laplacian spectrum cache
    Spectrum(CommonArgs),
    /// Simulate scattered noisy observations of the built-in truth
    Simulate(CommonArgs),
    /// Fit hyperparameters by MCMC and export draws
    Fit(CommonArgs),
    /// Posterior predictive for the derivative (and curvature) process
    Gradient(CommonArgs),
}

#[derive(clap::Args, Debug)]
pub struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; relative paths in the config resolve here
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the seed given in the config
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldCfg {
    Mesh { path: PathBuf },
    Sphere,
    Circle,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerCfg {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
    #[serde(default = "default_initial_scale")]
    pub initial_scale: f64,
}

fn default_iterations() -> usize {
    2000
}
fn default_burn_in() -> usize {
    500
}
fn default_thin() -> usize {
    5
}
fn default_target_acceptance() -> f64 {
    0.3
}
fn default_initial_scale() -> f64 {
    0.3
}

impl Default for SamplerCfg {
    fn default() -> Self {
        SamplerCfg {
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            target_acceptance: default_target_acceptance(),
            initial_scale: default_initial_scale(),
        }
    }
}

impl SamplerCfg {
    fn to_mcmc(&self) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            target_acceptance: self.target_acceptance,
            initial_scale: self.initial_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridCfg {
    /// Farthest-point subsample of an oversampled dense set (meshes).
    Fps {
        count: usize,
        #[serde(default = "default_oversample")]
        oversample: usize,
    },
    /// Equally spaced chart grid on the sphere, poles excluded by a
    /// half-step offset in phi.
    Chart { n_theta: usize, n_phi: usize },
    /// Equally spaced points on the circle.
    Uniform { count: usize },
}

fn default_oversample() -> usize {
    4000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldCfg {
    /// Constant ambient reference vector projected to each tangent
    /// plane and normalized.
    ProjectedReference { reference: [f64; 3] },
    /// Unit d/dphi on the sphere.
    Meridian,
    /// Unnormalized d/dtheta on the sphere.
    Azimuthal,
    /// Constant signed speed along the circle.
    ConstantSpeed { speed: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    /// Number of observations (simulate only).
    #[serde(default)]
    pub n: Option<usize>,
    /// Observation noise variance (simulate only).
    #[serde(default)]
    pub tau2: Option<f64>,
    /// CSV path: output of simulate, input of fit and gradient.
    #[serde(default = "default_data_path")]
    pub path: PathBuf,
}

fn default_data_path() -> PathBuf {
    PathBuf::from("data.csv")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldCfg,
    #[serde(default)]
    pub kernel: Option<KernelFamily>,
    /// Mesh: number of eigenpairs; sphere: maximum Legendre degree;
    /// circle: maximum basis index.
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub data: Option<DataCfg>,
    #[serde(default)]
    pub sampler: SamplerCfg,
    #[serde(default)]
    pub grid: Option<GridCfg>,
    #[serde(default)]
    pub field: Option<FieldCfg>,
    #[serde(default)]
    pub curvature: bool,
    /// Spectrum sidecar path (mesh only), default spectrum.bin.
    #[serde(default)]
    pub spectrum_cache: Option<PathBuf>,
    /// Draws CSV path for gradient, default draws.csv.
    #[serde(default)]
    pub draws: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Also write a PLY with predictive mean and variance smoothed
    /// onto the mesh vertices (mesh gradient only).
    #[serde(default)]
    pub export_ply: bool,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {}", path.display(), e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {}", path.display(), e)))
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn io_data(e: std::io::Error, what: &str) -> CliError {
    CliError::Data(format!("{}: {}", what, e))
}

/// Entry point used by main: dispatches, prints errors to stderr, and
/// returns the process exit code.
pub fn run(args: Args) -> i32 {
    let (common, runner): (&CommonArgs, fn(&RunConfig, &Path, u64) -> Result<(), CliError>) =
        match &args.command {
            Cmd::Spectrum(c) => (c, run_spectrum),
            Cmd::Simulate(c) => (c, run_simulate),
            Cmd::Fit(c) => (c, run_fit),
            Cmd::Gradient(c) => (c, run_gradient),
        };
    let result = (|| {
        let cfg = load_config(&common.config)?;
        let seed = common
            .seed
            .or(cfg.seed)
            .ok_or_else(|| CliError::Config("no seed: set config.seed or pass --seed".into()))?;
        fs::create_dir_all(&common.out).map_err(|e| io_data(e, "cannot create output directory"))?;
        runner(&cfg, &common.out, seed)
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn require_truncation(cfg: &RunConfig) -> Result<usize, CliError> {
    match cfg.truncation {
        Some(t) if t >= 1 => Ok(t),
        Some(t) => Err(CliError::Config(format!("truncation must be at least 1, got {}", t))),
        None => Err(CliError::Config("truncation is required".into())),
    }
}

fn require_kernel(cfg: &RunConfig) -> Result<KernelFamily, CliError> {
    let fam = cfg.kernel.ok_or_else(|| CliError::Config("kernel is required".into()))?;
    if let KernelFamily::Matern { nu } = fam {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(CliError::Config(format!("matern nu must be positive, got {}", nu)));
        }
    }
    Ok(fam)
}

fn circle_nu(cfg: &RunConfig) -> Result<f64, CliError> {
    match require_kernel(cfg)? {
        KernelFamily::Matern { nu } => Ok(nu),
        KernelFamily::Rbf => Err(CliError::Config("circle model requires a matern kernel with nu in {0.5, 1.5, 2.5}".into())),
    }
}

fn load_mesh(cfg: &RunConfig) -> Result<TriangleMesh, CliError> {
    match &cfg.manifold {
        ManifoldCfg::Mesh { path } => {
            if !path.exists() {
                return Err(CliError::Config(format!("mesh file {} does not exist", path.display())));
            }
            Ok(load_ply(path)?)
        }
        _ => Err(CliError::Config("this configuration requires a mesh manifold".into())),
    }
}

fn cache_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    let p = cfg.spectrum_cache.clone().unwrap_or_else(|| PathBuf::from("spectrum.bin"));
    resolve(out_dir, &p)
}

// ---------------------------------------------------------------
// Built-in truth functions, one per manifold.

fn mesh_truth(p: &Vector3<f64>) -> f64 {
    10.0 * ((3.0 * std::f64::consts::PI * p[0]).sin()
        + (3.0 * std::f64::consts::PI * p[1]).sin()
        + (3.0 * std::f64::consts::PI * p[2]).sin())
}

fn mesh_truth_gradient(p: &Vector3<f64>) -> Vector3<f64> {
    let c = 30.0 * std::f64::consts::PI;
    Vector3::new(
        c * (3.0 * std::f64::consts::PI * p[0]).cos(),
        c * (3.0 * std::f64::consts::PI * p[1]).cos(),
        c * (3.0 * std::f64::consts::PI * p[2]).cos(),
    )
}

fn sphere_truth(theta: f64, phi: f64) -> f64 {
    2.0 * ((3.0 * std::f64::consts::PI * theta).sin() + (3.0 * std::f64::consts::PI * phi).cos())
}

/// Directional derivative of the sphere truth along the configured
/// field: d/dphi for the meridian, d/dtheta for the unnormalized
/// azimuthal field.
fn sphere_truth_deriv(theta: f64, phi: f64, field: SphereField) -> f64 {
    match field {
        SphereField::Meridian => -6.0 * std::f64::consts::PI * (3.0 * std::f64::consts::PI * phi).sin(),
        SphereField::Azimuthal => 6.0 * std::f64::consts::PI * (3.0 * std::f64::consts::PI * theta).cos(),
    }
}

fn circle_truth(s: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (two_pi * s).sin() + 0.5 * (2.0 * two_pi * s).cos()
}

fn circle_truth_d1(s: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    two_pi * (two_pi * s).cos() - two_pi * (2.0 * two_pi * s).sin()
}

fn circle_truth_d2(s: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    -two_pi * two_pi * (two_pi * s).sin() - 2.0 * two_pi * two_pi * (2.0 * two_pi * s).cos()
}

// ---------------------------------------------------------------
// spectrum

#[derive(Serialize)]
struct SpectrumReport {
    manifold: String,
    modes: usize,
    cache: Option<String>,
    cache_hit: bool,
    lambda_min: f64,
    lambda_max: f64,
    weyl_slope: Option<f64>,
    weyl_dimension_estimate: Option<f64>,
    max_residual: Option<f64>,
}

fn run_spectrum(cfg: &RunConfig, out_dir: &Path, _seed: u64) -> Result<(), CliError> {
    let t = require_truncation(cfg)?;
    let report = match &cfg.manifold {
        ManifoldCfg::Mesh { .. } => {
            let mesh = load_mesh(cfg)?;
            if t > mesh.vertex_count() {
                return Err(CliError::Config(format!(
                    "truncation {} exceeds vertex count {}",
                    t,
                    mesh.vertex_count()
                )));
            }
            let key = spectrum_cache_key(&mesh, t - 1);
            let cache = cache_path(cfg, out_dir);
            let (spectrum, cache_hit) = match load_spectrum(&cache, &key) {
                Ok(s) => (s, true),
                Err(_) => {
                    let lap = assemble_laplacian(&mesh)?;
                    let s = compute_spectrum(&lap, t - 1)?;
                    save_spectrum(&cache, &key, &s)?;
                    (s, false)
                }
            };
            let lap = assemble_laplacian(&mesh)?;
            let mut max_res = 0.0f64;
            for l in 0..=spectrum.t() {
                let phi: Vec<f64> = (0..mesh.vertex_count()).map(|r| spectrum.value(l, r)).collect();
                let lphi = lap.stiffness.matvec(&phi);
                let mut res = 0.0f64;
                for r in 0..mesh.vertex_count() {
                    let d = lphi[r] - spectrum.eigenvalues()[l] * lap.mass[r] * phi[r];
                    res += d * d;
                }
                max_res = max_res.max(res.sqrt());
            }
            let weyl = weyl_diagnostic(spectrum.eigenvalues()).ok();
            SpectrumReport {
                manifold: "mesh".into(),
                modes: spectrum.t() + 1,
                cache: Some(cache.display().to_string()),
                cache_hit,
                lambda_min: spectrum.eigenvalues()[0],
                lambda_max: *spectrum.eigenvalues().last().unwrap(),
                weyl_slope: weyl.as_ref().map(|w| w.slope),
                weyl_dimension_estimate: weyl.as_ref().map(|w| w.dimension_estimate),
                max_residual: Some(max_res),
            }
        }
        ManifoldCfg::Sphere => {
            // analytic: eigenvalue l(l+1) with multiplicity 2l+1
            let lambda_max = (t as f64) * (t as f64 + 1.0);
            SpectrumReport {
                manifold: "sphere".into(),
                modes: (t + 1) * (t + 1),
                cache: None,
                cache_hit: false,
                lambda_min: 0.0,
                lambda_max,
                weyl_slope: None,
                weyl_dimension_estimate: None,
                max_residual: None,
            }
        }
        ManifoldCfg::Circle => {
            let basis = crate::spectral::CircleBasis::new(t);
            SpectrumReport {
                manifold: "circle".into(),
                modes: t + 1,
                cache: None,
                cache_hit: false,
                lambda_min: basis.eigenvalue(0),
                lambda_max: basis.eigenvalue(t),
                weyl_slope: None,
                weyl_dimension_estimate: None,
                max_residual: None,
            }
        }
    };
    write_json(&out_dir.join("spectrum_report.json"), &report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("report serialization failed: {}", e)))?;
    fs::write(path, text + "\n").map_err(|e| io_data(e, "cannot write report"))
}

// ---------------------------------------------------------------
// simulate

fn run_simulate(cfg: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let data = cfg.data.as_ref().ok_or_else(|| CliError::Config("data section is required".into()))?;
    let n = match data.n {
        Some(n) if n >= 1 => n,
        _ => return Err(CliError::Config("data.n must be at least 1".into())),
    };
    let tau2 = match data.tau2 {
        Some(t) if t >= 0.0 && t.is_finite() => t,
        _ => return Err(CliError::Config("data.tau2 must be finite and nonnegative".into())),
    };
    let tau = tau2.sqrt();
    let path = resolve(out_dir, &data.path);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_path(&path)?;

    match &cfg.manifold {
        ManifoldCfg::Mesh { .. } => {
            let mesh = load_mesh(cfg)?;
            w.write_record(["face", "w0", "w1", "w2", "x", "y", "z", "truth", "value"])?;
            let points = sample_barycentric(&mesh, n, &mut rng);
            for p in &points {
                let pos = p.position(&mesh);
                let truth = mesh_truth(&pos);
                let e: f64 = StandardNormal.sample(&mut rng);
                let value = truth + tau * e;
                w.write_record([
                    p.face.to_string(),
                    p.weights[0].to_string(),
                    p.weights[1].to_string(),
                    p.weights[2].to_string(),
                    pos[0].to_string(),
                    pos[1].to_string(),
                    pos[2].to_string(),
                    truth.to_string(),
                    value.to_string(),
                ])?;
            }
        }
        ManifoldCfg::Sphere => {
            w.write_record(["theta", "phi", "x", "y", "z", "truth", "value"])?;
            for _ in 0..n {
                let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                let phi = rng.gen::<f64>() * std::f64::consts::PI;
                let pos = sphere_chart(theta, phi);
                let truth = sphere_truth(theta, phi);
                let e: f64 = StandardNormal.sample(&mut rng);
                let value = truth + tau * e;
                w.write_record([
                    theta.to_string(),
                    phi.to_string(),
                    pos[0].to_string(),
                    pos[1].to_string(),
                    pos[2].to_string(),
                    truth.to_string(),
                    value.to_string(),
                ])?;
            }
        }
        ManifoldCfg::Circle => {
            w.write_record(["s", "truth", "value"])?;
            for _ in 0..n {
                let s = rng.gen::<f64>();
                let truth = circle_truth(s);
                let e: f64 = StandardNormal.sample(&mut rng);
                let value = truth + tau * e;
                w.write_record([s.to_string(), truth.to_string(), value.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| io_data(e, "cannot flush data csv"))?;
    Ok(())
}

// ---------------------------------------------------------------
// shared data loading

struct MeshData {
    points: Vec<BaryPoint>,
    values: Vec<f64>,
}

struct SphereData {
    positions: Vec<Vector3<f64>>,
    values: Vec<f64>,
}

struct CircleData {
    sites: Vec<f64>,
    values: Vec<f64>,
}

fn open_data_csv(cfg: &RunConfig, out_dir: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    let data = cfg.data.as_ref().ok_or_else(|| CliError::Config("data section is required".into()))?;
    let path = resolve(out_dir, &data.path);
    if !path.exists() {
        return Err(CliError::Config(format!("data file {} does not exist", path.display())));
    }
    Ok(csv::Reader::from_path(&path)?)
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize) -> Result<f64, CliError> {
    record
        .get(idx)
        .ok_or_else(|| CliError::Data(format!("data row {} is short", row)))?
        .parse::<f64>()
        .map_err(|e| CliError::Data(format!("data row {} field {}: {}", row, idx, e)))
}

fn load_mesh_data(cfg: &RunConfig, out_dir: &Path, mesh: &TriangleMesh) -> Result<MeshData, CliError> {
    let mut rdr = open_data_csv(cfg, out_dir)?;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let face = rec
            .get(0)
            .ok_or_else(|| CliError::Data(format!("data row {} is empty", row)))?
            .parse::<usize>()
            .map_err(|e| CliError::Data(format!("data row {} face index: {}", row, e)))?;
        if face >= mesh.face_count() {
            return Err(CliError::Data(format!("data row {}: face {} out of range", row, face)));
        }
        let w0 = parse_field(&rec, 1, row)?;
        let w1 = parse_field(&rec, 2, row)?;
        let w2 = parse_field(&rec, 3, row)?;
        let value = parse_field(&rec, 8, row)?;
        let p = BaryPoint::new(face, [w0, w1, w2])
            .map_err(|e| CliError::Data(format!("data row {}: {}", row, e)))?;
        points.push(p);
        values.push(value);
    }
    if points.is_empty() {
        return Err(CliError::Data("data file has no observations".into()));
    }
    Ok(MeshData { points, values })
}

fn load_sphere_data(cfg: &RunConfig, out_dir: &Path) -> Result<SphereData, CliError> {
    let mut rdr = open_data_csv(cfg, out_dir)?;
    let mut positions = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x = parse_field(&rec, 2, row)?;
        let y = parse_field(&rec, 3, row)?;
        let z = parse_field(&rec, 4, row)?;
        let value = parse_field(&rec, 6, row)?;
        let p = Vector3::new(x, y, z);
        let norm = p.norm();
        if !(norm > 0.5 && norm < 2.0) {
            return Err(CliError::Data(format!("data row {}: point is not near the unit sphere", row)));
        }
        positions.push(p / norm);
        values.push(value);
    }
    if positions.is_empty() {
        return Err(CliError::Data("data file has no observations".into()));
    }
    Ok(SphereData { positions, values })
}

fn load_circle_data(cfg: &RunConfig, out_dir: &Path) -> Result<CircleData, CliError> {
    let mut rdr = open_data_csv(cfg, out_dir)?;
    let mut sites = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let s = parse_field(&rec, 0, row)?;
        let value = parse_field(&rec, 2, row)?;
        sites.push(s.rem_euclid(1.0));
        values.push(value);
    }
    if sites.is_empty() {
        return Err(CliError::Data("data file has no observations".into()));
    }
    Ok(CircleData { sites, values })
}

/// Eigenfunction values interpolated at barycentric data sites,
/// n x (T+1).
fn phi_at_points(mesh: &TriangleMesh, spectrum: &Spectrum, points: &[BaryPoint]) -> DMatrix<f64> {
    let modes = spectrum.t() + 1;
    let mut phi = DMatrix::zeros(points.len(), modes);
    for (i, p) in points.iter().enumerate() {
        let f = mesh.faces()[p.face];
        for l in 0..modes {
            phi[(i, l)] = p.weights[0] * spectrum.value(l, f[0])
                + p.weights[1] * spectrum.value(l, f[1])
                + p.weights[2] * spectrum.value(l, f[2]);
        }
    }
    phi
}

fn load_cached_spectrum(cfg: &RunConfig, out_dir: &Path, mesh: &TriangleMesh, t_modes: usize) -> Result<Spectrum, CliError> {
    let key = spectrum_cache_key(mesh, t_modes - 1);
    let cache = cache_path(cfg, out_dir);
    if !cache.exists() {
        return Err(CliError::Config(format!(
            "spectrum cache {} does not exist; run the spectrum subcommand first",
            cache.display()
        )));
    }
    load_spectrum(&cache, &key).map_err(|e| match e {
        SpectralError::CacheKeyMismatch { .. } => {
            CliError::Data("spectrum cache is stale for this mesh and truncation; rerun spectrum".into())
        }
        other => CliError::from(other),
    })
}

// ---------------------------------------------------------------
// fit

#[derive(Serialize)]
struct FitReport {
    n_observations: usize,
    n_draws: usize,
    acceptance: f64,
    final_scale: f64,
    geweke: GewekeOut,
    diagnostics_flags: Vec<String>,
    quantiles: QuantileOut,
}

#[derive(Serialize)]
struct GewekeOut {
    v: f64,
    rho: f64,
    alpha: f64,
    beta0: f64,
}

#[derive(Serialize)]
struct QuantileOut {
    sigma2: [f64; 3],
    tau2: [f64; 3],
    alpha: [f64; 3],
}

fn quantiles3(mut xs: Vec<f64>) -> [f64; 3] {
    xs.sort_by(|a, b| a.total_cmp(b));
    [quantile(&xs, 0.025), quantile(&xs, 0.5), quantile(&xs, 0.975)]
}

fn write_fit_outputs(out_dir: &Path, n_obs: usize, fit: &FitResult) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out_dir.join("draws.csv"))?;
    w.write_record(["v", "rho", "alpha", "beta0", "sigma2", "tau2", "loglik"])?;
    for (d, ll) in fit.draws.iter().zip(&fit.logliks) {
        w.write_record([
            d.v.to_string(),
            d.rho.to_string(),
            d.alpha.to_string(),
            d.beta0.to_string(),
            d.sigma2().to_string(),
            d.tau2().to_string(),
            ll.to_string(),
        ])?;
    }
    w.flush().map_err(|e| io_data(e, "cannot flush draws csv"))?;

    let mut flags = Vec::new();
    for (name, z) in [
        ("v", fit.geweke.v),
        ("rho", fit.geweke.rho),
        ("alpha", fit.geweke.alpha),
        ("beta0", fit.geweke.beta0),
    ] {
        if z.abs() > 3.0 {
            flags.push(format!("geweke z for {} is {:.2}", name, z));
        }
    }
    if !(0.1..=0.6).contains(&fit.acceptance) {
        flags.push(format!("acceptance rate {:.3} outside [0.1, 0.6]", fit.acceptance));
    }
    let report = FitReport {
        n_observations: n_obs,
        n_draws: fit.draws.len(),
        acceptance: fit.acceptance,
        final_scale: fit.final_scale,
        geweke: GewekeOut {
            v: fit.geweke.v,
            rho: fit.geweke.rho,
            alpha: fit.geweke.alpha,
            beta0: fit.geweke.beta0,
        },
        diagnostics_flags: flags,
        quantiles: QuantileOut {
            sigma2: quantiles3(fit.draws.iter().map(|d| d.sigma2()).collect()),
            tau2: quantiles3(fit.draws.iter().map(|d| d.tau2()).collect()),
            alpha: quantiles3(fit.draws.iter().map(|d| d.alpha).collect()),
        },
    };
    write_json(&out_dir.join("fit_report.json"), &report)
}

fn run_fit(cfg: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mcmc = cfg.sampler.to_mcmc();
    match &cfg.manifold {
        ManifoldCfg::Mesh { .. } => {
            let family = require_kernel(cfg)?;
            let t_modes = require_truncation(cfg)?;
            let mesh = load_mesh(cfg)?;
            let spectrum = load_cached_spectrum(cfg, out_dir, &mesh, t_modes)?;
            let data = load_mesh_data(cfg, out_dir, &mesh)?;
            let phi = phi_at_points(&mesh, &spectrum, &data.points);
            let modes = spectrum.t() + 1;
            let model = GpModel::mesh(
                family,
                spectrum.eigenvalues().to_vec(),
                phi,
                DMatrix::zeros(modes, 0),
                mesh.total_area(),
            )?;
            let priors = Priors::matched(&data.values, mesh.diameter())?;
            let fit = mh_sample(&model, &data.values, &priors, &mcmc, &mut rng)?;
            write_fit_outputs(out_dir, data.values.len(), &fit)
        }
        ManifoldCfg::Sphere => {
            let family = require_kernel(cfg)?;
            let nu = match family {
                KernelFamily::Matern { nu } => nu,
                KernelFamily::Rbf => {
                    return Err(CliError::Config("sphere model requires a matern kernel".into()))
                }
            };
            let t_max = require_truncation(cfg)?;
            let data = load_sphere_data(cfg, out_dir)?;
            let model = GpModel::sphere(t_max, nu, data.positions.clone(), Vec::new())?;
            let priors = Priors::matched(&data.values, std::f64::consts::PI)?;
            let fit = mh_sample(&model, &data.values, &priors, &mcmc, &mut rng)?;
            write_fit_outputs(out_dir, data.values.len(), &fit)
        }
        ManifoldCfg::Circle => {
            let nu = circle_nu(cfg)?;
            let data = load_circle_data(cfg, out_dir)?;
            let model = GpModel::circle(nu, data.sites.clone(), Vec::new())?;
            let priors = Priors::matched(&data.values, 0.5)?;
            let fit = mh_sample(&model, &data.values, &priors, &mcmc, &mut rng)?;
            write_fit_outputs(out_dir, data.values.len(), &fit)
        }
    }
}

// ---------------------------------------------------------------
// gradient

fn load_draws(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<HyperDraw>, CliError> {
    let p = cfg.draws.clone().unwrap_or_else(|| PathBuf::from("draws.csv"));
    let path = resolve(out_dir, &p);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "draws file {} does not exist; run the fit subcommand first",
            path.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut draws = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v = parse_field(&rec, 0, row)?;
        let rho = parse_field(&rec, 1, row)?;
        let alpha = parse_field(&rec, 2, row)?;
        let beta0 = parse_field(&rec, 3, row)?;
        if !(v > 0.0 && (0.0..1.0).contains(&rho) && alpha > 0.0) {
            return Err(CliError::Data(format!("draws row {} is outside the parameter domain", row)));
        }
        draws.push(HyperDraw { v, rho, alpha, beta0 });
    }
    if draws.is_empty() {
        return Err(CliError::Data("draws file has no rows".into()));
    }
    Ok(draws)
}

#[derive(Serialize)]
struct GradientReport {
    n_targets: usize,
    n_skipped: usize,
    skipped_ids: Vec<usize>,
    n_draws: usize,
    coverage: CoverageOut,
    curvature_coverage: Option<CoverageOut>,
}

#[derive(Serialize)]
struct CoverageOut {
    covered: usize,
    total: usize,
    rate: f64,
}

impl From<CoverageReport> for CoverageOut {
    fn from(c: CoverageReport) -> Self {
        CoverageOut { covered: c.covered, total: c.total, rate: c.rate }
    }
}

fn write_predictive_csv(
    path: &Path,
    ids: &[usize],
    summaries: &[PredictiveSummary],
    truth: &[f64],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "mean", "variance", "lo95", "hi95", "truth", "covered"])?;
    for ((id, s), t) in ids.iter().zip(summaries).zip(truth) {
        let covered = *t >= s.q025 && *t <= s.q975;
        w.write_record([
            id.to_string(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.q025.to_string(),
            s.q975.to_string(),
            t.to_string(),
            (covered as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| io_data(e, "cannot flush predictive csv"))?;
    Ok(())
}

fn run_gradient(cfg: &RunConfig, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let draws = load_draws(cfg, out_dir)?;
    let grid = cfg.grid.as_ref().ok_or_else(|| CliError::Config("grid section is required".into()))?;
    let field = cfg.field.as_ref().ok_or_else(|| CliError::Config("field section is required".into()))?;
    let mut pred_rng = ChaCha8Rng::seed_from_u64(seed ^ PRED_SEED_SALT);

    match &cfg.manifold {
        ManifoldCfg::Mesh { .. } => {
            let family = require_kernel(cfg)?;
            let t_modes = require_truncation(cfg)?;
            let (count, oversample) = match grid {
                GridCfg::Fps { count, oversample } => (*count, *oversample),
                _ => return Err(CliError::Config("mesh gradient requires an fps grid".into())),
            };
            if count == 0 || oversample < count {
                return Err(CliError::Config("fps grid needs 1 <= count <= oversample".into()));
            }
            let reference = match field {
                FieldCfg::ProjectedReference { reference } => {
                    Vector3::new(reference[0], reference[1], reference[2])
                }
                _ => return Err(CliError::Config("mesh gradient requires a projected_reference field".into())),
            };
            if reference.norm() < 1e-12 {
                return Err(CliError::Config("reference vector must be nonzero".into()));
            }
            if cfg.curvature {
                return Err(CliError::Config("curvature prediction is only available on the circle".into()));
            }
            let mesh = load_mesh(cfg)?;
            let spectrum = load_cached_spectrum(cfg, out_dir, &mesh, t_modes)?;
            let data = load_mesh_data(cfg, out_dir, &mesh)?;

            let mut grid_rng = ChaCha8Rng::seed_from_u64(seed ^ GRID_SEED_SALT);
            let dense = sample_barycentric(&mesh, oversample, &mut grid_rng);
            let positions: Vec<Vector3<f64>> = dense.iter().map(|p| p.position(&mesh)).collect();
            let chosen = farthest_point_sample(&positions, count);

            // degenerate tangent projections are skipped, not fatal
            let mut ids = Vec::new();
            let mut targets = Vec::new();
            let mut dirs = Vec::new();
            let mut skipped = Vec::new();
            for (rank, &idx) in chosen.iter().enumerate() {
                match project_reference_field(&mesh, reference, &dense[idx..idx + 1]) {
                    Ok(vs) => {
                        ids.push(rank);
                        targets.push(dense[idx].clone());
                        dirs.push(vs[0]);
                    }
                    Err(_) => skipped.push(rank),
                }
            }
            if targets.is_empty() {
                return Err(CliError::Data("every grid point degenerated under the reference field".into()));
            }

            let modes = spectrum.t() + 1;
            let mut grad_dot = DMatrix::zeros(modes, targets.len());
            for (j, (p, v)) in targets.iter().zip(&dirs).enumerate() {
                for l in 0..modes {
                    let g = crate::geometry::eigenfunction_gradient_at(&mesh, spectrum.vectors(), l, p);
                    grad_dot[(l, j)] = g.dot(v);
                }
            }
            let phi = phi_at_points(&mesh, &spectrum, &data.points);
            let model = GpModel::mesh(
                family,
                spectrum.eigenvalues().to_vec(),
                phi,
                grad_dot,
                mesh.total_area(),
            )?;
            let summaries = predictive_gradient(&model, &data.values, &draws, &mut pred_rng)?;
            let truth: Vec<f64> = targets
                .iter()
                .zip(&dirs)
                .map(|(p, v)| mesh_truth_gradient(&p.position(&mesh)).dot(v))
                .collect();
            write_predictive_csv(&out_dir.join("predictive.csv"), &ids, &summaries, &truth)?;
            let coverage = crate::inference::coverage_report(&truth, &summaries);
            let report = GradientReport {
                n_targets: ids.len(),
                n_skipped: skipped.len(),
                skipped_ids: skipped,
                n_draws: draws.len(),
                coverage: coverage.into(),
                curvature_coverage: None,
            };
            write_json(&out_dir.join("gradient_report.json"), &report)?;

            if cfg.export_ply {
                let means: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
                let vars: Vec<f64> = summaries.iter().map(|s| s.variance).collect();
                let mean_field = scatter_and_smooth(&mesh, &targets, &means)?;
                let var_field = scatter_and_smooth(&mesh, &targets, &vars)?;
                write_ply(
                    out_dir.join("field.ply"),
                    &mesh,
                    &[("pred_mean", &mean_field), ("pred_var", &var_field)],
                    false,
                )?;
            }
            Ok(())
        }
        ManifoldCfg::Sphere => {
            let family = require_kernel(cfg)?;
            let nu = match family {
                KernelFamily::Matern { nu } => nu,
                KernelFamily::Rbf => {
                    return Err(CliError::Config("sphere model requires a matern kernel".into()))
                }
            };
            let t_max = require_truncation(cfg)?;
            let (n_theta, n_phi) = match grid {
                GridCfg::Chart { n_theta, n_phi } => (*n_theta, *n_phi),
                _ => return Err(CliError::Config("sphere gradient requires a chart grid".into())),
            };
            if n_theta == 0 || n_phi == 0 {
                return Err(CliError::Config("chart grid needs positive n_theta and n_phi".into()));
            }
            let sfield = match field {
                FieldCfg::Meridian => SphereField::Meridian,
                FieldCfg::Azimuthal => SphereField::Azimuthal,
                _ => return Err(CliError::Config("sphere gradient requires a meridian or azimuthal field".into())),
            };
            if cfg.curvature {
                return Err(CliError::Config("curvature prediction is only available on the circle".into()));
            }
            let data = load_sphere_data(cfg, out_dir)?;

            let mut ids = Vec::new();
            let mut targets = Vec::new();
            let mut truth = Vec::new();
            for i in 0..n_theta {
                for j in 0..n_phi {
                    let theta = i as f64 * 2.0 * std::f64::consts::PI / n_theta as f64;
                    let phi = (j as f64 + 0.5) * std::f64::consts::PI / n_phi as f64;
                    let x = sphere_chart(theta, phi);
                    targets.push((x, sfield.at(x)));
                    truth.push(sphere_truth_deriv(theta, phi, sfield));
                    ids.push(i * n_phi + j);
                }
            }
            let model = GpModel::sphere(t_max, nu, data.positions.clone(), targets)?;
            let summaries = predictive_gradient(&model, &data.values, &draws, &mut pred_rng)?;
            write_predictive_csv(&out_dir.join("predictive.csv"), &ids, &summaries, &truth)?;
            let coverage = crate::inference::coverage_report(&truth, &summaries);
            let report = GradientReport {
                n_targets: ids.len(),
                n_skipped: 0,
                skipped_ids: Vec::new(),
                n_draws: draws.len(),
                coverage: coverage.into(),
                curvature_coverage: None,
            };
            write_json(&out_dir.join("gradient_report.json"), &report)
        }
        ManifoldCfg::Circle => {
            let nu = circle_nu(cfg)?;
            let count = match grid {
                GridCfg::Uniform { count } => *count,
                _ => return Err(CliError::Config("circle gradient requires a uniform grid".into())),
            };
            if count == 0 {
                return Err(CliError::Config("uniform grid needs a positive count".into()));
            }
            let speed = match field {
                FieldCfg::ConstantSpeed { speed } => *speed,
                _ => return Err(CliError::Config("circle gradient requires a constant_speed field".into())),
            };
            if speed == 0.0 || !speed.is_finite() {
                return Err(CliError::Config("field speed must be finite and nonzero".into()));
            }
            if cfg.curvature && (nu - 2.5).abs() > 1e-12 {
                return Err(CliError::Config("curvature prediction requires nu = 2.5".into()));
            }
            let data = load_circle_data(cfg, out_dir)?;
            let sites: Vec<f64> = (0..count).map(|j| j as f64 / count as f64).collect();
            let ids: Vec<usize> = (0..count).collect();
            let grad_truth: Vec<f64> = sites.iter().map(|&s| speed * circle_truth_d1(s)).collect();

            if cfg.curvature {
                let pairs = predictive_curvature_circle(
                    &data.sites,
                    &data.values,
                    nu,
                    &sites,
                    &draws,
                    &mut pred_rng,
                )?;
                // joint blocks use unit speed along the circle; rescale
                let grads: Vec<PredictiveSummary> = pairs
                    .iter()
                    .map(|(g, _)| scale_summary(g, speed))
                    .collect();
                let curvs: Vec<PredictiveSummary> = pairs
                    .iter()
                    .map(|(_, c)| scale_summary(c, speed * speed))
                    .collect();
                let curv_truth: Vec<f64> =
                    sites.iter().map(|&s| speed * speed * circle_truth_d2(s)).collect();
                write_predictive_csv(&out_dir.join("predictive.csv"), &ids, &grads, &grad_truth)?;
                write_predictive_csv(&out_dir.join("curvature.csv"), &ids, &curvs, &curv_truth)?;
                let coverage = crate::inference::coverage_report(&grad_truth, &grads);
                let curv_cov = crate::inference::coverage_report(&curv_truth, &curvs);
                let report = GradientReport {
                    n_targets: ids.len(),
                    n_skipped: 0,
                    skipped_ids: Vec::new(),
                    n_draws: draws.len(),
                    coverage: coverage.into(),
                    curvature_coverage: Some(curv_cov.into()),
                };
                write_json(&out_dir.join("gradient_report.json"), &report)
            } else {
                let targets: Vec<(f64, f64)> = sites.iter().map(|&s| (s, speed)).collect();
                let model = GpModel::circle(nu, data.sites.clone(), targets)?;
                let summaries = predictive_gradient(&model, &data.values, &draws, &mut pred_rng)?;
                write_predictive_csv(&out_dir.join("predictive.csv"), &ids, &summaries, &grad_truth)?;
                let coverage = crate::inference::coverage_report(&grad_truth, &summaries);
                let report = GradientReport {
                    n_targets: ids.len(),
                    n_skipped: 0,
                    skipped_ids: Vec::new(),
                    n_draws: draws.len(),
                    coverage: coverage.into(),
                    curvature_coverage: None,
                };
                write_json(&out_dir.join("gradient_report.json"), &report)
            }
        }
    }
}

fn scale_summary(s: &PredictiveSummary, c: f64) -> PredictiveSummary {
    // negative c flips the interval endpoints
    let (lo, hi) = if c >= 0.0 { (s.q025 * c, s.q975 * c) } else { (s.q975 * c, s.q025 * c) };
    PredictiveSummary { mean: s.mean * c, variance: s.variance * c * c, q025: lo, q975: hi }
}
