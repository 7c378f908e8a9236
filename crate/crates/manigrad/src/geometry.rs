//! Pointwise geometry on meshes, spheres and the circle: barycentric
//! sampling and interpolation, per-face gradients, tangent fields,
//! farthest-point designs, and scatter smoothing.

use crate::mesh_core::{assemble_laplacian, MeshError, TriangleMesh};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid barycentric point: {msg}")]
    BadPoint { msg: String },
    #[error("tangent field degenerate at {count} of {total} sites (reference nearly normal)")]
    DegenerateField { count: usize, total: usize },
    #[error("{0}")]
    Mesh(#[from] MeshError),
    #[error("smoothing solve failed: {msg}")]
    Solve { msg: String },
}

/// Location on a mesh: face index plus barycentric weights that are
/// nonnegative and sum to one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaryPoint {
    pub face: usize,
    pub weights: [f64; 3],
}

impl BaryPoint {
    pub fn new(face: usize, weights: [f64; 3]) -> Result<Self, GeometryError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !w.is_finite() || w < -1e-12) || (sum - 1.0).abs() > 1e-9 {
            return Err(GeometryError::BadPoint {
                msg: format!("face {} weights {:?} (sum {})", face, weights, sum),
            });
        }
        Ok(BaryPoint { face, weights })
    }

    pub fn position(&self, mesh: &TriangleMesh) -> Vector3<f64> {
        let f = mesh.faces()[self.face];
        self.weights[0] * mesh.vertices()[f[0]]
            + self.weights[1] * mesh.vertices()[f[1]]
            + self.weights[2] * mesh.vertices()[f[2]]
    }
}

/// Draws points uniformly w.r.t. surface area: faces by cumulative
/// area, then the square-root reflection map inside each triangle.
pub fn sample_barycentric(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Vec<BaryPoint> {
    let total = mesh.total_area();
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut acc = 0.0;
    for &a in mesh.face_areas() {
        acc += a;
        cumulative.push(acc);
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        let face = cumulative.partition_point(|&c| c < target).min(mesh.face_count() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let weights = [1.0 - s, s * (1.0 - r2), s * r2];
        points.push(BaryPoint { face, weights });
    }
    points
}

/// Linear interpolation of a per-vertex scalar at a barycentric point.
pub fn interpolate_scalar(mesh: &TriangleMesh, values: &[f64], p: &BaryPoint) -> f64 {
    let f = mesh.faces()[p.face];
    p.weights[0] * values[f[0]] + p.weights[1] * values[f[1]] + p.weights[2] * values[f[2]]
}

/// Gradients of the three barycentric coordinates of a face; constant
/// over the face and tangent to it. The hat function of corner i has
/// gradient n x e_i / (2A) with e_i the opposite edge.
pub fn face_gradient_basis(mesh: &TriangleMesh, face: usize) -> [Vector3<f64>; 3] {
    let f = mesh.faces()[face];
    let n = mesh.face_normals()[face];
    let inv2a = 1.0 / (2.0 * mesh.face_areas()[face]);
    let v = [mesh.vertices()[f[0]], mesh.vertices()[f[1]], mesh.vertices()[f[2]]];
    [
        n.cross(&(v[2] - v[1])) * inv2a,
        n.cross(&(v[0] - v[2])) * inv2a,
        n.cross(&(v[1] - v[0])) * inv2a,
    ]
}

/// Gradient of a piecewise-linear per-vertex function on the face of
/// the given point; constant per face.
pub fn scalar_gradient_at(mesh: &TriangleMesh, values: &[f64], p: &BaryPoint) -> Vector3<f64> {
    let f = mesh.faces()[p.face];
    let basis = face_gradient_basis(mesh, p.face);
    values[f[0]] * basis[0] + values[f[1]] * basis[1] + values[f[2]] * basis[2]
}

/// Farthest-point subsample in ambient metric: starts from the lowest
/// index, repeatedly adds the point farthest from the chosen set.
/// Deterministic; ties resolve to the lowest index.
pub fn farthest_point_sample(positions: &[Vector3<f64>], n: usize) -> Vec<usize> {
    assert!(n >= 1 && n <= positions.len(), "subsample size out of range");
    let mut chosen = Vec::with_capacity(n);
    let mut dist = vec![f64::INFINITY; positions.len()];
    let mut current = 0usize;
    chosen.push(current);
    for _ in 1..n {
        let p = positions[current];
        let mut best = 0usize;
        let mut best_d = -1.0;
        for (i, q) in positions.iter().enumerate() {
            let d = (q - p).norm();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        chosen.push(best);
        current = best;
    }
    chosen
}

/// Tangent field from projecting a constant reference vector onto each
/// face plane and normalizing. Sites where the projection norm falls
/// below the threshold are flagged degenerate, and an error is raised
/// if any site degenerates.
pub fn project_reference_field(
    mesh: &TriangleMesh,
    reference: Vector3<f64>,
    points: &[BaryPoint],
) -> Result<Vec<Vector3<f64>>, GeometryError> {
    const MIN_TANGENT_NORM: f64 = 1e-8;
    let mut out = Vec::with_capacity(points.len());
    let mut degenerate = 0usize;
    for p in points {
        let n = mesh.face_normals()[p.face];
        let t = reference - n * reference.dot(&n);
        let norm = t.norm();
        if norm < MIN_TANGENT_NORM {
            degenerate += 1;
            out.push(Vector3::zeros());
        } else {
            out.push(t / norm);
        }
    }
    if degenerate > 0 {
        return Err(GeometryError::DegenerateField { count: degenerate, total: points.len() });
    }
    Ok(out)
}

/// Interpolates per-vertex tangent vectors to a barycentric point,
/// re-projects onto the face plane, and renormalizes to unit length.
pub fn interpolate_tangent_field(
    mesh: &TriangleMesh,
    per_vertex: &[Vector3<f64>],
    p: &BaryPoint,
) -> Result<Vector3<f64>, GeometryError> {
    let f = mesh.faces()[p.face];
    let blended = p.weights[0] * per_vertex[f[0]]
        + p.weights[1] * per_vertex[f[1]]
        + p.weights[2] * per_vertex[f[2]];
    let n = mesh.face_normals()[p.face];
    let t = blended - n * blended.dot(&n);
    let norm = t.norm();
    if norm < 1e-10 {
        return Err(GeometryError::DegenerateField { count: 1, total: 1 });
    }
    Ok(t / norm)
}

/// Geodesic step on the unit sphere: walk from x along tangent v for
/// unit time. Returns x when v vanishes.
pub fn sphere_exp(x: Vector3<f64>, v: Vector3<f64>) -> Vector3<f64> {
    let speed = v.norm();
    if speed < 1e-300 {
        return x;
    }
    (x * speed.cos() + (v / speed) * speed.sin()).normalize()
}

/// Chart point on the unit sphere: theta is longitude in [0, 2pi),
/// phi is colatitude in [0, pi].
pub fn sphere_chart(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos())
}

/// Unit tangent fields on the sphere used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereField {
    /// d/dphi of the chart: unit length everywhere off the poles.
    Meridian,
    /// Unnormalized d/dtheta, (-y, x, 0): vanishes at the poles and
    /// keeps the antisymmetry <x', V_x> = -<x, V_x'> exact.
    Azimuthal,
}

impl SphereField {
    pub fn at(&self, x: Vector3<f64>) -> Vector3<f64> {
        match self {
            // (cos phi cos theta, cos phi sin theta, -sin phi) expressed
            // through ambient coordinates.
            SphereField::Meridian => {
                let sin_phi = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if sin_phi < 1e-12 {
                    // undefined at the poles; the experiments never
                    // evaluate there
                    return Vector3::new(1.0, 0.0, 0.0) * if x[2] >= 0.0 { 1.0 } else { -1.0 };
                }
                let cos_phi = x[2];
                Vector3::new(cos_phi * x[0] / sin_phi, cos_phi * x[1] / sin_phi, -sin_phi)
            }
            SphereField::Azimuthal => Vector3::new(-x[1], x[0], 0.0),
        }
    }
}

/// Diffuses scattered values into a smooth per-vertex field by solving
/// (W + iota L) z = W z_scatter, where W accumulates barycentric
/// weights of the scattered hits and iota = 1e-3 trace(M). Vertices
/// never hit are filled by the Laplacian term.
pub fn scatter_and_smooth(
    mesh: &TriangleMesh,
    points: &[BaryPoint],
    values: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    assert_eq!(points.len(), values.len());
    let lap = assemble_laplacian(mesh)?;
    let n = mesh.vertex_count();
    let mut w = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for (p, &val) in points.iter().zip(values) {
        let f = mesh.faces()[p.face];
        for k in 0..3 {
            w[f[k]] += p.weights[k];
            rhs[f[k]] += p.weights[k] * val;
        }
    }
    let iota = 1e-3 * lap.mass.iter().sum::<f64>();
    let mut a = lap.stiffness.to_dense() * iota;
    for i in 0..n {
        a[(i, i)] += w[i];
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| GeometryError::Solve { msg: "smoothing operator not positive definite".into() })?;
    let z = chol.solve(&DVector::from_vec(rhs));
    Ok(z.iter().copied().collect())
}

/// Per-vertex eigenfunction gradients lifted to barycentric points:
/// column l of `vectors` is piecewise linear, so its gradient on the
/// point's face is exact.
pub fn eigenfunction_gradient_at(
    mesh: &TriangleMesh,
    vectors: &DMatrix<f64>,
    l: usize,
    p: &BaryPoint,
) -> Vector3<f64> {
    let f = mesh.faces()[p.face];
    let basis = face_gradient_basis(mesh, p.face);
    vectors[(f[0], l)] * basis[0] + vectors[(f[1], l)] * basis[1] + vectors[(f[2], l)] * basis[2]
}
