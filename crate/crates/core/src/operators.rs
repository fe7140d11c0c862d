//! Discrete differential operators on triangle meshes.
//!
//! Conventions:
//! - `L` is the positive-semidefinite cotangent Laplacian,
//!   `L = diag(rowsum W) - W` with `w_ij = (cot a_ij + cot b_ij) / 2`.
//! - `M` is the lumped barycentric mass (a third of each incident face area).
//! - `G` maps vertex scalars to per-face gradients of the piecewise-linear
//!   interpolant; `Div = -G^T A` with `A` the face areas, so `Div(G u) = -L u`.
//!
//! With this sign convention the heat step reads `(M + tL) u = delta`. Writing
//! it as `(I - tL') u = delta` with a negative-semidefinite, mass-normalized
//! `L'` only rescales the right-hand side by the source's mass, which scales
//! `u` globally and leaves the normalized gradient field unchanged.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::mesh::{cross, dot, norm, sub, TriMesh, Vec3};

/// Faces with area below this multiple of the squared mean edge length are
/// treated as degenerate during assembly.
pub const DEGENERATE_AREA_FACTOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct MeshOperators {
    faces: Vec<[usize; 3]>,
    laplacian: SparseMatrix,
    mass: Vec<f64>,
    face_areas: Vec<f64>,
    /// Gradient of each corner's hat function on its face.
    hat_grads: Vec<[Vec3; 3]>,
}

/// Cotangent of the angle at each corner of a face.
pub(crate) fn corner_cotangents(p: [Vec3; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let a = sub(p[(k + 1) % 3], p[k]);
        let b = sub(p[(k + 2) % 3], p[k]);
        out[k] = dot(a, b) / norm(cross(a, b));
    }
    out
}

/// Hat-function gradients `n x e_k / |n|^2` where `e_k` is the edge opposite
/// corner `k`, traversed counter-clockwise.
pub(crate) fn hat_gradients(p: [Vec3; 3]) -> [Vec3; 3] {
    let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let s = dot(n, n);
    let mut out = [[0.0; 3]; 3];
    for k in 0..3 {
        let e = sub(p[(k + 2) % 3], p[(k + 1) % 3]);
        let g = cross(n, e);
        out[k] = [g[0] / s, g[1] / s, g[2] / s];
    }
    out
}

pub(crate) fn laplacian_triplets(faces: &[[usize; 3]], cots: &[[f64; 3]]) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(faces.len() * 12);
    for (f, cot) in faces.iter().zip(cots) {
        for k in 0..3 {
            let i = f[(k + 1) % 3];
            let j = f[(k + 2) % 3];
            let w = 0.5 * cot[k];
            t.extend([(i, j, -w), (j, i, -w), (i, i, w), (j, j, w)]);
        }
    }
    t
}

/// Assembles `L`, `M`, `G` and `Div` for the mesh's current positions.
pub fn assemble_operators(mesh: &TriMesh) -> Result<MeshOperators> {
    let h = mesh.mean_edge_length();
    let min_area = DEGENERATE_AREA_FACTOR * h * h;
    let n = mesh.n_vertices();
    let faces = mesh.faces().to_vec();
    let mut mass = vec![0.0; n];
    let mut face_areas = Vec::with_capacity(faces.len());
    let mut hat_grads = Vec::with_capacity(faces.len());
    let mut cots = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let p = f.map(|i| mesh.vertices()[i]);
        let area = 0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])));
        if !(area >= min_area) {
            return Err(Error::DegenerateFace { face: fi, area });
        }
        face_areas.push(area);
        for &v in f {
            mass[v] += area / 3.0;
        }
        hat_grads.push(hat_gradients(p));
        cots.push(corner_cotangents(p));
    }
    let laplacian = SparseMatrix::from_triplets(n, n, &laplacian_triplets(&faces, &cots))?;
    Ok(MeshOperators { faces, laplacian, mass, face_areas, hat_grads })
}

impl MeshOperators {
    pub fn n_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn laplacian(&self) -> &SparseMatrix {
        &self.laplacian
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn mass_matrix(&self) -> SparseMatrix {
        let t: Vec<_> = self.mass.iter().enumerate().map(|(i, &m)| (i, i, m)).collect();
        SparseMatrix::from_triplets(self.mass.len(), self.mass.len(), &t).expect("diagonal in range")
    }

    /// `M + t L`
    pub fn heat_matrix(&self, t: f64) -> SparseMatrix {
        self.mass_matrix()
            .linear_combination(1.0, &self.laplacian, t)
            .expect("same shape")
    }

    /// Per-face gradient of the piecewise-linear function with vertex values `u`.
    pub fn apply_gradient(&self, u: &[f64]) -> Result<Vec<Vec3>> {
        if u.len() != self.n_vertices() {
            return Err(Error::Shape(format!("{} values for {} vertices", u.len(), self.n_vertices())));
        }
        Ok(self
            .faces
            .iter()
            .zip(&self.hat_grads)
            .map(|(f, g)| {
                let mut out = [0.0; 3];
                for k in 0..3 {
                    for c in 0..3 {
                        out[c] += g[k][c] * u[f[k]];
                    }
                }
                out
            })
            .collect())
    }

    /// Integrated divergence `-G^T A V` of a per-face vector field.
    pub fn apply_divergence(&self, field: &[Vec3]) -> Result<Vec<f64>> {
        if field.len() != self.n_faces() {
            return Err(Error::Shape(format!("{} vectors for {} faces", field.len(), self.n_faces())));
        }
        let mut out = vec![0.0; self.n_vertices()];
        for ((f, g), (v, a)) in self.faces.iter().zip(&self.hat_grads).zip(field.iter().zip(&self.face_areas)) {
            for k in 0..3 {
                out[f[k]] -= a * dot(g[k], *v);
            }
        }
        Ok(out)
    }

    /// Dense `G` as a `(3m) x n` matrix; rows `3f..3f+3` hold face `f`.
    pub fn gradient_matrix(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(3 * self.n_faces(), self.n_vertices());
        for (fi, (f, hg)) in self.faces.iter().zip(&self.hat_grads).enumerate() {
            for k in 0..3 {
                for c in 0..3 {
                    g[(3 * fi + c, f[k])] += hg[k][c];
                }
            }
        }
        g
    }
}
