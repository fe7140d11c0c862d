//! Triangle meshes, OFF I/O, and the geometric queries the losses need.

mod generate;
mod io;

pub use generate::{flat_grid, icosphere};
pub use io::{load_off, parse_off, save_off, write_off, ColorMap};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Faces whose area falls below this fraction of `diameter^2` are rejected.
pub const MIN_RELATIVE_AREA: f64 = 1e-12;

/// A triangle mesh: vertex positions and 0-based triangle indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds and validates a mesh.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh checking only index ranges. Decoded shapes go through
    /// here: they can be arbitrarily distorted mid-training.
    pub fn from_parts(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.check_topology()?;
        Ok(mesh)
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} positions for a {}-vertex mesh",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self { vertices, faces: self.faces.clone() })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Positions flattened row-major (n x 3).
    pub fn positions_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| v.iter().copied()).collect()
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 4 {
            return Err(Error::InvalidMesh(format!("{n} vertices; at least 4 required")));
        }
        if self.faces.is_empty() {
            return Err(Error::InvalidMesh("no faces".into()));
        }
        let mut bad = Vec::new();
        for (f, face) in self.faces.iter().enumerate() {
            if let Some(&i) = face.iter().find(|&&i| i >= n) {
                bad.push(format!("face {f}: index {i} out of range (n = {n})"));
            } else if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                bad.push(format!("face {f}: repeated vertex {face:?}"));
            }
        }
        if !bad.is_empty() {
            return Err(Error::InvalidMesh(bad.join("; ")));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    /// Full validation: topology plus the minimum-area rule.
    pub fn validate(&self) -> Result<()> {
        self.check_topology()?;
        let diam = self.diameter();
        let min_area = MIN_RELATIVE_AREA * diam * diam;
        let small: Vec<String> = (0..self.faces.len())
            .filter(|&f| self.face_area(f) < min_area)
            .map(|f| format!("face {f}: area {:e}", self.face_area(f)))
            .collect();
        if !small.is_empty() {
            return Err(Error::InvalidMesh(format!("degenerate faces: {}", small.join("; "))));
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Maximum pairwise Euclidean distance between vertices.
    pub fn diameter(&self) -> f64 {
        shape_diameter(&self.vertices)
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn mean_edge_length(&self) -> f64 {
        let e = self.edges();
        e.iter().map(|&(i, j)| dist(self.vertices[i], self.vertices[j])).sum::<f64>() / e.len() as f64
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let s = self.vertices.iter().fold([0.0; 3], |acc, v| add(acc, *v));
        s.map(|c| c / n)
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.chunk_by(|a, b| a == b).all(|run| run.len() == 2)
    }

    /// Applies `p -> s * R p + t`.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], scale: f64, translation: Vec3) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|p| {
                let r = mat_vec(rotation, *p);
                [scale * r[0] + translation[0], scale * r[1] + translation[1], scale * r[2] + translation[2]]
            })
            .collect();
        Self { vertices, faces: self.faces.clone() }
    }
}

/// Maximum pairwise Euclidean distance over a point set.
pub fn shape_diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0_f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(dist2(*p, *q));
        }
    }
    best.sqrt()
}

/// Symmetric boolean mask of vertex pairs within a Euclidean radius on a
/// reference shape. The diagonal is always false.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodMask {
    n: usize,
    radius: f64,
    entries: Vec<bool>,
}

impl NeighborhoodMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.entries
    }

    pub fn count(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        self.entries[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    /// Entrywise AND of two masks on the same vertex set.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape(format!("masks over {} and {} vertices", self.n, other.n)));
        }
        Ok(Self {
            n: self.n,
            radius: self.radius.min(other.radius),
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| *a && *b).collect(),
        })
    }
}

/// Mask of pairs within `radius_fraction * diameter` of each other.
pub fn neighborhood_mask(mesh: &TriMesh, radius_fraction: f64) -> Result<NeighborhoodMask> {
    if !(radius_fraction > 0.0) {
        return Err(Error::InvalidArgument(format!("radius_fraction must be > 0, got {radius_fraction}")));
    }
    let diam = mesh.diameter();
    if diam <= 0.0 {
        return Err(Error::InvalidArgument("shape has zero diameter".into()));
    }
    let radius = radius_fraction * diam;
    let pts = mesh.vertices();
    let n = pts.len();
    let r2 = radius * radius;
    let mut entries = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if dist2(pts[i], pts[j]) <= r2 {
                entries[i * n + j] = true;
                entries[j * n + i] = true;
            }
        }
    }
    Ok(NeighborhoodMask { n, radius, entries })
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub(crate) fn dist(a: Vec3, b: Vec3) -> f64 {
    dist2(a, b).sqrt()
}

pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Rotation matrix about a unit axis (Rodrigues).
pub fn rotation_matrix(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let len = norm(axis);
    let [x, y, z] = scale(axis, 1.0 / len);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}
