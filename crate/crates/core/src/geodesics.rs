//! Heat-method geodesic distances and their reverse-mode derivatives.
//!
//! For each source vertex `s`:
//! 1. solve `(M + t h^2 L) u = e_s` (heat diffusion for a short time),
//! 2. normalize the per-face gradient `V = -G u / max(|G u|, floor)`,
//! 3. solve `(L + eps I) d = G^T A V` (the Poisson step, `eps` regularizes the
//!    constant null space of `L`),
//! 4. shift so that `d[s] = 0`.
//!
//! `h` is the mean edge length, so the diffusion time is scale-free and the
//! distances are homogeneous of degree one in the vertex positions.
//!
//! [`HeatGeodesics::vjp`] differentiates all four steps, including operator
//! assembly, with respect to the vertex positions. The adjoint of a solve
//! `y = A^{-1} b` is `b_bar = A^{-T} y_bar` and `A_bar = -b_bar y^T`, which only
//! needs to be evaluated on the sparsity pattern of `A`.

use crate::error::{Error, Result};
use crate::linalg::{factor_spd, DenseMatrix, Factorization, SparseMatrix};
use crate::mesh::{add, cross, dot, norm, scale, sub, TriMesh, Vec3};
use crate::operators::{corner_cotangents, hat_gradients, laplacian_triplets, DEGENERATE_AREA_FACTOR};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicConfig {
    /// Diffusion time in units of the squared mean edge length.
    pub t: f64,
    /// `eps = poisson_regularization * trace(L) / n`.
    pub poisson_regularization: f64,
    pub grad_norm_floor: f64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self { t: 1.0, poisson_regularization: 1e-8, grad_norm_floor: 1e-12 }
    }
}

impl GeodesicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !(self.poisson_regularization > 0.0) || !(self.grad_norm_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("geodesic config must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceKind {
    Euclidean,
    LocalEuclidean,
    Geodesic,
}

/// Square matrix of pairwise distances tagged with how it was computed.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    kind: DistanceKind,
    values: DenseMatrix,
}

impl DistanceMatrix {
    pub fn new(kind: DistanceKind, values: DenseMatrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::Shape(format!("distance matrix is {}x{}", values.rows(), values.cols())));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("distance matrix".into()));
        }
        Ok(Self { kind, values })
    }

    /// Pairwise Euclidean distances between points.
    pub fn euclidean(points: &[Vec3]) -> Self {
        let n = points.len();
        let values = DenseMatrix::from_fn(n, n, |i, j| norm(sub(points[i], points[j])));
        Self { kind: DistanceKind::Euclidean, values }
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn into_values(self) -> DenseMatrix {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Rows for the given sources (k x n).
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let n = self.n();
        let mut out = DenseMatrix::zeros(rows.len(), n);
        for (r, &src) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.values.row(src));
        }
        out
    }
}

/// `K = max |Dx - Dy|` with per-point row means of the absolute difference.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricDistortionReport {
    pub k: f64,
    pub mean_distortion: f64,
    pub per_point: Vec<f64>,
}

pub fn bounded_distortion(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Result<MetricDistortionReport> {
    check_compatible(dx, dy)?;
    let n = dx.n();
    let mut k = 0.0_f64;
    let mut per_point = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let d = (dx.get(i, j) - dy.get(i, j)).abs();
            k = k.max(d);
            per_point[i] += d;
        }
        per_point[i] /= n as f64;
    }
    let mean_distortion = per_point.iter().sum::<f64>() / n as f64;
    Ok(MetricDistortionReport { k, mean_distortion, per_point })
}

/// Entrywise `(1 - alpha) Dx + alpha Dy`.
pub fn interp_metric(dx: &DistanceMatrix, dy: &DistanceMatrix, alpha: f64) -> Result<DistanceMatrix> {
    check_compatible(dx, dy)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let values = dx.values.zip_map(&dy.values, |a, b| (1.0 - alpha) * a + alpha * b);
    Ok(DistanceMatrix { kind: dx.kind, values })
}

fn check_compatible(dx: &DistanceMatrix, dy: &DistanceMatrix) -> Result<()> {
    if dx.n() != dy.n() {
        return Err(Error::Shape(format!("distance matrices of size {} and {}", dx.n(), dy.n())));
    }
    if dx.kind != dy.kind {
        return Err(Error::InvalidArgument(format!("distance kinds differ: {:?} vs {:?}", dx.kind, dy.kind)));
    }
    Ok(())
}

/// Heat-method distances from one source.
pub fn heat_distance_single(mesh: &TriMesh, source: usize, cfg: &GeodesicConfig) -> Result<Vec<f64>> {
    let h = HeatGeodesics::compute(mesh, &[source], cfg)?;
    Ok(h.distances().row(0).to_vec())
}

/// All-pairs heat-method distances, symmetrized as `(D + D^T) / 2`.
pub fn heat_distance_all(mesh: &TriMesh, cfg: &GeodesicConfig) -> Result<DistanceMatrix> {
    let sources: Vec<usize> = (0..mesh.n_vertices()).collect();
    let h = HeatGeodesics::compute(mesh, &sources, cfg)?;
    Ok(DistanceMatrix { kind: DistanceKind::Geodesic, values: symmetrize(h.distances()) })
}

/// Gradient of `<cotangent, heat_distance_all(mesh)>` with respect to the
/// vertex positions.
pub fn heat_distance_vjp(mesh: &TriMesh, cfg: &GeodesicConfig, cotangent: &DenseMatrix) -> Result<Vec<Vec3>> {
    let n = mesh.n_vertices();
    if cotangent.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "cotangent is {}x{}, forward output is {n}x{n}",
            cotangent.rows(),
            cotangent.cols()
        )));
    }
    let sources: Vec<usize> = (0..n).collect();
    let h = HeatGeodesics::compute(mesh, &sources, cfg)?;
    h.vjp(&symmetrize(cotangent))
}

pub(crate) fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    let at = a.transpose();
    a.zip_map(&at, |x, y| 0.5 * (x + y))
}

struct FaceState {
    verts: [usize; 3],
    p: [Vec3; 3],
    normal: Vec3,
    area: f64,
    hat: [Vec3; 3],
    cot: [f64; 3],
}

/// Forward state of the heat method for a set of sources, kept for the VJP.
pub struct HeatGeodesics {
    n: usize,
    cfg: GeodesicConfig,
    sources: Vec<usize>,
    positions: Vec<Vec3>,
    faces: Vec<FaceState>,
    edges: Vec<(usize, usize)>,
    mean_edge: f64,
    t_abs: f64,
    heat_fact: Factorization,
    poisson_fact: Factorization,
    /// Heat solutions, n x k.
    heat: DenseMatrix,
    /// Unshifted Poisson solutions, n x k.
    poisson: DenseMatrix,
    /// Per face and source: raw gradient norm and normalized field.
    grad_norm: Vec<f64>,
    field: Vec<Vec3>,
    /// Shifted distances, k x n.
    distances: DenseMatrix,
}

impl HeatGeodesics {
    pub fn compute(mesh: &TriMesh, sources: &[usize], cfg: &GeodesicConfig) -> Result<Self> {
        cfg.validate()?;
        let n = mesh.n_vertices();
        if let Some(&s) = sources.iter().find(|&&s| s >= n) {
            return Err(Error::InvalidArgument(format!("source {s} out of range (n = {n})")));
        }
        let k = sources.len();
        let edges = mesh.edges();
        let pts = mesh.vertices();
        let mean_edge = edges.iter().map(|&(i, j)| norm(sub(pts[i], pts[j]))).sum::<f64>() / edges.len() as f64;
        let min_area = DEGENERATE_AREA_FACTOR * mean_edge * mean_edge;

        let mut faces = Vec::with_capacity(mesh.n_faces());
        let mut mass = vec![0.0; n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            let p = f.map(|i| pts[i]);
            let normal = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            let area = 0.5 * norm(normal);
            if !(area >= min_area) {
                return Err(Error::DegenerateFace { face: fi, area });
            }
            for &v in f {
                mass[v] += area / 3.0;
            }
            faces.push(FaceState { verts: *f, p, normal, area, hat: hat_gradients(p), cot: corner_cotangents(p) });
        }
        let verts: Vec<[usize; 3]> = faces.iter().map(|f| f.verts).collect();
        let cots: Vec<[f64; 3]> = faces.iter().map(|f| f.cot).collect();
        let lap_t = laplacian_triplets(&verts, &cots);

        let t_abs = cfg.t * mean_edge * mean_edge;
        let mut heat_t: Vec<_> = lap_t.iter().map(|&(i, j, v)| (i, j, t_abs * v)).collect();
        heat_t.extend(mass.iter().enumerate().map(|(i, &m)| (i, i, m)));
        let heat_fact = factor_spd(&SparseMatrix::from_triplets(n, n, &heat_t)?)?;

        let trace: f64 = cots.iter().flatten().sum();
        let eps = cfg.poisson_regularization * trace / n as f64;
        let mut poisson_t = lap_t;
        poisson_t.extend((0..n).map(|i| (i, i, eps)));
        let poisson_fact = factor_spd(&SparseMatrix::from_triplets(n, n, &poisson_t)?)?;

        let mut rhs = DenseMatrix::zeros(n, k);
        for (c, &s) in sources.iter().enumerate() {
            rhs[(s, c)] = 1.0;
        }
        let heat = heat_fact.solve_multi(&rhs)?;

        let m = faces.len();
        let mut grad_norm = vec![0.0; m * k];
        let mut field = vec![[0.0; 3]; m * k];
        let mut div = DenseMatrix::zeros(n, k);
        for (fi, f) in faces.iter().enumerate() {
            let rows = f.verts.map(|v| heat.row(v));
            for c in 0..k {
                let mut g = [0.0; 3];
                for corner in 0..3 {
                    g = add(g, scale(f.hat[corner], rows[corner][c]));
                }
                let gn = norm(g);
                let v = scale(g, -1.0 / gn.max(cfg.grad_norm_floor));
                grad_norm[fi * k + c] = gn;
                field[fi * k + c] = v;
                for corner in 0..3 {
                    div[(f.verts[corner], c)] += f.area * dot(f.hat[corner], v);
                }
            }
        }
        let poisson = poisson_fact.solve_multi(&div)?;

        let mut distances = DenseMatrix::zeros(k, n);
        for (c, &s) in sources.iter().enumerate() {
            let base = poisson[(s, c)];
            for i in 0..n {
                distances[(c, i)] = poisson[(i, c)] - base;
            }
        }
        if !distances.is_finite() {
            return Err(Error::NonFinite("heat-method distances".into()));
        }
        Ok(Self {
            n,
            cfg: *cfg,
            sources: sources.to_vec(),
            positions: pts.to_vec(),
            faces,
            edges,
            mean_edge,
            t_abs,
            heat_fact,
            poisson_fact,
            heat,
            poisson,
            grad_norm,
            field,
            distances,
        })
    }

    /// Distances, one row per source (k x n).
    pub fn distances(&self) -> &DenseMatrix {
        &self.distances
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// Pulls an adjoint of [`Self::distances`] (k x n) back to the vertex positions.
    pub fn vjp(&self, d_bar: &DenseMatrix) -> Result<Vec<Vec3>> {
        let n = self.n;
        let k = self.sources.len();
        if d_bar.shape() != (k, n) {
            return Err(Error::Shape(format!(
                "adjoint is {}x{}, forward output is {k}x{n}",
                d_bar.rows(),
                d_bar.cols()
            )));
        }
        let floor = self.cfg.grad_norm_floor;

        // step 4: shift
        let mut poisson_bar = d_bar.transpose();
        for (c, &s) in self.sources.iter().enumerate() {
            poisson_bar[(s, c)] -= d_bar.row(c).iter().sum::<f64>();
        }
        // step 3: Poisson solve
        let div_bar = self.poisson_fact.solve_multi(&poisson_bar)?;

        // step 2: divergence and normalization
        let m = self.faces.len();
        let mut area_bar = vec![0.0; m];
        let mut hat_bar = vec![[[0.0; 3]; 3]; m];
        let mut heat_bar = DenseMatrix::zeros(n, k);
        for (fi, f) in self.faces.iter().enumerate() {
            let div_rows = f.verts.map(|v| div_bar.row(v));
            let heat_rows = f.verts.map(|v| self.heat.row(v));
            let mut g_bars = Vec::with_capacity(k);
            for c in 0..k {
                let v = self.field[fi * k + c];
                let mut v_bar = [0.0; 3];
                for corner in 0..3 {
                    let b = div_rows[corner][c];
                    if b != 0.0 {
                        area_bar[fi] += b * dot(f.hat[corner], v);
                        hat_bar[fi][corner] = add(hat_bar[fi][corner], scale(v, f.area * b));
                        v_bar = add(v_bar, scale(f.hat[corner], f.area * b));
                    }
                }
                let gn = self.grad_norm[fi * k + c];
                let g_bar = if gn > floor {
                    // v = -g/|g|, and -v is the unit direction
                    let along = dot(v, v_bar);
                    scale(sub(v_bar, scale(v, along)), -1.0 / gn)
                } else {
                    scale(v_bar, -1.0 / floor)
                };
                g_bars.push(g_bar);
            }
            for corner in 0..3 {
                let row = heat_bar.row_mut(f.verts[corner]);
                let mut acc = [0.0; 3];
                for (c, g_bar) in g_bars.iter().enumerate() {
                    row[c] += dot(f.hat[corner], *g_bar);
                    acc = add(acc, scale(*g_bar, heat_rows[corner][c]));
                }
                hat_bar[fi][corner] = add(hat_bar[fi][corner], acc);
            }
        }

        // step 1: heat solve
        let rhs_bar = self.heat_fact.solve_multi(&heat_bar)?;

        // matrix adjoints restricted to the pattern: A_bar(i, j) = -<x_bar_i, y_j>
        let heat_adj = |i: usize, j: usize| -> f64 { -row_dot(rhs_bar.row(i), self.heat.row(j)) };
        let poisson_adj = |i: usize, j: usize| -> f64 { -row_dot(div_bar.row(i), self.poisson.row(j)) };
        let heat_diag: Vec<f64> = (0..n).map(|i| heat_adj(i, i)).collect();
        let poisson_diag: Vec<f64> = (0..n).map(|i| poisson_adj(i, i)).collect();
        let eps_bar: f64 = poisson_diag.iter().sum();
        let eps_per_cot = self.cfg.poisson_regularization / n as f64;

        let mut grad = vec![[0.0; 3]; n];
        let mut mean_edge_bar = 0.0;
        for (fi, f) in self.faces.iter().enumerate() {
            // cotangent weights feed L in both systems; L(i,j) = -cot/2, L(i,i) = +cot/2
            let mut cot_bar = [0.0; 3];
            for corner in 0..3 {
                let i = f.verts[(corner + 1) % 3];
                let j = f.verts[(corner + 2) % 3];
                let heat_edge = 0.5 * (heat_diag[i] + heat_diag[j] - heat_adj(i, j) - heat_adj(j, i));
                let poisson_edge = 0.5 * (poisson_diag[i] + poisson_diag[j] - poisson_adj(i, j) - poisson_adj(j, i));
                cot_bar[corner] = self.t_abs * heat_edge + poisson_edge + eps_bar * eps_per_cot;
                mean_edge_bar += 2.0 * self.cfg.t * self.mean_edge * heat_edge * f.cot[corner];
            }
            let mass_bar: f64 = f.verts.iter().map(|&v| heat_diag[v]).sum::<f64>() / 3.0;
            let a_bar = area_bar[fi] + mass_bar;

            let mut p_bar = [[0.0; 3]; 3];
            // cotangents
            for corner in 0..3 {
                if cot_bar[corner] == 0.0 {
                    continue;
                }
                let a = sub(f.p[(corner + 1) % 3], f.p[corner]);
                let b = sub(f.p[(corner + 2) % 3], f.p[corner]);
                let c = cross(a, b);
                let cn = norm(c);
                let ab = dot(a, b);
                let k3 = ab / (cn * cn * cn);
                let da = sub(scale(b, 1.0 / cn), scale(cross(b, c), k3));
                let db = sub(scale(a, 1.0 / cn), scale(cross(c, a), k3));
                let w = cot_bar[corner];
                p_bar[(corner + 1) % 3] = add(p_bar[(corner + 1) % 3], scale(da, w));
                p_bar[(corner + 2) % 3] = add(p_bar[(corner + 2) % 3], scale(db, w));
                p_bar[corner] = sub(p_bar[corner], scale(add(da, db), w));
            }
            // area and hat gradients through the raw normal
            let nrm = f.normal;
            let s = dot(nrm, nrm);
            let mut n_bar = scale(nrm, a_bar / (2.0 * s.sqrt()));
            let mut s_bar = 0.0;
            for corner in 0..3 {
                let e = sub(f.p[(corner + 2) % 3], f.p[(corner + 1) % 3]);
                let w = cross(nrm, e);
                let w_bar = scale(hat_bar[fi][corner], 1.0 / s);
                s_bar -= dot(hat_bar[fi][corner], w) / (s * s);
                n_bar = add(n_bar, cross(e, w_bar));
                let e_bar = cross(w_bar, nrm);
                p_bar[(corner + 2) % 3] = add(p_bar[(corner + 2) % 3], e_bar);
                p_bar[(corner + 1) % 3] = sub(p_bar[(corner + 1) % 3], e_bar);
            }
            n_bar = add(n_bar, scale(nrm, 2.0 * s_bar));
            let e1 = sub(f.p[1], f.p[0]);
            let e2 = sub(f.p[2], f.p[0]);
            let e1_bar = cross(e2, n_bar);
            let e2_bar = cross(n_bar, e1);
            p_bar[1] = add(p_bar[1], e1_bar);
            p_bar[2] = add(p_bar[2], e2_bar);
            p_bar[0] = sub(p_bar[0], add(e1_bar, e2_bar));

            for corner in 0..3 {
                let v = f.verts[corner];
                grad[v] = add(grad[v], p_bar[corner]);
            }
        }

        // mean edge length enters through the diffusion time
        if mean_edge_bar != 0.0 {
            let w = mean_edge_bar / self.edges.len() as f64;
            for &(i, j) in &self.edges {
                let d = sub(self.positions[i], self.positions[j]);
                let u = scale(d, w / norm(d));
                grad[i] = add(grad[i], u);
                grad[j] = sub(grad[j], u);
            }
        }
        if grad.iter().any(|g| !g.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("heat-method gradient".into()));
        }
        Ok(grad)
    }
}

#[inline]
fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{flat_grid, icosphere, rotation_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 6x5 grid with random height and in-plane jitter: 30 vertices, open boundary.
    pub(crate) fn random_patch(seed: u64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = flat_grid(6, 5, 1.0);
        let v = g
            .vertices()
            .iter()
            .map(|p| {
                [
                    p[0] + 0.04 * (rng.random::<f64>() - 0.5),
                    p[1] + 0.04 * (rng.random::<f64>() - 0.5),
                    0.15 * (rng.random::<f64>() - 0.5),
                ]
            })
            .collect();
        g.with_vertices(v).unwrap()
    }

    fn objective(mesh: &TriMesh, cfg: &GeodesicConfig, c: &DenseMatrix) -> f64 {
        heat_distance_all(mesh, cfg).unwrap().values().dot(c)
    }

    fn fd_gradient(mesh: &TriMesh, cfg: &GeodesicConfig, c: &DenseMatrix, step: f64) -> Vec<Vec3> {
        let mut out = vec![[0.0; 3]; mesh.n_vertices()];
        for v in 0..mesh.n_vertices() {
            for k in 0..3 {
                let mut plus = mesh.vertices().to_vec();
                plus[v][k] += step;
                let mut minus = mesh.vertices().to_vec();
                minus[v][k] -= step;
                let fp = objective(&mesh.with_vertices(plus).unwrap(), cfg, c);
                let fm = objective(&mesh.with_vertices(minus).unwrap(), cfg, c);
                out[v][k] = (fp - fm) / (2.0 * step);
            }
        }
        out
    }

    fn max_rel_dev(a: &[Vec3], b: &[Vec3]) -> f64 {
        let scale = b.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn source_distance_is_exactly_zero() {
        let s = icosphere(2);
        let d = heat_distance_single(&s, 17, &GeodesicConfig::default()).unwrap();
        assert_eq!(d[17], 0.0);
    }

    #[test]
    fn out_of_range_source() {
        let s = icosphere(1);
        assert!(heat_distance_single(&s, 42, &GeodesicConfig::default()).is_err());
    }

    #[test]
    fn all_pairs_matches_single_sources() {
        let g = flat_grid(7, 6, 1.0);
        let cfg = GeodesicConfig::default();
        let all = heat_distance_all(&g, &cfg).unwrap();
        let rows: Vec<Vec<f64>> = (0..g.n_vertices()).map(|s| heat_distance_single(&g, s, &cfg).unwrap()).collect();
        for i in 0..g.n_vertices() {
            for j in 0..g.n_vertices() {
                let expect = 0.5 * (rows[i][j] + rows[j][i]);
                assert!((all.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn octahedron_symmetry() {
        let m = TriMesh::new(
            vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1], [5, 2, 1], [5, 3, 2], [5, 4, 3], [5, 1, 4]],
        )
        .unwrap();
        let d = heat_distance_single(&m, 0, &GeodesicConfig::default()).unwrap();
        for v in 2..5 {
            assert!((d[v] - d[1]).abs() < 1e-10);
        }
        assert!(d[5] > d[1]);
    }

    #[test]
    fn triangle_inequality_with_slack_on_icosphere() {
        let s = icosphere(3);
        let d = heat_distance_all(&s, &GeodesicConfig::default()).unwrap();
        let slack = 0.05 * s.diameter();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let (i, j, k) = (rng.random_range(0..642), rng.random_range(0..642), rng.random_range(0..642));
            assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + slack);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let s = icosphere(2);
        let cfg = GeodesicConfig::default();
        let d0 = heat_distance_all(&s, &cfg).unwrap();
        let moved = s.transformed(&rotation_matrix([0.3, -1.0, 0.5], 1.1), 1.0, [2.0, -3.0, 0.5]);
        let d1 = heat_distance_all(&moved, &cfg).unwrap();
        assert!(d0.values().sub(d1.values()).max_abs() <= 1e-9);
    }

    #[test]
    fn geodesic_dominates_euclidean() {
        let s = icosphere(3);
        let d = heat_distance_all(&s, &GeodesicConfig::default()).unwrap();
        let e = DistanceMatrix::euclidean(s.vertices());
        let slack = 0.02 * s.diameter();
        for i in 0..s.n_vertices() {
            for j in 0..s.n_vertices() {
                assert!(d.get(i, j) >= e.get(i, j) - slack, "({i},{j}) {} < {}", d.get(i, j), e.get(i, j));
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let m = random_patch(1);
        let g = heat_distance_vjp(&m, &GeodesicConfig::default(), &DenseMatrix::zeros(30, 30)).unwrap();
        assert!(g.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn vjp_shape_mismatch() {
        let m = random_patch(1);
        assert!(heat_distance_vjp(&m, &GeodesicConfig::default(), &DenseMatrix::zeros(29, 30)).is_err());
    }

    #[test]
    fn euler_homogeneity() {
        // sum(D) is 1-homogeneous: <grad, X> = sum(D)
        let m = random_patch(4);
        let cfg = GeodesicConfig::default();
        let ones = DenseMatrix::filled(30, 30, 1.0);
        let total = heat_distance_all(&m, &cfg).unwrap().values().sum();
        let g = heat_distance_vjp(&m, &cfg, &ones).unwrap();
        let radial: f64 = g.iter().zip(m.vertices()).map(|(g, p)| dot(*g, *p)).sum();
        assert!((radial - total).abs() <= 1e-8 * total.abs(), "{radial} vs {total}");
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let cfg = GeodesicConfig::default();
        for seed in 0..2 {
            let m = random_patch(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let c = DenseMatrix::from_fn(30, 30, |_, _| rng.random::<f64>() - 0.5);
            let analytic = heat_distance_vjp(&m, &cfg, &c).unwrap();
            let numeric = fd_gradient(&m, &cfg, &c, 1e-5);
            let dev = max_rel_dev(&analytic, &numeric);
            assert!(dev <= 1e-4, "seed {seed}: relative deviation {dev:e}");
        }
    }

    #[test]
    fn landmark_rows_vjp_matches_finite_differences() {
        let cfg = GeodesicConfig { t: 2.5, ..Default::default() };
        let m = random_patch(9);
        let sources = [0, 7, 29];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = DenseMatrix::from_fn(3, 30, |_, _| rng.random::<f64>() - 0.5);
        let h = HeatGeodesics::compute(&m, &sources, &cfg).unwrap();
        let analytic = h.vjp(&c).unwrap();
        let f = |mesh: &TriMesh| HeatGeodesics::compute(mesh, &sources, &cfg).unwrap().distances().dot(&c);
        let mut numeric = vec![[0.0; 3]; 30];
        for v in 0..30 {
            for k in 0..3 {
                let mut p = m.vertices().to_vec();
                p[v][k] += 1e-5;
                let fp = f(&m.with_vertices(p.clone()).unwrap());
                p[v][k] -= 2e-5;
                let fm = f(&m.with_vertices(p).unwrap());
                numeric[v][k] = (fp - fm) / 2e-5;
            }
        }
        let dev = max_rel_dev(&analytic, &numeric);
        assert!(dev <= 1e-4, "relative deviation {dev:e}");
    }

    #[test]
    fn distortion_of_identical_and_offset_matrices() {
        let s = icosphere(1);
        let d = heat_distance_all(&s, &GeodesicConfig::default()).unwrap();
        assert_eq!(bounded_distortion(&d, &d).unwrap().k, 0.0);
        let n = d.n();
        let shifted = DenseMatrix::from_fn(n, n, |i, j| d.get(i, j) + if i == j { 0.0 } else { 0.25 });
        let shifted = DistanceMatrix::new(DistanceKind::Geodesic, shifted).unwrap();
        let r = bounded_distortion(&d, &shifted).unwrap();
        assert!((r.k - 0.25).abs() < 1e-12);
        assert!(r.k >= r.mean_distortion && r.mean_distortion >= 0.0);
    }

    #[test]
    fn interp_metric_endpoints_and_midpoint() {
        let a = DistanceMatrix::new(DistanceKind::Geodesic, DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let b = DistanceMatrix::new(DistanceKind::Geodesic, DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(interp_metric(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interp_metric(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interp_metric(&a, &b, 0.5).unwrap().get(0, 1), 1.0);
        assert!(interp_metric(&a, &b, 1.5).is_err());
        let e = DistanceMatrix::euclidean(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(interp_metric(&a, &e, 0.5).is_err());
    }
}
