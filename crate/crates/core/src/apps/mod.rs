//! Latent-space applications and evaluation metrics.

mod gradcheck;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geodesics::{heat_distance_all, symmetrize, DistanceMatrix, GeodesicConfig, HeatGeodesics};
use crate::linalg::DenseMatrix;
use crate::mesh::{shape_diameter, TriMesh, Vec3};
use crate::model::{merge_latent, points_matrix, split_latent, LatentCode, ModelParams};
use crate::trainer::{adam_step, AdamState, Dataset};

pub use gradcheck::{gradient_checks, GRAD_CHECK_TOLERANCE};

/// Deterministic encoder/decoder pair over a fixed topology.
pub trait ShapeCodec {
    fn latent_dim(&self) -> usize;
    fn faces(&self) -> &[[usize; 3]];
    /// Mean code of a shape.
    fn encode_mean(&self, points: &[Vec3]) -> Result<Vec<f64>>;
    fn decode_points(&self, z: &[f64]) -> Result<Vec<Vec3>>;

    fn decode_mesh(&self, z: &[f64]) -> Result<TriMesh> {
        TriMesh::from_parts(self.decode_points(z)?, self.faces().to_vec())
    }
}

impl ShapeCodec for ModelParams {
    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn faces(&self) -> &[[usize; 3]] {
        ModelParams::faces(self)
    }

    fn encode_mean(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self.encode(points)?.0)
    }

    fn decode_points(&self, z: &[f64]) -> Result<Vec<Vec3>> {
        ModelParams::decode_points(self, z)
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// Decodings of `(1 - a) enc(x_a) + a enc(x_b)` for `a = k / (steps - 1)`.
pub fn latent_interpolate(model: &impl ShapeCodec, x_a: &[Vec3], x_b: &[Vec3], steps: usize) -> Result<Vec<TriMesh>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs >= 2 steps, got {steps}")));
    }
    let (za, zb) = (model.encode_mean(x_a)?, model.encode_mean(x_b)?);
    (0..steps).map(|k| model.decode_mesh(&lerp(&za, &zb, k as f64 / (steps - 1) as f64))).collect()
}

/// Decoding of `(z_i_int | z_j_ext)`: style of `x_i`, pose of `x_j`.
pub fn latent_swap(model: &impl ShapeCodec, x_i: &[Vec3], x_j: &[Vec3]) -> Result<TriMesh> {
    let (zi, zj) = (LatentCode::new(model.encode_mean(x_i)?), LatentCode::new(model.encode_mean(x_j)?));
    let code = merge_latent(&split_latent(&zi).0, &split_latent(&zj).1)?;
    model.decode_mesh(&code.z)
}

/// Decoding of `z_a - z_b + z_c`.
pub fn latent_analogy(model: &impl ShapeCodec, z_a: &[f64], z_b: &[f64], z_c: &[f64]) -> Result<TriMesh> {
    let d = model.latent_dim();
    if [z_a, z_b, z_c].iter().any(|z| z.len() != d) {
        return Err(Error::Shape(format!("analogy codes must have {d} entries")));
    }
    let z: Vec<f64> = (0..d).map(|k| z_a[k] - z_b[k] + z_c[k]).collect();
    model.decode_mesh(&z)
}

/// Per-vertex mean absolute distance discrepancy, divided by `scale`.
pub fn vertex_distortion(d: &DistanceMatrix, target: &DistanceMatrix, scale: f64) -> Result<Vec<f64>> {
    if d.n() != target.n() {
        return Err(Error::Shape(format!("{} vs {} vertices", d.n(), target.n())));
    }
    let n = d.n();
    Ok((0..n)
        .map(|i| (0..n).map(|j| (d.get(i, j) - target.get(i, j)).abs()).sum::<f64>() / (n as f64 * scale))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionConfig {
    pub iters: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    /// Standard deviation of the noise added to restart codes after the first.
    pub noise: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { iters: 200, restarts: 8, learning_rate: 1e-2, noise: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct Completion {
    pub code: LatentCode,
    pub mesh: TriMesh,
    /// Mean squared distance from each partial point to its nearest decoded vertex.
    pub objective: f64,
}

/// Asymmetric Chamfer term on the tape: mean over rows of `partial` of the
/// squared distance to the nearest row of `x`.
pub fn partial_chamfer<'t>(x: Var<'t>, partial: &DenseMatrix) -> Result<Var<'t>> {
    let tape = x.tape();
    let k = partial.rows();
    let n = x.shape().0;
    let sq_x = x.square().matmul(&tape.constant(DenseMatrix::filled(3, 1, 1.0)))?.transpose();
    let sq_p = DenseMatrix::from_fn(k, n, |r, _| partial.row(r).iter().map(|v| v * v).sum());
    let cross = tape.constant(partial.clone()).matmul(&x.transpose())?.scale(-2.0);
    let d2 = cross.add_row(&sq_x)?.add(&tape.constant(sq_p))?;
    Ok(d2.scale(-1.0).row_max()?.scale(-1.0).mean())
}

fn chamfer_value(x: &[Vec3], partial: &DenseMatrix) -> Result<f64> {
    let tape = Tape::new();
    let v = partial_chamfer(tape.constant(points_matrix(x)), partial)?.item();
    if v.is_finite() { Ok(v) } else { Err(Error::NonFinite("completion objective".into())) }
}

/// Searches the latent space for a shape whose vertices cover `partial`.
/// Restarts begin at the `candidates` codes whose decodings fit best (the
/// first restart exactly, later ones with Gaussian noise); with no candidates
/// they begin at noise around the origin. Returns the best iterate seen.
pub fn complete_partial(
    model: &ModelParams,
    partial: &[Vec3],
    candidates: &[Vec<f64>],
    cfg: &CompletionConfig,
    rng: &mut impl Rng,
) -> Result<Completion> {
    if partial.is_empty() {
        return Err(Error::InvalidArgument("partial shape has no points".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("completion needs at least one restart".into()));
    }
    let d = model.config().latent_dim;
    let p = points_matrix(partial);
    if !p.is_finite() {
        return Err(Error::NonFinite("partial points".into()));
    }
    let mut ranked: Vec<(f64, &Vec<f64>)> = candidates
        .iter()
        .map(|z| Ok((chamfer_value(&model.decode_points(z)?, &p)?, z)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..cfg.restarts {
        let mut z = match ranked.get(r % ranked.len().max(1)) {
            Some((_, z)) => DenseMatrix::row_vector(z),
            None => DenseMatrix::zeros(1, d),
        };
        if r > 0 || ranked.is_empty() {
            z = z.map(|v| v + cfg.noise * rng.sample::<f64, _>(StandardNormal));
        }
        let mut state = AdamState::default();
        for it in 0..=cfg.iters {
            let tape = Tape::new();
            let m = model.bind(&tape, false);
            let zv = tape.leaf(z.clone());
            let x = m.decode(zv)?.reshape(model.config().n_vertices, 3)?;
            let obj = partial_chamfer(x, &p)?;
            let value = obj.item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("completion objective at restart {r}, iteration {it}")));
            }
            if best.as_ref().is_none_or(|b| value < b.0) {
                best = Some((value, z.as_slice().to_vec()));
            }
            if it == cfg.iters {
                break;
            }
            let g = tape.backward(obj)?.wrt(zv);
            adam_step(std::iter::once(&mut z), &[g], &mut state, cfg.learning_rate)?;
        }
    }
    let (objective, z) = best.expect("at least one iterate");
    let mesh = model.decode(&z)?;
    Ok(Completion { code: LatentCode::new(z), mesh, objective })
}

#[derive(Clone, Debug)]
pub struct MetricFit {
    /// Best iterate.
    pub mesh: TriMesh,
    pub objective: f64,
    pub initial_objective: f64,
    /// Objective at every evaluated iterate, starting with the initial mesh.
    pub history: Vec<f64>,
}

/// `||D(X) - target||_F^2 / n^2` and its gradient in the vertex positions.
pub fn metric_objective(mesh: &TriMesh, target: &DistanceMatrix, cfg: &GeodesicConfig) -> Result<(f64, Vec<Vec3>)> {
    let n = mesh.n_vertices();
    if target.n() != n {
        return Err(Error::Shape(format!("target has {} vertices, mesh {n}", target.n())));
    }
    let sources: Vec<usize> = (0..n).collect();
    let h = HeatGeodesics::compute(mesh, &sources, cfg)?;
    let diff = symmetrize(h.distances()).sub(target.values());
    let nn = (n * n) as f64;
    let value = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / nn;
    let grad = h.vjp(&symmetrize(&diff.scale(2.0 / nn)))?;
    Ok((value, grad))
}

/// Adam on vertex positions toward a target geodesic matrix; returns the
/// best iterate.
pub fn fit_to_metric(mesh_init: &TriMesh, target: &DistanceMatrix, iters: usize, lr: f64, cfg: &GeodesicConfig) -> Result<MetricFit> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    let n = mesh_init.n_vertices();
    let mut x = points_matrix(mesh_init.vertices());
    let mut state = AdamState::default();
    let mut history = Vec::with_capacity(iters + 1);
    let mut best = (f64::INFINITY, mesh_init.clone());
    for it in 0..=iters {
        let mesh = mesh_init.with_vertices(crate::model::matrix_points(&x))?;
        let (value, grad) = metric_objective(&mesh, target, cfg)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric objective at iteration {it}")));
        }
        history.push(value);
        if value < best.0 {
            best = (value, mesh);
        }
        if it == iters {
            break;
        }
        let g = DenseMatrix::from_fn(n, 3, |r, c| grad[r][c]);
        adam_step(std::iter::once(&mut x), &[g], &mut state, lr)?;
    }
    Ok(MetricFit { mesh: best.1, objective: best.0, initial_objective: history[0], history })
}

/// Error of one evaluated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairError {
    pub i: usize,
    pub j: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Against the interpolated ground-truth metrics.
    pub interpolation_error: f64,
    /// Against the interpolated metrics of the decoded endpoints.
    pub interpolation_error_decoded: f64,
    pub disentanglement_error: f64,
    pub interpolation_pairs: Vec<PairError>,
    pub interpolation_pairs_decoded: Vec<PairError>,
    pub disentanglement_pairs: Vec<PairError>,
}

impl EvalReport {
    /// `metric,i,j,value` rows; summary rows use `-1` for `i` and `j`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,i,j,value\n");
        for (name, v) in [
            ("interpolation_error", self.interpolation_error),
            ("interpolation_error_decoded", self.interpolation_error_decoded),
            ("disentanglement_error", self.disentanglement_error),
        ] {
            s.push_str(&format!("{name},-1,-1,{v:e}\n"));
        }
        for (name, rows) in [
            ("interpolation", &self.interpolation_pairs),
            ("interpolation_decoded", &self.interpolation_pairs_decoded),
            ("disentanglement", &self.disentanglement_pairs),
        ] {
            for p in rows {
                s.push_str(&format!("{name},{},{},{:e}\n", p.i, p.j, p.error));
            }
        }
        s
    }
}

/// The interpolation grid `0.1, 0.2, ..., 0.9`.
pub fn default_alphas() -> Vec<f64> {
    (1..10).map(|k| k as f64 / 10.0).collect()
}

fn mean_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean over unordered pairs, `alphas` and matrix entries of
/// `|D(dec(z_a)) - lerp(D_i, D_j, a)| / diameter`, with `D_i, D_j` the
/// ground-truth metrics (`.0`) and the metrics of the decoded endpoints (`.1`).
/// The diameter is the larger of the two ground-truth shape diameters.
pub fn eval_interpolation_error(
    model: &impl ShapeCodec,
    dataset: &Dataset,
    alphas: &[f64],
    cfg: &GeodesicConfig,
) -> Result<(f64, Vec<PairError>, f64, Vec<PairError>)> {
    let recs = dataset.records();
    if recs.len() < 2 || alphas.is_empty() {
        return Err(Error::InvalidArgument("interpolation error needs >= 2 shapes and >= 1 alpha".into()));
    }
    let codes: Vec<Vec<f64>> = recs.iter().map(|r| model.encode_mean(r.mesh.vertices())).collect::<Result<_>>()?;
    let decoded: Vec<DistanceMatrix> =
        codes.iter().map(|z| heat_distance_all(&model.decode_mesh(z)?, cfg)).collect::<Result<_>>()?;
    let (mut gt_rows, mut dec_rows) = (Vec::new(), Vec::new());
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            let diam = recs[i].mesh.diameter().max(recs[j].mesh.diameter());
            let (mut e_gt, mut e_dec) = (0.0, 0.0);
            for &a in alphas {
                let d = heat_distance_all(&model.decode_mesh(&lerp(&codes[i], &codes[j], a))?, cfg)?;
                let gt = recs[i].d_geo.values().scale(1.0 - a).add(&recs[j].d_geo.values().scale(a));
                let dec = decoded[i].values().scale(1.0 - a).add(&decoded[j].values().scale(a));
                e_gt += mean_abs_diff(d.values(), &gt) / diam;
                e_dec += mean_abs_diff(d.values(), &dec) / diam;
            }
            let na = alphas.len() as f64;
            gt_rows.push(PairError { i, j, error: e_gt / na });
            dec_rows.push(PairError { i, j, error: e_dec / na });
        }
    }
    let mean = |rows: &[PairError]| rows.iter().map(|p| p.error).sum::<f64>() / rows.len() as f64;
    Ok((mean(&gt_rows), gt_rows.clone(), mean(&dec_rows), dec_rows))
}

/// Orthogonal Procrustes: `points` moved by the rotation or reflection plus
/// translation that best matches `target` in the least-squares sense.
/// Decodings are only defined up to such motions, since every training loss
/// sees pairwise distances alone.
pub fn align_rigid(points: &[Vec3], target: &[Vec3]) -> Result<Vec<Vec3>> {
    if points.len() != target.len() || points.is_empty() {
        return Err(Error::Shape(format!("aligning {} points to {}", points.len(), target.len())));
    }
    let centroid = |p: &[Vec3]| {
        let s = p.iter().fold([0.0; 3], |a, v| [a[0] + v[0], a[1] + v[1], a[2] + v[2]]);
        nalgebra::Vector3::from(s) / p.len() as f64
    };
    let (cp, ct) = (centroid(points), centroid(target));
    let mut h = nalgebra::Matrix3::zeros();
    for (p, t) in points.iter().zip(target) {
        h += (nalgebra::Vector3::from(*p) - cp) * (nalgebra::Vector3::from(*t) - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let r = v_t.transpose() * u.transpose();
    Ok(points.iter().map(|p| (r * (nalgebra::Vector3::from(*p) - cp) + ct).into()).collect())
}

/// Mean vertex distance between `dec(z_i_int | z_j_ext)`, rigidly aligned,
/// and the dataset shape with the subject of `i` and the pose of `j`, over
/// the diameter of that shape. `None` when the dataset lacks that shape.
pub fn disentanglement_pair_error(model: &impl ShapeCodec, dataset: &Dataset, i: usize, j: usize) -> Result<Option<f64>> {
    let recs = dataset.records();
    let (Some(ri), Some(rj)) = (recs.get(i), recs.get(j)) else {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) out of range for {} shapes", recs.len())));
    };
    let Some(k) = dataset.find(ri.subject_id, rj.pose_id) else {
        return Ok(None);
    };
    let swapped = latent_swap(model, ri.mesh.vertices(), rj.mesh.vertices())?;
    let truth = recs[k].mesh.vertices();
    let aligned = align_rigid(swapped.vertices(), truth)?;
    let mean = aligned.iter().zip(truth).map(|(a, b)| crate::mesh::dist(*a, *b)).sum::<f64>() / truth.len() as f64;
    Ok(Some(mean / shape_diameter(truth)))
}

/// Mean of [`disentanglement_pair_error`] over ordered pairs of distinct
/// shapes whose swap target exists.
pub fn eval_disentanglement_error(model: &impl ShapeCodec, dataset: &Dataset) -> Result<(f64, Vec<PairError>)> {
    let mut rows = Vec::new();
    for i in 0..dataset.len() {
        for j in 0..dataset.len() {
            if i != j {
                if let Some(error) = disentanglement_pair_error(model, dataset, i, j)? {
                    rows.push(PairError { i, j, error });
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no pair has a ground-truth swap target".into()));
    }
    Ok((rows.iter().map(|p| p.error).sum::<f64>() / rows.len() as f64, rows))
}

/// Both metrics on the default alpha grid.
pub fn evaluate(model: &impl ShapeCodec, dataset: &Dataset, cfg: &GeodesicConfig) -> Result<EvalReport> {
    let (interpolation_error, interpolation_pairs, interpolation_error_decoded, interpolation_pairs_decoded) =
        eval_interpolation_error(model, dataset, &default_alphas(), cfg)?;
    let (disentanglement_error, disentanglement_pairs) = eval_disentanglement_error(model, dataset)?;
    let report = EvalReport {
        interpolation_error,
        interpolation_error_decoded,
        disentanglement_error,
        interpolation_pairs,
        interpolation_pairs_decoded,
        disentanglement_pairs,
    };
    let all = [report.interpolation_error, report.interpolation_error_decoded, report.disentanglement_error];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evaluation metric".into()));
    }
    Ok(report)
}
