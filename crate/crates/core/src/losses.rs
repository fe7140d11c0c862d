//! Metric-preservation, disentanglement and KL losses over decoded shapes.
//!
//! Euclidean terms use the relative error
//! `sum_{ij: ref_ij > tau} (pred_ij - target_ij)^2 / ref_ij^2`; geodesic terms
//! use the squared Frobenius norm divided by the number of entries.

use std::collections::BTreeMap;

use crate::autodiff::{geodesic_node, GeodesicNodeOutput, Var};
use crate::error::{Error, Result};
use crate::geodesics::{heat_distance_all, DistanceMatrix, GeodesicConfig, HeatGeodesics};
use crate::linalg::DenseMatrix;
use crate::mesh::{NeighborhoodMask, TriMesh};
use crate::model::split_index;

/// Relative threshold below which ground-truth distances are excluded.
pub const REL_ERR_TAU: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    Any,
    Isometric,
    NonIsometric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub alpha: f64,
    pub kind: PairKind,
}

impl PairSample {
    /// Checks `i != j`, `alpha` in the open unit interval and the kind against
    /// the subjects of the two shapes.
    pub fn validate(&self, subject_i: usize, subject_j: usize) -> Result<()> {
        if self.i == self.j {
            return Err(Error::InvalidArgument(format!("pair uses shape {} twice", self.i)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        let same = subject_i == subject_j;
        match self.kind {
            PairKind::Isometric if !same => Err(Error::InvalidArgument(format!(
                "isometric pair ({}, {}) spans subjects {subject_i} and {subject_j}",
                self.i, self.j
            ))),
            PairKind::NonIsometric if same => Err(Error::InvalidArgument(format!(
                "non-isometric pair ({}, {}) shares subject {subject_i}",
                self.i, self.j
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Reconstruction and KL only.
    Warmup,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub interp_geo: f64,
    pub interp_local: f64,
    pub disent_int: f64,
    pub disent_ext: f64,
    /// KL weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon: 1.0, interp_geo: 1.0, interp_local: 1.0, disent_int: 1.0, disent_ext: 1.0, beta: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub geodesic: GeodesicConfig,
    /// Source rows of the geodesic terms; `None` compares full symmetrized matrices.
    pub landmarks: Option<Vec<usize>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), geodesic: GeodesicConfig::default(), landmarks: None }
    }
}

impl LossConfig {
    fn geodesic_output(&self) -> GeodesicNodeOutput {
        match &self.landmarks {
            None => GeodesicNodeOutput::AllPairs,
            Some(l) => GeodesicNodeOutput::Sources(l.clone()),
        }
    }
}

/// Unweighted loss components and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub interp_geo: f64,
    pub interp_local: f64,
    pub disent_int: f64,
    pub disent_ext: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.recon, self.interp_geo, self.interp_local, self.disent_int, self.disent_ext, self.kl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Ground truth of one training shape, in the layout the losses consume.
#[derive(Clone, Debug)]
pub struct ShapeTargets {
    pub subject: usize,
    pub d_euclid: DenseMatrix,
    /// Geodesic rows matching [`LossConfig::landmarks`].
    pub d_geo: DenseMatrix,
    pub mask: NeighborhoodMask,
}

impl ShapeTargets {
    pub fn new(mesh: &TriMesh, subject: usize, mask: NeighborhoodMask, cfg: &LossConfig) -> Result<Self> {
        let d_euclid = DistanceMatrix::euclidean(mesh.vertices()).into_values();
        let d_geo = match &cfg.landmarks {
            None => heat_distance_all(mesh, &cfg.geodesic)?.into_values(),
            Some(l) => HeatGeodesics::compute(mesh, l, &cfg.geodesic)?.distances().clone(),
        };
        Ok(Self { subject, d_euclid, d_geo, mask })
    }
}

pub fn euclid_dist_matrix<'t>(x: Var<'t>) -> Var<'t> {
    x.pairwise_dist()
}

fn rel_err_index(reference: &DenseMatrix, mask: Option<&NeighborhoodMask>) -> Result<(Vec<usize>, Vec<f64>)> {
    if let Some(m) = mask {
        if m.n() * m.n() != reference.len() {
            return Err(Error::Shape(format!("mask over {} vertices for a {:?} matrix", m.n(), reference.shape())));
        }
    }
    let tau = REL_ERR_TAU * reference.max_abs();
    let mut index = Vec::new();
    let mut weight = Vec::new();
    for (k, &r) in reference.as_slice().iter().enumerate() {
        if r > tau && mask.is_none_or(|m| m.as_slice()[k]) {
            index.push(k);
            weight.push(r * r);
        }
    }
    Ok((index, weight))
}

/// `sum (pred - target)^2 / reference^2` over entries with `reference > tau`
/// (and inside `mask` when given). `tau` is [`REL_ERR_TAU`] times the largest
/// reference entry, i.e. the diameter for Euclidean matrices.
pub fn rel_err<'t>(pred: Var<'t>, target: Var<'t>, reference: &DenseMatrix, mask: Option<&NeighborhoodMask>) -> Result<Var<'t>> {
    if pred.shape() != reference.shape() || target.shape() != reference.shape() {
        return Err(Error::Shape(format!(
            "rel_err: pred {:?}, target {:?}, reference {:?}",
            pred.shape(),
            target.shape(),
            reference.shape()
        )));
    }
    let (index, weight) = rel_err_index(reference, mask)?;
    let w = pred.tape().constant(DenseMatrix::column(&weight));
    let diff = pred.gather(index.clone())?.sub(&target.gather(index)?)?;
    Ok(diff.square().div(&w)?.sum())
}

/// Relative error of a predicted distance matrix against a fixed ground truth.
pub fn rel_dist_err<'t>(pred: Var<'t>, gt: &DenseMatrix) -> Result<Var<'t>> {
    let target = pred.tape().constant(gt.clone());
    rel_err(pred, target, gt, None)
}

/// `|pred - target|_F^2 / len`.
pub fn frobenius_mean<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let n = pred.value().len().max(1) as f64;
    Ok(pred.sub(&target)?.square().sum().scale(1.0 / n))
}

/// Reconstruction loss of one shape (rotation invariant).
pub fn loss_recon<'t>(decoded: Var<'t>, gt_euclid: &DenseMatrix) -> Result<Var<'t>> {
    rel_dist_err(euclid_dist_matrix(decoded), gt_euclid)
}

fn lerp<'t>(a: Var<'t>, b: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    a.scale(1.0 - alpha).add(&b.scale(alpha))
}

/// `(1 - alpha) x + alpha y` for constant matrices.
fn lerp_const(x: &DenseMatrix, y: &DenseMatrix, alpha: f64) -> DenseMatrix {
    x.zip_map(y, |a, b| (1.0 - alpha) * a + alpha * b)
}

/// Both interpolation discrepancies for decoded endpoints `xi`, `xj` and the
/// decoded interpolated code `xa`, all `n x 3`.
///
/// Geodesic: `|D_g(xa) - lerp(D_g(xi), D_g(xj))|_F^2 / len`. Local: relative
/// error of `D_E(xa)` against `lerp(D_E(xi), D_E(xj))` on the intersection of
/// both shapes' masks, normalized by the interpolated ground-truth distances.
pub struct InterpInputs<'a, 't> {
    pub xi: Var<'t>,
    pub xj: Var<'t>,
    pub xa: Var<'t>,
    pub alpha: f64,
    pub gt_i: &'a ShapeTargets,
    pub gt_j: &'a ShapeTargets,
    pub faces: &'a [[usize; 3]],
}

pub fn loss_interp<'t>(inp: &InterpInputs<'_, 't>, cfg: &LossConfig) -> Result<(Var<'t>, Var<'t>)> {
    let mut cache = DecodedCache::default();
    loss_interp_cached(inp, cfg, &mut cache, None)
}

/// Distances of decoded shapes reused across the terms of one step.
#[derive(Default)]
pub struct DecodedCache<'t> {
    geo: BTreeMap<usize, Var<'t>>,
    euclid: BTreeMap<usize, Var<'t>>,
}

impl<'t> DecodedCache<'t> {
    fn geo(&mut self, key: Option<usize>, x: Var<'t>, faces: &[[usize; 3]], cfg: &LossConfig) -> Result<Var<'t>> {
        if let Some(v) = key.and_then(|k| self.geo.get(&k)) {
            return Ok(*v);
        }
        let d = geodesic_node(&x, faces, &cfg.geodesic_output(), &cfg.geodesic)?;
        if let Some(k) = key {
            self.geo.insert(k, d);
        }
        Ok(d)
    }

    fn euclid(&mut self, key: Option<usize>, x: Var<'t>) -> Var<'t> {
        if let Some(v) = key.and_then(|k| self.euclid.get(&k)) {
            return *v;
        }
        let d = euclid_dist_matrix(x);
        if let Some(k) = key {
            self.euclid.insert(k, d);
        }
        d
    }
}

fn loss_interp_cached<'t>(
    inp: &InterpInputs<'_, 't>,
    cfg: &LossConfig,
    cache: &mut DecodedCache<'t>,
    keys: Option<(usize, usize)>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (ki, kj) = (keys.map(|k| k.0), keys.map(|k| k.1));
    let a = inp.alpha;
    let gi = cache.geo(ki, inp.xi, inp.faces, cfg)?;
    let gj = cache.geo(kj, inp.xj, inp.faces, cfg)?;
    let ga = cache.geo(None, inp.xa, inp.faces, cfg)?;
    let geo = frobenius_mean(ga, lerp(gi, gj, a)?)?;

    let ei = cache.euclid(ki, inp.xi);
    let ej = cache.euclid(kj, inp.xj);
    let ea = euclid_dist_matrix(inp.xa);
    let mask = inp.gt_i.mask.intersect(&inp.gt_j.mask)?;
    let reference = lerp_const(&inp.gt_i.d_euclid, &inp.gt_j.d_euclid, a);
    let local = rel_err(ea, lerp(ei, ej, a)?, &reference, Some(&mask))?;
    Ok((geo, local))
}

/// Intrinsic disentanglement: the decoding of
/// `(lerp(z_i_int, z_j_int) | z_i_ext)` must keep the Euclidean distances of
/// shape `i`.
pub fn loss_disent_int<'t>(decoded: Var<'t>, gt_i: &ShapeTargets) -> Result<Var<'t>> {
    rel_dist_err(euclid_dist_matrix(decoded), &gt_i.d_euclid)
}

/// Extrinsic disentanglement: the decoding of
/// `(z_i_int | lerp(z_i_ext, z_j_ext))` must keep the geodesic distances of
/// shape `i`.
pub fn loss_disent_ext<'t>(decoded: Var<'t>, gt_i: &ShapeTargets, faces: &[[usize; 3]], cfg: &LossConfig) -> Result<Var<'t>> {
    let d = geodesic_node(&decoded, faces, &cfg.geodesic_output(), &cfg.geodesic)?;
    let target = decoded.tape().constant(gt_i.d_geo.clone());
    frobenius_mean(d, target)
}

/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`, unweighted.
pub fn loss_kl<'t>(mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    let t = logvar.exp().add(&mu.square())?.sub(&logvar)?.add_scalar(-1.0);
    Ok(t.sum().scale(0.5))
}

/// Maps a `c x d` matrix of codes to `c x 3n` coordinates.
pub trait LatentDecoder<'t> {
    fn decode_codes(&self, codes: Var<'t>) -> Result<Var<'t>>;
}

impl<'t> LatentDecoder<'t> for crate::model::BoundModel<'t> {
    fn decode_codes(&self, codes: Var<'t>) -> Result<Var<'t>> {
        self.decode(codes)
    }
}

/// Encoded codes of the distinct shapes used by a batch.
pub struct BatchCodes<'t> {
    /// Dataset index of each row of `z`, `mu` and `logvar`.
    pub shapes: Vec<usize>,
    pub z: Var<'t>,
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

impl BatchCodes<'_> {
    fn row(&self, shape: usize) -> Result<usize> {
        self.shapes
            .iter()
            .position(|&s| s == shape)
            .ok_or_else(|| Error::InvalidArgument(format!("shape {shape} was not encoded for this batch")))
    }
}

/// Full objective of one optimization step.
pub fn loss_total<'t, D: LatentDecoder<'t>>(
    decoder: &D,
    codes: &BatchCodes<'t>,
    targets: &[ShapeTargets],
    faces: &[[usize; 3]],
    batch: &[PairSample],
    cfg: &LossConfig,
    stage: Stage,
) -> Result<(Var<'t>, LossBreakdown)> {
    let (b, d) = codes.z.shape();
    if b != codes.shapes.len() {
        return Err(Error::Shape(format!("{} code rows for {} shapes", b, codes.shapes.len())));
    }
    for p in batch {
        let (ti, tj) = (targets.get(p.i), targets.get(p.j));
        let (Some(ti), Some(tj)) = (ti, tj) else {
            return Err(Error::InvalidArgument(format!("pair ({}, {}) out of range", p.i, p.j)));
        };
        p.validate(ti.subject, tj.subject)?;
    }
    let tape = codes.z.tape();
    let s = split_index(d);
    let w = cfg.weights;
    let full = stage == Stage::Full;

    // Rows to decode: every encoded shape, then one mixed code per pair term.
    let mut rows = vec![codes.z];
    let zrow = |shape: usize| -> Result<Var<'t>> { codes.z.slice_rows(codes.row(shape)?, 1) };
    let mut mixed: Vec<(PairSample, usize)> = Vec::new();
    if full {
        for p in batch {
            let (zi, zj) = (zrow(p.i)?, zrow(p.j)?);
            if p.kind == PairKind::Any {
                rows.push(lerp(zi, zj, p.alpha)?);
                mixed.push((*p, mixed.len()));
            }
            if p.kind == PairKind::Isometric {
                let zint = lerp(zi.slice_cols(0, s)?, zj.slice_cols(0, s)?, p.alpha)?;
                rows.push(Var::concat_cols(&[zint, zi.slice_cols(s, d - s)?])?);
                mixed.push((*p, mixed.len()));
            }
            if p.kind == PairKind::NonIsometric {
                let zext = lerp(zi.slice_cols(s, d - s)?, zj.slice_cols(s, d - s)?, p.alpha)?;
                rows.push(Var::concat_cols(&[zi.slice_cols(0, s)?, zext])?);
                mixed.push((*p, mixed.len()));
            }
        }
    }
    let all = if rows.len() == 1 { codes.z } else { Var::concat_rows(&rows)? };
    let decoded = decoder.decode_codes(all)?;
    let n3 = decoded.shape().1;
    let shape_of = |row: usize| -> Result<Var<'t>> { decoded.slice_rows(row, 1)?.reshape(n3 / 3, 3) };

    let mut cache = DecodedCache::default();
    let zero = || tape.scalar(0.0);
    let mut recon = zero();
    let decoded_shapes: Vec<Var<'t>> = (0..b).map(shape_of).collect::<Result<_>>()?;
    for (k, &shape) in codes.shapes.iter().enumerate() {
        let e = cache.euclid(Some(shape), decoded_shapes[k]);
        recon = recon.add(&rel_dist_err(e, &targets[shape].d_euclid)?)?;
    }
    let kl = loss_kl(codes.mu, codes.logvar)?;

    let (mut igeo, mut iloc, mut dint, mut dext) = (zero(), zero(), zero(), zero());
    for (p, m) in &mixed {
        let x = shape_of(b + m)?;
        let (gi, gj) = (&targets[p.i], &targets[p.j]);
        match p.kind {
            PairKind::Any => {
                let inp = InterpInputs {
                    xi: decoded_shapes[codes.row(p.i)?],
                    xj: decoded_shapes[codes.row(p.j)?],
                    xa: x,
                    alpha: p.alpha,
                    gt_i: gi,
                    gt_j: gj,
                    faces,
                };
                let (g, l) = loss_interp_cached(&inp, cfg, &mut cache, Some((p.i, p.j)))?;
                igeo = igeo.add(&g)?;
                iloc = iloc.add(&l)?;
            }
            PairKind::Isometric => dint = dint.add(&loss_disent_int(x, gi)?)?,
            PairKind::NonIsometric => dext = dext.add(&loss_disent_ext(x, gi, faces, cfg)?)?,
        }
    }

    let mut total = recon.scale(w.recon).add(&kl.scale(w.beta))?;
    if full {
        for (v, wt) in [(igeo, w.interp_geo), (iloc, w.interp_local), (dint, w.disent_int), (dext, w.disent_ext)] {
            total = total.add(&v.scale(wt))?;
        }
    }
    let breakdown = LossBreakdown {
        recon: recon.item(),
        interp_geo: igeo.item(),
        interp_local: iloc.item(),
        disent_int: dint.item(),
        disent_ext: dext.item(),
        kl: kl.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}
