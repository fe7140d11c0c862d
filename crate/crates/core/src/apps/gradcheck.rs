use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{geodesic_node, grad_check, GeodesicNodeOutput, GradCheckReport};
use crate::error::Result;
use crate::geodesics::GeodesicConfig;
use crate::linalg::DenseMatrix;
use crate::losses::{loss_disent_ext, loss_disent_int, loss_interp, loss_kl, loss_recon, InterpInputs, LossConfig, ShapeTargets};
use crate::mesh::{flat_grid, neighborhood_mask, TriMesh};
use crate::model::points_matrix;

/// Relative tolerance of [`gradient_checks`].
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// 6 x 5 patch with a random crease and jitter.
fn patch(rng: &mut ChaCha8Rng) -> TriMesh {
    let g = flat_grid(6, 5, 1.0);
    let fold: f64 = rng.random_range(-0.8..0.8);
    let v = g
        .vertices()
        .iter()
        .map(|p| {
            let z = 0.04 * (rng.random::<f64>() - 0.5);
            let s = p[0] - 0.5;
            if s <= 0.0 { [p[0], p[1], z] } else { [0.5 + s * fold.cos(), p[1], z + s * fold.sin()] }
        })
        .collect();
    g.with_vertices(v).expect("jittered grid keeps its faces")
}

/// Central-difference checks of the geodesic operator and every loss term
/// on 30-vertex patches drawn from `seed`.
pub fn gradient_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meshes: Vec<TriMesh> = (0..3).map(|_| patch(&mut rng)).collect();
    let faces = meshes[0].faces().to_vec();
    let n = meshes[0].n_vertices();
    let cfg = LossConfig::default();
    let geo = GeodesicConfig::default();
    let t: Vec<ShapeTargets> = meshes
        .iter()
        .enumerate()
        .map(|(k, m)| ShapeTargets::new(m, k, neighborhood_mask(m, 0.3)?, &cfg))
        .collect::<Result<_>>()?;
    let pts: Vec<DenseMatrix> = meshes.iter().map(|m| points_matrix(m.vertices())).collect();
    let w = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let alpha = rng.random_range(0.1..0.9);
    let mu = DenseMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
    let lv = DenseMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
    let (h, tol) = (1e-6, GRAD_CHECK_TOLERANCE);
    let x0 = vec![pts[0].clone()];
    let x3 = pts.clone();

    let mut out = Vec::new();
    {
        let faces = faces.clone();
        out.push((
            "heat_distance",
            grad_check(
                move |tape, v| {
                    let d = geodesic_node(&v[0], &faces, &GeodesicNodeOutput::AllPairs, &geo)?;
                    Ok(d.mul(&tape.constant(w.clone()))?.sum())
                },
                &x0,
                h,
                tol,
            )?,
        ));
    }
    let gt = t[1].clone();
    out.push(("recon", grad_check(move |_, v| loss_recon(v[0], &gt.d_euclid), &x0, h, tol)?));
    for (name, pick_geo) in [("interp_geo", true), ("interp_local", false)] {
        let (ti, tj, faces, cfg) = (t[1].clone(), t[2].clone(), faces.clone(), cfg.clone());
        let report = grad_check(
            move |_, v| {
                let inp = InterpInputs { xi: v[0], xj: v[1], xa: v[2], alpha, gt_i: &ti, gt_j: &tj, faces: &faces };
                let (g, l) = loss_interp(&inp, &cfg)?;
                Ok(if pick_geo { g } else { l })
            },
            &x3,
            h,
            tol,
        )?;
        out.push((name, report));
    }
    let gt = t[2].clone();
    out.push(("disent_int", grad_check(move |_, v| loss_disent_int(v[0], &gt), &x0, h, tol)?));
    let (gt, faces2, cfg2) = (t[2].clone(), faces.clone(), cfg.clone());
    out.push(("disent_ext", grad_check(move |_, v| loss_disent_ext(v[0], &gt, &faces2, &cfg2), &x0, h, tol)?));
    out.push(("kl", grad_check(|_, v| loss_kl(v[0], v[1]), &[mu, lv], h, tol)?));
    Ok(out)
}
