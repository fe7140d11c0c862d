use super::{shape_err, CustomOp, Var};
use crate::error::{Error, Result};
use crate::geodesics::{symmetrize, GeodesicConfig, HeatGeodesics};
use crate::linalg::{factor_lu, gemm, DenseMatrix, Factorization};
use crate::mesh::TriMesh;

struct SolveOp {
    fact: Factorization,
}

impl CustomOp for SolveOp {
    fn name(&self) -> &str {
        "solve"
    }

    fn backward(&self, _inputs: &[&DenseMatrix], x: &DenseMatrix, g: &DenseMatrix) -> Result<Vec<Option<DenseMatrix>>> {
        let gb = self.fact.solve_transpose_multi(g)?;
        let mut ga = DenseMatrix::zeros(gb.rows(), x.rows());
        gemm(-1.0, &gb, false, x, true, 0.0, &mut ga);
        Ok(vec![Some(ga), Some(gb)])
    }
}

/// `x = A^{-1} b` through a dense LU factorization.
pub fn solve_node<'t>(a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    if av.rows() != av.cols() || bv.rows() != av.rows() {
        return Err(shape_err("solve", av.shape(), bv.shape()));
    }
    let fact = factor_lu(&av)?;
    let x = fact.solve_multi(&bv)?;
    Ok(a.tape().custom(&[*a, *b], x, Box::new(SolveOp { fact })))
}

struct GeodesicOp {
    heat: HeatGeodesics,
    symmetric: bool,
}

impl CustomOp for GeodesicOp {
    fn name(&self) -> &str {
        "geodesic"
    }

    fn backward(&self, _inputs: &[&DenseMatrix], _y: &DenseMatrix, g: &DenseMatrix) -> Result<Vec<Option<DenseMatrix>>> {
        let grad = if self.symmetric { self.heat.vjp(&symmetrize(g))? } else { self.heat.vjp(g)? };
        let flat = grad.into_iter().flatten().collect();
        Ok(vec![Some(DenseMatrix::from_vec(self.heat.n_vertices(), 3, flat)?)])
    }
}

/// Which rows of the geodesic matrix a [`geodesic_node`] produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeodesicNodeOutput {
    /// Symmetrized all-pairs matrix, `n x n`.
    AllPairs,
    /// Unsymmetrized rows for the listed sources, `k x n`.
    Sources(Vec<usize>),
}

/// Heat-method distances of the mesh with vertex positions `x` (`n x 3`) and
/// the given faces.
pub fn geodesic_node<'t>(
    x: &Var<'t>,
    faces: &[[usize; 3]],
    output: &GeodesicNodeOutput,
    cfg: &GeodesicConfig,
) -> Result<Var<'t>> {
    let xv = x.value();
    if xv.cols() != 3 {
        return Err(Error::Shape(format!("geodesic input must be n x 3, got {}x{}", xv.rows(), xv.cols())));
    }
    if !xv.is_finite() {
        return Err(Error::NonFinite("vertex positions fed to geodesics".into()));
    }
    let verts = (0..xv.rows()).map(|r| [xv[(r, 0)], xv[(r, 1)], xv[(r, 2)]]).collect();
    let mesh = TriMesh::from_parts(verts, faces.to_vec())?;
    let (sources, symmetric) = match output {
        GeodesicNodeOutput::AllPairs => ((0..mesh.n_vertices()).collect(), true),
        GeodesicNodeOutput::Sources(s) => (s.clone(), false),
    };
    let heat = HeatGeodesics::compute(&mesh, &sources, cfg)?;
    let value = if symmetric { symmetrize(heat.distances()) } else { heat.distances().clone() };
    Ok(x.tape().custom(&[*x], value, Box::new(GeodesicOp { heat, symmetric })))
}
