//! Direct solvers.
//!
//! Dense Cholesky and LU are the reference paths. [`EnvelopeCholesky`] is the
//! sparse fast path: a reverse Cuthill-McKee reordering followed by a
//! profile (skyline) factorization, which keeps fill confined to the band
//! that mesh Laplacians naturally have.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};

/// Relative symmetry tolerance accepted by the SPD factorizations.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A reusable factorization of a square matrix.
#[derive(Clone, Debug)]
pub enum Factorization {
    DenseCholesky(DenseCholesky),
    DenseLu(DenseLu),
    Envelope(EnvelopeCholesky),
}

impl Factorization {
    pub fn dim(&self) -> usize {
        match self {
            Factorization::DenseCholesky(f) => f.n,
            Factorization::DenseLu(f) => f.n,
            Factorization::Envelope(f) => f.n,
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::Shape(format!("rhs length {} for a {}-dim system", b.len(), self.dim())));
        }
        let mut x = DenseMatrix::column(b);
        self.solve_in_place(&mut x);
        Ok(x.into_vec())
    }

    /// Solves for every column of `b` (n x k).
    pub fn solve_multi(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.dim() {
            return Err(Error::Shape(format!("rhs has {} rows for a {}-dim system", b.rows(), self.dim())));
        }
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Solves `A^T x = b` column-wise.
    pub fn solve_transpose_multi(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Factorization::DenseLu(lu) => {
                if b.rows() != lu.n {
                    return Err(Error::Shape(format!("rhs has {} rows for a {}-dim system", b.rows(), lu.n)));
                }
                let mut x = b.clone();
                lu.solve_transpose_in_place(&mut x);
                Ok(x)
            }
            // symmetric
            _ => self.solve_multi(b),
        }
    }

    fn solve_in_place(&self, x: &mut DenseMatrix) {
        match self {
            Factorization::DenseCholesky(f) => f.solve_in_place(x),
            Factorization::DenseLu(f) => f.solve_in_place(x),
            Factorization::Envelope(f) => f.solve_in_place(x),
        }
    }
}

/// Factors a sparse symmetric positive-definite matrix (sparse path).
pub fn factor_spd(a: &SparseMatrix) -> Result<Factorization> {
    check_square_symmetric(a)?;
    Ok(Factorization::Envelope(EnvelopeCholesky::factor(a)?))
}

/// Factors a dense symmetric positive-definite matrix (reference path).
pub fn factor_spd_dense(a: &DenseMatrix) -> Result<Factorization> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", a.rows(), a.cols())));
    }
    let scale = a.max_abs();
    for i in 0..a.rows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(Factorization::DenseCholesky(DenseCholesky::factor(a)?))
}

/// LU with partial pivoting for general square matrices.
pub fn factor_lu(a: &DenseMatrix) -> Result<Factorization> {
    Ok(Factorization::DenseLu(DenseLu::factor(a)?))
}

fn check_square_symmetric(a: &SparseMatrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", a.rows(), a.cols())));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidArgument(format!("matrix not symmetric (relative asymmetry {asym:e})")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    /// Lower factor, row-major.
    l: DenseMatrix,
}

impl DenseCholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotSpd { index: i, value: s });
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Self { n, l })
    }

    fn solve_in_place(&self, x: &mut DenseMatrix) {
        let k = x.cols();
        let n = self.n;
        for i in 0..n {
            for j in 0..i {
                let lij = self.l[(i, j)];
                if lij != 0.0 {
                    for c in 0..k {
                        x[(i, c)] -= lij * x[(j, c)];
                    }
                }
            }
            let d = self.l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        for i in (0..n).rev() {
            let d = self.l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
            for j in 0..i {
                let lij = self.l[(i, j)];
                if lij != 0.0 {
                    for c in 0..k {
                        x[(j, c)] -= lij * x[(i, c)];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: DenseMatrix,
    /// Row `i` of the factored matrix is row `piv[i]` of the input.
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape(format!("{}x{} matrix is not square", a.rows(), a.cols())));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let (p, pmax) = (col..n)
                .map(|r| (r, lu[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= scale * 1e-14 || !pmax.is_finite() {
                return Err(Error::Singular { index: col });
            }
            if p != col {
                for c in 0..n {
                    let tmp = lu[(p, c)];
                    lu[(p, c)] = lu[(col, c)];
                    lu[(col, c)] = tmp;
                }
                piv.swap(p, col);
            }
            let d = lu[(col, col)];
            for r in col + 1..n {
                let f = lu[(r, col)] / d;
                lu[(r, col)] = f;
                if f != 0.0 {
                    for c in col + 1..n {
                        lu[(r, c)] -= f * lu[(col, c)];
                    }
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    fn solve_in_place(&self, x: &mut DenseMatrix) {
        let n = self.n;
        let k = x.cols();
        let mut permuted = DenseMatrix::zeros(n, k);
        for i in 0..n {
            permuted.row_mut(i).copy_from_slice(x.row(self.piv[i]));
        }
        *x = permuted;
        for i in 0..n {
            for j in 0..i {
                let f = self.lu[(i, j)];
                if f != 0.0 {
                    for c in 0..k {
                        x[(i, c)] -= f * x[(j, c)];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let f = self.lu[(i, j)];
                if f != 0.0 {
                    for c in 0..k {
                        x[(i, c)] -= f * x[(j, c)];
                    }
                }
            }
            let d = self.lu[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
    }

    /// `A^T x = b` with `P A = L U`  =>  `A^T = U^T L^T P`.
    fn solve_transpose_in_place(&self, x: &mut DenseMatrix) {
        let n = self.n;
        let k = x.cols();
        for i in 0..n {
            for j in 0..i {
                let f = self.lu[(j, i)];
                if f != 0.0 {
                    for c in 0..k {
                        x[(i, c)] -= f * x[(j, c)];
                    }
                }
            }
            let d = self.lu[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let f = self.lu[(j, i)];
                if f != 0.0 {
                    for c in 0..k {
                        x[(i, c)] -= f * x[(j, c)];
                    }
                }
            }
        }
        let mut out = DenseMatrix::zeros(n, k);
        for i in 0..n {
            out.row_mut(self.piv[i]).copy_from_slice(x.row(i));
        }
        *x = out;
    }
}

/// Profile Cholesky `P A P^T = L L^T` with a reverse Cuthill-McKee `P`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// First stored column of each row of `L`.
    first: Vec<usize>,
    /// Offset of each row's first stored entry in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (r, c, _) in a.iter() {
            let (i, j) = (inv[r], inv[c]);
            if j < i {
                first[i] = first[i].min(j);
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; offset[n]];
        for (r, c, v) in a.iter() {
            let (i, j) = (inv[r], inv[c]);
            if j <= i {
                values[offset[i] + (j - first[i])] = v;
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let row_i = offset[i] - fi;
                let row_j = offset[j] - fj;
                let mut s = values[row_i + j];
                for k in start..j {
                    s -= values[row_i + k] * values[row_j + k];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotSpd { index: perm[i], value: s });
                    }
                    values[row_i + i] = s.sqrt();
                } else {
                    values[row_i + j] = s / values[row_j + j];
                }
            }
        }
        Ok(Self { n, perm, first, offset, values })
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    fn solve_in_place(&self, x: &mut DenseMatrix) {
        let n = self.n;
        let k = x.cols();
        let mut y = DenseMatrix::zeros(n, k);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(x.row(self.perm[i]));
        }
        let ys = y.as_mut_slice();
        // forward: L y = P b
        for i in 0..n {
            let fi = self.first[i];
            let base = self.offset[i] - fi;
            let (done, rest) = ys.split_at_mut(i * k);
            let yi = &mut rest[..k];
            for j in fi..i {
                let l = self.values[base + j];
                if l != 0.0 {
                    let yj = &done[j * k..(j + 1) * k];
                    for c in 0..k {
                        yi[c] -= l * yj[c];
                    }
                }
            }
            let d = self.values[base + i];
            yi.iter_mut().for_each(|v| *v /= d);
        }
        // backward: L^T z = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let base = self.offset[i] - fi;
            let d = self.values[base + i];
            let (head, rest) = ys.split_at_mut(i * k);
            let yi = &mut rest[..k];
            yi.iter_mut().for_each(|v| *v /= d);
            for j in fi..i {
                let l = self.values[base + j];
                if l != 0.0 {
                    let yj = &mut head[j * k..(j + 1) * k];
                    for c in 0..k {
                        yj[c] -= l * yi[c];
                    }
                }
            }
        }
        for i in 0..n {
            x.row_mut(self.perm[i]).copy_from_slice(y.row(i));
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // (last node reached, eccentricity)
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            if dist[u] > dist[last] || (dist[u] == dist[last] && degree[u] < degree[last]) {
                last = u;
            }
            for &v in &adj[u] {
                if !visited[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (last, dist[last])
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited vertex exists");
        // pseudo-peripheral start
        let mut start = seed;
        let mut ecc = bfs_levels(start, &visited).1;
        for _ in 0..8 {
            let (far, _) = bfs_levels(start, &visited);
            let far_ecc = bfs_levels(far, &visited).1;
            if far_ecc > ecc {
                start = far;
                ecc = far_ecc;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (degree[v], v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}
