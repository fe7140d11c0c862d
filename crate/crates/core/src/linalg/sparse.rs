use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Compressed-row sparse matrix built from `(row, col, value)` triplets.
///
/// Duplicate coordinates are summed during construction; column indices are
/// sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) out of range for {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("triplet ({r}, {c}) = {v}")));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty after first push") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// `alpha * self + beta * other`; the sparsity patterns are merged.
    pub fn linear_combination(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "{}x{} plus {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let triplets: Vec<_> = self
            .iter()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.iter().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    /// Largest `|A_ij - A_ji|` relative to the largest `|A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.iter().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn empty_is_zero_matrix() {
        let m = SparseMatrix::from_triplets(3, 4, &[]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.to_dense(), DenseMatrix::zeros(3, 4));
    }

    #[test]
    fn out_of_range_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn canonical_order_independent_of_input_order() {
        let a = SparseMatrix::from_triplets(3, 3, &[(2, 1, 1.0), (0, 2, 4.0), (2, 0, -1.0)]).unwrap();
        let b = SparseMatrix::from_triplets(3, 3, &[(0, 2, 4.0), (2, 0, -1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(a, b);
        let entries: Vec<_> = a.iter().collect();
        assert_eq!(entries, vec![(0, 2, 4.0), (2, 0, -1.0), (2, 1, 1.0)]);
    }
}
