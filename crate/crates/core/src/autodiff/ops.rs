use super::{shape_err, Node, Op, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix};

impl<'t> Var<'t> {
    fn elementwise(&self, other: &Var<'t>, name: &str, op: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(name, a.shape(), b.shape()));
        }
        Ok(self.binary(other, a.zip_map(&b, f), op(self.id, other.id)))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul, |x, y| x * y)
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "div", Op::Div, |x, y| x / y)
    }

    /// Adds the `1 x c` row `bias` to every row.
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias)?;
        let (a, b) = (self.value(), bias.value());
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(shape_err("add_row", a.shape(), b.shape()));
        }
        let mut out = (*a).clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                *o += x;
            }
        }
        Ok(self.binary(bias, out, Op::AddRow(self.id, bias.id)))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(self.value().scale(s), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x + s), Op::AddScalar(self.id))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        gemm(1.0, &a, false, &b, false, 0.0, &mut out);
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        self.unary(self.value().transpose(), Op::Transpose(self.id))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let rows = vals[0].rows();
        for (p, v) in parts.iter().zip(&vals) {
            first.same_tape(p)?;
            if v.rows() != rows {
                return Err(shape_err("concat_cols", vals[0].shape(), v.shape()));
            }
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for v in &vals {
                out.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
                c0 += v.cols();
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.any_requires_grad(&ids);
        Ok(first.tape.push(out, rg, Op::ConcatCols(ids)))
    }

    /// Vertical concatenation.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let cols = vals[0].cols();
        let mut data = Vec::with_capacity(vals.iter().map(|v| v.len()).sum());
        for (p, v) in parts.iter().zip(&vals) {
            first.same_tape(p)?;
            if v.cols() != cols {
                return Err(shape_err("concat_rows", vals[0].shape(), v.shape()));
            }
            data.extend_from_slice(v.as_slice());
        }
        let rows = data.len() / cols.max(1);
        let out = DenseMatrix::from_vec(rows, cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.any_requires_grad(&ids);
        Ok(first.tape.push(out, rg, Op::ConcatRows(ids)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if start + len > a.cols() {
            return Err(Error::Shape(format!("slice_cols {start}..{} of {}x{}", start + len, a.rows(), a.cols())));
        }
        let out = DenseMatrix::from_fn(a.rows(), len, |r, c| a[(r, start + c)]);
        Ok(self.unary(out, Op::SliceCols { src: self.id, start }))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if start + len > a.rows() {
            return Err(Error::Shape(format!("slice_rows {start}..{} of {}x{}", start + len, a.rows(), a.cols())));
        }
        let c = a.cols();
        let out = DenseMatrix::from_vec(len, c, a.as_slice()[start * c..(start + len) * c].to_vec())?;
        Ok(self.unary(out, Op::SliceRows { src: self.id, start }))
    }

    /// Same row-major data viewed as `rows x cols`.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(rows, cols)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    /// Maximum of each row (`r x 1`); ties go to the lowest column.
    pub fn row_max(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.cols() == 0 {
            return Err(Error::Shape("row_max of a matrix without columns".into()));
        }
        let mut argmax = Vec::with_capacity(a.rows());
        let mut out = Vec::with_capacity(a.rows());
        for r in 0..a.rows() {
            let (k, v) = first_max(a.row(r).iter().copied());
            argmax.push(k);
            out.push(v);
        }
        Ok(self.unary(DenseMatrix::column(&out), Op::RowMax { src: self.id, argmax }))
    }

    /// Column-wise maximum over consecutive blocks of `group` rows:
    /// `(g * group) x c -> g x c`. Ties go to the lowest row.
    pub fn group_max(&self, group: usize) -> Result<Var<'t>> {
        let a = self.value();
        if group == 0 || a.rows() % group != 0 {
            return Err(Error::Shape(format!("group_max: {} rows in groups of {group}", a.rows())));
        }
        let (g, c) = (a.rows() / group, a.cols());
        let mut out = DenseMatrix::zeros(g, c);
        let mut argmax = vec![0; g * c];
        for b in 0..g {
            let (best, idx) = (&mut out.row_mut(b)[..], &mut argmax[b * c..(b + 1) * c]);
            best.copy_from_slice(a.row(b * group));
            idx.fill(b * group);
            for r in b * group + 1..(b + 1) * group {
                for (k, &x) in a.row(r).iter().enumerate() {
                    if x > best[k] {
                        best[k] = x;
                        idx[k] = r;
                    }
                }
            }
        }
        Ok(self.unary(out, Op::GroupMax { src: self.id, argmax }))
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&self) -> Var<'t> {
        self.unary(self.value().map(|x| if x > 0.0 { x } else { x.exp_m1() }), Op::Elu(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x * x), Op::Square(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(DenseMatrix::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let n = a.len().max(1) as f64;
        self.unary(DenseMatrix::scalar(a.sum() / n), Op::Mean(self.id))
    }

    /// Entries where `mask` is true, in row-major order, as a column.
    pub fn masked_select(&self, mask: &[bool]) -> Result<Var<'t>> {
        let a = self.value();
        if mask.len() != a.len() {
            return Err(Error::Shape(format!("masked_select: mask of {} for {}x{}", mask.len(), a.rows(), a.cols())));
        }
        let index: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        self.gather(index)
    }

    /// Entries at the given row-major positions, as a column.
    pub fn gather(&self, index: Vec<usize>) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(&bad) = index.iter().find(|&&i| i >= a.len()) {
            return Err(Error::Shape(format!("gather index {bad} out of {} entries", a.len())));
        }
        let vals: Vec<f64> = index.iter().map(|&i| a.as_slice()[i]).collect();
        Ok(self.unary(DenseMatrix::column(&vals), Op::MaskedSelect { src: self.id, index }))
    }

    /// `D[i][j] = |x_i - x_j|` over the rows of an `n x c` matrix.
    pub fn pairwise_dist(&self) -> Var<'t> {
        let x = self.value();
        let n = x.rows();
        let mut d = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                let v = s.sqrt();
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        self.unary(d, Op::PairwiseDist(self.id))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(&bad) = rows.iter().find(|&&r| r >= a.rows()) {
            return Err(Error::Shape(format!("select_rows: row {bad} of {}x{}", a.rows(), a.cols())));
        }
        let c = a.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(a.row(r));
        }
        let out = DenseMatrix::from_vec(rows.len(), c, data)?;
        Ok(self.unary(out, Op::SelectRows { src: self.id, rows: rows.to_vec() }))
    }
}

fn first_max(it: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, x) in it.enumerate() {
        if k == 0 || x > best.1 {
            best = (k, x);
        }
    }
    best
}

/// Adjoints of a node's parents given its own adjoint `g`.
pub(super) fn vjp(nodes: &[Node], node: &Node, g: &DenseMatrix) -> Result<Vec<(usize, DenseMatrix)>> {
    let val = |i: usize| &*nodes[i].value;
    let y = &*node.value;
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
        Op::Mul(a, b) => vec![(*a, g.zip_map(val(*b), |g, y| g * y)), (*b, g.zip_map(val(*a), |g, x| g * x))],
        Op::Div(a, b) => {
            let bv = val(*b);
            let ga = g.zip_map(bv, |g, d| g / d);
            let gb = ga.zip_map(y, |ga, q| -ga * q);
            vec![(*a, ga), (*b, gb)]
        }
        Op::AddRow(a, b) => {
            let mut gb = DenseMatrix::zeros(1, g.cols());
            for r in 0..g.rows() {
                for (o, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
            vec![(*a, g.clone()), (*b, gb)]
        }
        Op::Scale(a, s) => vec![(*a, g.scale(*s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
            gemm(1.0, g, false, bv, true, 0.0, &mut ga);
            let mut gb = DenseMatrix::zeros(bv.rows(), bv.cols());
            gemm(1.0, av, true, g, false, 0.0, &mut gb);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::ConcatCols(ids) => {
            let mut c0 = 0;
            ids.iter()
                .map(|&i| {
                    let w = val(i).cols();
                    let part = DenseMatrix::from_fn(g.rows(), w, |r, c| g[(r, c0 + c)]);
                    c0 += w;
                    (i, part)
                })
                .collect()
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            let mut out = Vec::with_capacity(ids.len());
            for &i in ids {
                let n = val(i).len();
                out.push((i, DenseMatrix::from_vec(val(i).rows(), val(i).cols(), g.as_slice()[off..off + n].to_vec())?));
                off += n;
            }
            out
        }
        Op::SliceCols { src, start } => {
            let s = val(*src);
            let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
            for r in 0..g.rows() {
                gs.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
            }
            vec![(*src, gs)]
        }
        Op::SliceRows { src, start } => {
            let s = val(*src);
            let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
            let c = s.cols();
            gs.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
            vec![(*src, gs)]
        }
        Op::Reshape(a) => {
            let s = val(*a);
            vec![(*a, g.clone().reshape(s.rows(), s.cols())?)]
        }
        Op::RowMax { src, argmax } => {
            let s = val(*src);
            let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
            for (r, &k) in argmax.iter().enumerate() {
                gs[(r, k)] = g[(r, 0)];
            }
            vec![(*src, gs)]
        }
        Op::GroupMax { src, argmax } => {
            let s = val(*src);
            let c = s.cols();
            let mut gs = DenseMatrix::zeros(s.rows(), c);
            for (k, &r) in argmax.iter().enumerate() {
                gs[(r, k % c)] += g.as_slice()[k];
            }
            vec![(*src, gs)]
        }
        Op::Elu(a) => vec![(*a, g.zip_map(y, |g, y| if y > 0.0 { g } else { g * (y + 1.0) }))],
        Op::Tanh(a) => vec![(*a, g.zip_map(y, |g, y| g * (1.0 - y * y)))],
        Op::Exp(a) => vec![(*a, g.zip_map(y, |g, y| g * y))],
        Op::Square(a) => vec![(*a, g.zip_map(val(*a), |g, x| 2.0 * g * x))],
        Op::Sqrt(a) => vec![(*a, g.zip_map(y, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }))],
        Op::Sum(a) => {
            let s = val(*a);
            vec![(*a, DenseMatrix::filled(s.rows(), s.cols(), g.item()))]
        }
        Op::Mean(a) => {
            let s = val(*a);
            vec![(*a, DenseMatrix::filled(s.rows(), s.cols(), g.item() / s.len().max(1) as f64))]
        }
        Op::MaskedSelect { src, index } => {
            let s = val(*src);
            let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
            let out = gs.as_mut_slice();
            for (&i, &gv) in index.iter().zip(g.as_slice()) {
                out[i] += gv;
            }
            vec![(*src, gs)]
        }
        Op::PairwiseDist(a) => {
            let x = val(*a);
            let (n, c) = x.shape();
            let mut gx = DenseMatrix::zeros(n, c);
            for i in 0..n {
                for j in i + 1..n {
                    let d = y[(i, j)];
                    if d <= 0.0 {
                        continue;
                    }
                    let w = (g[(i, j)] + g[(j, i)]) / d;
                    for k in 0..c {
                        let t = w * (x[(i, k)] - x[(j, k)]);
                        gx[(i, k)] += t;
                        gx[(j, k)] -= t;
                    }
                }
            }
            vec![(*a, gx)]
        }
        Op::SelectRows { src, rows } => {
            let s = val(*src);
            let mut gs = DenseMatrix::zeros(s.rows(), s.cols());
            for (k, &r) in rows.iter().enumerate() {
                for (o, x) in gs.row_mut(r).iter_mut().zip(g.row(k)) {
                    *o += x;
                }
            }
            vec![(*src, gs)]
        }
        Op::Custom { parents, op } => {
            let inputs: Vec<&DenseMatrix> = parents.iter().map(|&p| val(p)).collect();
            let grads = op.backward(&inputs, y, g)?;
            if grads.len() != parents.len() {
                return Err(Error::Shape(format!("{}: {} adjoints for {} inputs", op.name(), grads.len(), parents.len())));
            }
            parents.iter().zip(grads).filter_map(|(&p, gp)| gp.map(|gp| (p, gp))).collect()
        }
    })
}
