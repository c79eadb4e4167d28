//! Linear analysis operators `K`, available both matrix-free and as an
//! explicit sparse matrix.

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix. Only what the regularizer needs: products,
/// row access and dense extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < ncols);
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (j, m[(i, j)])).collect())
            .collect();
        Self::from_rows(m.ncols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.nrows, |i, _| self.row(i).map(|(c, v)| v * x[c]).sum())
    }

    pub fn tr_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let yi = y[i];
            if yi != 0.0 {
                for (c, v) in self.row(i) {
                    out[c] += v * yi;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }

    /// Dense `n x cols.len()` matrix whose columns are the given rows of this
    /// matrix, i.e. the corresponding columns of the transpose.
    pub fn transpose_columns(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.ncols, rows.len());
        for (j, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                m[(c, j)] += v;
            }
        }
        m
    }

    /// Rows of `K K^T` as sparse (column, value) lists.
    pub fn gram_rows(&self) -> Vec<Vec<(usize, f64)>> {
        // column -> rows touching it
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                by_col[c].push((i, v));
            }
        }
        let mut acc = vec![0.0; self.nrows];
        let mut seen = vec![false; self.nrows];
        let mut touched = Vec::new();
        (0..self.nrows)
            .map(|i| {
                for (c, v) in self.row(i) {
                    for &(j, w) in &by_col[c] {
                        if !seen[j] {
                            seen[j] = true;
                            touched.push(j);
                        }
                        acc[j] += v * w;
                    }
                }
                touched.sort_unstable();
                let row = touched
                    .iter()
                    .filter(|&&j| acc[j] != 0.0)
                    .map(|&j| (j, acc[j]))
                    .collect();
                for &j in &touched {
                    acc[j] = 0.0;
                    seen[j] = false;
                }
                touched.clear();
                row
            })
            .collect()
    }
}

/// Structured appliers; `Sparse` covers user-given matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    /// Forward differences `u[i+1] - u[i]`.
    ForwardDiff1d {
        n: usize,
    },
    /// Per pixel (row-major): `[u(i,j+1) - u(i,j)]` if `j+1 < cols`, then
    /// `[u(i+1,j) - u(i,j)]` if `i+1 < rows`.
    ForwardDiff2d {
        rows: usize,
        cols: usize,
    },
    Identity {
        n: usize,
    },
    Sparse(CsrMatrix),
}

impl Operator {
    pub fn ncols(&self) -> usize {
        match self {
            Operator::ForwardDiff1d { n } | Operator::Identity { n } => *n,
            Operator::ForwardDiff2d { rows, cols } => rows * cols,
            Operator::Sparse(m) => m.ncols(),
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            Operator::ForwardDiff1d { n } => n.saturating_sub(1),
            Operator::Identity { n } => *n,
            Operator::ForwardDiff2d { rows, cols } => {
                rows * cols.saturating_sub(1) + rows.saturating_sub(1) * cols
            }
            Operator::Sparse(m) => m.nrows(),
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::ForwardDiff1d { n } => {
                DVector::from_fn(n.saturating_sub(1), |i, _| u[i + 1] - u[i])
            }
            Operator::Identity { .. } => u.clone(),
            Operator::ForwardDiff2d { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut out = DVector::zeros(self.nrows());
                let mut k = 0;
                for i in 0..r {
                    for j in 0..c {
                        let here = u[i * c + j];
                        if j + 1 < c {
                            out[k] = u[i * c + j + 1] - here;
                            k += 1;
                        }
                        if i + 1 < r {
                            out[k] = u[(i + 1) * c + j] - here;
                            k += 1;
                        }
                    }
                }
                out
            }
            Operator::Sparse(m) => m.mul_vec(u),
        }
    }

    pub fn apply_transpose(&self, q: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::ForwardDiff1d { n } => {
                let n = *n;
                let mut out = DVector::zeros(n);
                for i in 0..n.saturating_sub(1) {
                    out[i + 1] += q[i];
                    out[i] -= q[i];
                }
                out
            }
            Operator::Identity { .. } => q.clone(),
            Operator::ForwardDiff2d { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut out = DVector::zeros(r * c);
                let mut k = 0;
                for i in 0..r {
                    for j in 0..c {
                        let here = i * c + j;
                        if j + 1 < c {
                            out[here + 1] += q[k];
                            out[here] -= q[k];
                            k += 1;
                        }
                        if i + 1 < r {
                            out[here + c] += q[k];
                            out[here] -= q[k];
                            k += 1;
                        }
                    }
                }
                out
            }
            Operator::Sparse(m) => m.tr_mul_vec(q),
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        match self {
            Operator::ForwardDiff1d { n } => {
                let rows = (0..n.saturating_sub(1))
                    .map(|i| vec![(i, -1.0), (i + 1, 1.0)])
                    .collect();
                CsrMatrix::from_rows(*n, rows)
            }
            Operator::Identity { n } => {
                CsrMatrix::from_rows(*n, (0..*n).map(|i| vec![(i, 1.0)]).collect())
            }
            Operator::ForwardDiff2d { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let mut out = Vec::with_capacity(self.nrows());
                for i in 0..r {
                    for j in 0..c {
                        let here = i * c + j;
                        if j + 1 < c {
                            out.push(vec![(here, -1.0), (here + 1, 1.0)]);
                        }
                        if i + 1 < r {
                            out.push(vec![(here, -1.0), (here + c, 1.0)]);
                        }
                    }
                }
                CsrMatrix::from_rows(r * c, out)
            }
            Operator::Sparse(m) => m.clone(),
        }
    }
}

/// Power iteration estimate of `||K||^2` (largest eigenvalue of `K^T K`).
pub fn power_norm_sq(op: &Operator, iters: usize) -> f64 {
    let n = op.ncols();
    if n == 0 || op.nrows() == 0 {
        return 0.0;
    }
    // deterministic, non-symmetric start vector
    let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = op.apply_transpose(&op.apply(&x));
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y);
        x = y / norm;
    }
    lambda
}
