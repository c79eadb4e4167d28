//! Absolutely one-homogeneous regularizers `J(u) = sum_g ||(K u)_g||`.
//!
//! Dual coordinates are ordered so that every group occupies a contiguous
//! block; `group_offsets` holds the block boundaries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{power_norm_sq, CsrMatrix, Operator};
use crate::signal::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Tv1d,
    Tv2dAniso,
    Tv2dIso,
    L1,
    Matrix,
}

/// Outcome of the diagonal dominance test on `K K^T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ddl1Status {
    Holds,
    Fails,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ddl1Report {
    pub status: Ddl1Status,
    /// At least one row is dominant only with equality.
    pub weak: bool,
    /// Row with the smallest margin `diag - sum |offdiag|`.
    pub worst_row: usize,
    pub worst_margin: f64,
}

/// A dual vector `q` certifying the subgradient `K^T q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub q: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Regularizer {
    kind: RegKind,
    shape: Shape,
    op: Operator,
    csr: CsrMatrix,
    group_offsets: Vec<usize>,
    nullspace: DMatrix<f64>,
    norm_sq: f64,
    ddl1: Option<Ddl1Report>,
}

// relative threshold for singular values treated as zero
const SVD_RANK_TOL: f64 = 1e-12;
// above this size a user matrix's norm comes from power iteration
const DENSE_SVD_LIMIT: usize = 512;

fn diff_norm_sq(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let x = std::f64::consts::PI * (n as f64 - 1.0) / (2.0 * n as f64);
    4.0 * x.sin().powi(2)
}

fn constant_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt())
}

impl Regularizer {
    /// One-dimensional total variation with forward differences.
    pub fn tv1d(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOperator("tv1d needs n >= 1".into()));
        }
        let op = Operator::ForwardDiff1d { n };
        let m = op.nrows();
        Ok(Self::assemble(
            RegKind::Tv1d,
            Shape::D1(n),
            op,
            (0..=m).collect(),
            constant_basis(n),
            diff_norm_sq(n),
        ))
    }

    /// Anisotropic 2D total variation: every difference is its own group.
    pub fn tv2d_aniso(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidOperator("tv2d needs a nonempty grid".into()));
        }
        let op = Operator::ForwardDiff2d { rows, cols };
        let m = op.nrows();
        Ok(Self::assemble(
            RegKind::Tv2dAniso,
            Shape::D2(rows, cols),
            op,
            (0..=m).collect(),
            constant_basis(rows * cols),
            diff_norm_sq(rows) + diff_norm_sq(cols),
        ))
    }

    /// Isotropic 2D total variation: the horizontal and vertical difference
    /// at a pixel form one group (a singleton on the last row or column).
    pub fn tv2d_iso(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidOperator("tv2d needs a nonempty grid".into()));
        }
        let op = Operator::ForwardDiff2d { rows, cols };
        let mut offsets = vec![0];
        for i in 0..rows {
            for j in 0..cols {
                let size = usize::from(j + 1 < cols) + usize::from(i + 1 < rows);
                if size > 0 {
                    offsets.push(offsets.last().unwrap() + size);
                }
            }
        }
        Ok(Self::assemble(
            RegKind::Tv2dIso,
            Shape::D2(rows, cols),
            op,
            offsets,
            constant_basis(rows * cols),
            diff_norm_sq(rows) + diff_norm_sq(cols),
        ))
    }

    /// `J(u) = ||u||_1`.
    pub fn l1(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOperator("l1 needs n >= 1".into()));
        }
        Ok(Self::assemble(
            RegKind::L1,
            Shape::D1(n),
            Operator::Identity { n },
            (0..=n).collect(),
            DMatrix::zeros(n, 0),
            1.0,
        ))
    }

    /// `J(u) = ||K u||_1` for a user-given dense matrix.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        let m = k.nrows();
        Self::from_matrix_grouped(k, vec![1; m])
    }

    /// `J(u) = sum_g ||(K u)_g||_2` where consecutive rows are grouped by
    /// `group_sizes`.
    pub fn from_matrix_grouped(k: DMatrix<f64>, group_sizes: Vec<usize>) -> Result<Self> {
        let (m, n) = k.shape();
        if n == 0 {
            return Err(Error::InvalidOperator("matrix has no columns".into()));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator(
                "matrix has non-finite entries".into(),
            ));
        }
        if group_sizes.iter().any(|&s| s == 0) || group_sizes.iter().sum::<usize>() != m {
            return Err(Error::InvalidOperator(format!(
                "group sizes must be positive and sum to {m}"
            )));
        }
        let mut offsets = vec![0];
        for s in group_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }

        // pad to a square-or-tall matrix so the SVD yields a full right basis
        let padded = if m < n {
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (m, n)).copy_from(&k);
            p
        } else {
            k.clone()
        };
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let sigma_max = svd.singular_values.max();
        let thresh = SVD_RANK_TOL * sigma_max;
        let null_rows: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| sigma_max == 0.0 || svd.singular_values[i] <= thresh)
            .collect();
        let mut nullspace = DMatrix::zeros(n, null_rows.len());
        for (j, &i) in null_rows.iter().enumerate() {
            nullspace.set_column(j, &v_t.row(i).transpose());
        }

        let csr = CsrMatrix::from_dense(&k);
        let op = Operator::Sparse(csr);
        let norm_sq = if m.max(n) <= DENSE_SVD_LIMIT {
            sigma_max * sigma_max
        } else {
            power_norm_sq(&op, 500) * 1.01
        };
        Ok(Self::assemble(
            RegKind::Matrix,
            Shape::D1(n),
            op,
            offsets,
            nullspace,
            norm_sq,
        ))
    }

    fn assemble(
        kind: RegKind,
        shape: Shape,
        op: Operator,
        group_offsets: Vec<usize>,
        nullspace: DMatrix<f64>,
        norm_sq: f64,
    ) -> Self {
        let csr = op.to_csr();
        let mut reg = Self {
            kind,
            shape,
            op,
            csr,
            group_offsets,
            nullspace,
            norm_sq,
            ddl1: None,
        };
        if reg.is_polyhedral() {
            reg.ddl1 = Some(compute_ddl1(&reg.csr));
        }
        reg
    }

    pub fn kind(&self) -> RegKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.op.ncols()
    }

    /// Dual dimension.
    pub fn m(&self) -> usize {
        self.op.nrows()
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn num_groups(&self) -> usize {
        self.group_offsets.len() - 1
    }

    pub fn group(&self, g: usize) -> std::ops::Range<usize> {
        self.group_offsets[g]..self.group_offsets[g + 1]
    }

    pub fn group_offsets(&self) -> &[usize] {
        &self.group_offsets
    }

    pub fn is_polyhedral(&self) -> bool {
        self.group_offsets.windows(2).all(|w| w[1] - w[0] == 1)
    }

    /// Orthonormal basis of `ker K`, one column per vector.
    pub fn nullspace_basis(&self) -> &DMatrix<f64> {
        &self.nullspace
    }

    pub fn operator_norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn ddl1_status(&self) -> Ddl1Status {
        self.ddl1.as_ref().map_or(Ddl1Status::Unknown, |r| r.status)
    }

    pub fn satisfies_ddl1(&self) -> bool {
        self.ddl1_status() == Ddl1Status::Holds
    }

    pub fn check_ddl1(&self) -> Result<Ddl1Report> {
        self.ddl1.clone().ok_or(Error::NotPolyhedral(
            "diagonal dominance is defined for singleton groups",
        ))
    }

    fn check_len(&self, v: &DVector<f64>, expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        self.op.apply(u)
    }

    pub fn apply_transpose(&self, q: &DVector<f64>) -> DVector<f64> {
        self.op.apply_transpose(q)
    }

    /// Euclidean norm of every group block of a dual vector.
    pub fn group_norms(&self, w: &DVector<f64>) -> Vec<f64> {
        self.group_offsets
            .windows(2)
            .map(|r| {
                if r[1] - r[0] == 1 {
                    w[r[0]].abs()
                } else {
                    w.rows(r[0], r[1] - r[0]).norm()
                }
            })
            .collect()
    }

    pub fn eval(&self, u: &DVector<f64>) -> Result<f64> {
        self.check_len(u, self.n())?;
        Ok(self.eval_unchecked(u))
    }

    pub(crate) fn eval_unchecked(&self, u: &DVector<f64>) -> f64 {
        self.group_norms(&self.apply(u)).iter().sum()
    }

    /// Splits `u` into its nullspace part and the orthogonal remainder.
    pub fn project_nullspace(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_len(u, self.n())?;
        let p0 = match self.kind {
            RegKind::Tv1d | RegKind::Tv2dAniso | RegKind::Tv2dIso => {
                DVector::from_element(u.len(), u.mean())
            }
            RegKind::L1 => DVector::zeros(u.len()),
            RegKind::Matrix => {
                let b = &self.nullspace;
                b * (b.transpose() * u)
            }
        };
        let q0 = u - &p0;
        Ok((p0, q0))
    }

    /// Groupwise projection onto the dual unit ball.
    pub fn project_dual_ball(&self, w: &DVector<f64>) -> Result<DualCertificate> {
        self.check_len(w, self.m())?;
        let mut q = w.clone();
        self.clip_in_place(&mut q);
        Ok(DualCertificate { q })
    }

    pub(crate) fn clip_in_place(&self, q: &mut DVector<f64>) {
        for r in self.group_offsets.windows(2) {
            if r[1] - r[0] == 1 {
                q[r[0]] = q[r[0]].clamp(-1.0, 1.0);
            } else {
                let mut block = q.rows_mut(r[0], r[1] - r[0]);
                let norm = block.norm();
                if norm > 1.0 {
                    block /= norm;
                }
            }
        }
    }

    /// Upper bound on `||K^T q||` over the dual ball.
    pub fn dual_ball_bound(&self) -> f64 {
        let per_group: f64 = (0..self.num_groups())
            .map(|g| {
                let r = self.group(g);
                if r.len() == 1 {
                    self.csr
                        .row(r.start)
                        .map(|(_, v)| v * v)
                        .sum::<f64>()
                        .sqrt()
                } else {
                    let rows: Vec<usize> = r.collect();
                    let block = self.csr.transpose_columns(&rows);
                    let gram = block.transpose() * block;
                    SymmetricEigen::new(gram).eigenvalues.max().max(0.0).sqrt()
                }
            })
            .sum();
        let global = (self.num_groups() as f64).sqrt() * self.norm_sq.sqrt();
        per_group.min(global)
    }
}

fn compute_ddl1(k: &CsrMatrix) -> Ddl1Report {
    let gram = k.gram_rows();
    let mut worst_row = 0;
    let mut worst_margin = f64::INFINITY;
    let mut weak = false;
    let mut holds = true;
    for (l, row) in gram.iter().enumerate() {
        let mut diag = 0.0;
        let mut off = 0.0;
        for &(j, v) in row {
            if j == l {
                diag = v;
            } else {
                off += v.abs();
            }
        }
        let margin = diag - off;
        let tol = 1e-12 * diag.abs().max(off);
        if margin < -tol {
            holds = false;
        } else if margin <= tol {
            weak = true;
        }
        if margin < worst_margin {
            worst_margin = margin;
            worst_row = l;
        }
    }
    if gram.is_empty() {
        worst_margin = 0.0;
    }
    Ddl1Report {
        status: if holds {
            Ddl1Status::Holds
        } else {
            Ddl1Status::Fails
        },
        weak,
        worst_row,
        worst_margin,
    }
}
