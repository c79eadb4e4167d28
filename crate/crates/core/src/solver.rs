//! Least squares over a product of dual balls:
//!
//! `min_q 1/2 ||b - s K^T q||^2` subject to `||q_g|| <= 1` on free groups,
//! with the remaining groups held at given values.
//!
//! Every dual problem in the crate (prox, dual-ball membership, minimal norm
//! subgradients) has this form. It is solved with accelerated projected
//! gradient and adaptive restart; for singleton groups an active-set
//! refinement then solves the problem exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::CsrMatrix;
use crate::regularizer::Regularizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative duality gap tolerance.
    pub tol_gap: f64,
    /// Absolute tolerance for dual-ball membership residuals.
    pub tol_member: f64,
    /// Refine with an exact active-set solve when groups are singletons.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            tol_gap: 1e-10,
            tol_member: 1e-9,
            polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol_gap > 0.0) || !(self.tol_member > 0.0) {
            return Err(Error::InvalidArgument(
                "solver tolerances must be positive and max_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Frank-Wolfe gap of the returned dual point; for the prox problem this
    /// is the primal-dual gap.
    pub gap: f64,
    pub polished: bool,
}

/// Partition of the free dual coordinates at an exact solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub free_rows: Vec<usize>,
    pub bound_rows: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BallSolution {
    pub q: DVector<f64>,
    /// `b - s K^T q`.
    pub residual: DVector<f64>,
    pub diagnostics: Diagnostics,
    pub partition: Option<Partition>,
}

pub struct BallProblem<'a> {
    pub reg: &'a Regularizer,
    pub target: &'a DVector<f64>,
    pub scale: f64,
    /// Per group: may the group move? `None` means all groups are free.
    pub free: Option<&'a [bool]>,
    /// Start point; fixed groups keep their values from here.
    pub start: Option<&'a DVector<f64>>,
}

const STABLE_WINDOW: usize = 20;
const GAP_EVERY: usize = 10;
// polish only when the dense reduced systems stay small
const POLISH_MAX_FREE: usize = 1500;

impl BallProblem<'_> {
    fn is_free(&self, g: usize) -> bool {
        self.free.map_or(true, |f| f[g])
    }

    fn residual(&self, q: &DVector<f64>) -> DVector<f64> {
        self.target - self.reg.apply_transpose(q) * self.scale
    }

    /// Negative gradient `s K r`.
    fn descent(&self, r: &DVector<f64>) -> DVector<f64> {
        self.reg.apply(r) * self.scale
    }

    fn project(&self, q: &mut DVector<f64>, fixed: &DVector<f64>) {
        let reg = self.reg;
        for g in 0..reg.num_groups() {
            let r = reg.group(g);
            if !self.is_free(g) {
                for i in r {
                    q[i] = fixed[i];
                }
            } else if r.len() == 1 {
                q[r.start] = q[r.start].clamp(-1.0, 1.0);
            } else {
                let mut block = q.rows_mut(r.start, r.len());
                let norm = block.norm();
                if norm > 1.0 {
                    block /= norm;
                }
            }
        }
    }

    fn gap(&self, q: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let reg = self.reg;
        let mut gap = 0.0;
        for g in 0..reg.num_groups() {
            if !self.is_free(g) {
                continue;
            }
            let r = reg.group(g);
            if r.len() == 1 {
                gap += d[r.start].abs() - d[r.start] * q[r.start];
            } else {
                let dg = d.rows(r.start, r.len());
                gap += dg.norm() - dg.dot(&q.rows(r.start, r.len()));
            }
        }
        gap.max(0.0)
    }

    fn bound_pattern(&self, q: &DVector<f64>) -> Vec<i8> {
        // only meaningful for singleton groups
        (0..q.len())
            .map(|i| {
                if q[i] >= 1.0 {
                    1
                } else if q[i] <= -1.0 {
                    -1
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Solves a dual ball problem. Returns `NonConvergence` if the gap tolerance
/// is not reached within `cfg.max_iters` iterations.
pub fn solve_ball(problem: &BallProblem<'_>, cfg: &SolverConfig) -> Result<BallSolution> {
    solve(problem, cfg, None)
}

/// Decides whether the optimal residual norm is at most `radius`, stopping
/// as soon as either answer is certified: the residual itself, or the gap
/// bound `||r*||^2 >= ||r||^2 - 2 gap`. Undecided runs end after
/// `cfg.max_iters` iterations with `false`.
pub(crate) fn ball_residual_within(
    problem: &BallProblem<'_>,
    cfg: &SolverConfig,
    radius: f64,
) -> Result<(bool, BallSolution)> {
    let sol = solve(problem, cfg, Some(radius))?;
    Ok((sol.residual.norm() <= radius, sol))
}

fn solve(
    problem: &BallProblem<'_>,
    cfg: &SolverConfig,
    decide: Option<f64>,
) -> Result<BallSolution> {
    let reg = problem.reg;
    let m = reg.m();
    if problem.target.len() != reg.n() {
        return Err(Error::DimensionMismatch {
            expected: reg.n(),
            actual: problem.target.len(),
        });
    }
    let fixed = problem.start.cloned().unwrap_or_else(|| DVector::zeros(m));
    if fixed.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: fixed.len(),
        });
    }
    let mut x = fixed.clone();
    problem.project(&mut x, &fixed);

    // gap tolerance scales with the effective target
    let mut only_fixed = x.clone();
    for g in 0..reg.num_groups() {
        if problem.is_free(g) {
            for i in reg.group(g) {
                only_fixed[i] = 0.0;
            }
        }
    }
    let c0 = problem.residual(&only_fixed);
    let tol_abs = cfg.tol_gap * (1.0 + c0.norm_squared());

    let lipschitz = problem.scale * problem.scale * reg.operator_norm_sq() * (1.0 + 1e-9);
    let any_free = (0..reg.num_groups()).any(|g| problem.is_free(g));
    if lipschitz == 0.0 || !any_free {
        let residual = problem.residual(&x);
        return Ok(BallSolution {
            q: x,
            residual,
            diagnostics: Diagnostics::default(),
            partition: None,
        });
    }
    let can_polish = cfg.polish && reg.is_polyhedral();

    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut pattern = if can_polish {
        problem.bound_pattern(&x)
    } else {
        Vec::new()
    };
    let mut stable = 0usize;
    let mut polish_tried = false;
    let mut last_gap = f64::INFINITY;

    for it in 1..=cfg.max_iters {
        let d_y = problem.descent(&problem.residual(&y));
        let mut x_new = &y + &d_y / lipschitz;
        problem.project(&mut x_new, &fixed);

        // gradient-based adaptive restart
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            momentum = 1.0;
            x = x_new;
            y = x.clone();
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            momentum = next;
            let old = std::mem::replace(&mut x, x_new);
            y = &x + (&x - &old) * beta;
        }

        if can_polish {
            let p = problem.bound_pattern(&x);
            if p == pattern {
                stable += 1;
            } else {
                pattern = p;
                stable = 0;
                polish_tried = false;
            }
        }

        let check_gap = it % GAP_EVERY == 0 || it == cfg.max_iters;
        let mut decided = false;
        let gap_ok = if check_gap {
            let r = problem.residual(&x);
            last_gap = problem.gap(&x, &problem.descent(&r));
            if let Some(radius) = decide {
                let rr = r.norm_squared();
                decided = rr <= radius * radius
                    || rr - 2.0 * last_gap > radius * radius
                    || it == cfg.max_iters;
            }
            last_gap <= tol_abs
        } else {
            false
        };

        if can_polish && !polish_tried && (stable >= STABLE_WINDOW || gap_ok) {
            polish_tried = true;
            if let Some(sol) = polish(problem, &x, &fixed, tol_abs, c0.norm()) {
                return Ok(BallSolution {
                    diagnostics: Diagnostics {
                        iterations: it,
                        ..sol.diagnostics
                    },
                    ..sol
                });
            }
        }
        if gap_ok || decided {
            let residual = problem.residual(&x);
            return Ok(BallSolution {
                q: x,
                residual,
                diagnostics: Diagnostics {
                    iterations: it,
                    gap: last_gap,
                    polished: false,
                },
                partition: None,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        residual: last_gap,
    })
}

/// Exact active-set solve for singleton groups, started from `q0`.
fn polish(
    problem: &BallProblem<'_>,
    q0: &DVector<f64>,
    fixed: &DVector<f64>,
    tol_abs: f64,
    target_norm: f64,
) -> Option<BallSolution> {
    let reg = problem.reg;
    let k = reg.matrix();
    let s = problem.scale;
    let vars: Vec<usize> = (0..reg.m()).filter(|&i| problem.is_free(i)).collect();
    if vars.len() > POLISH_MAX_FREE {
        return None;
    }
    let mut q = q0.clone();
    problem.project(&mut q, fixed);
    let mut at_bound = vec![false; reg.m()];
    for &i in &vars {
        if q[i].abs() >= 1.0 - 1e-9 {
            q[i] = q[i].signum();
            at_bound[i] = true;
        }
    }
    let kkt_tol = 1e-11 * (s * reg.operator_norm_sq().sqrt() * target_norm).max(1e-300);
    let cap = 4 * vars.len() + 50;

    for _ in 0..cap {
        let free: Vec<usize> = vars.iter().copied().filter(|&i| !at_bound[i]).collect();
        let mut q_bound = q.clone();
        for &i in &free {
            q_bound[i] = 0.0;
        }
        let c = problem.residual(&q_bound);
        let z = if free.is_empty() {
            DVector::zeros(0)
        } else {
            lsq_rows(k, &free, &c).0 / s
        };

        let feasible = z.iter().all(|v| v.abs() <= 1.0 + 1e-12);
        if feasible {
            for (j, &i) in free.iter().enumerate() {
                q[i] = z[j].clamp(-1.0, 1.0);
            }
            let r = problem.residual(&q);
            let d = problem.descent(&r);
            // release the bound with the largest multiplier of the wrong sign
            let mut worst = None;
            let mut worst_val = kkt_tol;
            for &i in &vars {
                if at_bound[i] {
                    let violation = -d[i] * q[i];
                    if violation > worst_val {
                        worst_val = violation;
                        worst = Some(i);
                    }
                }
            }
            match worst {
                Some(i) => at_bound[i] = false,
                None => {
                    let gap = problem.gap(&q, &d);
                    if gap > tol_abs {
                        return None;
                    }
                    let bound_rows = vars.iter().copied().filter(|&i| at_bound[i]).collect();
                    return Some(BallSolution {
                        q,
                        residual: r,
                        diagnostics: Diagnostics {
                            iterations: 0,
                            gap,
                            polished: true,
                        },
                        partition: Some(Partition {
                            free_rows: free,
                            bound_rows,
                        }),
                    });
                }
            }
        } else {
            // step toward z until the first free coordinate hits a bound
            let mut alpha = 1.0f64;
            for (j, &i) in free.iter().enumerate() {
                let dir = z[j] - q[i];
                if z[j] > 1.0 && dir > 0.0 {
                    alpha = alpha.min((1.0 - q[i]) / dir);
                } else if z[j] < -1.0 && dir < 0.0 {
                    alpha = alpha.min((-1.0 - q[i]) / dir);
                }
            }
            let alpha = alpha.max(0.0);
            for (j, &i) in free.iter().enumerate() {
                q[i] += alpha * (z[j] - q[i]);
                if q[i].abs() >= 1.0 - 1e-12 {
                    q[i] = q[i].signum();
                    at_bound[i] = true;
                }
            }
        }
    }
    None
}

/// Least squares `min_y ||c - K_R^T y||` over the rows `R` of `K`.
/// Returns the minimizer (minimum norm if not unique) and the residual.
pub fn lsq_rows(k: &CsrMatrix, rows: &[usize], c: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if rows.is_empty() {
        return (DVector::zeros(0), c.clone());
    }
    let d = k.transpose_columns(rows);
    let y = solve_dense_lsq(&d, c);
    let residual = c - &d * &y;
    (y, residual)
}

fn solve_dense_lsq(d: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let gram = d.transpose() * d;
    let rhs = d.transpose() * c;
    let max_diag = gram.diagonal().max();
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = l
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, &v| a.min(v * v));
        if min_pivot > 1e-10 * max_diag {
            return chol.solve(&rhs);
        }
    }
    let svd = d.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(c, eps).expect("U and V^T were computed")
}
