//! Proximal operator of `tJ`, dual-ball membership and the extinction time
//! of the variational method.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::regularizer::{DualCertificate, Regularizer};
use crate::solver::{
    ball_residual_within, solve_ball, BallProblem, Diagnostics, Partition, SolverConfig,
};

#[derive(Clone, Debug)]
pub struct ProxOutput {
    pub u: DVector<f64>,
    /// `K^T q` is a subgradient of `J` at `u` and `u = f - t K^T q`.
    pub cert: DualCertificate,
    pub diagnostics: Diagnostics,
    pub partition: Option<Partition>,
}

/// `argmin_u 1/2 ||u - f||^2 + t J(u)`.
pub fn prox(reg: &Regularizer, f: &DVector<f64>, t: f64, cfg: &SolverConfig) -> Result<ProxOutput> {
    prox_warm(reg, f, t, None, cfg)
}

/// Like [`prox`], warm-started from a dual point (e.g. the certificate of a
/// nearby solve).
pub fn prox_warm(
    reg: &Regularizer,
    f: &DVector<f64>,
    t: f64,
    warm: Option<&DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<ProxOutput> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("prox needs t > 0, got {t}")));
    }
    cfg.validate()?;
    let sol = solve_ball(
        &BallProblem {
            reg,
            target: f,
            scale: t,
            free: None,
            start: warm,
        },
        cfg,
    )?;
    Ok(ProxOutput {
        u: sol.residual,
        cert: DualCertificate { q: sol.q },
        diagnostics: sol.diagnostics,
        partition: sol.partition,
    })
}

/// `min_{q in B} ||K^T q - p||` together with the minimizing certificate.
pub fn dual_ball_distance(
    reg: &Regularizer,
    p: &DVector<f64>,
    warm: Option<&DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<(f64, DualCertificate)> {
    let sol = solve_ball(
        &BallProblem {
            reg,
            target: p,
            scale: 1.0,
            free: None,
            start: warm,
        },
        cfg,
    )?;
    Ok((sol.residual.norm(), DualCertificate { q: sol.q }))
}

/// Smallest `T` with `Q0 f / T` in the dual ball, found by bracketing and
/// bisection. Zero when `f` lies in the nullspace.
pub fn extinction_time_vm(reg: &Regularizer, f: &DVector<f64>, cfg: &SolverConfig) -> Result<f64> {
    let (_, q0) = reg.project_nullspace(f)?;
    let norm_sq = q0.norm_squared();
    if norm_sq == 0.0 || q0.amax() <= 1e-14 * f.amax() {
        return Ok(0.0);
    }
    let mut warm: Option<DVector<f64>> = None;
    let member = |t: f64, warm: &mut Option<DVector<f64>>| -> Result<bool> {
        let w = &q0 / t;
        let problem = BallProblem {
            reg,
            target: &w,
            scale: 1.0,
            free: None,
            start: warm.as_ref(),
        };
        let (inside, sol) = ball_residual_within(&problem, cfg, cfg.tol_member * w.norm())?;
        *warm = Some(sol.q);
        Ok(inside)
    };
    // <Q0 f, K^T q> <= J(Q0 f) gives the lower bound
    let lower = norm_sq / reg.eval(&q0)?;
    if member(lower, &mut warm)? {
        return Ok(lower);
    }
    let mut lo = lower;
    let mut hi = 2.0 * lower;
    while !member(hi, &mut warm)? {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NonConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if member(mid, &mut warm)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubgradientCheck {
    pub holds: bool,
    /// Distance of `p` to the dual ball `dJ(0)`.
    pub membership_residual: f64,
    /// `|<p, u> - J(u)|`.
    pub gap_residual: f64,
}

/// Tests `p in dJ(u)` via `J*(p) = 0` and `<p, u> = J(u)`.
pub fn is_subgradient(
    reg: &Regularizer,
    u: &DVector<f64>,
    p: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SubgradientCheck> {
    let j = reg.eval(u)?;
    if p.len() != reg.n() {
        return Err(Error::DimensionMismatch {
            expected: reg.n(),
            actual: p.len(),
        });
    }
    let (dist, _) = dual_ball_distance(reg, p, None, cfg)?;
    let gap = (p.dot(u) - j).abs();
    Ok(SubgradientCheck {
        holds: dist <= cfg.tol_member && gap <= cfg.tol_gap * (1.0 + j),
        membership_residual: dist,
        gap_residual: gap,
    })
}

/// Minimal norm element of `dJ(u)` and its certificate. Groups with
/// `||(Ku)_g|| > 1e-9 ||Ku||_inf` are treated as active.
pub fn min_norm_subgradient(
    reg: &Regularizer,
    u: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, DualCertificate)> {
    if u.len() != reg.n() {
        return Err(Error::DimensionMismatch {
            expected: reg.n(),
            actual: u.len(),
        });
    }
    let norms = reg.group_norms(&reg.apply(u));
    let max = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let active: Vec<bool> = norms.iter().map(|&v| max > 0.0 && v > 1e-9 * max).collect();
    min_norm_subgradient_masked(reg, u, &active, None, cfg)
}

/// Minimal norm subgradient with an explicit set of active groups. On
/// active groups the certificate is `(Ku)_g / ||(Ku)_g||`; the other groups
/// range over the ball.
pub fn min_norm_subgradient_masked(
    reg: &Regularizer,
    u: &DVector<f64>,
    active: &[bool],
    warm: Option<&DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, DualCertificate)> {
    let ku = reg.apply(u);
    let mut start = warm.cloned().unwrap_or_else(|| DVector::zeros(reg.m()));
    for (g, &is_active) in active.iter().enumerate() {
        let r = reg.group(g);
        if is_active {
            let norm = ku.rows(r.start, r.len()).norm();
            if norm == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "group {g} is marked active but (Ku)_g = 0"
                )));
            }
            for i in r {
                start[i] = ku[i] / norm;
            }
        }
    }
    if !active.iter().any(|&a| a) {
        // every certificate is free: q = 0 attains p = 0
        return Ok((
            DVector::zeros(reg.n()),
            DualCertificate {
                q: DVector::zeros(reg.m()),
            },
        ));
    }
    let free: Vec<bool> = active.iter().map(|&a| !a).collect();
    let zero = DVector::zeros(reg.n());
    let sol = solve_ball(
        &BallProblem {
            reg,
            target: &zero,
            scale: 1.0,
            free: Some(&free),
            start: Some(&start),
        },
        cfg,
    )?;
    Ok((-sol.residual, DualCertificate { q: sol.q }))
}
