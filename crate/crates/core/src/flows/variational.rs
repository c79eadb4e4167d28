use nalgebra::DVector;
use rayon::prelude::*;

use super::{extinct_tolerance, FlowTrajectory, Method, Mode, Sample};
use crate::error::{Error, Result};
use crate::prox::{extinction_time_vm, prox, ProxOutput};
use crate::regularizer::Regularizer;
use crate::solver::{lsq_rows, SolverConfig};

/// Independent prox solves `u(t) = prox(f, t)` on an increasing grid of
/// positive times, run in parallel. Records `p(t) = (f - u(t)) / t`.
pub fn variational_path(
    reg: &Regularizer,
    f: &DVector<f64>,
    t_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "time grid must be positive and strictly increasing".into(),
        ));
    }
    let (p0f, q0f) = reg.project_nullspace(f)?;
    let q0_norm = q0f.norm();
    let outs: Vec<ProxOutput> = t_grid
        .par_iter()
        .map(|&t| prox(reg, f, t, cfg))
        .collect::<Result<_>>()?;
    let mut extinction = *t_grid.last().unwrap();
    let mut found = q0_norm == 0.0;
    if found {
        extinction = 0.0;
    }
    let grid = t_grid
        .iter()
        .zip(outs)
        .map(|(&t, out)| {
            if !found {
                let tol = extinct_tolerance(out.diagnostics.polished, cfg.tol_gap, f, q0_norm);
                if (&out.u - &p0f).norm() <= tol * q0_norm {
                    found = true;
                    extinction = t;
                }
            }
            let p = (f - &out.u) / t;
            Sample { t, u: out.u, p }
        })
        .collect();
    Ok(FlowTrajectory {
        method: Method::Variational,
        mode: Mode::Gridded,
        shape: reg.shape(),
        initial: f.clone(),
        events: Vec::new(),
        grid,
        extinction_time: extinction,
        nullspace_part: p0f,
        ddl1: reg.satisfies_ddl1(),
    })
}

/// Log-spaced grid on `[1e-4 T, 1.2 T]` with `points` nodes, where `T` is
/// the extinction time, merged with any extra times (e.g. exact events).
pub fn default_time_grid(
    reg: &Regularizer,
    f: &DVector<f64>,
    points: usize,
    extra: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let big_t = extinction_time_vm(reg, f, cfg)?;
    if big_t == 0.0 {
        return Ok(vec![1.0]);
    }
    let points = points.max(2);
    let (lo, hi) = ((1e-4 * big_t).ln(), (1.2 * big_t).ln());
    let mut grid: Vec<f64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .chain(extra.iter().copied().filter(|&t| t > 0.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * *b);
    Ok(grid)
}

/// Straight piece of the prox path through a sample: `u(s) = a - s b`.
#[derive(Clone)]
struct Piece {
    t: f64,
    u: DVector<f64>,
    line: Option<(DVector<f64>, DVector<f64>)>,
}

/// Kinks of the piecewise linear path `t -> prox(f, t)` of a polyhedral
/// regularizer, located without reference to the gradient flow.
///
/// Every exact prox solve comes with its optimal partition into bound and
/// free dual coordinates; with that partition fixed, `u` is affine in `t`.
/// Neighboring samples on different lines are bracketed until a single kink
/// is confirmed at the intersection of the two lines.
pub fn variational_path_exact(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    if !reg.is_polyhedral() {
        return Err(Error::NotPolyhedral(
            "the exact prox path needs singleton groups",
        ));
    }
    let (p0f, _) = reg.project_nullspace(f)?;
    let big_t = extinction_time_vm(reg, f, cfg)?;
    let mut traj = FlowTrajectory {
        method: Method::Variational,
        mode: Mode::Exact,
        shape: reg.shape(),
        initial: f.clone(),
        events: Vec::new(),
        grid: Vec::new(),
        extinction_time: 0.0,
        nullspace_part: p0f,
        ddl1: reg.satisfies_ddl1(),
    };
    if big_t == 0.0 {
        return Ok(traj);
    }
    let tol = 1e-9 * f.norm();
    let sample = |t: f64| -> Result<Piece> {
        let out = prox(reg, f, t, cfg)?;
        let part = out.partition.ok_or_else(|| {
            Error::UnsupportedTrajectory("exact prox path needs polished prox solves".into())
        })?;
        let k = reg.matrix();
        let mut kb = DVector::zeros(reg.m());
        for &i in &part.bound_rows {
            kb[i] = out.cert.q[i];
        }
        let (_, a) = lsq_rows(k, &part.free_rows, f);
        let (_, b) = lsq_rows(k, &part.free_rows, &reg.apply_transpose(&kb));
        Ok(Piece {
            t,
            u: out.u,
            line: Some((a, b)),
        })
    };

    let mut pieces = vec![Piece {
        t: 0.0,
        u: f.clone(),
        line: None,
    }];
    for j in 1..=8 {
        pieces.push(sample(big_t * j as f64 / 8.0)?);
    }
    pieces.push(sample(1.25 * big_t)?);

    let mut kinks: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut stack: Vec<(Piece, Piece)> = pieces
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect();

    let min_width = 1e-13 * big_t;
    let mut budget = 200 * reg.n() + 1000;
    while let Some((a, b)) = stack.pop() {
        budget = budget.checked_sub(1).ok_or(Error::NonConvergence {
            iterations: kinks.len(),
            residual: f64::NAN,
        })?;
        let (la, lb) = (
            a.line.as_ref(),
            b.line.as_ref().expect("right end is sampled"),
        );
        let on_line = |line: &(DVector<f64>, DVector<f64>), t: f64, u: &DVector<f64>| {
            (&line.0 - &line.1 * t - u).norm() <= tol
        };
        let same = match la {
            Some(la) => (&la.0 - &lb.0).norm() + b.t * (&la.1 - &lb.1).norm() <= tol,
            None => on_line(lb, 0.0, &a.u),
        };
        if same {
            continue;
        }
        if let Some(la) = la {
            let db = &la.1 - &lb.1;
            let denom = db.norm_squared();
            if denom > 0.0 {
                let t_star = (&la.0 - &lb.0).dot(&db) / denom;
                let span = b.t - a.t;
                if t_star >= a.t - 1e-9 * span && t_star <= b.t + 1e-9 * span {
                    let t_star = t_star.clamp(a.t, b.t);
                    let u_star = if t_star == a.t {
                        a.u.clone()
                    } else if t_star == b.t {
                        b.u.clone()
                    } else {
                        prox(reg, f, t_star, cfg)?.u
                    };
                    if on_line(la, t_star, &u_star) && on_line(lb, t_star, &u_star) {
                        kinks.push((t_star, u_star));
                        continue;
                    }
                }
            }
        }
        if b.t - a.t <= min_width {
            return Err(Error::NonConvergence {
                iterations: kinks.len(),
                residual: b.t - a.t,
            });
        }
        let mid = sample(0.5 * (a.t + b.t))?;
        stack.push((a, mid.clone()));
        stack.push((mid, b));
    }

    kinks.sort_by(|x, y| x.0.total_cmp(&y.0));
    kinks.dedup_by(|x, y| x.0 - y.0 <= 1e-9 * y.0.max(1e-300));
    traj.extinction_time = kinks.last().map_or(0.0, |k| k.0);
    traj.events = kinks
        .into_iter()
        .map(|(t, u)| {
            let p = (f - &u) / t;
            Sample { t, u, p }
        })
        .collect();
    Ok(traj)
}
