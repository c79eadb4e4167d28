use nalgebra::DVector;

use super::{extinct_tolerance, FlowTrajectory, Method, Mode, Sample};
use crate::error::{Error, Result};
use crate::prox::{min_norm_subgradient_masked, prox_warm};
use crate::regularizer::Regularizer;
use crate::solver::SolverConfig;

// zero crossings this close (relative) to the first one form one event
const MERGE_TOL: f64 = 1e-9;
const OFF_SUPPORT_TOL: f64 = 1e-8;

/// Exact event-driven gradient flow for polyhedral `J`. Uses the diagonal
/// dominance fast path when the regularizer qualifies and the breakpoint
/// search otherwise.
pub fn gradient_flow_exact(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    run_exact(reg, f, cfg, reg.satisfies_ddl1())
}

/// Exact gradient flow that always uses the generic breakpoint search.
pub fn gradient_flow_exact_generic(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    run_exact(reg, f, cfg, false)
}

fn run_exact(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
    fast: bool,
) -> Result<FlowTrajectory> {
    if !reg.is_polyhedral() {
        return Err(Error::NotPolyhedral(
            "the exact gradient flow needs singleton groups; use the gridded flow",
        ));
    }
    if f.len() != reg.n() {
        return Err(Error::DimensionMismatch {
            expected: reg.n(),
            actual: f.len(),
        });
    }
    let (p0f, _) = reg.project_nullspace(f)?;
    let kf_max = reg.apply(f).amax();
    let mut u = f.clone();
    let mut t = 0.0;
    let mut events: Vec<Sample> = Vec::new();
    let mut warm: Option<DVector<f64>> = None;
    let max_events = 4 * reg.n() + 16;

    let ku = reg.apply(&u);
    let mut active: Vec<bool> = ku.iter().map(|&v| v.abs() > 1e-9 * kf_max).collect();

    loop {
        let ku = reg.apply(&u);
        if !fast {
            let floor = (1e-9 * ku.amax()).max(1e-12 * kf_max);
            active = ku.iter().map(|&v| v.abs() > floor).collect();
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        if events.len() >= max_events {
            return Err(Error::NonConvergence {
                iterations: events.len(),
                residual: (&u - &p0f).norm(),
            });
        }
        let (p, cert) = min_norm_subgradient_masked(reg, &u, &active, warm.as_ref(), cfg)?;
        let kp = reg.apply(&p);

        let delta = if fast {
            let scale = kp.amax().max(1.0);
            for l in 0..kp.len() {
                if !active[l] && kp[l].abs() > OFF_SUPPORT_TOL * scale {
                    return Err(Error::FastPathViolated {
                        index: l,
                        value: kp[l],
                    });
                }
            }
            let delta = (0..ku.len())
                .filter(|&l| active[l] && ku[l] * kp[l] > 0.0)
                .map(|l| ku[l] / kp[l])
                .fold(f64::INFINITY, f64::min);
            if !delta.is_finite() {
                return Err(Error::NonConvergence {
                    iterations: events.len(),
                    residual: p.norm(),
                });
            }
            for l in 0..ku.len() {
                if active[l] && ku[l] * kp[l] > 0.0 && ku[l] / kp[l] <= delta * (1.0 + MERGE_TOL) {
                    active[l] = false;
                }
            }
            delta
        } else {
            breakpoint_scan(reg, &u, &p, &ku, &kp)?
        };

        t += delta;
        u -= &p * delta;
        events.push(Sample { t, u: u.clone(), p });
        warm = Some(cert.q);
    }

    if let Some(last) = events.last_mut() {
        if (&last.u - &p0f).norm() <= 1e-8 * f.norm() {
            last.u = p0f.clone();
        }
    }
    Ok(FlowTrajectory {
        method: Method::GradientFlow,
        mode: Mode::Exact,
        shape: reg.shape(),
        initial: f.clone(),
        extinction_time: t,
        events,
        grid: Vec::new(),
        nullspace_part: p0f,
        ddl1: reg.satisfies_ddl1(),
    })
}

/// Largest step `d` with `p` still a subgradient at `u - d p`.
///
/// `g(d) = J(u - d p) - <p, u - d p>` is convex, piecewise linear,
/// nonnegative and zero at 0; its zero set is `[0, d*]` and `d*` is one of
/// the zero crossings of `K(u - d p)`.
fn breakpoint_scan(
    reg: &Regularizer,
    u: &DVector<f64>,
    p: &DVector<f64>,
    ku: &DVector<f64>,
    kp: &DVector<f64>,
) -> Result<f64> {
    let mut candidates: Vec<f64> = (0..ku.len())
        .filter(|&l| ku[l] * kp[l] > 0.0)
        .map(|l| ku[l] / kp[l])
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| *a <= *b * (1.0 + MERGE_TOL));
    let pu = p.dot(u);
    let pp = p.norm_squared();
    let ju = reg.eval_unchecked(u);
    let mut accepted = None;
    for &d in &candidates {
        let v = u - p * d;
        let g = reg.eval_unchecked(&v) - pu + d * pp;
        if g > 1e-9 * (ju + d * pp) {
            break;
        }
        accepted = Some(d);
    }
    accepted.ok_or(Error::NonConvergence {
        iterations: 0,
        residual: p.norm(),
    })
}

/// Implicit Euler scheme `u_{k+1} = prox(u_k, dt)` run until extinction.
/// Grid point `k` holds `t = k dt`, `u_k` and `p_k = (u_{k-1} - u_k) / dt`.
pub fn gradient_flow_gridded(
    reg: &Regularizer,
    f: &DVector<f64>,
    dt: f64,
    max_steps: usize,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let (p0f, q0f) = reg.project_nullspace(f)?;
    let q0_norm = q0f.norm();
    let mut traj = FlowTrajectory {
        method: Method::GradientFlow,
        mode: Mode::Gridded,
        shape: reg.shape(),
        initial: f.clone(),
        events: Vec::new(),
        grid: Vec::new(),
        extinction_time: 0.0,
        nullspace_part: p0f.clone(),
        ddl1: reg.satisfies_ddl1(),
    };
    if q0_norm == 0.0 {
        traj.grid.push(Sample {
            t: dt,
            u: f.clone(),
            p: DVector::zeros(f.len()),
        });
        return Ok(traj);
    }
    let mut u = f.clone();
    let mut warm: Option<DVector<f64>> = None;
    for k in 1..=max_steps {
        let out = prox_warm(reg, &u, dt, warm.as_ref(), cfg)?;
        let p = (&u - &out.u) / dt;
        u = out.u;
        warm = Some(out.cert.q);
        let t = k as f64 * dt;
        let tol = extinct_tolerance(out.diagnostics.polished, cfg.tol_gap, f, q0_norm);
        let done = (&u - &p0f).norm() <= tol * q0_norm;
        traj.grid.push(Sample { t, u: u.clone(), p });
        if done {
            traj.extinction_time = t;
            return Ok(traj);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_steps,
        residual: (&u - &p0f).norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn two_point_flow_has_one_event() {
        let reg = Regularizer::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let traj = gradient_flow_exact(&reg, &v(&[3.0, 1.0]), &SolverConfig::default()).unwrap();
        assert_eq!(traj.events.len(), 1);
        let e = &traj.events[0];
        assert_abs_diff_eq!(e.t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.u, v(&[2.0, 2.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(e.p, v(&[1.0, -1.0]), epsilon = 1e-15);
        assert_eq!(traj.extinction_time, e.t);
    }

    #[test]
    fn spike_flow_matches_hand_computation() {
        let reg = Regularizer::tv1d(5).unwrap();
        let f = v(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        for traj in [
            gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap(),
            gradient_flow_exact_generic(&reg, &f, &SolverConfig::default()).unwrap(),
        ] {
            assert_eq!(traj.events.len(), 1);
            let e = &traj.events[0];
            assert_abs_diff_eq!(e.t, 0.4, epsilon = 1e-15);
            assert_abs_diff_eq!(e.p, v(&[-0.5, -0.5, 2.0, -0.5, -0.5]), epsilon = 1e-14);
            assert_abs_diff_eq!(e.u, DVector::from_element(5, 0.2), epsilon = 1e-15);
        }
    }

    #[test]
    fn nullspace_input_has_no_events() {
        let reg = Regularizer::tv1d(4).unwrap();
        let traj = gradient_flow_exact(
            &reg,
            &DVector::from_element(4, 2.5),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.extinction_time, 0.0);
    }

    #[test]
    fn isotropic_regularizer_is_rejected() {
        let reg = Regularizer::tv2d_iso(2, 2).unwrap();
        assert!(matches!(
            gradient_flow_exact(&reg, &DVector::zeros(4), &SolverConfig::default()),
            Err(Error::NotPolyhedral(_))
        ));
    }

    #[test]
    fn implicit_euler_tracks_the_spike_flow() {
        let reg = Regularizer::tv1d(5).unwrap();
        let f = v(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        let cfg = SolverConfig::default();
        let exact = gradient_flow_exact(&reg, &f, &cfg).unwrap();
        let grid = gradient_flow_gridded(&reg, &f, 0.01, 10_000, &cfg).unwrap();
        assert!((grid.extinction_time - 0.4).abs() < 0.011);
        for s in &grid.grid {
            assert!((&s.u - exact.value_at(s.t)).norm() <= 1e-8, "t = {}", s.t);
        }
    }
}
