use nalgebra::DVector;

use super::{extinct_tolerance, FlowTrajectory, Method, Mode, Sample};
use crate::error::{Error, Result};
use crate::prox::prox_warm;
use crate::regularizer::Regularizer;
use crate::solver::SolverConfig;

/// Bregman iteration for the inverse scale space flow with step `ds`:
///
/// `v_{k+1} = prox(f + q_k / ds, 1 / ds)`, `q_{k+1} = q_k + ds (f - v_{k+1})`,
/// starting from `q_0 = 0`. Stops once `v = f`.
///
/// The grid is stored in wavelength time `t = 1/s`, increasing; grid point
/// `k` holds `u = v(s_k)` and `p = q_k`.
pub fn iss_gridded(
    reg: &Regularizer,
    f: &DVector<f64>,
    ds: f64,
    max_steps: usize,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    if !(ds > 0.0) || !ds.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ds must be positive, got {ds}"
        )));
    }
    let (p0f, q0f) = reg.project_nullspace(f)?;
    let q0_norm = q0f.norm();
    let mut traj = FlowTrajectory {
        method: Method::InverseScaleSpace,
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
            t: 1.0 / ds,
            u: f.clone(),
            p: DVector::zeros(f.len()),
        });
        return Ok(traj);
    }

    let mut q = DVector::zeros(f.len());
    let mut warm: Option<DVector<f64>> = None;
    let mut samples = Vec::new();
    let mut last_flat: Option<f64> = None;
    let mut reached = false;
    for k in 1..=max_steps {
        let s = k as f64 * ds;
        let g = f + &q / ds;
        let out = prox_warm(reg, &g, 1.0 / ds, warm.as_ref(), cfg)?;
        let v = out.u;
        warm = Some(out.cert.q);
        q += (f - &v) * ds;
        let tol = extinct_tolerance(out.diagnostics.polished, cfg.tol_gap, f, q0_norm);
        if (&v - &p0f).norm() <= tol * q0_norm && samples.len() + 1 == k {
            last_flat = Some(s);
        }
        let done = (&v - f).norm() <= tol * q0_norm;
        samples.push(Sample {
            t: 1.0 / s,
            u: v,
            p: q.clone(),
        });
        if done {
            reached = true;
            break;
        }
    }
    if !reached {
        return Err(Error::NonConvergence {
            iterations: max_steps,
            residual: (&samples.last().unwrap().u - f).norm(),
        });
    }
    // u_IS(t) = P0 f for t >= 1/s0
    traj.extinction_time = 1.0 / last_flat.unwrap_or(ds);
    samples.reverse();
    traj.grid = samples;
    Ok(traj)
}

/// Exact inverse scale space trajectory derived from an exact gradient flow
/// under diagonal dominance. Jumps occur at `s_i = 1/t_i`; on `(t_i, t_{i+1})`
/// the flow sits at `u_GF(t_i) + t_i p_GF(t_{i+1})`.
pub fn iss_exact_from_gf(gf: &FlowTrajectory) -> Result<FlowTrajectory> {
    if gf.method != Method::GradientFlow || gf.mode != Mode::Exact {
        return Err(Error::UnsupportedTrajectory(
            "expected an exact gradient flow trajectory".into(),
        ));
    }
    if !gf.ddl1 {
        return Err(Error::UnsupportedTrajectory(
            "the derivation needs a diagonally dominant regularizer".into(),
        ));
    }
    let f = &gf.initial;
    let mut events = Vec::with_capacity(gf.events.len());
    let mut t_prev = 0.0;
    let mut u_prev = f.clone();
    for e in &gf.events {
        let plateau = &u_prev + &e.p * t_prev;
        events.push(Sample {
            t: e.t,
            u: plateau,
            p: (f - &e.u) / e.t,
        });
        t_prev = e.t;
        u_prev = e.u.clone();
    }
    Ok(FlowTrajectory {
        method: Method::InverseScaleSpace,
        mode: Mode::Exact,
        shape: gf.shape,
        initial: f.clone(),
        events,
        grid: Vec::new(),
        extinction_time: gf.extinction_time,
        nullspace_part: gf.nullspace_part.clone(),
        ddl1: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::gradient_flow_exact;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn two_point_jump() {
        let reg = Regularizer::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let f = v(&[3.0, 1.0]);
        let cfg = SolverConfig::default();
        let exact = iss_exact_from_gf(&gradient_flow_exact(&reg, &f, &cfg).unwrap()).unwrap();
        assert_eq!(exact.events.len(), 1);
        assert_eq!(exact.events[0].u, f.clone());
        assert_abs_diff_eq!(exact.value_at(2.0), v(&[2.0, 2.0]), epsilon = 1e-13);

        let grid = iss_gridded(&reg, &f, 0.01, 10_000, &cfg).unwrap();
        // s = 1/t increases backwards along the grid
        for w in grid.grid.windows(2) {
            let s_hi = 1.0 / w[0].t;
            assert!(
                (&w[0].u - &f).norm() <= (&w[1].u - &f).norm() + 1e-12,
                "fidelity must not decrease at s = {s_hi}"
            );
        }
        let first_f = grid
            .grid
            .iter()
            .rev()
            .find(|g| (&g.u - &f).norm() < 1e-9)
            .unwrap();
        assert!((1.0 / first_f.t - 1.0).abs() <= 0.02);
        let last_flat = grid
            .grid
            .iter()
            .find(|g| (&g.u - v(&[2.0, 2.0])).norm() < 1e-9)
            .unwrap();
        assert!((1.0 / last_flat.t - 1.0).abs() <= 0.02);
    }

    #[test]
    fn non_gradient_input_is_refused() {
        let reg = Regularizer::tv1d(3).unwrap();
        let f = v(&[1.0, 0.0, 0.0]);
        let g = iss_gridded(&reg, &f, 0.5, 1000, &SolverConfig::default()).unwrap();
        assert!(iss_exact_from_gf(&g).is_err());
    }
}
