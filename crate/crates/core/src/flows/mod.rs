//! Trajectories of the variational method, the gradient flow and the
//! inverse scale space flow.

mod gradient;
mod iss;
mod variational;

pub use gradient::{gradient_flow_exact, gradient_flow_exact_generic, gradient_flow_gridded};
pub use iss::{iss_exact_from_gf, iss_gridded};
pub use variational::{default_time_grid, variational_path, variational_path_exact};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::signal::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "VM")]
    Variational,
    #[serde(rename = "GF")]
    GradientFlow,
    #[serde(rename = "IS")]
    InverseScaleSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Gridded,
}

/// A state of a trajectory at time `t`.
///
/// For exact gradient flow events `u = u(t_i)` and `p` is the subgradient
/// active on `(t_{i-1}, t_i]`. For the variational method `p = (f - u)/t`.
/// For the inverse scale space flow `u` is the plateau value on
/// `(t_{i-1}, t_i)` and `p` the dual variable at `s = 1/t_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    #[serde(with = "crate::vecser")]
    pub u: DVector<f64>,
    #[serde(with = "crate::vecser")]
    pub p: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub method: Method,
    pub mode: Mode,
    pub shape: Shape,
    /// `u(0) = f`.
    #[serde(with = "crate::vecser")]
    pub initial: DVector<f64>,
    #[serde(default)]
    pub events: Vec<Sample>,
    #[serde(default)]
    pub grid: Vec<Sample>,
    pub extinction_time: f64,
    #[serde(with = "crate::vecser")]
    pub nullspace_part: DVector<f64>,
    /// The regularizer satisfied the diagonal dominance condition.
    #[serde(default)]
    pub ddl1: bool,
}

impl FlowTrajectory {
    /// Samples of the run: events in exact mode, grid points otherwise.
    pub fn samples(&self) -> &[Sample] {
        match self.mode {
            Mode::Exact => &self.events,
            Mode::Gridded => &self.grid,
        }
    }

    /// `u(t)` for an exact trajectory: piecewise linear for VM and GF,
    /// piecewise constant for the inverse scale space flow.
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        debug_assert_eq!(self.mode, Mode::Exact);
        let ev = &self.events;
        if self.method == Method::InverseScaleSpace {
            return ev
                .iter()
                .find(|e| t < e.t)
                .map_or_else(|| self.nullspace_part.clone(), |e| e.u.clone());
        }
        if t <= 0.0 {
            return self.initial.clone();
        }
        let mut t_prev = 0.0;
        let mut u_prev = &self.initial;
        for e in ev {
            if t <= e.t {
                let w = (t - t_prev) / (e.t - t_prev);
                return u_prev * (1.0 - w) + &e.u * w;
            }
            t_prev = e.t;
            u_prev = &e.u;
        }
        u_prev.clone()
    }
}

/// Shared stopping rule: `u` counts as extinct when its component outside
/// the nullspace is below this fraction of that of `f`.
pub(crate) fn extinct_tolerance(
    polished: bool,
    tol_gap: f64,
    f: &DVector<f64>,
    q0_norm: f64,
) -> f64 {
    if polished {
        1e-9
    } else {
        // inexact solves only resolve u up to sqrt(2 * gap)
        1e-9 + 10.0 * (2.0 * tol_gap * (1.0 + f.norm_squared())).sqrt() / q0_norm
    }
}
