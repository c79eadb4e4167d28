//! Spectral decompositions of trajectories: atoms in exact mode, sampled
//! densities in gridded mode; reconstruction, filtering and spectra.

mod filter;
mod spectrum;

pub use filter::{filter, FilterKind, FilterSpec, Filtered};
pub use spectrum::{
    all_spectra, default_sigma, spectrum_s1, spectrum_s2, spectrum_s3, Spectrum, SpectrumKind,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{FlowTrajectory, Method, Mode};
use crate::signal::Shape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    #[serde(with = "crate::vecser")]
    pub phi: DVector<f64>,
}

/// Density `phi(t_k)` on the nodes of a gridded trajectory, including the
/// node `t = 0` where `u = f`. `weights` are trapezoid weights, so
/// `sum_k weights[k] * phi[k]` integrates the density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriddedDensity {
    pub nodes: Vec<f64>,
    #[serde(with = "crate::vecser::list")]
    pub u: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    #[serde(with = "crate::vecser::list")]
    pub phi: Vec<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub method: Method,
    pub mode: Mode,
    pub shape: Shape,
    #[serde(with = "crate::vecser")]
    pub initial: DVector<f64>,
    #[serde(with = "crate::vecser")]
    pub nullspace_part: DVector<f64>,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub density: Option<GriddedDensity>,
}

// a trajectory counts as complete when it ends this close to P0 f
const EXACT_END_TOL: f64 = 1e-6;
const GRID_END_TOL: f64 = 1e-3;

/// Converts a trajectory into atoms (exact mode) or a sampled density.
pub fn decompose(traj: &FlowTrajectory) -> Result<SpectralDecomposition> {
    let f = &traj.initial;
    let p0f = &traj.nullspace_part;
    let scale = f.norm().max(f64::MIN_POSITIVE);
    let mut dec = SpectralDecomposition {
        method: traj.method,
        mode: traj.mode,
        shape: traj.shape,
        initial: f.clone(),
        nullspace_part: p0f.clone(),
        atoms: Vec::new(),
        density: None,
    };
    match traj.mode {
        Mode::Exact => {
            if !traj.grid.is_empty() {
                return Err(Error::UnsupportedTrajectory(
                    "exact trajectory carries grid samples".into(),
                ));
            }
            let ev = &traj.events;
            if ev.windows(2).any(|w| w[1].t <= w[0].t) || ev.first().is_some_and(|e| e.t <= 0.0) {
                return Err(Error::UnsupportedTrajectory(
                    "event times must be positive and increasing".into(),
                ));
            }
            if traj.method != Method::InverseScaleSpace {
                if let Some(last) = ev.last() {
                    if (&last.u - p0f).norm() > EXACT_END_TOL * scale {
                        return Err(Error::UnsupportedTrajectory(
                            "trajectory stops before extinction".into(),
                        ));
                    }
                }
            }
            dec.atoms = exact_atoms(traj);
        }
        Mode::Gridded => {
            if !traj.events.is_empty() {
                return Err(Error::UnsupportedTrajectory(
                    "gridded trajectory carries exact events".into(),
                ));
            }
            let g = &traj.grid;
            if g.is_empty() {
                return Err(Error::UnsupportedTrajectory("empty grid".into()));
            }
            if g[0].t <= 0.0 || g.windows(2).any(|w| w[1].t <= w[0].t) {
                return Err(Error::UnsupportedTrajectory(
                    "grid times must be positive and increasing".into(),
                ));
            }
            if (&g.last().unwrap().u - p0f).norm() > GRID_END_TOL * scale {
                return Err(Error::UnsupportedTrajectory(
                    "grid ends before extinction; extend it".into(),
                ));
            }
            dec.density = Some(gridded_density(traj));
        }
    }
    Ok(dec)
}

fn exact_atoms(traj: &FlowTrajectory) -> Vec<Atom> {
    let ev = &traj.events;
    let n = traj.initial.len();
    match traj.method {
        Method::GradientFlow => (0..ev.len())
            .map(|i| {
                let next = ev
                    .get(i + 1)
                    .map_or_else(|| DVector::zeros(n), |e| e.p.clone());
                Atom {
                    t: ev[i].t,
                    phi: (&ev[i].p - next) * ev[i].t,
                }
            })
            .collect(),
        Method::Variational => {
            // slopes between consecutive kinks; u is constant after the last
            let mut slopes = Vec::with_capacity(ev.len() + 1);
            let mut t_prev = 0.0;
            let mut u_prev = &traj.initial;
            for e in ev {
                slopes.push((&e.u - u_prev) / (e.t - t_prev));
                t_prev = e.t;
                u_prev = &e.u;
            }
            slopes.push(DVector::zeros(n));
            (0..ev.len())
                .map(|i| Atom {
                    t: ev[i].t,
                    phi: (&slopes[i + 1] - &slopes[i]) * ev[i].t,
                })
                .collect()
        }
        Method::InverseScaleSpace => (0..ev.len())
            .map(|i| {
                let next = ev.get(i + 1).map_or(&traj.nullspace_part, |e| &e.u);
                Atom {
                    t: ev[i].t,
                    phi: &ev[i].u - next,
                }
            })
            .collect(),
    }
}

/// Trapezoid weights of a node sequence.
pub(crate) fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let k = nodes.len();
    (0..k)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < k {
                nodes[i + 1] - nodes[i]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

fn gridded_density(traj: &FlowTrajectory) -> GriddedDensity {
    let mut nodes = vec![0.0];
    let mut u = vec![traj.initial.clone()];
    for s in &traj.grid {
        nodes.push(s.t);
        u.push(s.u.clone());
    }
    let k = nodes.len();
    let weights = trapezoid_weights(&nodes);
    let n = traj.initial.len();
    let phi = match traj.method {
        Method::InverseScaleSpace => (0..k)
            .map(|i| {
                let hi = &u[(i + 1).min(k - 1)];
                let lo = &u[i.saturating_sub(1)];
                (lo - hi) / (2.0 * weights[i])
            })
            .collect(),
        Method::GradientFlow | Method::Variational => {
            let slope = |i: usize| -> DVector<f64> {
                if i + 1 < k {
                    (&u[i + 1] - &u[i]) / (nodes[i + 1] - nodes[i])
                } else {
                    DVector::zeros(n)
                }
            };
            let mut phi = vec![DVector::zeros(n)];
            let mut left = slope(0);
            for i in 1..k {
                let right = slope(i);
                phi.push((&right - &left) * (nodes[i] / weights[i]));
                left = right;
            }
            phi
        }
    };
    GriddedDensity {
        nodes,
        u,
        weights,
        phi,
    }
}

/// `P0 f` plus all atoms, or plus the quadrature of the density.
pub fn reconstruct(dec: &SpectralDecomposition) -> DVector<f64> {
    let mut out = dec.nullspace_part.clone();
    for a in &dec.atoms {
        out += &a.phi;
    }
    if let Some(d) = &dec.density {
        for (w, phi) in d.weights.iter().zip(&d.phi) {
            out += phi * *w;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParsevalReport {
    /// `||f||^2 - ||P0 f||^2 - sum_i <phi_i, f>`.
    pub via_projection: f64,
    /// `||f||^2 - ||P0 f||^2 - sum_i ||phi_i||^2`.
    pub via_norms: f64,
}

pub fn parseval_check(dec: &SpectralDecomposition) -> Result<ParsevalReport> {
    if dec.mode != Mode::Exact {
        return Err(Error::UnsupportedTrajectory(
            "the Parseval check needs exact atoms".into(),
        ));
    }
    let f = &dec.initial;
    let base = f.norm_squared() - dec.nullspace_part.norm_squared();
    Ok(ParsevalReport {
        via_projection: base - dec.atoms.iter().map(|a| a.phi.dot(f)).sum::<f64>(),
        via_norms: base - dec.atoms.iter().map(|a| a.phi.norm_squared()).sum::<f64>(),
    })
}
