use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{decompose, trapezoid_weights, SpectralDecomposition};
use crate::error::{Error, Result};
use crate::flows::{FlowTrajectory, Method, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpectrumKind {
    /// `||phi||_1` mollified with a Gaussian of width `sigma`.
    S1 { sigma: f64 },
    /// `-t^2 d/dt ||p(t)||^2` along the gradient flow.
    S2,
    /// `<phi(t), f>`.
    S3,
}

/// Point masses in exact mode, sampled values in gridded mode (and always
/// for the mollified S1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub kind: SpectrumKind,
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub density: Vec<(f64, f64)>,
}

impl Spectrum {
    /// Total mass: atoms plus the trapezoid integral of the density.
    pub fn total(&self) -> f64 {
        let nodes: Vec<f64> = self.density.iter().map(|d| d.0).collect();
        let w = trapezoid_weights(&nodes);
        self.atoms.iter().map(|a| a.1).sum::<f64>()
            + self
                .density
                .iter()
                .zip(w)
                .map(|(d, w)| d.1 * w)
                .sum::<f64>()
    }

    /// Largest mass or density value.
    pub fn max_value(&self) -> f64 {
        self.atoms
            .iter()
            .chain(&self.density)
            .fold(0.0f64, |m, a| m.max(a.1))
    }

    /// `t,mass_or_density` rows, atoms first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mass_or_density\n");
        for (t, v) in self.atoms.iter().chain(&self.density) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }
}

pub fn spectrum_s3(dec: &SpectralDecomposition) -> Spectrum {
    let f = &dec.initial;
    Spectrum {
        kind: SpectrumKind::S3,
        atoms: dec.atoms.iter().map(|a| (a.t, a.phi.dot(f))).collect(),
        density: dec
            .density
            .iter()
            .flat_map(|d| d.nodes.iter().zip(&d.phi).map(|(&t, phi)| (t, phi.dot(f))))
            .collect(),
    }
}

/// S2 from a gradient flow trajectory. Exact events carry the mass
/// `t_i^2 (||p_i||^2 - ||p_{i+1}||^2)`; on a grid the subgradient on each
/// cell is the backward difference of `u` and the same jump is divided by the
/// trapezoid weight of the node.
pub fn spectrum_s2(traj: &FlowTrajectory) -> Result<Spectrum> {
    if traj.method != Method::GradientFlow {
        return Err(Error::UnsupportedTrajectory(
            "S2 is defined along the gradient flow".into(),
        ));
    }
    let mut spec = Spectrum {
        kind: SpectrumKind::S2,
        atoms: Vec::new(),
        density: Vec::new(),
    };
    match traj.mode {
        Mode::Exact => {
            let ev = &traj.events;
            for i in 0..ev.len() {
                let next = ev.get(i + 1).map_or(0.0, |e| e.p.norm_squared());
                let t = ev[i].t;
                spec.atoms
                    .push((t, t * t * (ev[i].p.norm_squared() - next)));
            }
        }
        Mode::Gridded => {
            let mut nodes = vec![0.0];
            let mut u = vec![&traj.initial];
            for s in &traj.grid {
                nodes.push(s.t);
                u.push(&s.u);
            }
            let k = nodes.len();
            let w = trapezoid_weights(&nodes);
            // ||p||^2 on cell (t_{j-1}, t_j], zero past the end
            let cell = |j: usize| -> f64 {
                if j == 0 || j >= k {
                    0.0
                } else {
                    ((u[j - 1] - u[j]) / (nodes[j] - nodes[j - 1])).norm_squared()
                }
            };
            for j in 0..k {
                let t = nodes[j];
                spec.density
                    .push((t, t * t * (cell(j) - cell(j + 1)) / w[j]));
            }
        }
    }
    Ok(spec)
}

/// Default mollifier width: one grid cell (median spacing) for a sampled
/// density, 1% of the atom time span otherwise.
pub fn default_sigma(dec: &SpectralDecomposition) -> f64 {
    if let Some(d) = &dec.density {
        let mut gaps: Vec<f64> = d.nodes.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        return gaps.get(gaps.len() / 2).copied().unwrap_or(1.0);
    }
    let (lo, hi) = dec
        .atoms
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), a| {
            (lo.min(a.t), hi.max(a.t))
        });
    match dec.atoms.len() {
        0 => 1.0,
        1 => 0.01 * hi,
        _ => 0.01 * (hi - lo).max(1e-3 * hi),
    }
}

/// `S1(t) = || sum_i g(t - t_i) phi_i ||_1` with a Gaussian `g` of width
/// `sigma` (default [`default_sigma`]). Atoms are sampled on 512 points up
/// to the last atom plus four widths; a density is sampled on its own nodes.
pub fn spectrum_s1(dec: &SpectralDecomposition, sigma: Option<f64>) -> Result<Spectrum> {
    let sigma = sigma.unwrap_or_else(|| default_sigma(dec));
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let g =
        |x: f64| (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let n = dec.initial.len();
    // (time, weight, phi) point masses
    let mut masses: Vec<(f64, f64, &DVector<f64>)> =
        dec.atoms.iter().map(|a| (a.t, 1.0, &a.phi)).collect();
    let times: Vec<f64> = match &dec.density {
        Some(d) => {
            masses.extend(
                d.nodes
                    .iter()
                    .zip(&d.weights)
                    .zip(&d.phi)
                    .map(|((&t, &w), p)| (t, w, p)),
            );
            d.nodes.clone()
        }
        None => {
            let end = masses.iter().fold(0.0f64, |m, a| m.max(a.0)) + 4.0 * sigma;
            (0..512).map(|i| end * i as f64 / 511.0).collect()
        }
    };
    let density = times
        .iter()
        .map(|&t| {
            let mut acc = DVector::zeros(n);
            for &(ti, w, phi) in &masses {
                let k = g(t - ti) * w;
                if k > 0.0 {
                    acc.axpy(k, phi, 1.0);
                }
            }
            (t, acc.lp_norm(1))
        })
        .collect();
    Ok(Spectrum {
        kind: SpectrumKind::S1 { sigma },
        atoms: Vec::new(),
        density,
    })
}

/// Decomposes and computes all three spectra of a gradient flow run.
pub fn all_spectra(traj: &FlowTrajectory) -> Result<[Spectrum; 3]> {
    let dec = decompose(traj)?;
    Ok([
        spectrum_s1(&dec, None)?,
        spectrum_s2(traj)?,
        spectrum_s3(&dec),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{gradient_flow_exact, gradient_flow_gridded, iss_exact_from_gf};
    use crate::{Regularizer, SolverConfig};
    use approx::assert_abs_diff_eq;

    fn spike() -> (Regularizer, DVector<f64>) {
        (
            Regularizer::tv1d(5).unwrap(),
            DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0, 0.0]),
        )
    }

    #[test]
    fn spike_s2_equals_s3() {
        let (reg, f) = spike();
        let gf = gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap();
        let s2 = spectrum_s2(&gf).unwrap();
        let s3 = spectrum_s3(&decompose(&gf).unwrap());
        assert_eq!(s2.atoms.len(), 1);
        assert_abs_diff_eq!(s2.atoms[0].1, 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(s3.atoms[0].1, 0.8, epsilon = 1e-9);
        assert!(spectrum_s2(&iss_exact_from_gf(&gf).unwrap()).is_err());
        assert!(s3.to_csv().starts_with("t,mass_or_density\n0.4"));
    }

    #[test]
    fn s1_peaks_at_the_atom() {
        let (reg, f) = spike();
        let gf = gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap();
        let s1 = spectrum_s1(&decompose(&gf).unwrap(), None).unwrap();
        let peak = s1
            .density
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((peak.0 - 0.4).abs() < 0.01);
        // the mollified mass integrates to ||phi||_1
        assert_abs_diff_eq!(s1.total(), 1.6, epsilon = 1e-3);
    }

    #[test]
    fn gridded_spectra_integrate_to_the_energy() {
        let (reg, f) = spike();
        let cfg = SolverConfig::default();
        let gf = gradient_flow_gridded(&reg, &f, 0.004, 10_000, &cfg).unwrap();
        let [_, s2, s3] = all_spectra(&gf).unwrap();
        assert_abs_diff_eq!(s2.total(), 0.8, epsilon = 1e-2);
        assert_abs_diff_eq!(s3.total(), 0.8, epsilon = 1e-2);
    }
}
