//! Executable checks of the structural properties of decompositions:
//! orthogonality, eigenvector atoms, equivalence of the three methods and
//! the minimal-norm subgradient condition.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::{
    gradient_flow_exact, iss_exact_from_gf, iss_gridded, variational_path_exact, FlowTrajectory,
    Method, Mode,
};
use crate::prox::{min_norm_subgradient, prox};
use crate::regularizer::Regularizer;
use crate::solver::SolverConfig;
use crate::spectral::{decompose, parseval_check, SpectralDecomposition};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub context: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl Check {
    fn new(name: &str, residual: f64, tolerance: f64, context: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            context: context.into(),
            matrix: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }

    pub fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        format!("{} checks, {} failed", self.checks.len(), failed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:<6} {:>12} {:>12}  context",
            "check", "result", "residual", "tolerance"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} {:<6} {:>12.3e} {:>12.3e}  {}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.residual,
                c.tolerance,
                c.context
            )?;
        }
        write!(f, "{}", self.summary())
    }
}

fn single(check: Check) -> VerificationReport {
    VerificationReport {
        checks: vec![check],
    }
}

fn require_exact(traj: &FlowTrajectory, method: Method, what: &str) -> Result<()> {
    if traj.mode != Mode::Exact || traj.method != method {
        return Err(Error::UnsupportedTrajectory(format!(
            "{what} needs an exact {method:?} trajectory"
        )));
    }
    Ok(())
}

/// Correlation matrix `<phi_i, phi_j> / (||phi_i|| ||phi_j||)` of the atoms.
/// Atoms with `||phi|| <= 1e-12 ||f||` are dropped.
pub fn correlation_matrix(dec: &SpectralDecomposition) -> (Vec<f64>, DMatrix<f64>) {
    let floor = 1e-12 * dec.initial.norm();
    let kept: Vec<_> = dec.atoms.iter().filter(|a| a.phi.norm() > floor).collect();
    let k = kept.len();
    let corr = DMatrix::from_fn(k, k, |i, j| {
        let (a, b) = (&kept[i].phi, &kept[j].phi);
        a.dot(b) / (a.norm() * b.norm())
    });
    (kept.iter().map(|a| a.t).collect(), corr)
}

/// Largest off-diagonal correlation of the atoms, with the full matrix.
/// Fewer than two atoms pass vacuously.
pub fn check_orthogonality(dec: &SpectralDecomposition) -> Result<VerificationReport> {
    if dec.mode != Mode::Exact {
        return Err(Error::UnsupportedTrajectory(
            "orthogonality needs exact atoms".into(),
        ));
    }
    let (times, corr) = correlation_matrix(dec);
    let k = times.len();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                worst = worst.max(corr[(i, j)].abs());
            }
        }
    }
    let mut check = Check::new(
        "orthogonality",
        worst,
        1e-6,
        format!("{k} atoms, method {:?}", dec.method),
    );
    check.matrix = Some(
        (0..k)
            .map(|i| corr.row(i).iter().copied().collect())
            .collect(),
    );
    Ok(single(check))
}

/// Both forms of the Parseval identity, relative to `||f||^2`.
pub fn check_parseval(dec: &SpectralDecomposition) -> Result<VerificationReport> {
    let r = parseval_check(dec)?;
    let tol = 1e-10 * dec.initial.norm_squared().max(1.0);
    Ok(VerificationReport {
        checks: vec![
            Check::new("parseval_projection", r.via_projection.abs(), tol, ""),
            Check::new("parseval_norms", r.via_norms.abs(), tol, ""),
        ],
    })
}

/// `|J(p_i) - ||p_i||^2| <= 1e-8 (1 + ||p_i||^2)` for every nonzero event
/// subgradient of an exact gradient flow.
pub fn check_eigenvectors(reg: &Regularizer, traj: &FlowTrajectory) -> Result<VerificationReport> {
    require_exact(traj, Method::GradientFlow, "the eigenvector check")?;
    let mut worst = 0.0f64;
    let mut at = String::from("no nonzero subgradients");
    for (i, e) in traj.events.iter().enumerate() {
        let pp = e.p.norm_squared();
        if pp == 0.0 {
            continue;
        }
        let r = (reg.eval(&e.p)? - pp).abs() / (1.0 + pp);
        if r >= worst {
            worst = r;
            at = format!("worst at event {i} (t = {}), ||p||^2 = {pp}", e.t);
        }
    }
    Ok(single(Check::new("eigenvectors", worst, 1e-8, at)))
}

/// `f = P0 f + sum_i (t_i - t_{i-1}) p_i` along an exact gradient flow.
pub fn check_eigendecomposition(traj: &FlowTrajectory) -> Result<VerificationReport> {
    require_exact(traj, Method::GradientFlow, "the eigendecomposition check")?;
    let f = &traj.initial;
    let mut sum = traj.nullspace_part.clone();
    let mut t_prev = 0.0;
    for e in &traj.events {
        sum += &e.p * (e.t - t_prev);
        t_prev = e.t;
    }
    Ok(single(Check::new(
        "eigendecomposition",
        (f - sum).norm(),
        1e-8 * f.norm(),
        format!("{} events", traj.events.len()),
    )))
}

/// Equivalence of the three decompositions on one input:
/// (a) prox values against the gradient flow on a probe grid,
/// (b) gradient flow atoms against atoms of the exact prox path,
/// (c) the exact inverse scale space flow against Bregman iterations with
///     step `ds = s0 / steps_before_first_jump`, where `s0 = 1/T`.
pub fn check_equivalence(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
    steps_before_first_jump: usize,
) -> Result<VerificationReport> {
    let gf = gradient_flow_exact(reg, f, cfg)?;
    let mut report = VerificationReport::default();
    let fnorm = f.norm();
    let big_t = gf.extinction_time;

    // (a)
    let mut probes: Vec<f64> = (1..=16).map(|j| big_t * 1.25 * j as f64 / 16.0).collect();
    for w in gf.events.windows(2) {
        probes.push(0.5 * (w[0].t + w[1].t));
    }
    if let Some(e) = gf.events.first() {
        probes.push(0.5 * e.t);
    }
    let mut worst = 0.0f64;
    for &t in probes.iter().filter(|&&t| t > 0.0) {
        let u = prox(reg, f, t, cfg)?.u;
        worst = worst.max((&u - gf.value_at(t)).norm());
    }
    report.checks.push(Check::new(
        "vm_vs_gf",
        worst,
        10.0 * cfg.tol_gap * fnorm,
        format!("{} probe times", probes.len()),
    ));

    // (b)
    let dec_gf = decompose(&gf)?;
    let dec_vm = decompose(&variational_path_exact(reg, f, cfg)?)?;
    let (dt, dphi, ctx) = if dec_gf.atoms.len() != dec_vm.atoms.len() {
        (
            f64::INFINITY,
            f64::INFINITY,
            format!("{} vs {} atoms", dec_gf.atoms.len(), dec_vm.atoms.len()),
        )
    } else {
        let dt = dec_gf
            .atoms
            .iter()
            .zip(&dec_vm.atoms)
            .map(|(a, b)| (a.t - b.t).abs() / a.t.max(1.0))
            .fold(0.0, f64::max);
        let dphi = dec_gf
            .atoms
            .iter()
            .zip(&dec_vm.atoms)
            .map(|(a, b)| (&a.phi - &b.phi).norm() / fnorm.max(1.0))
            .fold(0.0, f64::max);
        (dt, dphi, format!("{} atoms", dec_gf.atoms.len()))
    };
    report
        .checks
        .push(Check::new("gf_vs_vm_atom_times", dt, 1e-8, ctx.clone()));
    report
        .checks
        .push(Check::new("gf_vs_vm_atoms", dphi, 1e-8, ctx));

    // (c)
    if gf.events.is_empty() || !gf.ddl1 {
        return Ok(report);
    }
    let exact = iss_exact_from_gf(&gf)?;
    let ds = 1.0 / (big_t * steps_before_first_jump.max(1) as f64);
    let s_last = 1.0 / gf.events[0].t;
    let max_steps = (s_last / ds).ceil() as usize + 10;
    let grid = iss_gridded(reg, f, ds, max_steps, cfg)?;
    report.extend(compare_iss(&exact, &grid, ds));
    Ok(report)
}

/// Gridded against exact inverse scale space flow, in `s = 1/t`. Every jump
/// of the grid larger than `1e-3 ||f||` must lie within `2 ds` of an exact
/// jump, and away from the exact jumps the values must agree to
/// `1e-3 ||f||`.
pub fn compare_iss(exact: &FlowTrajectory, grid: &FlowTrajectory, ds: f64) -> VerificationReport {
    let tol = 1e-3 * exact.initial.norm();
    let jumps: Vec<f64> = exact.events.iter().map(|e| 1.0 / e.t).collect();
    let near = |s: f64| {
        jumps
            .iter()
            .map(|j| (s - j).abs())
            .fold(f64::INFINITY, f64::min)
    };
    // grid in increasing s, starting from v(0) = P0 f
    let mut pts: Vec<(f64, &DVector<f64>)> = vec![(0.0, &exact.nullspace_part)];
    pts.extend(grid.grid.iter().rev().map(|g| (1.0 / g.t, &g.u)));

    let mut worst_time = 0.0f64;
    let mut worst_value = 0.0f64;
    for w in pts.windows(2) {
        if (w[1].1 - w[0].1).norm() > tol {
            // the jump happened in (s_{k-1}, s_k]
            let d = near(w[1].0).min(near(w[0].0));
            worst_time = worst_time.max(d);
        }
    }
    for &(s, v) in &pts[1..] {
        if near(s) > 2.0 * ds {
            worst_value = worst_value.max((v - exact.value_at(1.0 / s)).norm());
        }
    }
    VerificationReport {
        checks: vec![
            Check::new(
                "iss_jump_times",
                worst_time,
                2.0 * ds,
                format!("{} exact jumps, ds = {ds}", jumps.len()),
            ),
            Check::new(
                "iss_values",
                worst_value,
                tol,
                format!("{} grid points", pts.len() - 1),
            ),
        ],
    }
}

/// For each sample `u`, the minimal norm subgradient `p` satisfies
/// `<p, p - K^T q> = 0` for all certificates `q` of `u`. The maximum over
/// certificates is `|c| + sum_inactive |(Kp)_l|` with
/// `c = ||p||^2 - sum_active sign((Ku)_l) (Kp)_l`.
pub fn check_minsub(
    reg: &Regularizer,
    samples: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<VerificationReport> {
    if !reg.is_polyhedral() {
        return Err(Error::NotPolyhedral("the minimal subgradient check"));
    }
    let mut worst = 0.0f64;
    for u in samples {
        let (p, _) = min_norm_subgradient(reg, u, cfg)?;
        let ku = reg.apply(u);
        let kp = reg.apply(&p);
        let max = ku.amax();
        let mut c = p.norm_squared();
        let mut spread = 0.0;
        for l in 0..ku.len() {
            if max > 0.0 && ku[l].abs() > 1e-9 * max {
                c -= ku[l].signum() * kp[l];
            } else {
                spread += kp[l].abs();
            }
        }
        worst = worst.max(c.abs() + spread);
    }
    Ok(single(Check::new(
        "minsub",
        worst,
        1e-8,
        format!("{} samples", samples.len()),
    )))
}

/// All checks on one input: exact gradient flow, its atoms, the three-way
/// equivalence and the minimal subgradient condition at `f` and every event.
pub fn verify_all(
    reg: &Regularizer,
    f: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(VerificationReport, FlowTrajectory)> {
    let gf = gradient_flow_exact(reg, f, cfg)?;
    let dec = decompose(&gf)?;
    let mut report = check_orthogonality(&dec)?;
    report.extend(check_parseval(&dec)?);
    report.extend(check_eigenvectors(reg, &gf)?);
    report.extend(check_eigendecomposition(&gf)?);
    report.extend(check_equivalence(reg, f, cfg, 50)?);
    let mut samples = vec![f.clone()];
    samples.extend(gf.events.iter().map(|e| e.u.clone()));
    report.extend(check_minsub(reg, &samples, cfg)?);
    if !gf.ddl1 {
        for c in &mut report.checks {
            c.context
                .push_str(" [no diagonal dominance: informative only]");
        }
    }
    Ok((report, gf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn spike_passes_everything() {
        let reg = Regularizer::tv1d(5).unwrap();
        let (report, gf) = verify_all(
            &reg,
            &v(&[0.0, 0.0, 1.0, 0.0, 0.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(gf.events.len(), 1);
    }

    #[test]
    fn minsub_examples() {
        let cfg = SolverConfig::default();
        let l1 = Regularizer::l1(3).unwrap();
        assert!(check_minsub(&l1, &[v(&[1.0, 0.0, -2.0])], &cfg)
            .unwrap()
            .passed());
        let tv = Regularizer::tv1d(5).unwrap();
        let samples = [v(&[0.0, 0.0, 1.0, 0.0, 0.0]), DVector::from_element(5, 3.0)];
        assert!(check_minsub(&tv, &samples, &cfg).unwrap().passed());
    }

    #[test]
    fn two_point_eigen_checks() {
        let reg = Regularizer::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let gf = gradient_flow_exact(&reg, &v(&[3.0, 1.0]), &SolverConfig::default()).unwrap();
        assert!(check_eigenvectors(&reg, &gf).unwrap().passed());
        let r = check_eigendecomposition(&gf).unwrap();
        assert!(r.checks[0].residual < 1e-14);
    }
}
