use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::flows::Method;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass { t_c: f64 },
    Highpass { t_c: f64 },
    Bandpass { t1: f64, t2: f64 },
    Bandstop { t1: f64, t2: f64 },
    Custom,
}

/// A filter `w0 P0 f + int w(t) phi(t) dt` with `w` piecewise linear through
/// `breakpoints`, constant outside them. Repeating a time encodes a jump;
/// at a jump `w` takes the value of the last repeated breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub w0: f64,
    pub breakpoints: Vec<(f64, f64)>,
    pub kind: FilterKind,
}

impl FilterSpec {
    /// Keeps scales `t >= t_c` and the nullspace part.
    pub fn lowpass(t_c: f64) -> Self {
        Self {
            w0: 1.0,
            breakpoints: vec![(t_c, 0.0), (t_c, 1.0)],
            kind: FilterKind::Lowpass { t_c },
        }
    }

    /// Keeps scales `t < t_c`.
    pub fn highpass(t_c: f64) -> Self {
        Self {
            w0: 0.0,
            breakpoints: vec![(t_c, 1.0), (t_c, 0.0)],
            kind: FilterKind::Highpass { t_c },
        }
    }

    /// Keeps scales `t1 <= t < t2`.
    pub fn bandpass(t1: f64, t2: f64) -> Self {
        Self {
            w0: 0.0,
            breakpoints: vec![(t1, 0.0), (t1, 1.0), (t2, 1.0), (t2, 0.0)],
            kind: FilterKind::Bandpass { t1, t2 },
        }
    }

    /// Removes scales `t1 <= t < t2`.
    pub fn bandstop(t1: f64, t2: f64) -> Self {
        Self {
            w0: 1.0,
            breakpoints: vec![(t1, 1.0), (t1, 0.0), (t2, 0.0), (t2, 1.0)],
            kind: FilterKind::Bandstop { t1, t2 },
        }
    }

    pub fn custom(w0: f64, breakpoints: Vec<(f64, f64)>) -> Self {
        Self {
            w0,
            breakpoints,
            kind: FilterKind::Custom,
        }
    }

    /// `w = 1`, `w0 = 1`.
    pub fn identity() -> Self {
        Self::custom(1.0, vec![(0.0, 1.0)])
    }

    /// Builds the breakpoints from `kind` when a spec gives only the kind.
    pub fn from_kind(kind: FilterKind) -> Result<Self> {
        let spec = match kind {
            FilterKind::Lowpass { t_c } => Self::lowpass(t_c),
            FilterKind::Highpass { t_c } => Self::highpass(t_c),
            FilterKind::Bandpass { t1, t2 } => Self::bandpass(t1, t2),
            FilterKind::Bandstop { t1, t2 } => Self::bandstop(t1, t2),
            FilterKind::Custom => {
                return Err(Error::InvalidArgument(
                    "a custom filter needs explicit breakpoints".into(),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w0.is_finite() {
            return Err(Error::InvalidArgument("w0 must be finite".into()));
        }
        if self
            .breakpoints
            .iter()
            .any(|&(t, w)| !t.is_finite() || !w.is_finite())
        {
            return Err(Error::InvalidArgument(
                "filter breakpoints must be finite".into(),
            ));
        }
        if self.breakpoints.windows(2).any(|b| b[1].0 < b[0].0) {
            return Err(Error::InvalidArgument(
                "filter breakpoints must be sorted by time".into(),
            ));
        }
        Ok(())
    }

    /// `w(t)`, right-continuous at jumps.
    pub fn weight(&self, t: f64) -> f64 {
        let b = &self.breakpoints;
        let Some(first) = b.first() else {
            return 0.0;
        };
        // index of the last breakpoint with time <= t
        let j = b.partition_point(|&(bt, _)| bt <= t);
        if j == 0 {
            return first.1;
        }
        let (t0, w0) = b[j - 1];
        match b.get(j) {
            None => w0,
            Some(&(t1, w1)) => w0 + (w1 - w0) * (t - t0) / (t1 - t0),
        }
    }

    pub fn has_jump(&self) -> bool {
        self.breakpoints
            .windows(2)
            .any(|b| b[0].0 == b[1].0 && b[0].1 != b[1].1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Filtered {
    pub signal: DVector<f64>,
    pub warnings: Vec<String>,
}

/// Applies a filter. Exact decompositions sum `w(t_i) phi_i`; gridded ones
/// use the integrated form `-int (t w'(t) + w(t)) du/dt dt` (for the inverse
/// scale space flow `-int w(t) du/dt dt`) cell by cell, which spreads a jump
/// of `w` over the grid cell containing it.
pub fn filter(dec: &SpectralDecomposition, spec: &FilterSpec) -> Result<Filtered> {
    spec.validate()?;
    let mut out = &dec.nullspace_part * spec.w0;
    let mut warnings = Vec::new();
    for a in &dec.atoms {
        out += &a.phi * spec.weight(a.t);
    }
    if let Some(d) = &dec.density {
        if spec.has_jump() {
            warnings
                .push("filter has a jump; on a grid it is smoothed over one grid cell".to_string());
        }
        let with_slope = dec.method != Method::InverseScaleSpace;
        for k in 0..d.nodes.len().saturating_sub(1) {
            let (ta, tb) = (d.nodes[k], d.nodes[k + 1]);
            let (wa, wb) = (spec.weight(ta), spec.weight(tb));
            let mut factor = 0.5 * (wa + wb);
            if with_slope {
                factor += 0.5 * (ta + tb) * (wb - wa) / (tb - ta);
            }
            out -= (&d.u[k + 1] - &d.u[k]) * factor;
        }
    }
    Ok(Filtered {
        signal: out,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::gradient_flow_exact;
    use crate::spectral::{decompose, reconstruct};
    use crate::{Regularizer, SolverConfig};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn weight_is_right_continuous() {
        let lp = FilterSpec::lowpass(2.0);
        assert_eq!(lp.weight(1.999), 0.0);
        assert_eq!(lp.weight(2.0), 1.0);
        assert_eq!(lp.weight(5.0), 1.0);
        let ramp = FilterSpec::custom(0.0, vec![(1.0, 0.0), (3.0, 1.0)]);
        assert_eq!(ramp.weight(2.0), 0.5);
        assert_eq!(ramp.weight(0.0), 0.0);
        assert_eq!(ramp.weight(9.0), 1.0);
        assert!(lp.has_jump());
        assert!(!ramp.has_jump());
    }

    #[test]
    fn two_point_low_and_high_pass() {
        let reg = Regularizer::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let f = DVector::from_vec(vec![3.0, 1.0]);
        let dec =
            decompose(&gradient_flow_exact(&reg, &f, &SolverConfig::default()).unwrap()).unwrap();
        let low = filter(&dec, &FilterSpec::lowpass(2.0)).unwrap().signal;
        let high = filter(&dec, &FilterSpec::highpass(2.0)).unwrap().signal;
        assert_abs_diff_eq!(low, DVector::from_vec(vec![2.0, 2.0]), epsilon = 1e-13);
        assert_abs_diff_eq!(high, DVector::from_vec(vec![1.0, -1.0]), epsilon = 1e-13);
        let id = filter(&dec, &FilterSpec::identity()).unwrap().signal;
        assert_abs_diff_eq!(id, reconstruct(&dec), epsilon = 1e-15);
    }

    #[test]
    fn kind_only_specs_expand() {
        let spec = FilterSpec::from_kind(FilterKind::Bandpass { t1: 1.0, t2: 2.0 }).unwrap();
        assert_eq!(spec.weight(0.5), 0.0);
        assert_eq!(spec.weight(1.0), 1.0);
        assert_eq!(spec.weight(2.0), 0.0);
        assert!(FilterSpec::from_kind(FilterKind::Custom).is_err());
        let unsorted = FilterSpec::custom(0.0, vec![(2.0, 0.0), (1.0, 1.0)]);
        assert!(unsorted.validate().is_err());
    }
}
