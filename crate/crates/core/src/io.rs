//! File formats: operator specs and trajectories as JSON, signals as CSV or
//! plain PGM.
//!
//! JSON floats are written in the shortest form that parses back to the same
//! value, so every file round-trips bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::{RegKind, Regularizer};
use crate::signal::{Shape, Signal};
use crate::spectral::{FilterKind, FilterSpec};

/// `{"kind": "tv1d", "shape": [n]}` and friends. `matrix` (rows of `K`) is
/// required for `"matrix"`; `groups` optionally lists group sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: RegKind,
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub groups: Option<Vec<usize>>,
}

impl OperatorSpec {
    pub fn build(&self) -> Result<Regularizer> {
        let shape = self.shape.as_deref().map(Shape::from_dims).transpose()?;
        let need = |what: &str| Error::InvalidOperator(format!("{what} needs a shape"));
        match self.kind {
            RegKind::Tv1d => match shape {
                Some(Shape::D1(n)) => Regularizer::tv1d(n),
                _ => Err(need("tv1d (one dimension)")),
            },
            RegKind::L1 => match shape {
                Some(s) => Regularizer::l1(s.len()),
                None => Err(need("l1")),
            },
            RegKind::Tv2dAniso => match shape {
                Some(Shape::D2(r, c)) => Regularizer::tv2d_aniso(r, c),
                _ => Err(need("tv2d_aniso (two dimensions)")),
            },
            RegKind::Tv2dIso => match shape {
                Some(Shape::D2(r, c)) => Regularizer::tv2d_iso(r, c),
                _ => Err(need("tv2d_iso (two dimensions)")),
            },
            RegKind::Matrix => {
                let rows = self.matrix.as_ref().ok_or_else(|| {
                    Error::InvalidOperator("kind \"matrix\" needs \"matrix\"".into())
                })?;
                let m = rows.len();
                let n = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidOperator("ragged matrix rows".into()));
                }
                if let Some(s) = shape {
                    if s.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: s.len(),
                            actual: n,
                        });
                    }
                }
                let k = DMatrix::from_row_iterator(m, n, rows.iter().flatten().copied());
                match &self.groups {
                    Some(g) => Regularizer::from_matrix_grouped(k, g.clone()),
                    None => Regularizer::from_matrix(k),
                }
            }
        }
    }
}

pub fn read_operator_spec(path: &Path) -> Result<Regularizer> {
    let spec: OperatorSpec = read_json(path)?;
    spec.build()
}

#[derive(Deserialize)]
struct FilterFile {
    w0: Option<f64>,
    breakpoints: Option<Vec<(f64, f64)>>,
    kind: Option<FilterKind>,
}

/// Filter JSON: either explicit `w0` and `breakpoints` (`[[t, w], ...]`),
/// or just a `kind` such as `{"type": "lowpass", "t_c": 2.0}`.
pub fn parse_filter_spec(text: &str) -> Result<FilterSpec> {
    let file: FilterFile = serde_json::from_str(text)?;
    let spec = match (file.breakpoints, file.kind) {
        (Some(bp), kind) => FilterSpec {
            w0: file.w0.unwrap_or(0.0),
            breakpoints: bp,
            kind: kind.unwrap_or(FilterKind::Custom),
        },
        (None, Some(kind)) => {
            let mut spec = FilterSpec::from_kind(kind)?;
            if let Some(w0) = file.w0 {
                spec.w0 = w0;
            }
            spec
        }
        (None, None) => {
            return Err(Error::Parse(
                "filter needs \"breakpoints\" or \"kind\"".into(),
            ))
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Parses CSV text: one value per line is a 1D signal, otherwise every line
/// is an image row. Blank lines and lines starting with `#` are skipped.
pub fn parse_signal_csv(text: &str) -> Result<Signal> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidSignal("no values".into()));
    }
    if rows.iter().all(|r| r.len() == 1) {
        Signal::from_vec_1d(rows.into_iter().map(|r| r[0]).collect())
    } else {
        Signal::from_rows(&rows)
    }
}

pub fn signal_to_csv(signal: &Signal) -> String {
    let v = signal.values();
    let mut out = String::new();
    match signal.shape() {
        Shape::D1(_) => {
            for x in v.iter() {
                let _ = writeln!(out, "{x}");
            }
        }
        Shape::D2(r, c) => {
            for i in 0..r {
                let row: Vec<String> = (0..c).map(|j| v[i * c + j].to_string()).collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
    }
    out
}

/// Plain (`P2`) PGM. Gray levels are divided by the maximum value, giving
/// an image in `[0, 1]`.
pub fn parse_pgm(text: &str) -> Result<Signal> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::Parse("only plain PGM (P2) is supported".into()));
    }
    let mut header = [0usize; 3];
    for h in &mut header {
        *h = tokens
            .next()
            .ok_or_else(|| Error::Parse("truncated PGM header".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("PGM header: {e}")))?;
    }
    let [cols, rows, max] = header;
    if max == 0 {
        return Err(Error::Parse("PGM maximum value is zero".into()));
    }
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map(|v| v / max as f64)
                .map_err(|e| Error::Parse(format!("PGM value: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Signal::new(values.into(), Shape::D2(rows, cols))
}

/// Writes a 2D signal as 8-bit plain PGM, clamping to `[0, 1]`. Lossy.
pub fn signal_to_pgm(signal: &Signal) -> Result<String> {
    let Shape::D2(r, c) = signal.shape() else {
        return Err(Error::InvalidSignal("PGM needs a 2D signal".into()));
    };
    let mut out = format!("P2\n{c} {r}\n255\n");
    let v = signal.values();
    for i in 0..r {
        let row: Vec<String> = (0..c)
            .map(|j| ((v[i * c + j].clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads a `.pgm` image or CSV signal.
pub fn read_signal(path: &Path) -> Result<Signal> {
    let text = fs::read_to_string(path)?;
    if is_pgm(path) {
        parse_pgm(&text)
    } else {
        parse_signal_csv(&text)
    }
}

pub fn write_signal(path: &Path, signal: &Signal) -> Result<()> {
    let text = if is_pgm(path) {
        signal_to_pgm(signal)?
    } else {
        signal_to_csv(signal)
    };
    fs::write(path, text)?;
    Ok(())
}
