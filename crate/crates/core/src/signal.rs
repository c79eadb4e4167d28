//! Finite-dimensional signals with a 1D or 2D shape.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of a signal's values. 2D signals are stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    D1(usize),
    D2(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::D1(n) => n,
            Shape::D2(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            [n] => Ok(Shape::D1(*n)),
            [r, c] => Ok(Shape::D2(*r, *c)),
            _ => Err(Error::InvalidSignal(format!(
                "shape must have 1 or 2 dimensions, got {}",
                dims.len()
            ))),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::D1(n) => vec![n],
            Shape::D2(r, c) => vec![r, c],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    values: DVector<f64>,
    shape: Shape,
}

impl Signal {
    pub fn new(values: DVector<f64>, shape: Shape) -> Result<Self> {
        if shape.len() != values.len() {
            return Err(Error::InvalidSignal(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                shape.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("entry {i} is not finite")));
        }
        Ok(Self { values, shape })
    }

    pub fn from_vec_1d(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(DVector::from_vec(values), Shape::D1(n))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidSignal("ragged 2D rows".into()));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DVector::from_vec(values), Shape::D2(r, c))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
