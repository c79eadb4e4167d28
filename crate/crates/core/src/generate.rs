//! Test signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Shape, Signal};

/// `e_{n/2}`, e.g. `(0, 0, 1, 0, 0)` for `n = 5`.
pub fn spike_1d(n: usize) -> Result<Signal> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut v = vec![0.0; n];
    v[n / 2] = 1.0;
    Signal::from_vec_1d(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// First index of the plateau.
    pub start: usize,
    pub width: usize,
    pub height: f64,
}

/// Piecewise constant plateaus on a zero background. Overlapping peaks are
/// rejected.
pub fn flat_peaks_1d(n: usize, peaks: &[Peak]) -> Result<Signal> {
    let mut v = vec![0.0; n];
    let mut used = vec![false; n];
    for (k, p) in peaks.iter().enumerate() {
        if p.width == 0 || p.start + p.width > n {
            return Err(Error::InvalidArgument(format!(
                "peak {k} does not fit in {n} samples"
            )));
        }
        if !p.height.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "peak {k} has a non-finite height"
            )));
        }
        for i in p.start..p.start + p.width {
            if used[i] {
                return Err(Error::InvalidArgument(format!(
                    "peak {k} overlaps another peak"
                )));
            }
            used[i] = true;
            v[i] = p.height;
        }
    }
    Signal::from_vec_1d(v)
}

/// Three unit plateaus of widths 4, 8 and 16, evenly spread over `n`.
pub fn three_peaks(n: usize) -> Result<Signal> {
    let widths = [4, 8, 16];
    let total: usize = widths.iter().sum();
    if n < total + 4 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} is too short for three peaks"
        )));
    }
    let gap = (n - total) / 4;
    let mut start = gap;
    let peaks: Vec<Peak> = widths
        .iter()
        .map(|&w| {
            let p = Peak {
                start,
                width: w,
                height: 1.0,
            };
            start += w + gap;
            p
        })
        .collect();
    flat_peaks_1d(n, &peaks)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: (f64, f64),
    pub radius: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskInfo {
    pub disk: Disk,
    /// Perimeter over area of the continuous disk, `2/r`. The discrete
    /// eigenvalue differs.
    pub predicted_eigenvalue: f64,
}

/// Sum of indicator functions of pixel disks scaled by their contrasts.
pub fn disks_2d(rows: usize, cols: usize, disks: &[Disk]) -> Result<(Signal, Vec<DiskInfo>)> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("image must be nonempty".into()));
    }
    let mut v = vec![0.0; rows * cols];
    let mut info = Vec::with_capacity(disks.len());
    for d in disks {
        if !(d.radius > 0.0) {
            return Err(Error::InvalidArgument(
                "disk radius must be positive".into(),
            ));
        }
        for i in 0..rows {
            for j in 0..cols {
                let (di, dj) = (i as f64 - d.center.0, j as f64 - d.center.1);
                if di * di + dj * dj <= d.radius * d.radius {
                    v[i * cols + j] += d.contrast;
                }
            }
        }
        info.push(DiskInfo {
            disk: *d,
            predicted_eigenvalue: 2.0 / d.radius,
        });
    }
    let signal = Signal::new(v.into(), Shape::D2(rows, cols))?;
    Ok((signal, info))
}

/// Three disks of decreasing contrast on a `size x size` image.
pub fn three_disks(size: usize) -> Result<(Signal, Vec<DiskInfo>)> {
    let s = size as f64;
    disks_2d(
        size,
        size,
        &[
            Disk {
                center: (0.3 * s, 0.3 * s),
                radius: 0.18 * s,
                contrast: 1.0,
            },
            Disk {
                center: (0.3 * s, 0.72 * s),
                radius: 0.12 * s,
                contrast: 0.6,
            },
            Disk {
                center: (0.72 * s, 0.5 * s),
                radius: 0.15 * s,
                contrast: 0.3,
            },
        ],
    )
}

/// Uniform entries in `[-1, 1]` from a seeded ChaCha stream.
pub fn random(shape: Shape, seed: u64) -> Result<Signal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..shape.len())
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    Signal::new(v.into(), shape)
}

pub fn constant(shape: Shape, value: f64) -> Result<Signal> {
    Signal::new(nalgebra::DVector::from_element(shape.len(), value), shape)
}
