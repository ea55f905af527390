//! Multi-axis sin/cos positional encodings.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const PE_BASE: f64 = 10_000.0;

/// Encodes each row of `positions` (one column per axis) into
/// `Σ dims` channels: for every axis, `dims[a] / 2` sines followed by as
/// many cosines at geometric frequencies `PE_BASE^(−j / (dims[a]/2))`.
/// Axis blocks are concatenated in column order, e.g. `(t, x, y)` or `(v, x, y)`.
pub fn sincos_pe(positions: ArrayView2<f64>, dims: &[usize]) -> Result<Array2<f64>> {
    if positions.ncols() != dims.len() {
        return Err(Error::input(format!(
            "positions have {} axes but {} channel widths were given",
            positions.ncols(),
            dims.len()
        )));
    }
    if let Some(d) = dims.iter().find(|d| **d == 0 || **d % 2 != 0) {
        return Err(Error::input(format!("per-axis width {d} must be even and positive")));
    }
    let total: usize = dims.iter().sum();
    let mut out = Array2::zeros((positions.nrows(), total));
    let mut offset = 0;
    for (axis, &d) in dims.iter().enumerate() {
        let half = d / 2;
        let freqs: Vec<f64> = (0..half)
            .map(|j| PE_BASE.powf(-(j as f64) / half as f64))
            .collect();
        for (row, pos) in positions.column(axis).iter().enumerate() {
            for (j, f) in freqs.iter().enumerate() {
                let phase = pos * f;
                out[(row, offset + j)] = phase.sin();
                out[(row, offset + half + j)] = phase.cos();
            }
        }
        offset += d;
    }
    Ok(out)
}

/// `(lead, x, y)` tuples for a `lead x height x width` token grid, ordered
/// lead-major, then row, then column. `lead` is time for frame attention and
/// view index for view attention.
pub fn grid_positions(lead: usize, height: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((lead * height * width, 3));
    let mut row = 0;
    for l in 0..lead {
        for y in 0..height {
            for x in 0..width {
                out[(row, 0)] = l as f64;
                out[(row, 1)] = x as f64;
                out[(row, 2)] = y as f64;
                row += 1;
            }
        }
    }
    out
}
