//! Wigner function of a number-basis density matrix.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::numeric::{linspace, ln_factorial};

/// Convention string written into every Wigner output file.
pub const WIGNER_CONVENTION: &str =
    "W(x,p) = (2/pi) Tr[rho D(alpha) P D(alpha)^dag], alpha = x + i p, x = x_0 and p = x_{pi/2} quadratures \
     (vacuum variance 1/4), normalized to unit integral over dx dp";

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl GridSpec {
    pub fn square(extent: f64, points: usize) -> Self {
        GridSpec {
            x_min: -extent,
            x_max: extent,
            nx: points,
            p_min: -extent,
            p_max: extent,
            np: points,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::square(3.0, 121)
    }
}

/// `values[[i, j]] = W(x[i], p[j])`.
#[derive(Clone, Debug)]
pub struct WignerGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub values: Array2<f64>,
}

impl WignerGrid {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        let wx = trapezoid_weights(&self.x);
        let wp = trapezoid_weights(&self.p);
        let mut acc = 0.0;
        for (i, a) in wx.iter().enumerate() {
            for (j, b) in wp.iter().enumerate() {
                acc += a * b * self.values[[i, j]];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn convention(&self) -> &'static str {
        WIGNER_CONVENTION
    }
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Matrix `A_nm = <n| D(alpha) P D(alpha)^dag |m>`, so that
/// `W(x, p) = (2/pi) Re sum_nm rho_mn A_nm`.
///
/// Uses `D(alpha) P D(alpha)^dag = D(2 alpha) P` and the Laguerre form of the
/// displacement matrix elements, with the Gaussian and factorial prefactors
/// combined in log space.
pub fn parity_kernel(dim: usize, x: f64, p: f64) -> Array2<C64> {
    let beta = C64::new(2.0 * x, 2.0 * p);
    let y = beta.norm_sqr();
    let abs_beta = y.sqrt();
    let unit = if abs_beta > 0.0 { beta / abs_beta } else { C64::new(1.0, 0.0) };
    let mut a = Array2::<C64>::zeros((dim, dim));
    // diff = |n - m|, low = min(n, m)
    for diff in 0..dim {
        let lag = laguerre_column(dim - diff, diff as f64, y);
        let phase = unit.powu(diff as u32);
        let neg_conj = (-unit.conj()).powu(diff as u32);
        for low in 0..dim - diff {
            let log_pref = 0.5 * (ln_factorial(low) - ln_factorial(low + diff))
                + if diff > 0 { diff as f64 * abs_beta.ln() } else { 0.0 }
                - 0.5 * y;
            let mag = lag[low] * log_pref.exp();
            if mag == 0.0 || !mag.is_finite() {
                continue;
            }
            if diff == 0 {
                // <n| D P |n> = (-1)^n <n|D|n>
                let sign = if low % 2 == 0 { 1.0 } else { -1.0 };
                a[[low, low]] = C64::new(sign * mag, 0.0);
            } else {
                // (n, m) = (low + diff, low): <n|D|m> = unit^diff mag; P|m> = (-1)^m |m>
                let n = low + diff;
                let m = low;
                a[[n, m]] = phase * mag * if m % 2 == 0 { 1.0 } else { -1.0 };
                // <m|D|n> = (-unit^*)^diff mag, and P|n> = (-1)^n |n>
                a[[m, n]] = neg_conj * mag * if n % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
    }
    a
}

/// Wigner function at a single phase-space point.
pub fn wigner_point(rho: &DensityMatrix, x: f64, p: f64) -> f64 {
    let d = rho.dim();
    let a = parity_kernel(d, x, p);
    let mut total = 0.0;
    // Tr[rho A] = sum rho_mn A_nm
    for n in 0..d {
        for m in 0..d {
            total += (rho.get(m, n) * a[[n, m]]).re;
        }
    }
    2.0 / std::f64::consts::PI * total
}

/// `L_k^{(alpha)}(y)` for `k = 0..len`.
fn laguerre_column(len: usize, alpha: f64, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    out.push(1.0);
    if len == 1 {
        return out;
    }
    out.push(1.0 + alpha - y);
    for k in 1..len - 1 {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - y) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

pub fn wigner(rho: &DensityMatrix, grid: &GridSpec) -> Result<WignerGrid> {
    if grid.nx < 2 || grid.np < 2 || !(grid.x_max > grid.x_min) || !(grid.p_max > grid.p_min) {
        return Err(Error::invalid("Wigner grid needs at least 2x2 points on a nonempty box"));
    }
    let trimmed = rho.truncated(rho.support_dim(1e-18));
    let x = linspace(grid.x_min, grid.x_max, grid.nx);
    let p = linspace(grid.p_min, grid.p_max, grid.np);
    let rows: Vec<Vec<f64>> = x
        .par_iter()
        .map(|&xi| p.iter().map(|&pj| wigner_point(&trimmed, xi, pj)).collect())
        .collect();
    let values = Array2::from_shape_fn((grid.nx, grid.np), |(i, j)| rows[i][j]);
    Ok(WignerGrid { x, p, values })
}
