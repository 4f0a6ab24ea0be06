//! Derived quantities of an estimate and their comparison with theory.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cat::TheoryQuadrature;
use crate::error::{Error, Result};
use crate::fock::{ho_wavefunctions, DensityMatrix, FockVector, QuadratureLaw, SmearedQuadratureLaw};
use crate::numeric::{composite_legendre, linspace};
use crate::sim::HomodyneRecord;
use crate::tomo::TomogramEstimate;
use crate::wigner::{parity_kernel, GridSpec, WignerGrid};

/// `|z|` above which an estimate counts as inconsistent with theory.
pub const Z_THRESHOLD: f64 = 3.0;
/// Significance of the histogram chi-square test.
pub const CHI2_LEVEL: f64 = 0.01;
/// Mass a quadrature grid must cover.
pub const REQUIRED_COVERAGE: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub quantity: String,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub theory: Vec<f64>,
    pub max_abs_z: f64,
    pub chi2: f64,
    /// Points with a positive standard error.
    pub dof: usize,
}

impl ComparisonReport {
    pub fn new(
        quantity: impl Into<String>,
        grid: Vec<f64>,
        estimate: Vec<f64>,
        stderr: Vec<f64>,
        theory: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        if estimate.len() != n || stderr.len() != n || theory.len() != n {
            return Err(Error::invalid("report arrays differ in length"));
        }
        if stderr.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("standard errors must be nonnegative"));
        }
        let mut report = ComparisonReport {
            quantity: quantity.into(),
            grid,
            estimate,
            stderr,
            theory,
            max_abs_z: 0.0,
            chi2: 0.0,
            dof: 0,
        };
        let z = report.z_scores();
        report.max_abs_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (zi, s) in z.iter().zip(&report.stderr) {
            if *s > 0.0 {
                report.chi2 += zi * zi;
                report.dof += 1;
            }
        }
        Ok(report)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `(estimate - theory) / stderr`; zero where both agree exactly.
    pub fn z_scores(&self) -> Vec<f64> {
        self.estimate
            .iter()
            .zip(&self.theory)
            .zip(&self.stderr)
            .map(|((e, t), s)| {
                let d = e - t;
                if d == 0.0 {
                    0.0
                } else if *s > 0.0 {
                    d / s
                } else {
                    f64::INFINITY.copysign(d)
                }
            })
            .collect()
    }

    pub fn consistent(&self) -> bool {
        self.max_abs_z <= Z_THRESHOLD
    }

    /// Upper-tail probability of the chi-square statistic.
    pub fn chi2_p_value(&self) -> f64 {
        if self.dof == 0 {
            return 1.0;
        }
        match ChiSquared::new(self.dof as f64) {
            Ok(d) => 1.0 - d.cdf(self.chi2),
            Err(_) => f64::NAN,
        }
    }
}

/// Diagonal of the estimate against a theory population list (zero-padded).
pub fn number_distribution(est: &TomogramEstimate, theory: &[f64]) -> Result<ComparisonReport> {
    let dim = est.dim();
    let grid = (0..dim).map(|n| n as f64).collect();
    let estimate = (0..dim).map(|n| est.mean[[n, n]].re).collect();
    let stderr = (0..dim).map(|n| est.stderr[[n, n]]).collect();
    let theory = (0..dim).map(|n| theory.get(n).copied().unwrap_or(0.0)).collect();
    ComparisonReport::new("photon number distribution", grid, estimate, stderr, theory)
}

/// Theory curve for a quadrature comparison.
#[derive(Clone, Debug)]
pub enum QuadratureTheory {
    /// Closed form for the amplified cat of readout count `n_r`.
    Analytic { n_r: usize, r: f64, r_s: f64 },
    /// Ideal homodyne law of a state.
    Fock(DensityMatrix),
    /// Homodyne law of a state seen at efficiency `eta`.
    Smeared(DensityMatrix, f64),
}

impl QuadratureTheory {
    fn label(&self) -> &'static str {
        match self {
            QuadratureTheory::Analytic { .. } => "closed form",
            QuadratureTheory::Fock(_) => "number-basis law",
            QuadratureTheory::Smeared(..) => "smeared number-basis law",
        }
    }

    /// Density at phase `phi` as a closure.
    pub fn density(&self, phi: f64) -> Result<Box<dyn Fn(f64) -> f64 + Sync + '_>> {
        Ok(match self {
            QuadratureTheory::Analytic { n_r, r, r_s } => {
                let t = TheoryQuadrature::new(*n_r, phi, *r, *r_s);
                Box::new(move |x| t.density(x))
            }
            QuadratureTheory::Fock(rho) => {
                let law = QuadratureLaw::new(rho, phi);
                Box::new(move |x| law.raw(x))
            }
            QuadratureTheory::Smeared(rho, eta) => {
                let law = SmearedQuadratureLaw::new(rho, phi, *eta)?;
                Box::new(move |x| law.raw(x))
            }
        })
    }
}

fn check_coverage(density: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Result<()> {
    let inside: f64 = composite_legendre(lo, hi, 200, 12).iter().map(|&(x, w)| w * density(x)).sum();
    let wide = 1.0 + 4.0 * (hi - lo).abs();
    let total: f64 = composite_legendre(lo - wide, hi + wide, 600, 12)
        .iter()
        .map(|&(x, w)| w * density(x))
        .sum();
    let captured = inside / total;
    if captured < REQUIRED_COVERAGE {
        return Err(Error::GridCoverage {
            captured,
            required: REQUIRED_COVERAGE,
        });
    }
    Ok(())
}

/// Coefficients `g` with `p(x|phi) = g . theta` for the real parameters `theta`.
fn quadrature_coefficients(est: &TomogramEstimate, phi: f64, x: f64) -> Vec<f64> {
    let dim = est.dim();
    let psi = ho_wavefunctions(dim - 1, x);
    est.layout()
        .entries()
        .into_iter()
        .map(|(n, m, im)| {
            if n == m {
                psi[n] * psi[n]
            } else {
                // rho_nm e^{i d phi} + c.c., d = m - n
                let dphi = (m - n) as f64 * phi;
                let c = 2.0 * psi[n] * psi[m];
                if im {
                    -c * dphi.sin()
                } else {
                    c * dphi.cos()
                }
            }
        })
        .collect()
}

/// Ideal quadrature density of the estimated state on `grid`, with errors
/// propagated through the full parameter covariance.
pub fn estimate_quadrature(est: &TomogramEstimate, phi: f64, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    grid.iter()
        .map(|&x| est.linear(&quadrature_coefficients(est, phi, x)))
        .unzip()
}

/// Quadrature density reconstructed from the estimate against a theory curve.
pub fn quadrature_report(
    est: &TomogramEstimate,
    phi: f64,
    grid: &[f64],
    theory: &QuadratureTheory,
) -> Result<ComparisonReport> {
    if grid.len() < 3 {
        return Err(Error::invalid("quadrature grid needs at least 3 points"));
    }
    let f = theory.density(phi)?;
    check_coverage(&*f, grid[0], grid[grid.len() - 1])?;
    let (estimate, stderr) = estimate_quadrature(est, phi, grid);
    let theory_vals = grid.iter().map(|&x| f(x)).collect();
    ComparisonReport::new(
        format!("quadrature density at phi = {phi} vs {}", theory.label()),
        grid.to_vec(),
        estimate,
        stderr,
        theory_vals,
    )
}

/// Raw histogram of the records of one bin taken at phase `phi`, against the
/// bin-averaged theory density. `edges` has one more entry than the bins.
pub fn histogram_report(
    records: &[HomodyneRecord],
    n_r: usize,
    phi: f64,
    edges: &[f64],
    theory: &QuadratureTheory,
) -> Result<ComparisonReport> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("histogram edges must be increasing"));
    }
    let xs: Vec<f64> = records
        .iter()
        .filter(|r| r.n_r == n_r && (r.phi - phi).abs() < 1e-12)
        .map(|r| r.x)
        .collect();
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} records at n_r = {n_r}, phi = {phi}",
            xs.len()
        )));
    }
    let f = theory.density(phi)?;
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for x in &xs {
        if *x >= edges[0] && *x < edges[bins] {
            let i = edges.partition_point(|e| e <= x) - 1;
            counts[i] += 1;
        }
    }
    let n = xs.len() as f64;
    let mut grid = Vec::with_capacity(bins);
    let mut estimate = Vec::with_capacity(bins);
    let mut stderr = Vec::with_capacity(bins);
    let mut theory_vals = Vec::with_capacity(bins);
    for i in 0..bins {
        let (a, b) = (edges[i], edges[i + 1]);
        let width = b - a;
        let mass: f64 = composite_legendre(a, b, 1, 16).iter().map(|&(x, w)| w * f(x)).sum();
        grid.push(0.5 * (a + b));
        estimate.push(counts[i] as f64 / (n * width));
        // binomial error with the theory probability, so empty bins keep a finite weight
        let p = mass.clamp(0.0, 1.0);
        stderr.push((p * (1.0 - p) / n).sqrt() / width);
        theory_vals.push(mass / width);
    }
    ComparisonReport::new(
        format!("histogram n_r = {n_r} at phi = {phi} vs {}", theory.label()),
        grid,
        estimate,
        stderr,
        theory_vals,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    pub value: f64,
    pub stderr: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub x_max: f64,
    pub x_min: f64,
}

/// Maxima below this fraction of the global maximum are ignored.
const SIGNIFICANT_MAXIMUM: f64 = 0.1;

/// Fringe visibility `(p_max - p_min) / (p_max + p_min)` of sampled values;
/// `p_min` is the lowest interior minimum lying between significant maxima.
/// A negative minimum is clamped to zero, giving visibility 1; its error is
/// still the linearized one at the clamp point.
pub fn fringe_visibility(grid: &[f64], values: &[f64], stderr: &[f64]) -> Result<Visibility> {
    let n = values.len();
    if n < 3 || grid.len() != n || stderr.len() != n {
        return Err(Error::invalid("visibility needs three or more aligned points"));
    }
    let (imax, &p_max) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if !(p_max > 0.0) {
        return Err(Error::Undefined("density has no positive maximum".into()));
    }
    let maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| values[i] >= values[i - 1] && values[i] >= values[i + 1])
        .filter(|&i| values[i] >= SIGNIFICANT_MAXIMUM * p_max)
        .collect();
    let (first, last) = match (maxima.first(), maxima.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => {
            return Err(Error::Undefined(
                "no interior minimum between significant maxima".into(),
            ))
        }
    };
    let imin = (first + 1..last)
        .filter(|&i| values[i] <= values[i - 1] && values[i] <= values[i + 1])
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .ok_or_else(|| Error::Undefined("no interior minimum between significant maxima".into()))?;
    let p_min = values[imin].max(0.0);
    let s = p_max + p_min;
    let value = (p_max - p_min) / s;
    // linearized in p_max and p_min, taken as independent
    let d_max = 2.0 * p_min / (s * s);
    let d_min = -2.0 * p_max / (s * s);
    let var = (d_max * stderr[imax]).powi(2) + (d_min * stderr[imin]).powi(2);
    Ok(Visibility {
        value,
        stderr: var.sqrt(),
        p_max,
        p_min,
        x_max: grid[imax],
        x_min: grid[imin],
    })
}

/// Visibility of the estimated curve of a report.
pub fn visibility(report: &ComparisonReport) -> Result<Visibility> {
    fringe_visibility(&report.grid, &report.estimate, &report.stderr)
}

/// Visibility of the theory curve of a report.
pub fn theory_visibility(report: &ComparisonReport) -> Result<Visibility> {
    let zeros = vec![0.0; report.len()];
    fringe_visibility(&report.grid, &report.theory, &zeros)
}

/// Visibility of the ideal quadrature density of an estimate. The error uses
/// the full covariance of the two functionals at the extrema.
pub fn estimate_visibility(est: &TomogramEstimate, phi: f64, grid: &[f64]) -> Result<Visibility> {
    let (values, stderr) = estimate_quadrature(est, phi, grid);
    let mut v = fringe_visibility(grid, &values, &stderr)?;
    let s = v.p_max + v.p_min;
    let d_max = 2.0 * v.p_min / (s * s);
    // a clamped minimum keeps the slope at the clamp point
    let d_min = -2.0 * v.p_max / (s * s);
    let g: Vec<f64> = quadrature_coefficients(est, phi, v.x_max)
        .iter()
        .zip(quadrature_coefficients(est, phi, v.x_min))
        .map(|(a, b)| d_max * a + d_min * b)
        .collect();
    v.stderr = est.linear(&g).1;
    Ok(v)
}

/// Every real parameter of the estimate (`Re rho_nn`, then `Re`/`Im rho_nm`
/// for `m > n`) against a theory matrix; the grid is the parameter index.
pub fn element_report(est: &TomogramEstimate, theory: &DensityMatrix) -> ComparisonReport {
    let entries = est.layout().entries();
    let theta = est.params();
    let sd: Vec<f64> = est.covariance.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let t = entries
        .iter()
        .map(|&(n, m, im)| {
            let z = if n < theory.dim() && m < theory.dim() {
                theory.get(n, m)
            } else {
                Default::default()
            };
            if im {
                z.im
            } else {
                z.re
            }
        })
        .collect();
    let grid = (0..entries.len()).map(|i| i as f64).collect();
    ComparisonReport::new("density matrix parameters", grid, theta, sd, t).expect("aligned by construction")
}

/// `<target| rho |target>` with its standard error; the target is cut to the
/// estimate's dimension.
pub fn fidelity(est: &TomogramEstimate, target: &FockVector) -> (f64, f64) {
    let dim = est.dim();
    let amps = target.amplitudes();
    let psi: Vec<crate::C64> = (0..dim)
        .map(|n| amps.get(n).copied().unwrap_or_default())
        .collect();
    let kept: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if target.norm_sqr() - kept > 1e-3 {
        log::warn!("fidelity target loses {:e} of its norm to truncation", target.norm_sqr() - kept);
    }
    let g: Vec<f64> = est
        .layout()
        .entries()
        .into_iter()
        .map(|(n, m, im)| {
            if n == m {
                psi[n].norm_sqr()
            } else {
                // 2 Re(rho_nm conj(psi_n) psi_m)
                let w = psi[n].conj() * psi[m];
                if im {
                    -2.0 * w.im
                } else {
                    2.0 * w.re
                }
            }
        })
        .collect();
    est.linear(&g)
}

/// Wigner function of the estimate with linearly propagated errors.
#[derive(Clone, Debug)]
pub struct WignerEstimate {
    pub grid: WignerGrid,
    pub stderr: Array2<f64>,
}

pub fn wigner_estimate(est: &TomogramEstimate, spec: &GridSpec) -> Result<WignerEstimate> {
    if spec.nx < 2 || spec.np < 2 || !(spec.x_max > spec.x_min) || !(spec.p_max > spec.p_min) {
        return Err(Error::invalid("Wigner grid needs at least 2x2 points on a nonempty box"));
    }
    let dim = est.dim();
    let entries = est.layout().entries();
    let x = linspace(spec.x_min, spec.x_max, spec.nx);
    let p = linspace(spec.p_min, spec.p_max, spec.np);
    let two_over_pi = 2.0 / std::f64::consts::PI;
    let rows: Vec<Vec<(f64, f64)>> = x
        .par_iter()
        .map(|&xi| {
            p.iter()
                .map(|&pj| {
                    let a = parity_kernel(dim, xi, pj);
                    let g: Vec<f64> = entries
                        .iter()
                        .map(|&(n, m, im)| {
                            if n == m {
                                two_over_pi * a[[n, n]].re
                            } else if im {
                                // Im rho_nm enters as Im(A_nm) - Im(A_mn)
                                two_over_pi * (a[[n, m]].im - a[[m, n]].im)
                            } else {
                                two_over_pi * (a[[m, n]].re + a[[n, m]].re)
                            }
                        })
                        .collect();
                    est.linear(&g)
                })
                .collect()
        })
        .collect();
    let values = Array2::from_shape_fn((spec.nx, spec.np), |(i, j)| rows[i][j].0);
    let stderr = Array2::from_shape_fn((spec.nx, spec.np), |(i, j)| rows[i][j].1);
    Ok(WignerEstimate {
        grid: WignerGrid { x, p, values },
        stderr,
    })
}
