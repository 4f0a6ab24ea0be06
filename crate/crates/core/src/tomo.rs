//! Pattern-function tomography and the readout-efficiency compensation.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cat::{readout_prob_ideal, readout_prob_inefficient, NEGLIGIBLE_PROBABILITY};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, SmearedQuadratureLaw};
use crate::numeric::{composite_legendre, ln_binomial, ln_factorial, ExactSum};
use crate::sim::HomodyneRecord;

/// Records per accumulation chunk. Fixed so results do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 4096;

/// Half-width of the tabulated range of the pattern functions.
pub const TABLE_HALF_WIDTH: f64 = 8.0;
const TABLE_STEP: f64 = 0.005;
const PANEL_WIDTH: f64 = 0.5;
const PANEL_ORDER: usize = 20;
/// The default node set resolves `cos(2 u x)` up to this `|x|`.
const NODE_X_LIMIT: f64 = 12.0;
/// Largest tolerated ratio of `int |g(u)| du` to one before cancellation in
/// the kernel integral eats the precision.
const MAX_KERNEL_CONDITION: f64 = 1e9;

/// Variance charged per real parameter and unit squared weight to a
/// compensation bin that has no data.
pub const EMPTY_BIN_VARIANCE: f64 = 0.25;

/// Position of `Re rho_nm` (and `Im rho_nm` for `n < m`) in the real
/// parameter vector: for each `n`, `Re rho_nn`, then `(Re, Im)` of
/// `rho_nm` for `m > n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub dim: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// `(re, im)` indices of element `(n, m)`, `n <= m`; `im` is `None` on the diagonal.
    pub fn index(&self, n: usize, m: usize) -> (usize, Option<usize>) {
        let (n, m) = if n <= m { (n, m) } else { (m, n) };
        // rows before n: sum_{i<n} (1 + 2 (dim - 1 - i))
        let before = n * (2 * self.dim - n);
        if n == m {
            (before, None)
        } else {
            let off = before + 1 + 2 * (m - n - 1);
            (off, Some(off + 1))
        }
    }

    /// `(n, m, is_imaginary)` for every parameter, in layout order.
    pub fn entries(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::with_capacity(self.len());
        for n in 0..self.dim {
            out.push((n, n, false));
            for m in n + 1..self.dim {
                out.push((n, m, false));
                out.push((n, m, true));
            }
        }
        out
    }
}

/// Index of the pattern function `f_{lo, lo+d}` among the `dim (dim + 1) / 2`
/// distinct ones.
fn pair_index(dim: usize, lo: usize, d: usize) -> usize {
    // d-major: all lo for d = 0, then d = 1, ...
    d * dim - d * (d.saturating_sub(1)) / 2 + lo
}

fn pair_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// `L_k^{(alpha)}(y)` for `k = 0..len`.
fn laguerre_column(len: usize, alpha: f64, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    out.push(1.0);
    if len > 1 {
        out.push(1.0 + alpha - y);
    }
    for k in 1..len.saturating_sub(1) {
        let kf = k as f64;
        out.push(((2.0 * kf + 1.0 + alpha - y) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0));
    }
    out
}

/// The pattern functions `f_nm(x)` of one dimension and homodyne efficiency.
///
/// ```text
/// f_nm(x) = sqrt(lo! / (lo+d)!) int_0^inf 2 u^{1+d} e^{-a u^2} L_lo^{(d)}(u^2) cos(2 u x - d pi/2) du
/// ```
/// with `lo = min(n, m)`, `d = |n - m|` and `a = (2 eta - 1) / (2 eta)`.
/// The integral is done by composite Gauss-Legendre on `[0, U]`, with `U`
/// taken from a polynomial-times-Gaussian envelope bound. Values on
/// `|x| <= TABLE_HALF_WIDTH` come from a quintic Hermite table.
#[derive(Clone, Debug)]
pub struct PatternFunctions {
    dim: usize,
    eta: f64,
    u_max: f64,
    nodes: Vec<f64>,
    // weight-folded kernels at the nodes, one row per pair
    kernels: Vec<Vec<f64>>,
    // value, first and second derivative at every table point, pair-major within a point
    table: Vec<f64>,
    table_deriv: Vec<f64>,
    table_deriv2: Vec<f64>,
}

impl PatternFunctions {
    pub fn new(dim: usize, eta_h: f64) -> Result<Self> {
        let mut pf = Self::untabulated(dim, eta_h)?;
        let points = (2.0 * TABLE_HALF_WIDTH / TABLE_STEP).round() as usize + 1;
        let rows: Vec<[Vec<f64>; 3]> = (0..points)
            .into_par_iter()
            .map(|i| pf.direct_with_derivatives(-TABLE_HALF_WIDTH + i as f64 * TABLE_STEP))
            .collect();
        let pairs = pair_count(dim);
        pf.table = Vec::with_capacity(points * pairs);
        pf.table_deriv = Vec::with_capacity(points * pairs);
        pf.table_deriv2 = Vec::with_capacity(points * pairs);
        for [v, dv, ddv] in rows {
            pf.table.extend(v);
            pf.table_deriv.extend(dv);
            pf.table_deriv2.extend(ddv);
        }
        Ok(pf)
    }

    /// Quadrature only, no table: for one-off evaluations.
    pub fn untabulated(dim: usize, eta_h: f64) -> Result<Self> {
        if !(eta_h > 0.5 && eta_h <= 1.0) {
            return Err(Error::EfficiencyBelowBound(eta_h));
        }
        if dim == 0 {
            return Err(Error::invalid("pattern functions need dim >= 1"));
        }
        let a = (2.0 * eta_h - 1.0) / (2.0 * eta_h);
        let u_max = envelope_cutoff(dim, a);
        let panels = (u_max / PANEL_WIDTH).ceil() as usize;
        let rule = composite_legendre(0.0, panels as f64 * PANEL_WIDTH, panels, PANEL_ORDER);
        let nodes: Vec<f64> = rule.iter().map(|&(u, _)| u).collect();
        let mut kernels = vec![Vec::new(); pair_count(dim)];
        let mut condition = vec![0.0f64; pair_count(dim)];
        // rows[node] = L_lo^{(d)}(u^2) for all (lo, d)
        for &(u, w) in &rule {
            let y = u * u;
            for d in 0..dim {
                let lag = laguerre_column(dim - d, d as f64, y);
                for (lo, l) in lag.iter().enumerate() {
                    let log_pref = 0.5 * (ln_factorial(lo) - ln_factorial(lo + d))
                        + (1.0 + d as f64) * u.ln()
                        - a * y;
                    let g = 2.0 * l * log_pref.exp();
                    let p = pair_index(dim, lo, d);
                    condition[p] += w * g.abs();
                    kernels[p].push(w * g);
                }
            }
        }
        if let Some((p, c)) = condition
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite() || **c > MAX_KERNEL_CONDITION)
        {
            return Err(Error::KernelRange(format!(
                "pattern function #{p} at eta_h = {eta_h}, dim = {dim} has integral magnitude {c:e}; \
                 lower the dimension or raise the efficiency"
            )));
        }
        Ok(PatternFunctions {
            dim,
            eta: eta_h,
            u_max,
            nodes,
            kernels,
            table: Vec::new(),
            table_deriv: Vec::new(),
            table_deriv2: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cutoff(&self) -> f64 {
        self.u_max
    }

    pub fn pairs(&self) -> usize {
        pair_count(self.dim)
    }

    /// Values of every `f_{lo,lo+d}` at `x`, in pair order.
    pub fn direct(&self, x: f64) -> Vec<f64> {
        let [v, _, _] = self.direct_with_derivatives(x);
        v
    }

    fn direct_with_derivatives(&self, x: f64) -> [Vec<f64>; 3] {
        if x.abs() > NODE_X_LIMIT {
            return self.refined(x).direct_with_derivatives(x);
        }
        let (sin, cos): (Vec<f64>, Vec<f64>) = self.nodes.iter().map(|&u| (2.0 * u * x).sin_cos()).unzip();
        let mut vals = vec![0.0; self.pairs()];
        let mut ders = vec![0.0; self.pairs()];
        let mut ders2 = vec![0.0; self.pairs()];
        for d in 0..self.dim {
            // cos(t - d pi/2) and its t-derivative, t = 2 u x
            let (c, s, sign) = match d % 4 {
                0 => (&cos, &sin, 1.0),
                1 => (&sin, &cos, 1.0),
                2 => (&cos, &sin, -1.0),
                _ => (&sin, &cos, -1.0),
            };
            let dsign = if d % 2 == 0 { -sign } else { sign };
            for lo in 0..self.dim - d {
                let p = pair_index(self.dim, lo, d);
                let k = &self.kernels[p];
                let mut v = 0.0;
                let mut dv = 0.0;
                let mut ddv = 0.0;
                for i in 0..k.len() {
                    let two_u = 2.0 * self.nodes[i];
                    v += k[i] * c[i];
                    dv += k[i] * two_u * s[i];
                    ddv += k[i] * two_u * two_u * c[i];
                }
                vals[p] = sign * v;
                ders[p] = dsign * dv;
                ders2[p] = -sign * ddv;
            }
        }
        [vals, ders, ders2]
    }

    // node set fine enough for large |x|
    fn refined(&self, x: f64) -> PatternFunctions {
        let width = PANEL_WIDTH * NODE_X_LIMIT / x.abs();
        let panels = (self.u_max / width).ceil() as usize;
        let rule = composite_legendre(0.0, panels as f64 * width, panels, PANEL_ORDER);
        let a = (2.0 * self.eta - 1.0) / (2.0 * self.eta);
        let mut kernels = vec![Vec::new(); self.pairs()];
        for &(u, w) in &rule {
            for d in 0..self.dim {
                let lag = laguerre_column(self.dim - d, d as f64, u * u);
                for (lo, l) in lag.iter().enumerate() {
                    let log_pref = 0.5 * (ln_factorial(lo) - ln_factorial(lo + d))
                        + (1.0 + d as f64) * u.ln()
                        - a * u * u;
                    kernels[pair_index(self.dim, lo, d)].push(w * 2.0 * l * log_pref.exp());
                }
            }
        }
        PatternFunctions {
            dim: self.dim,
            eta: self.eta,
            u_max: self.u_max,
            nodes: rule.iter().map(|&(u, _)| u).collect(),
            kernels,
            table: Vec::new(),
            table_deriv: Vec::new(),
            table_deriv2: Vec::new(),
        }
    }

    /// Values of every pattern function at `x`: tabulated inside the table
    /// range, by quadrature outside it.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let pairs = self.pairs();
        let pos = (x + TABLE_HALF_WIDTH) / TABLE_STEP;
        let last = self.table.len() / pairs.max(1);
        if self.table.is_empty() || !(pos >= 0.0) || pos >= (last - 1) as f64 {
            out.copy_from_slice(&self.direct(x));
            return;
        }
        let i = pos as usize;
        let t = pos - i as f64;
        // quintic Hermite basis
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let h = TABLE_STEP;
        let w0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let w1 = h * (t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5);
        let w2 = h * h * 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let w3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let w4 = h * (-4.0 * t3 + 7.0 * t4 - 3.0 * t5);
        let w5 = h * h * 0.5 * (t3 - 2.0 * t4 + t5);
        let (a, b) = (i * pairs, (i + 1) * pairs);
        for (p, o) in out[..pairs].iter_mut().enumerate() {
            *o = w0 * self.table[a + p]
                + w1 * self.table_deriv[a + p]
                + w2 * self.table_deriv2[a + p]
                + w3 * self.table[b + p]
                + w4 * self.table_deriv[b + p]
                + w5 * self.table_deriv2[b + p];
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.pairs()];
        self.eval_into(x, &mut out);
        out
    }

    /// `f_nm(x)`; symmetric in `n` and `m`.
    pub fn element(&self, n: usize, m: usize, x: f64) -> Result<f64> {
        if n >= self.dim || m >= self.dim {
            return Err(Error::invalid(format!("element ({n}, {m}) outside dimension {}", self.dim)));
        }
        let (lo, d) = (n.min(m), n.abs_diff(m));
        Ok(self.eval(x)[pair_index(self.dim, lo, d)])
    }

    pub(crate) fn pair(&self, n: usize, m: usize) -> usize {
        pair_index(self.dim, n.min(m), n.abs_diff(m))
    }
}

/// Smallest panel-aligned `U` past which every kernel envelope is below
/// `1e-17` of its peak.
fn envelope_cutoff(dim: usize, a: f64) -> f64 {
    let mut u_max = 1.0f64;
    for d in 0..dim {
        for lo in 0..dim - d {
            // |L_lo^{(d)}(y)| <= sum_k C(lo+d, lo-k) y^k / k!
            let ln_env = |u: f64| -> f64 {
                let y = u * u;
                let terms: Vec<f64> = (0..=lo)
                    .map(|k| ln_binomial(lo + d, lo - k) + k as f64 * y.ln() - ln_factorial(k))
                    .collect();
                let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let poly = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
                (2.0f64).ln() + (1.0 + d as f64) * u.ln() - a * y + poly
                    + 0.5 * (ln_factorial(lo) - ln_factorial(lo + d))
            };
            let mut peak = f64::NEG_INFINITY;
            let mut u = 0.25;
            while u < 500.0 {
                let e = ln_env(u);
                peak = peak.max(e);
                if e < peak + (1e-17f64).ln() {
                    break;
                }
                u += 0.25;
            }
            u_max = u_max.max(u);
        }
    }
    u_max
}

/// One pattern function value, computed by quadrature.
pub fn kernel_element(n: usize, m: usize, x: f64, eta_h: f64) -> Result<f64> {
    let pf = PatternFunctions::untabulated(n.max(m) + 1, eta_h)?;
    let v = pf.direct(x);
    Ok(v[pf.pair(n, m)])
}

/// Density-matrix estimate with the covariance of its real parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomogramEstimate {
    pub mean: Array2<C64>,
    /// `sqrt(var Re + var Im)` of every element.
    pub stderr: Array2<f64>,
    /// Covariance of the real parameters, in [`ParamLayout`] order.
    pub covariance: Array2<f64>,
    pub bin_counts: BTreeMap<usize, usize>,
    pub eta_h: f64,
}

impl TomogramEstimate {
    pub fn dim(&self) -> usize {
        self.mean.nrows()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout { dim: self.dim() }
    }

    pub fn records(&self) -> usize {
        self.bin_counts.values().sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|n| self.mean[[n, n]].re).sum()
    }

    /// Standard errors of `Re rho_nm` and `Im rho_nm`.
    pub fn stderr_parts(&self, n: usize, m: usize) -> (f64, f64) {
        let (re, im) = self.layout().index(n, m);
        let vr = self.covariance[[re, re]].max(0.0).sqrt();
        let vi = im.map_or(0.0, |i| self.covariance[[i, i]].max(0.0).sqrt());
        (vr, vi)
    }

    /// Real parameter vector ordered by [`ParamLayout`].
    pub fn params(&self) -> Vec<f64> {
        self.layout()
            .entries()
            .into_iter()
            .map(|(n, m, im)| if im { self.mean[[n, m]].im } else { self.mean[[n, m]].re })
            .collect()
    }

    /// Linear functional `sum_i g_i theta_i` of the parameters and its standard error.
    pub fn linear(&self, g: &[f64]) -> (f64, f64) {
        let theta = self.params();
        let value: f64 = g.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            for (j, gj) in g.iter().enumerate() {
                var += gi * self.covariance[[i, j]] * gj;
            }
        }
        (value, var.max(0.0).sqrt())
    }

    pub fn as_density_matrix(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(self.mean.clone())
    }

    fn from_parts(
        theta: Vec<f64>,
        covariance: Array2<f64>,
        bin_counts: BTreeMap<usize, usize>,
        eta_h: f64,
        dim: usize,
    ) -> Self {
        let layout = ParamLayout { dim };
        let mut mean = Array2::<C64>::zeros((dim, dim));
        let mut stderr = Array2::<f64>::zeros((dim, dim));
        for n in 0..dim {
            for m in n..dim {
                let (re, im) = layout.index(n, m);
                let value = C64::new(theta[re], im.map_or(0.0, |i| theta[i]));
                mean[[n, m]] = value;
                mean[[m, n]] = value.conj();
                let var = covariance[[re, re]] + im.map_or(0.0, |i| covariance[[i, i]]);
                stderr[[n, m]] = var.max(0.0).sqrt();
                stderr[[m, n]] = stderr[[n, m]];
            }
        }
        TomogramEstimate {
            mean,
            stderr,
            covariance,
            bin_counts,
            eta_h,
        }
    }
}

// per-phase accumulator in pattern-function space
struct PhaseGroup {
    phi: f64,
    sums: Vec<ExactSum>,
    // upper triangle of sum g g^T, row-major
    second: Vec<f64>,
}

fn accumulate_group(pf: &PatternFunctions, phi: f64, xs: &[f64]) -> PhaseGroup {
    let pairs = pf.pairs();
    let chunks: Vec<(Vec<ExactSum>, Vec<f64>)> = xs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums = vec![ExactSum::new(); pairs];
            let mut second = vec![0.0; pairs * (pairs + 1) / 2];
            let mut g = vec![0.0; pairs];
            for &x in chunk {
                pf.eval_into(x, &mut g);
                let mut k = 0;
                for i in 0..pairs {
                    sums[i].add(g[i]);
                    let gi = g[i];
                    for gj in &g[i..] {
                        second[k] += gi * gj;
                        k += 1;
                    }
                }
            }
            (sums, second)
        })
        .collect();
    let mut sums = vec![ExactSum::new(); pairs];
    let mut second = vec![0.0; pairs * (pairs + 1) / 2];
    for (s, q) in &chunks {
        for (a, b) in sums.iter_mut().zip(s) {
            a.merge(b);
        }
        for (a, b) in second.iter_mut().zip(q) {
            *a += b;
        }
    }
    PhaseGroup {
        phi,
        sums,
        second,
    }
}

// parameter -> (pair, phase factor) at phase phi
fn param_map(pf: &PatternFunctions, layout: &ParamLayout, phi: f64) -> Vec<(usize, f64)> {
    layout
        .entries()
        .into_iter()
        .map(|(n, m, im)| {
            let d = (m - n) as f64;
            // rho_nm = E[f_nm e^{i (n - m) phi}], n <= m
            let s = if n == m {
                1.0
            } else if im {
                -(d * phi).sin()
            } else {
                (d * phi).cos()
            };
            (pf.pair(n, m), s)
        })
        .collect()
}

/// Sample-mean estimate of one readout bin's density matrix, with the
/// covariance of the mean `Cov(v) / N` over the record vectors `v`.
///
/// Means are exact sums, so the estimate does not depend on record order.
pub fn estimate_with(pf: &PatternFunctions, records: &[HomodyneRecord]) -> Result<TomogramEstimate> {
    let n_total = records.len();
    if n_total < 2 {
        return Err(Error::InsufficientData(format!(
            "{n_total} record(s); the estimator needs at least 2"
        )));
    }
    let mut by_phase: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut bin_counts = BTreeMap::new();
    for r in records {
        if !r.phi.is_finite() || !r.x.is_finite() {
            return Err(Error::Format(format!("non-finite record {r:?}")));
        }
        // canonical key: phases are compared by value, -0 folded to +0
        let key = (r.phi + 0.0).to_bits();
        by_phase.entry(key).or_default().push(r.x);
        *bin_counts.entry(r.n_r).or_insert(0) += 1;
    }
    let dim = pf.dim();
    if records.len() < dim * dim {
        log::warn!(
            "{} records for a dimension-{dim} reconstruction: standard errors will be large",
            records.len()
        );
    }
    let layout = ParamLayout { dim };
    let groups: Vec<PhaseGroup> = by_phase
        .iter()
        .map(|(key, xs)| accumulate_group(pf, f64::from_bits(*key), xs))
        .collect();
    let params = layout.len();
    let pairs = pf.pairs();
    let nf = n_total as f64;
    let mut mean_acc = vec![ExactSum::new(); params];
    let mut second = Array2::<f64>::zeros((params, params));
    // offsets of each row of the packed upper triangle
    let row_start: Vec<usize> = (0..pairs).map(|i| i * pairs - i * i.saturating_sub(1) / 2).collect();
    for g in &groups {
        let map = param_map(pf, &layout, g.phi);
        let sums: Vec<f64> = g.sums.iter().map(|s| s.value()).collect();
        for (i, &(pi, si)) in map.iter().enumerate() {
            mean_acc[i].add(si * sums[pi]);
        }
        for (i, &(pi, si)) in map.iter().enumerate() {
            if si == 0.0 {
                continue;
            }
            for (j, &(pj, sj)) in map.iter().enumerate().skip(i) {
                let (a, b) = if pi <= pj { (pi, pj) } else { (pj, pi) };
                second[[i, j]] += si * sj * g.second[row_start[a] + (b - a)];
            }
        }
    }
    let theta: Vec<f64> = mean_acc.iter().map(|s| s.value() / nf).collect();
    let mut covariance = Array2::<f64>::zeros((params, params));
    for i in 0..params {
        for j in i..params {
            // unbiased sample covariance, divided by N for the mean
            let c = (second[[i, j]] - nf * theta[i] * theta[j]) / (nf - 1.0) / nf;
            covariance[[i, j]] = c;
            covariance[[j, i]] = c;
        }
    }
    Ok(TomogramEstimate::from_parts(theta, covariance, bin_counts, pf.eta(), dim))
}

pub fn estimate_rho(records: &[HomodyneRecord], dim: usize, eta_h: f64) -> Result<TomogramEstimate> {
    let pf = PatternFunctions::new(dim, eta_h)?;
    estimate_with(&pf, records)
}

/// Separate estimates for every readout bin with at least two records.
pub fn estimate_bins(pf: &PatternFunctions, records: &[HomodyneRecord]) -> Result<BTreeMap<usize, TomogramEstimate>> {
    let mut bins: BTreeMap<usize, Vec<HomodyneRecord>> = BTreeMap::new();
    for r in records {
        bins.entry(r.n_r).or_default().push(*r);
    }
    let mut out = BTreeMap::new();
    for (n, recs) in bins {
        if recs.len() >= 2 {
            out.insert(n, estimate_with(pf, &recs)?);
        }
    }
    Ok(out)
}

/// Expectation of the estimator on the exact smeared law of `rho`, by
/// deterministic quadrature over `x` and an even grid of `phases` phases.
/// Phase averaging is exact once `phases` exceeds `2 (dim - 1)`.
pub fn expected_estimate(rho: &DensityMatrix, pf: &PatternFunctions, phases: usize) -> Result<Array2<C64>> {
    let dim = pf.dim();
    let nodes = composite_legendre(-7.0, 7.0, 140, 16);
    let vals: Vec<Vec<f64>> = nodes.iter().map(|&(x, _)| pf.direct(x)).collect();
    let mut out = Array2::<C64>::zeros((dim, dim));
    for j in 0..phases {
        let phi = std::f64::consts::PI * j as f64 / phases as f64;
        let law = SmearedQuadratureLaw::new(rho, phi, pf.eta())?;
        let dens: Vec<f64> = nodes.iter().map(|&(x, w)| w * law.raw(x)).collect();
        for n in 0..dim {
            for m in 0..dim {
                let p = pf.pair(n, m);
                let s: f64 = dens.iter().zip(&vals).map(|(d, v)| d * v[p]).sum();
                let phase = C64::from_polar(1.0, (n as f64 - m as f64) * phi);
                out[[n, m]] += phase * s / phases as f64;
            }
        }
    }
    Ok(out)
}

/// Weights `c_j` of the inversion `rho_k = sum_j c_j rho_{k+j}^{eta_d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationWeights {
    pub k: usize,
    pub eta_d: f64,
    pub r: f64,
    pub weights: Vec<f64>,
    pub j_max: usize,
    /// Bound on `sum_{j > j_max} |c_j|`.
    pub tail_bound: f64,
    /// `|c_{j_max} / c_{j_max - 1}|`, the last ratio computed.
    pub ratio: f64,
    /// Limit of the ratio as `j -> inf`.
    pub asymptotic_ratio: f64,
    /// `sum_j c_j^2 / P_eta(k + j)`: variance inflation per recorded trial.
    pub variance_factor: f64,
}

/// `lim |c_{j+1} / c_j| = (1 - eta) rho / (1 - (1 - eta) rho)`, `rho = 2 sinh^2 r / (2 sinh^2 r + 1)`.
pub fn asymptotic_weight_ratio(eta_d: f64, r: f64) -> f64 {
    let rho = crate::cat::readout_decay(r);
    (1.0 - eta_d) * rho / (1.0 - (1.0 - eta_d) * rho)
}

pub fn compensation_weights(k: usize, eta_d: f64, r: f64, tolerance: f64) -> Result<CompensationWeights> {
    if !(eta_d > 0.0 && eta_d <= 1.0) {
        return Err(Error::invalid(format!("eta_d = {eta_d} outside (0, 1]")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("weight tolerance must be positive"));
    }
    let p_k = readout_prob_ideal(k, r);
    if p_k < NEGLIGIBLE_PROBABILITY {
        return Err(Error::NegligibleReadout { n: k, prob: p_k });
    }
    let asymptotic_ratio = asymptotic_weight_ratio(eta_d, r);
    let weight = |j: usize| -> f64 {
        let p = readout_prob_inefficient(k + j, eta_d, r);
        if p == 0.0 {
            return 0.0;
        }
        if j > 0 && eta_d == 1.0 {
            return 0.0;
        }
        let ln_ratio = if j == 0 { 0.0 } else { j as f64 * (1.0 / eta_d - 1.0).ln() };
        let ln_mag = ln_binomial(k + j, k) + ln_ratio + p.ln()
            - p_k.ln()
            - k as f64 * eta_d.ln();
        let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * ln_mag.exp()
    };
    let mut weights = vec![weight(0)];
    let mut ratio = 0.0;
    let mut tail_bound = 0.0;
    if eta_d < 1.0 {
        const SCAN: usize = 5000;
        let mut j = 0;
        loop {
            j += 1;
            let c = weight(j);
            let prev = weights[j - 1];
            weights.push(c);
            if prev == 0.0 {
                ratio = 0.0;
                tail_bound = 0.0;
                break;
            }
            ratio = (c / prev).abs();
            // ratios decrease towards their limit, so the last one bounds the tail
            if ratio < 1.0 {
                tail_bound = c.abs() * ratio / (1.0 - ratio);
                if tail_bound < tolerance {
                    break;
                }
            }
            if j >= SCAN {
                return Err(Error::NonConvergent { ratio });
            }
        }
    }
    let variance_factor = weights
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let p = readout_prob_inefficient(k + j, eta_d, r);
            if p > 0.0 {
                c * c / p
            } else {
                0.0
            }
        })
        .sum();
    Ok(CompensationWeights {
        k,
        eta_d,
        r,
        j_max: weights.len() - 1,
        weights,
        tail_bound,
        ratio,
        asymptotic_ratio,
        variance_factor,
    })
}

/// `sum_j c_j rho_{k+j}` over exact matrices, stopping at the first
/// missing one.
pub fn combine_exact(weights: &CompensationWeights, matrices: &[DensityMatrix]) -> Result<Array2<C64>> {
    let dim = matrices
        .first()
        .ok_or_else(|| Error::InsufficientData("no matrices to combine".into()))?
        .dim();
    let mut out = Array2::<C64>::zeros((dim, dim));
    for (c, m) in weights.weights.iter().zip(matrices) {
        if m.dim() != dim {
            return Err(Error::invalid("matrices to combine differ in dimension"));
        }
        out.scaled_add(C64::new(*c, 0.0), m.elements());
    }
    Ok(out)
}

/// Compensated estimate from per-bin estimates. Bins with fewer than two
/// records enter with a zero estimate and variance `EMPTY_BIN_VARIANCE c_j^2`
/// per parameter; their total `|c_j|` may not exceed `max_missing`.
pub fn compensate(
    bins: &BTreeMap<usize, TomogramEstimate>,
    weights: &CompensationWeights,
    max_missing: f64,
) -> Result<TomogramEstimate> {
    let first = bins
        .get(&weights.k)
        .ok_or_else(|| Error::InsufficientData(format!("target bin n_r = {} has no estimate", weights.k)))?;
    let dim = first.dim();
    let layout = ParamLayout { dim };
    let params = layout.len();
    let mut theta = vec![0.0; params];
    let mut covariance = Array2::<f64>::zeros((params, params));
    let mut counts = BTreeMap::new();
    let mut missing = 0.0;
    let mut missing_bins = Vec::new();
    for (j, &c) in weights.weights.iter().enumerate() {
        let n = weights.k + j;
        match bins.get(&n) {
            Some(est) if est.records() >= 2 => {
                if est.dim() != dim || est.eta_h != first.eta_h {
                    return Err(Error::invalid("bin estimates differ in dimension or efficiency"));
                }
                for (t, v) in theta.iter_mut().zip(est.params()) {
                    *t += c * v;
                }
                covariance.scaled_add(c * c, &est.covariance);
                counts.insert(n, est.records());
            }
            _ => {
                missing += c.abs();
                missing_bins.push(n);
                for i in 0..params {
                    covariance[[i, i]] += EMPTY_BIN_VARIANCE * c * c;
                }
            }
        }
    }
    if missing > max_missing {
        return Err(Error::MissingBins {
            missing,
            tolerance: max_missing,
            bins: missing_bins,
        });
    }
    if !missing_bins.is_empty() {
        log::warn!("compensation bins {missing_bins:?} are empty; weight {missing:e} charged to the error");
    }
    Ok(TomogramEstimate::from_parts(theta, covariance, counts, first.eta_h, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat::{CatSource, SchemeParams};
    use crate::fock::{squeeze_matrix, FockVector};
    use crate::sim::sample_quadrature;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn layout_round_trip() {
        let l = ParamLayout { dim: 5 };
        let entries = l.entries();
        assert_eq!(entries.len(), 25);
        for (i, &(n, m, im)) in entries.iter().enumerate() {
            let (re, imi) = l.index(n, m);
            assert_eq!(if im { imi.unwrap() } else { re }, i);
        }
        assert_eq!(l.index(3, 1), l.index(1, 3));
    }

    #[test]
    fn pair_indexing_is_dense() {
        let dim = 6;
        let mut seen = vec![false; pair_count(dim)];
        for d in 0..dim {
            for lo in 0..dim - d {
                let p = pair_index(dim, lo, d);
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn efficiency_bound_rejected() {
        assert!(matches!(kernel_element(0, 0, 0.0, 0.5), Err(Error::EfficiencyBelowBound(_))));
        assert!(matches!(PatternFunctions::new(4, 0.3), Err(Error::EfficiencyBelowBound(_))));
    }

    #[test]
    fn blow_up_reported_as_range_error() {
        assert!(matches!(PatternFunctions::untabulated(40, 0.55), Err(Error::KernelRange(_))));
    }

    #[test]
    fn table_matches_quadrature() {
        let pf = PatternFunctions::new(10, 0.8).unwrap();
        for &x in &[-3.3, -0.777, 0.0, 0.0123, 1.5, 4.9] {
            let t = pf.eval(x);
            let d = pf.direct(x);
            for (a, b) in t.iter().zip(&d) {
                assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "x = {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn quadrature_is_converged() {
        // compare with a rule of twice the density on a longer interval
        let pf = PatternFunctions::untabulated(8, 0.8).unwrap();
        let nodes = composite_legendre(0.0, 2.0 * pf.cutoff(), 4 * (pf.cutoff() / PANEL_WIDTH) as usize, 24);
        let a = (2.0 * 0.8 - 1.0) / (2.0 * 0.8);
        for &x in &[0.3, -2.1] {
            let v = pf.direct(x);
            for (n, m) in [(0usize, 0usize), (3, 5), (7, 7), (0, 7)] {
                let (lo, d) = (n.min(m), n.abs_diff(m));
                let want: f64 = nodes
                    .iter()
                    .map(|&(u, w)| {
                        let l = laguerre_column(lo + 1, d as f64, u * u)[lo];
                        let pref = (0.5 * (ln_factorial(lo) - ln_factorial(lo + d))).exp();
                        w * 2.0 * pref * u.powi(1 + d as i32) * (-a * u * u).exp() * l
                            * (2.0 * u * x - d as f64 * std::f64::consts::FRAC_PI_2).cos()
                    })
                    .sum();
                let got = v[pair_index(8, lo, d)];
                assert!((got - want).abs() < 1e-11 * (1.0 + want.abs()), "({n},{m}) at {x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ideal_vacuum_pattern_function_closed_form() {
        // eta = 1 at x = 0: int 2u e^{-u^2/2} du = 2 and int 2u (1 - u^2) e^{-u^2/2} du = -2
        let v = kernel_element(0, 0, 0.0, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "{v}");
        let one = kernel_element(1, 1, 0.0, 1.0).unwrap();
        assert!((one + 2.0).abs() < 1e-12, "{one}");
    }

    #[test]
    fn ideal_diagonal_pattern_functions_bounded() {
        let pf = PatternFunctions::new(8, 1.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=800 {
            let x = -8.0 + 0.02 * i as f64;
            for n in 0..8 {
                worst = worst.max(pf.element(n, n, x).unwrap().abs());
            }
        }
        assert!(worst.is_finite() && worst < 10.0, "{worst}");
    }

    // int dx dphi/pi p_eta(x|phi) f_nm(x) e^{i(n-m)phi}, phases on an exact grid
    #[test]
    fn unbiased_on_number_states() {
        let pf = PatternFunctions::untabulated(11, 0.8).unwrap();
        for n in 0..3 {
            let rho = FockVector::number_state(n, 12).unwrap().projector();
            let est = expected_estimate(&rho, &pf, 1).unwrap();
            for a in 0..11 {
                let want = if a == n { 1.0 } else { 0.0 };
                assert!((est[[a, a]].re - want).abs() < 1e-6, "|{n}>: rho_{a}{a} = {}", est[[a, a]]);
            }
        }
    }

    #[test]
    fn unbiased_on_complex_superposition_and_squeezed_vacuum() {
        let pf = PatternFunctions::untabulated(8, 0.8).unwrap();
        let v = FockVector::normalized_from(
            (0..5).map(|n| C64::from_polar(0.7f64.powi(n), 0.9 * n as f64 + 0.2)).collect(),
        )
        .unwrap();
        let s = squeeze_matrix(0.3, 30).unwrap();
        let sq = FockVector::vacuum(30).transformed(&s);
        for rho in [v.projector(), sq.projector()] {
            let est = expected_estimate(&rho, &pf, 24).unwrap();
            for n in 0..8 {
                for m in 0..8 {
                    let want = if n < rho.dim() && m < rho.dim() { rho.get(n, m) } else { C64::new(0.0, 0.0) };
                    assert!((est[[n, m]] - want).norm() < 1e-6, "({n},{m}): {} vs {want}", est[[n, m]]);
                }
            }
        }
    }

    #[test]
    fn rotated_squeezed_state_orientation() {
        // a squeezed vacuum rotated by theta has rho_02 = |rho_02| e^{-2 i theta} up to sign
        let s = squeeze_matrix(0.5, 30).unwrap();
        let rho = FockVector::vacuum(30).transformed(&s).projector().rotated(0.4);
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut records = Vec::new();
        for j in 0..16 {
            let phi = std::f64::consts::PI * j as f64 / 16.0;
            for x in sample_quadrature(&rho, phi, 0.9, 4000, &mut rng).unwrap() {
                records.push(HomodyneRecord { n_r: 0, phi, x });
            }
        }
        let est = estimate_rho(&records, 4, 0.9).unwrap();
        let want = rho.get(0, 2);
        let got = est.mean[[0, 2]];
        let (sr, si) = est.stderr_parts(0, 2);
        assert!((got.re - want.re).abs() < 4.0 * sr && (got.im - want.im).abs() < 4.0 * si, "{got} vs {want}");
        // the opposite rotation would flip the imaginary part well outside the error
        assert!((got.im + want.im).abs() > 4.0 * si);
    }

    #[test]
    fn shuffled_records_give_identical_estimate() {
        let rho = FockVector::number_state(1, 6).unwrap().projector();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut records = Vec::new();
        for j in 0..8 {
            let phi = std::f64::consts::PI * j as f64 / 8.0;
            for x in sample_quadrature(&rho, phi, 0.8, 1500, &mut rng).unwrap() {
                records.push(HomodyneRecord { n_r: 1, phi, x });
            }
        }
        let pf = PatternFunctions::new(5, 0.8).unwrap();
        let a = estimate_with(&pf, &records).unwrap();
        records.reverse();
        records.swap(3, 9000);
        let b = estimate_with(&pf, &records).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!((a.covariance.clone() - &b.covariance).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn vacuum_monte_carlo_estimate() {
        let rho = FockVector::vacuum(4).projector();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut records = Vec::new();
        for j in 0..10 {
            let phi = std::f64::consts::PI * j as f64 / 10.0;
            for x in sample_quadrature(&rho, phi, 0.8, 10_000, &mut rng).unwrap() {
                records.push(HomodyneRecord { n_r: 0, phi, x });
            }
        }
        let est = estimate_rho(&records, 4, 0.8).unwrap();
        for n in 0..4 {
            for m in n..4 {
                let want = if n == 0 && m == 0 { 1.0 } else { 0.0 };
                let (sr, si) = est.stderr_parts(n, m);
                let z = est.mean[[n, m]];
                assert!((z.re - want).abs() < 3.5 * sr, "({n},{m}) re {z}");
                assert!(z.im.abs() <= 3.5 * si, "({n},{m}) im {z}");
            }
        }
        assert!(est.stderr.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn too_few_records() {
        let r = [HomodyneRecord { n_r: 0, phi: 0.0, x: 0.1 }];
        assert!(matches!(estimate_rho(&r, 3, 0.8), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn weights_reference_values() {
        let w = compensation_weights(2, 0.3, 0.4, 1e-4).unwrap();
        let want = [1.63, -0.872, 0.327, -0.105, 0.031];
        for (c, t) in w.weights.iter().zip(want) {
            assert!((c - t).abs() < 5e-3 * t.abs().max(0.1), "{c} vs {t}");
        }
        assert!((w.weights[0] - readout_prob_inefficient(2, 0.3, 0.4) / (readout_prob_ideal(2, 0.4) * 0.09)).abs() < 1e-12);
        assert!(w.weights.windows(2).all(|p| p[0] * p[1] < 0.0));
        assert!(w.tail_bound < 1e-4);
        let sh2 = 0.4f64.sinh().powi(2);
        let rho = 2.0 * sh2 / (2.0 * sh2 + 1.0);
        assert!((rho - 0.2523).abs() < 1e-4);
        assert!((w.asymptotic_ratio - 0.7 * rho / (1.0 - 0.7 * rho)).abs() < 1e-14);
        // independent evaluation of sum_{j <= 8} c_j^2 / P_eta(2 + j)
        assert_eq!(w.j_max, 8);
        assert!((w.variance_factor / 44_644.394_952 - 1.0).abs() < 1e-9, "{}", w.variance_factor);
    }

    #[test]
    fn unit_efficiency_single_weight() {
        let w = compensation_weights(3, 1.0, 0.4, 1e-6).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn exact_inversion_identity() {
        let src = CatSource::new(SchemeParams::new(0.4, 0.4, 0.3, 40).unwrap()).unwrap();
        for k in 0..4 {
            let w = compensation_weights(k, 0.3, 0.4, 1e-12).unwrap();
            let mut mats = Vec::new();
            for j in 0..=w.j_max {
                match src.conditional_mixture(k + j) {
                    Ok(m) => mats.push(m),
                    Err(Error::NegligibleReadout { .. }) => break,
                    Err(e) => panic!("{e}"),
                }
            }
            let combined = combine_exact(&w, &mats).unwrap();
            let target = src.amplified_cat(k).unwrap().projector();
            let worst = combined
                .iter()
                .zip(target.elements().iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-8, "k = {k}: {worst:e}");
        }
    }

    #[test]
    fn compensate_identity_and_missing_bins() {
        let rho = FockVector::vacuum(4).projector();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut records = Vec::new();
        for j in 0..6 {
            let phi = std::f64::consts::PI * j as f64 / 6.0;
            for x in sample_quadrature(&rho, phi, 0.8, 500, &mut rng).unwrap() {
                records.push(HomodyneRecord { n_r: 2, phi, x });
            }
        }
        let pf = PatternFunctions::new(3, 0.8).unwrap();
        let bins = estimate_bins(&pf, &records).unwrap();
        let unit = compensation_weights(2, 1.0, 0.4, 1e-4).unwrap();
        assert_eq!(compensate(&bins, &unit, 0.0).unwrap(), bins[&2]);
        let lossy = compensation_weights(2, 0.3, 0.4, 1e-4).unwrap();
        match compensate(&bins, &lossy, 1e-2) {
            Err(Error::MissingBins { bins, .. }) => assert_eq!(bins[0], 3),
            other => panic!("{other:?}"),
        }
    }
}
