//! Single-mode numerics in a truncated photon-number basis.
//!
//! Quadratures follow `x_phi = (a^dag e^{i phi} + a e^{-i phi}) / 2`, so the
//! vacuum has quadrature variance 1/4. The phase-`phi` quadrature eigenstate is
//! `|x_phi> = e^{i phi N} |x_0>`, which gives
//!
//! ```text
//! p(x | phi) = sum_{n,m} rho_nm psi_n(x) psi_m(x) e^{-i (n - m) phi}
//! ```
//!
//! The tomography kernel pairs with the conjugate factor `e^{+i (n - m) phi}`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::numeric::{binomial_pmf, hermite_rule, ln_factorial};

/// Roundoff allowed below zero before a density is considered invalid.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-12;

/// Pure state amplitudes over photon numbers `0..=n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    amplitudes: Vec<C64>,
}

impl FockVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("a Fock vector needs at least one amplitude"));
        }
        let v = FockVector { amplitudes };
        let norm = v.norm_sqr();
        if !(norm > 0.0 && norm <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "squared norm {norm} outside (0, 1]"
            )));
        }
        Ok(v)
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized_from(amplitudes: Vec<C64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        let s = norm.sqrt().recip();
        Ok(FockVector {
            amplitudes: amplitudes.into_iter().map(|a| a * s).collect(),
        })
    }

    pub fn vacuum(n_max: usize) -> Self {
        Self::number_state(0, n_max).expect("0 <= n_max")
    }

    pub fn number_state(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::invalid(format!("|{n}> outside truncation {n_max}")));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); n_max + 1];
        amplitudes[n] = C64::new(1.0, 0.0);
        Ok(FockVector { amplitudes })
    }

    pub fn n_max(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<self|other>` over the common photon-number range.
    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Pads with zeros or drops amplitudes to reach the new truncation.
    pub fn resized(&self, n_max: usize) -> FockVector {
        let mut amplitudes = self.amplitudes.clone();
        amplitudes.resize(n_max + 1, C64::new(0.0, 0.0));
        FockVector { amplitudes }
    }

    pub fn projector(&self) -> DensityMatrix {
        let d = self.amplitudes.len();
        let elements =
            Array2::from_shape_fn((d, d), |(n, m)| self.amplitudes[n] * self.amplitudes[m].conj());
        DensityMatrix { elements }
    }

    /// Applies a real matrix, e.g. a squeeze operator.
    pub fn transformed(&self, matrix: &Array2<f64>) -> FockVector {
        let d = self.amplitudes.len();
        assert_eq!(matrix.dim(), (d, d), "operator dimension mismatch");
        let amplitudes = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| self.amplitudes[j] * matrix[[i, j]])
                    .sum::<C64>()
            })
            .collect();
        FockVector { amplitudes }
    }
}

/// Density operator in the truncated number basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    elements: Array2<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity and nonnegative populations.
    pub fn new(elements: Array2<C64>) -> Result<Self> {
        let (r, c) = elements.dim();
        if r != c || r == 0 {
            return Err(Error::invalid(format!("density matrix must be square, got {r}x{c}")));
        }
        let rho = DensityMatrix { elements };
        let defect = rho.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::invalid(format!("not Hermitian (defect {defect:e})")));
        }
        if let Some(n) = (0..r).find(|&n| rho.elements[[n, n]].re < -1e-12) {
            return Err(Error::invalid(format!("negative population at n = {n}")));
        }
        Ok(rho)
    }

    /// Wraps a matrix without the physical checks (used for raw estimates).
    pub fn from_matrix_unchecked(elements: Array2<C64>) -> Self {
        assert_eq!(elements.nrows(), elements.ncols());
        DensityMatrix { elements }
    }

    /// Convex combination `sum_k w_k |v_k><v_k|`; weights are used as given.
    pub fn mixture<'a>(terms: impl IntoIterator<Item = (f64, &'a FockVector)>) -> Result<Self> {
        let mut acc: Option<Array2<C64>> = None;
        for (w, v) in terms {
            let p = v.projector().elements * C64::new(w, 0.0);
            match acc.as_mut() {
                None => acc = Some(p),
                Some(a) => {
                    if a.dim() != p.dim() {
                        return Err(Error::invalid("mixture members differ in truncation"));
                    }
                    *a += &p;
                }
            }
        }
        acc.map(|elements| DensityMatrix { elements })
            .ok_or_else(|| Error::invalid("empty mixture"))
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn n_max(&self) -> usize {
        self.dim() - 1
    }

    pub fn elements(&self) -> &Array2<C64> {
        &self.elements
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        self.elements[[n, m]]
    }

    pub fn trace(&self) -> f64 {
        self.elements.diag().iter().map(|z| z.re).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.elements.diag().iter().map(|z| z.re).collect()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for n in 0..d {
            for m in n..d {
                worst = worst.max((self.elements[[n, m]] - self.elements[[m, n]].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        let d = self.dim().min(other.dim());
        let mut worst = 0.0f64;
        for n in 0..d {
            for m in 0..d {
                worst = worst.max((self.elements[[n, m]] - other.elements[[n, m]]).norm());
            }
        }
        // anything outside the common block counts against the larger matrix
        for (big, small) in [(self, other), (other, self)] {
            if big.dim() > small.dim() {
                for n in 0..big.dim() {
                    for m in 0..big.dim() {
                        if n >= d || m >= d {
                            worst = worst.max(big.elements[[n, m]].norm());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Upper-left `dim x dim` block.
    pub fn truncated(&self, dim: usize) -> DensityMatrix {
        let d = dim.min(self.dim());
        DensityMatrix {
            elements: self.elements.slice(ndarray::s![..d, ..d]).to_owned(),
        }
    }

    /// Zero-padded or truncated to `dim`.
    pub fn resized(&self, dim: usize) -> DensityMatrix {
        let mut elements = Array2::from_elem((dim, dim), C64::new(0.0, 0.0));
        let d = dim.min(self.dim());
        for n in 0..d {
            for m in 0..d {
                elements[[n, m]] = self.elements[[n, m]];
            }
        }
        DensityMatrix { elements }
    }

    /// `e^{-i angle N} rho e^{i angle N}`: rotates the phase-space picture by `angle`.
    pub fn rotated(&self, angle: f64) -> DensityMatrix {
        let elements = Array2::from_shape_fn(self.elements.dim(), |(n, m)| {
            self.elements[[n, m]] * C64::from_polar(1.0, -(n as f64 - m as f64) * angle)
        });
        DensityMatrix { elements }
    }

    /// Photon loss through a beam splitter of transmissivity `eta`.
    pub fn after_loss(&self, eta: f64) -> Result<DensityMatrix> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("transmissivity {eta} outside (0, 1]")));
        }
        if eta == 1.0 {
            return Ok(self.clone());
        }
        let d = self.dim();
        let amp = Array2::from_shape_fn((d, d), |(k, n)| binomial_pmf(k, n, eta).sqrt());
        let elements = Array2::from_shape_fn((d, d), |(n, m)| {
            let mut acc = C64::new(0.0, 0.0);
            let mut l = 0;
            while n + l < d && m + l < d {
                acc += self.elements[[n + l, m + l]] * (amp[[n + l, n]] * amp[[m + l, m]]);
                l += 1;
            }
            acc
        });
        Ok(DensityMatrix { elements })
    }

    /// Smallest dimension whose discarded populations sum below `tol`.
    pub fn support_dim(&self, tol: f64) -> usize {
        let diag = self.diagonal();
        let mut tail = 0.0;
        for d in (1..=diag.len()).rev() {
            tail += diag[d - 1].max(0.0);
            if tail > tol {
                return d;
            }
        }
        1
    }
}

/// Physicists' Hermite polynomial by three-term recursion.
pub fn hermite(n: i64, x: f64) -> Result<f64> {
    if n < 0 {
        return Err(Error::invalid(format!("Hermite order must be >= 0, got {n}")));
    }
    let mut prev = 1.0;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = 2.0 * x;
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Hermite polynomial at a complex argument.
pub fn hermite_complex(n: usize, z: C64) -> C64 {
    let mut prev = C64::new(1.0, 0.0);
    if n == 0 {
        return prev;
    }
    let mut cur = z * 2.0;
    for k in 1..n {
        let next = z * cur * 2.0 - prev * (2.0 * k as f64);
        prev = cur;
        cur = next;
    }
    cur
}

/// Oscillator eigenfunctions `psi_0..=psi_n_max` at `x` in the variance-1/4
/// quadrature convention.
///
/// Uses the normalized recursion with a running log scale, so neither the
/// Hermite growth nor the Gaussian decay over- or underflows prematurely.
pub fn ho_wavefunctions(n_max: usize, x: f64) -> Vec<f64> {
    let xi = std::f64::consts::SQRT_2 * x;
    let mut out = Vec::with_capacity(n_max + 1);
    // log of (2/pi)^{1/4} e^{-x^2}
    let mut log_scale = 0.25 * (2.0 / std::f64::consts::PI).ln() - x * x;
    let mut prev = 0.0;
    let mut cur = 1.0;
    out.push(cur * log_scale.exp());
    for n in 0..n_max {
        let next = (2.0 / (n + 1) as f64).sqrt() * xi * cur - (n as f64 / (n + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            prev *= 1e-150;
            cur *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
        out.push(cur * log_scale.exp());
    }
    out
}

pub fn ho_wavefunction(n: usize, x: f64) -> f64 {
    ho_wavefunctions(n, x)[n]
}

/// Matrix elements `<m| S(r_s) |n>` of `S(r_s) = exp[r_s (a^2 - a^dag^2) / 2]`.
///
/// Built from the closed-form first row and the relation
/// `S a = (a cosh r_s + a^dag sinh r_s) S`, which gives every element of the
/// infinite matrix exactly; truncation only crops it.
pub fn squeeze_matrix(r_s: f64, n_max: usize) -> Result<Array2<f64>> {
    if !r_s.is_finite() || r_s.abs() > 2.0 {
        return Err(Error::invalid(format!("squeeze gain {r_s} outside [-2, 2]")));
    }
    let d = n_max + 1;
    let mut s = Array2::<f64>::zeros((d, d));
    let (mu, nu) = (r_s.cosh(), r_s.sinh());
    let t = r_s.tanh();
    // first row: <0|S|2k> = tanh^k sqrt((2k)!)/(2^k k!) / sqrt(cosh)
    for k in 0..=n_max / 2 {
        let mag = 0.5 * ln_factorial(2 * k) - k as f64 * std::f64::consts::LN_2 - ln_factorial(k);
        let v = if k == 0 { 1.0 } else { t.powi(k as i32) * mag.exp() };
        s[[0, 2 * k]] = v / mu.sqrt();
    }
    for m in 0..n_max {
        for n in 0..d {
            if (m + 1 + n) % 2 == 1 {
                continue;
            }
            let left = if n > 0 { (n as f64).sqrt() * s[[m, n - 1]] } else { 0.0 };
            let right = if m > 0 { nu * (m as f64).sqrt() * s[[m - 1, n]] } else { 0.0 };
            s[[m + 1, n]] = (left - right) / (mu * ((m + 1) as f64).sqrt());
        }
    }
    Ok(s)
}

/// Largest deviation from orthonormality among the first `occupied` columns.
pub fn unitarity_defect(s: &Array2<f64>, occupied: usize) -> f64 {
    let k = occupied.min(s.ncols());
    let mut worst = 0.0f64;
    for j in 0..k {
        for l in j..k {
            let dot: f64 = s.column(j).iter().zip(s.column(l)).map(|(a, b)| a * b).sum();
            let target = if j == l { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    if worst > 1e-8 {
        log::warn!("squeeze matrix unitarity defect {worst:e} on the first {k} columns");
    }
    worst
}

/// Quadrature law `p(x | phi)` of a fixed state and phase.
#[derive(Clone, Debug)]
pub struct QuadratureLaw {
    rho: Array2<C64>,
    phases: Array1<C64>,
    dim: usize,
}

impl QuadratureLaw {
    pub fn new(rho: &DensityMatrix, phi: f64) -> Self {
        let dim = rho.support_dim(1e-18);
        let rho_block = rho.elements.slice(ndarray::s![..dim, ..dim]).to_owned();
        let phases = Array1::from_shape_fn(dim, |n| C64::from_polar(1.0, n as f64 * phi));
        QuadratureLaw {
            rho: rho_block,
            phases,
            dim,
        }
    }

    /// Raw value of the quadratic form, possibly with roundoff below zero.
    pub fn raw(&self, x: f64) -> f64 {
        let psi = ho_wavefunctions(self.dim - 1, x);
        let z: Vec<C64> = (0..self.dim).map(|n| self.phases[n] * psi[n]).collect();
        let mut acc = 0.0;
        for n in 0..self.dim {
            let row: C64 = z.iter().enumerate().map(|(m, zm)| self.rho[[n, m]] * zm).sum();
            acc += (z[n].conj() * row).re;
        }
        acc
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        clip_density(x, self.raw(x))
    }
}

pub(crate) fn clip_density(x: f64, value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value > -NEGATIVE_DENSITY_TOL {
        Ok(0.0)
    } else {
        Err(Error::NegativeDensity { x, value })
    }
}

pub fn quad_distribution(rho: &DensityMatrix, phi: f64, x: f64) -> Result<f64> {
    QuadratureLaw::new(rho, phi).density(x)
}

/// Noise variance added to the normalized quadrature by a homodyne detector of
/// efficiency `eta`.
pub fn smearing_variance(eta: f64) -> f64 {
    (1.0 - eta) / (4.0 * eta)
}

/// A density convolved with the detector's Gaussian noise.
pub struct Smeared<F> {
    inner: F,
    sigma: f64,
    rule: Vec<(f64, f64)>,
}

impl<F: Fn(f64) -> f64> Smeared<F> {
    pub fn eval(&self, x: f64) -> f64 {
        if self.sigma == 0.0 {
            return (self.inner)(x);
        }
        let scale = std::f64::consts::SQRT_2 * self.sigma;
        let acc: f64 = self.rule.iter().map(|&(t, w)| w * (self.inner)(x + scale * t)).sum();
        acc / std::f64::consts::PI.sqrt()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Gaussian convolution of `p` with variance `(1 - eta) / (4 eta)`, evaluated
/// by Gauss-Hermite quadrature.
pub fn smear<F: Fn(f64) -> f64>(p: F, eta: f64) -> Result<Smeared<F>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("efficiency {eta} outside (0, 1]")));
    }
    Ok(Smeared {
        inner: p,
        sigma: smearing_variance(eta).sqrt(),
        rule: hermite_rule(64),
    })
}

/// Density of homodyne outcomes at efficiency `eta` (rescaled to unit gain).
///
/// Computed exactly through the loss channel: the detector behaves like an
/// ideal one behind a beam splitter of transmissivity `eta`, so
/// `p_eta(x) = sqrt(eta) p_{L(rho)}(sqrt(eta) x)`.
#[derive(Clone, Debug)]
pub struct SmearedQuadratureLaw {
    law: QuadratureLaw,
    sqrt_eta: f64,
}

impl SmearedQuadratureLaw {
    pub fn new(rho: &DensityMatrix, phi: f64, eta: f64) -> Result<Self> {
        let lossy = rho.after_loss(eta)?;
        Ok(SmearedQuadratureLaw {
            law: QuadratureLaw::new(&lossy, phi),
            sqrt_eta: eta.sqrt(),
        })
    }

    pub fn raw(&self, x: f64) -> f64 {
        self.sqrt_eta * self.law.raw(self.sqrt_eta * x)
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        clip_density(x, self.raw(x))
    }
}

pub fn smeared_quad_distribution(rho: &DensityMatrix, phi: f64, eta: f64, x: f64) -> Result<f64> {
    SmearedQuadratureLaw::new(rho, phi, eta)?.density(x)
}
