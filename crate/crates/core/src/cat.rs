//! Conditional Schrödinger-cat source: a two-mode parametric amplifier,
//! a polarization rotator, photon counting on the readout mode and a
//! degenerate amplifier on the signal.
//!
//! The two-mode output `T(theta) V(r) |0>|0>` is built numerically and is the
//! authority for every derived state. The closed-form coefficients
//! ([`coeff_b`]) and the analytic quadrature law ([`theory_quadrature`]) are
//! independent cross-checks of it.
//!
//! Index convention: `B_{j,m}` is the amplitude of `n_signal = j + m`,
//! `n_readout = j - m`, which is the arrangement the conditional-state
//! formula `B_{j + ceil(n_r/2), j - floor(n_r/2)} |2j + parity(n_r)>` uses.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{self, squeeze_matrix, DensityMatrix, FockVector};
use crate::numeric::{binomial_pmf, ln_binomial, ln_double_factorial_ratio, ln_factorial, ln_odd_double_factorial};

/// Default photon-number truncation for `r, r_s <= 0.5`.
pub const DEFAULT_N_MAX: usize = 40;
/// Relative probability mass allowed to be dropped from the readout sums.
pub const DEFAULT_SUM_TOLERANCE: f64 = 1e-10;
/// Norm loss beyond which truncation is reported.
pub const TRUNCATION_WARN: f64 = 1e-8;
/// Readout counts below this probability cannot be conditioned on.
pub const NEGLIGIBLE_PROBABILITY: f64 = 1e-200;

/// Back-action-evading rotation angle, `sin 2 theta = tanh r`.
pub fn theta_from_r(r: f64) -> f64 {
    0.5 * r.tanh().asin()
}

/// `1/2 ln(2 + sqrt 3)`: largest gain for which the compensation series
/// converges at every readout efficiency.
pub fn convergence_threshold() -> f64 {
    0.5 * (2.0 + 3f64.sqrt()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams {
    pub r: f64,
    pub theta: f64,
    pub r_s: f64,
    pub eta_d: f64,
    pub n_max: usize,
}

impl SchemeParams {
    /// Parameters on the back-action-evading operating point.
    pub fn new(r: f64, r_s: f64, eta_d: f64, n_max: usize) -> Result<Self> {
        Self::with_theta(r, theta_from_r(r), r_s, eta_d, n_max)
    }

    pub fn with_theta(r: f64, theta: f64, r_s: f64, eta_d: f64, n_max: usize) -> Result<Self> {
        let p = SchemeParams {
            r,
            theta,
            r_s,
            eta_d,
            n_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::invalid(format!("gain r = {} must be finite and >= 0", self.r)));
        }
        if !(self.r_s >= 0.0 && self.r_s <= 2.0) {
            return Err(Error::invalid(format!("gain r_s = {} must lie in [0, 2]", self.r_s)));
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return Err(Error::invalid(format!("readout efficiency {} outside (0, 1]", self.eta_d)));
        }
        if !self.theta.is_finite() {
            return Err(Error::invalid("rotation angle must be finite"));
        }
        Ok(())
    }
}

/// Two-mode amplitudes, `coefficients[[n_signal, n_readout]]`.
#[derive(Clone, Debug)]
pub struct JointState {
    pub coefficients: Array2<f64>,
}

impl JointState {
    pub fn n_max(&self) -> usize {
        self.coefficients.nrows() - 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    /// Probability of each readout photon number (perfect detector).
    pub fn readout_marginal(&self) -> Vec<f64> {
        self.coefficients
            .columns()
            .into_iter()
            .map(|col| col.iter().map(|c| c * c).sum())
            .collect()
    }

    /// Unnormalized signal amplitudes after projecting the readout on `|n_r>`.
    pub fn project_readout(&self, n_r: usize) -> Vec<f64> {
        self.coefficients.column(n_r).to_vec()
    }
}

/// Builds `T(theta) V(r) |0>|0>` in the truncated two-mode basis.
///
/// `V(r)|00>` is the two-mode squeezed vacuum
/// `sum_n (-tanh r)^n / cosh r |n, n>`. The rotator acts as
/// `a_S^dag -> a_S^dag cos(theta) + a_R^dag sin(theta)` and
/// `a_R^dag -> a_R^dag cos(theta) - a_S^dag sin(theta)`, which is expanded
/// binomially within each total-photon-number block.
pub fn joint_state(params: &SchemeParams) -> JointState {
    let n_max = params.n_max;
    let d = n_max + 1;
    let mut coefficients = Array2::<f64>::zeros((d, d));
    let (c, s) = (params.theta.cos(), params.theta.sin());
    let t = -params.r.tanh();
    let cosh = params.r.cosh();
    for n in 0..=n_max {
        let tmsv = if n == 0 { 1.0 } else { t.powi(n as i32) } / cosh;
        if tmsv == 0.0 {
            break;
        }
        let total = 2 * n;
        let p_lo = total.saturating_sub(n_max);
        for p in p_lo..=n_max.min(total) {
            let mut amp = 0.0;
            let i_lo = p.saturating_sub(n);
            for i in i_lo..=n.min(p) {
                let l = i + n - p;
                let log_mag = ln_binomial(n, i) + ln_binomial(n, l)
                    + 0.5 * (ln_factorial(p) + ln_factorial(total - p))
                    - ln_factorial(n);
                let sign = if (p - i) % 2 == 0 { 1.0 } else { -1.0 };
                amp += sign
                    * log_mag.exp()
                    * c.powi((2 * i + n - p) as i32)
                    * s.powi((n + p - 2 * i) as i32);
            }
            coefficients[[p, total - p]] = tmsv * amp;
        }
    }
    let js = JointState { coefficients };
    let defect = (1.0 - js.norm_sqr()).abs();
    if defect > TRUNCATION_WARN {
        log::warn!("joint state truncation at n_max = {n_max} loses {defect:e} of the norm");
    }
    js
}

/// Closed-form two-mode coefficient `B_{j,m}`, `|m| <= j`.
///
/// The normalization denominator is `cosh r`, the only reading that makes
/// `sum |B|^2 = 1` and reproduces the two-mode squeezed vacuum at `theta = 0`.
pub fn coeff_b(j: usize, m: i64, r: f64, theta: f64) -> f64 {
    let ji = j as i64;
    if m.abs() > ji {
        return 0.0;
    }
    let base = if j == 0 { 1.0 } else { (-r.tanh()).powi(j as i32) } / r.cosh();
    if theta == 0.0 {
        return if m == 0 { base } else { 0.0 };
    }
    let (sin2, tan) = (theta.sin().powi(2), theta.tan());
    let k_lo = (-m).max(0) as usize;
    let mut sum = 0.0;
    for k in k_lo..=j {
        let mk = (m + k as i64) as usize;
        let log_mag = ln_factorial(j + k) - ln_factorial(k) - ln_factorial(j - k) - ln_factorial(mk)
            + k as f64 * sin2.ln()
            + m as f64 * tan.abs().ln();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * log_mag.exp();
    }
    // (-tan)^m carries the sign of (-1)^m times sign(tan)^m
    let tan_sign = if tan < 0.0 && m.rem_euclid(2) == 1 { -1.0 } else { 1.0 };
    let m_sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let fact_ratio = 0.5 * (ln_factorial((ji + m) as usize) - ln_factorial((ji - m) as usize));
    base * m_sign * tan_sign * fact_ratio.exp() * sum
}

/// Readout photon-number law of a perfect detector.
pub fn readout_prob_ideal(k: usize, r: f64) -> f64 {
    if r == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let sh2 = r.sinh().powi(2);
    let log_p = k as f64 * std::f64::consts::LN_2 + ln_double_factorial_ratio(k) + k as f64 * sh2.ln()
        - (k as f64 + 0.5) * (2.0 * sh2 + 1.0).ln();
    log_p.exp()
}

/// Ratio bound `2 sinh^2 r / (2 sinh^2 r + 1)` of successive ideal readout
/// probabilities.
pub fn readout_decay(r: f64) -> f64 {
    let sh2 = r.sinh().powi(2);
    2.0 * sh2 / (2.0 * sh2 + 1.0)
}

/// Readout law at efficiency `eta_d`: the Bernoulli convolution of the ideal law.
pub fn readout_prob_inefficient(n: usize, eta_d: f64, r: f64) -> f64 {
    if eta_d >= 1.0 {
        return readout_prob_ideal(n, r);
    }
    if r == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let mut sum = 0.0;
    let mut k = n;
    loop {
        let term = binomial_pmf(k, n, eta_d) * readout_prob_ideal(k, r);
        sum += term;
        // successive-term ratio is bounded by (k+1)/(k+1-n) (1-eta) rho
        let q = (k + 1) as f64 / (k + 1 - n) as f64 * (1.0 - eta_d) * readout_decay(r);
        if q < 1.0 && term * q / (1.0 - q) < 1e-14 * sum.max(f64::MIN_POSITIVE) {
            break;
        }
        if term == 0.0 && k > n + 64 {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    sum
}

/// Probability that the readout registers at least `k` photons.
pub fn readout_prob_at_least(k: usize, eta_d: f64, r: f64) -> f64 {
    let below: f64 = (0..k).map(|n| readout_prob_inefficient(n, eta_d, r)).sum();
    (1.0 - below).max(0.0)
}

/// All the states of one scheme configuration, built once.
#[derive(Clone, Debug)]
pub struct CatSource {
    params: SchemeParams,
    joint: JointState,
    squeeze: Array2<f64>,
    sum_tolerance: f64,
}

impl CatSource {
    pub fn new(params: SchemeParams) -> Result<Self> {
        params.validate()?;
        let joint = joint_state(&params);
        let squeeze = squeeze_matrix(params.r_s, params.n_max)?;
        Ok(CatSource {
            params,
            joint,
            squeeze,
            sum_tolerance: DEFAULT_SUM_TOLERANCE,
        })
    }

    pub fn with_sum_tolerance(mut self, tol: f64) -> Self {
        self.sum_tolerance = tol;
        self
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn joint(&self) -> &JointState {
        &self.joint
    }

    pub fn squeeze(&self) -> &Array2<f64> {
        &self.squeeze
    }

    /// Signal state after detecting `n_r` readout photons with a perfect detector.
    pub fn conditional_state(&self, n_r: usize) -> Result<FockVector> {
        if n_r > self.params.n_max {
            return Err(Error::NegligibleReadout { n: n_r, prob: 0.0 });
        }
        let amps = self.joint.project_readout(n_r);
        let prob: f64 = amps.iter().map(|a| a * a).sum();
        if prob < NEGLIGIBLE_PROBABILITY {
            return Err(Error::NegligibleReadout { n: n_r, prob });
        }
        FockVector::normalized_from(amps.into_iter().map(|a| C64::new(a, 0.0)).collect())
    }

    /// `S(r_s)` applied to the conditional state, renormalized.
    pub fn amplified_cat(&self, n_r: usize) -> Result<FockVector> {
        let (v, loss) = self.amplified_with_loss(n_r)?;
        if loss > TRUNCATION_WARN {
            log::warn!("amplified cat n_r = {n_r} loses {loss:e} of its norm to truncation");
        }
        Ok(v)
    }

    fn amplified_with_loss(&self, n_r: usize) -> Result<(FockVector, f64)> {
        let v = self.conditional_state(n_r)?.transformed(&self.squeeze);
        let loss = 1.0 - v.norm_sqr();
        Ok((FockVector::normalized_from(v.amplitudes().to_vec())?, loss))
    }

    /// Signal state after `n_r` clicks of the inefficient readout detector.
    pub fn conditional_mixture(&self, n_r: usize) -> Result<DensityMatrix> {
        let eta = self.params.eta_d;
        let r = self.params.r;
        let total = readout_prob_inefficient(n_r, eta, r);
        if total < NEGLIGIBLE_PROBABILITY {
            return Err(Error::NegligibleReadout { n: n_r, prob: total });
        }
        let mut states = Vec::new();
        let mut included = 0.0;
        let mut loss = 0.0;
        for k in n_r..=self.params.n_max {
            let w = binomial_pmf(k, n_r, eta) * readout_prob_ideal(k, r);
            if w > 0.0 {
                match self.amplified_with_loss(k) {
                    Ok((v, l)) => {
                        included += w;
                        loss += w / total * l;
                        states.push((w / total, v));
                    }
                    Err(Error::NegligibleReadout { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
            if total - included < self.sum_tolerance * total {
                break;
            }
        }
        let omitted = (total - included) / total;
        if omitted > self.sum_tolerance {
            log::warn!("mixture for n_r = {n_r} omits {omitted:e} of its weight");
        }
        if loss > TRUNCATION_WARN {
            log::warn!("mixture for n_r = {n_r} loses {loss:e} of its norm to truncation");
        }
        DensityMatrix::mixture(states.iter().map(|(w, v)| (*w, v)))
    }

    /// Reduced signal state after the degenerate amplifier, ignoring the readout.
    pub fn reduced_signal_state(&self) -> Result<DensityMatrix> {
        let d = self.params.n_max + 1;
        let mut rho = Array2::<f64>::zeros((d, d));
        for n_r in 0..d {
            let col = self.joint.project_readout(n_r);
            for a in 0..d {
                for b in 0..d {
                    rho[[a, b]] += col[a] * col[b];
                }
            }
        }
        let s = &self.squeeze;
        let out = s.dot(&rho).dot(&s.t());
        DensityMatrix::new(out.mapv(|v| C64::new(v, 0.0)))
    }
}

pub fn conditional_state(n_r: usize, params: &SchemeParams) -> Result<FockVector> {
    CatSource::new(*params)?.conditional_state(n_r)
}

pub fn amplified_cat(n_r: usize, params: &SchemeParams) -> Result<FockVector> {
    CatSource::new(*params)?.amplified_cat(n_r)
}

pub fn conditional_mixture(n_r: usize, params: &SchemeParams) -> Result<DensityMatrix> {
    CatSource::new(*params)?.conditional_mixture(n_r)
}

/// `|cos phi|` below which the closed form is replaced by the number-basis law.
const COS_PHI_FLOOR: f64 = 1e-6;

/// Analytic quadrature law of the ideal amplified cat `S(r_s)|psi_{S,n_r}>`.
///
/// ```text
/// p(x) = sqrt(2 Re(lambda) / pi) / ((2 n_r - 1)!! sigma^{n_r/2})
///        exp(-2 Re(lambda) x^2) |H_{n_r}(sqrt(lambda) x)|^2
/// lambda = [cos phi (e^{-2 r_s} cosh 2r cos phi + i sin phi)]^{-1}
/// sigma  = (|lambda| / Re lambda)^2 = 1 + tan^2(phi) e^{4 r_s} / cosh^2(2r)
/// ```
///
/// Near `phi = pi/2` the closed form is singular and the number-basis law of
/// the same state (truncated at [`DEFAULT_N_MAX`]) is returned instead.
pub fn theory_quadrature(n_r: usize, phi: f64, x: f64, r: f64, r_s: f64) -> Result<f64> {
    let cos = phi.cos();
    if cos.abs() < COS_PHI_FLOOR {
        let source = CatSource::new(SchemeParams::new(r, r_s, 1.0, DEFAULT_N_MAX)?)?;
        let cat = source.amplified_cat(n_r)?;
        return fock::quad_distribution(&cat.projector(), phi, x);
    }
    Ok(TheoryQuadrature::new(n_r, phi, r, r_s).density(x))
}

/// Closed-form law at a fixed phase, with the phase-dependent constants cached.
#[derive(Clone, Copy, Debug)]
pub struct TheoryQuadrature {
    n_r: usize,
    sqrt_lambda: C64,
    re_lambda: f64,
    log_norm: f64,
}

impl TheoryQuadrature {
    pub fn new(n_r: usize, phi: f64, r: f64, r_s: f64) -> Self {
        let (cos, sin) = (phi.cos(), phi.sin());
        let a = (-2.0 * r_s).exp() * (2.0 * r).cosh();
        let lambda = (C64::new(a * cos * cos, cos * sin)).inv();
        let re_lambda = lambda.re;
        let sigma = (lambda.norm() / re_lambda).powi(2);
        let log_norm = 0.5 * (2.0 * re_lambda / std::f64::consts::PI).ln()
            - ln_odd_double_factorial(n_r)
            - 0.5 * n_r as f64 * sigma.ln();
        TheoryQuadrature {
            n_r,
            sqrt_lambda: lambda.sqrt(),
            re_lambda,
            log_norm,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = fock::hermite_complex(self.n_r, self.sqrt_lambda * x);
        (self.log_norm - 2.0 * self.re_lambda * x * x).exp() * h.norm_sqr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::composite_legendre;

    fn params() -> SchemeParams {
        SchemeParams::new(0.4, 0.4, 0.3, 40).unwrap()
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta_from_r(0.0), 0.0);
        // high-precision value of asin(tanh 0.4) / 2
        assert!((theta_from_r(0.4) - 0.194_870_560_176_593_6).abs() < 1e-15);
        assert!((theta_from_r(40.0) - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let p = params();
        assert!(((2.0 * p.theta).sin() - p.r.tanh()).abs() < 1e-12);
    }

    #[test]
    fn threshold_constant() {
        assert!((convergence_threshold() - 0.658_478_948_462_408_3).abs() < 1e-15);
    }

    #[test]
    fn b_coefficients() {
        assert_eq!(coeff_b(0, 0, 0.0, 0.0), 1.0);
        for j in 0..6 {
            let want = (-0.4f64.tanh()).powi(j as i32) / 0.4f64.cosh();
            assert!((coeff_b(j, 0, 0.4, 0.0) - want).abs() < 1e-15);
            assert_eq!(coeff_b(j, 1, 0.4, 0.0), 0.0);
        }
        let theta = theta_from_r(0.4);
        let norm: f64 = (0..=40)
            .flat_map(|j| (-(j as i64)..=j as i64).map(move |m| coeff_b(j, m, 0.4, theta).powi(2)))
            .sum();
        assert!((norm - 1.0).abs() < 1e-10, "{norm}");
    }

    #[test]
    fn b_coefficients_match_joint_state() {
        let p = params();
        let js = joint_state(&p);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for j in 0..=20usize {
            for m in -(j as i64)..=j as i64 {
                let b = coeff_b(j, m, p.r, p.theta);
                if b.abs() < 1e-10 {
                    continue;
                }
                let (sig, ro) = ((j as i64 + m) as usize, (j as i64 - m) as usize);
                worst = worst.max((b - js.coefficients[[sig, ro]]).abs());
                checked += 1;
            }
        }
        assert!(checked > 50);
        assert!(worst < 1e-12, "{worst:e}");
    }

    #[test]
    fn joint_state_matches_generator_exponential() {
        // oracle: exponentiate the block generator of T(theta) on each total-photon block
        let p = params();
        let js = joint_state(&p);
        for n in 0..8usize {
            let total = 2 * n;
            let g = nalgebra::DMatrix::<f64>::from_fn(total + 1, total + 1, |row, col| {
                // basis |s, total - s>; generator a_S a_R^dag - a_S^dag a_R
                let (s, ro) = (col, total - col);
                let mut v = 0.0;
                if s > 0 && row == s - 1 {
                    v += ((s * (ro + 1)) as f64).sqrt();
                }
                if ro > 0 && row == s + 1 {
                    v -= (((s + 1) * ro) as f64).sqrt();
                }
                v
            });
            let u = (g * p.theta).exp();
            let tmsv = (-p.r.tanh()).powi(n as i32) / p.r.cosh();
            for s in 0..=total {
                let want = u[(s, n)] * tmsv;
                if s <= 40 && total - s <= 40 {
                    assert!((want - js.coefficients[[s, total - s]]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn joint_state_vacuum_and_norm() {
        let js = joint_state(&SchemeParams::new(0.0, 0.0, 1.0, 10).unwrap());
        assert_eq!(js.coefficients[[0, 0]], 1.0);
        assert_eq!(js.norm_sqr(), 1.0);
        let js = joint_state(&params());
        assert!((js.norm_sqr() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn readout_marginal_matches_closed_form() {
        let js = joint_state(&params());
        for (k, &m) in js.readout_marginal().iter().enumerate().take(25) {
            assert!((m - readout_prob_ideal(k, 0.4)).abs() < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn ideal_readout_law() {
        assert_eq!(readout_prob_ideal(0, 0.0), 1.0);
        assert!((readout_prob_ideal(0, 0.4) - 0.864_70).abs() < 5e-6);
        let total: f64 = (0..=40).map(|k| readout_prob_ideal(k, 0.4)).sum();
        assert!((total - 1.0).abs() < 1e-10);
        // log domain stays finite far out
        assert!(readout_prob_ideal(5000, 0.4) > 0.0 || readout_prob_ideal(5000, 0.4) == 0.0);
        assert!(readout_prob_ideal(5000, 0.4).is_finite());
    }

    #[test]
    fn inefficient_readout_law() {
        for k in 0..6 {
            assert_eq!(readout_prob_inefficient(k, 1.0, 0.4), readout_prob_ideal(k, 0.4));
        }
        let low = readout_prob_inefficient(0, 0.3, 0.4) + readout_prob_inefficient(1, 0.3, 0.4);
        assert!((low - 0.9967).abs() < 3e-4, "{low}");
        let total: f64 = (0..60).map(|n| readout_prob_inefficient(n, 0.3, 0.4)).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn conditional_states_have_parity_support() {
        let src = CatSource::new(params()).unwrap();
        assert_eq!(
            conditional_state(0, &SchemeParams::new(0.0, 0.0, 1.0, 8).unwrap()).unwrap(),
            FockVector::vacuum(8)
        );
        for n_r in 0..6 {
            let v = src.conditional_state(n_r).unwrap();
            let amp = src.amplified_cat(n_r).unwrap();
            for (n, (a, b)) in v.amplitudes().iter().zip(amp.amplitudes()).enumerate() {
                if n % 2 != n_r % 2 {
                    assert_eq!(a.norm(), 0.0);
                    assert_eq!(b.norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn conditional_state_matches_closed_form_arrangement() {
        let p = params();
        let src = CatSource::new(p).unwrap();
        for n_r in 0..5usize {
            let v = src.conditional_state(n_r).unwrap();
            let mut amps = vec![C64::new(0.0, 0.0); 41];
            for j in 0..=19usize {
                let big = j + n_r.div_ceil(2);
                let m = j as i64 - (n_r / 2) as i64;
                amps[2 * j + n_r % 2] = C64::new(coeff_b(big, m, p.r, p.theta), 0.0);
            }
            let closed = FockVector::normalized_from(amps).unwrap();
            let overlap = v.inner(&closed).norm();
            assert!((overlap - 1.0).abs() < 1e-10, "n_r = {n_r}: {overlap}");
        }
    }

    #[test]
    fn negligible_readout_is_rejected() {
        let src = CatSource::new(SchemeParams::new(0.0, 0.0, 1.0, 10).unwrap()).unwrap();
        assert!(matches!(src.conditional_state(2), Err(Error::NegligibleReadout { .. })));
    }

    #[test]
    fn amplified_cat_norm_and_identity() {
        let p = params();
        let src = CatSource::new(p).unwrap();
        let raw = src.conditional_state(2).unwrap().transformed(src.squeeze());
        assert!(raw.norm_sqr() >= 1.0 - 1e-8);
        let no_amp = CatSource::new(SchemeParams::new(0.4, 0.0, 0.3, 40).unwrap()).unwrap();
        let a = no_amp.amplified_cat(3).unwrap();
        let b = no_amp.conditional_state(3).unwrap();
        assert!((a.inner(&b).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mixture_properties() {
        let src = CatSource::new(params()).unwrap();
        let rho = src.conditional_mixture(2).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-10);
        let diag = rho.diagonal();
        assert!(diag[1] > 1e-3 && diag[3] > 1e-4, "odd populations {:?}", &diag[..4]);
        assert!(diag[0] > 1e-2 && diag[2] > 1e-2);

        let ideal = CatSource::new(SchemeParams::new(0.4, 0.4, 1.0, 40).unwrap()).unwrap();
        let pure = ideal.amplified_cat(2).unwrap().projector();
        assert!(ideal.conditional_mixture(2).unwrap().max_abs_diff(&pure) < 1e-14);
    }

    #[test]
    fn mixtures_recombine_to_reduced_state() {
        let src = CatSource::new(params()).unwrap();
        let reduced = src.reduced_signal_state().unwrap();
        let mut acc = Array2::from_elem((41, 41), C64::new(0.0, 0.0));
        for n_r in 0..=25 {
            let w = readout_prob_inefficient(n_r, 0.3, 0.4);
            if let Ok(rho) = src.conditional_mixture(n_r) {
                acc = acc + rho.elements() * C64::new(w, 0.0);
            }
        }
        let sum = DensityMatrix::from_matrix_unchecked(acc);
        assert!(sum.max_abs_diff(&reduced) < 1e-8, "{:e}", sum.max_abs_diff(&reduced));
    }

    #[test]
    fn pipeline_states_are_positive() {
        let src = CatSource::new(params()).unwrap();
        for n_r in [0, 2, 3] {
            let rho = src.conditional_mixture(n_r).unwrap();
            let m = nalgebra::DMatrix::from_fn(41, 41, |i, j| {
                let z = rho.get(i, j);
                nalgebra::Complex::new(z.re, z.im)
            });
            let min = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-9, "n_r = {n_r}: {min}");
        }
    }

    #[test]
    fn theory_quadrature_vacuum_limit() {
        for phi in [0.0, 0.5, 1.2] {
            for x in [-0.7f64, 0.0, 0.4] {
                let want = (2.0 / std::f64::consts::PI).sqrt() * (-2.0 * x * x).exp();
                assert!((theory_quadrature(0, phi, x, 0.0, 0.0).unwrap() - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn theory_quadrature_matches_fock_law() {
        let src = CatSource::new(SchemeParams::new(0.4, 0.4, 1.0, 40).unwrap()).unwrap();
        for n_r in 0..4 {
            let rho = src.amplified_cat(n_r).unwrap().projector();
            for phi in [0.0, 0.3, 1.0] {
                let fock_law = fock::QuadratureLaw::new(&rho, phi);
                for i in 0..61 {
                    let x = -3.0 + 0.1 * i as f64;
                    let a = theory_quadrature(n_r, phi, x, 0.4, 0.4).unwrap();
                    assert!((a - fock_law.raw(x)).abs() < 1e-8, "n_r {n_r} phi {phi} x {x}");
                }
            }
        }
    }

    #[test]
    fn theory_quadrature_normalized_and_fallback() {
        let nodes = composite_legendre(-8.0, 8.0, 64, 16);
        for n_r in 0..4 {
            for phi in [0.0, 0.3, 1.0] {
                let law = TheoryQuadrature::new(n_r, phi, 0.4, 0.4);
                let mass: f64 = nodes.iter().map(|&(x, w)| w * law.density(x)).sum();
                assert!((mass - 1.0).abs() < 1e-8, "n_r {n_r} phi {phi}: {mass}");
            }
        }
        let near = theory_quadrature(2, std::f64::consts::FRAC_PI_2, 0.3, 0.4, 0.4).unwrap();
        assert!(near.is_finite() && near > 0.0);
    }

    #[test]
    fn theory_quadrature_has_two_interior_zeros() {
        let law = TheoryQuadrature::new(2, 0.0, 0.4, 0.4);
        let xs: Vec<f64> = (0..=4000).map(|i| -4.0 + 0.002 * i as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| law.density(x)).collect();
        let minima = (1..vals.len() - 1)
            .filter(|&i| vals[i] < vals[i - 1] && vals[i] <= vals[i + 1] && vals[i] < 1e-4)
            .count();
        assert_eq!(minima, 2);
    }
}
