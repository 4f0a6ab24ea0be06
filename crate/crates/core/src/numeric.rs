//! Small numeric building blocks shared by the physics modules.

use std::num::NonZeroUsize;

use gauss_quad::{hermite::GaussHermite, legendre::GaussLegendre};
use statrs::function::factorial;

pub fn ln_factorial(n: usize) -> f64 {
    factorial::ln_factorial(n as u64)
}

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    factorial::ln_binomial(n as u64, k as u64)
}

/// `C(n, k) p^k (1-p)^(n-k)`, evaluated in log space.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

/// `(2k-1)!! / (2k)!!` in log space.
pub fn ln_double_factorial_ratio(k: usize) -> f64 {
    ln_factorial(2 * k) - 2.0 * ln_factorial(k) - 2.0 * k as f64 * std::f64::consts::LN_2
}

/// `(2n-1)!!` with the convention `(-1)!! = 1`.
pub fn ln_odd_double_factorial(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    ln_factorial(2 * n) - n as f64 * std::f64::consts::LN_2 - ln_factorial(n)
}

/// Order-independent floating point accumulator.
///
/// Keeps a list of non-overlapping partial sums (Shewchuk's algorithm), so the
/// rounded total is the correctly rounded exact sum of every value added, no
/// matter the order of the additions or how accumulators were merged.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded value of the accumulated sum.
    pub fn value(&self) -> f64 {
        let mut n = self.partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = self.partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // half-way correction, as in Python's math.fsum
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Composite Gauss-Legendre rule on `[a, b]` split into `panels` equal panels.
pub fn composite_legendre(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"));
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for &(t, w) in rule.as_node_weight_pairs() {
            out.push((lo + 0.5 * width * (t + 1.0), 0.5 * width * w));
        }
    }
    out
}

/// Gauss-Hermite nodes and weights for the weight `exp(-t^2)`.
pub fn hermite_rule(order: usize) -> Vec<(f64, f64)> {
    GaussHermite::new(NonZeroUsize::new(order).expect("order > 0"))
        .as_node_weight_pairs()
        .to_vec()
}

/// Evenly spaced points on `[a, b]`, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_sum_cancellation() {
        let s: ExactSum = [1e100, 1.0, -1e100, 1e-20].into_iter().collect();
        assert_eq!(s.value(), 1.0 + 1e-20);
    }

    #[test]
    fn double_factorials() {
        // 5!! = 15, (5!!)/(6!!) = 15/48
        assert!((ln_odd_double_factorial(3).exp() - 15.0).abs() < 1e-12);
        assert!((ln_double_factorial_ratio(3).exp() - 15.0 / 48.0).abs() < 1e-15);
        assert_eq!(ln_double_factorial_ratio(0), 0.0);
    }

    #[test]
    fn binomial_edges() {
        assert_eq!(binomial_pmf(5, 5, 1.0), 1.0);
        assert_eq!(binomial_pmf(5, 2, 1.0), 0.0);
        assert!((binomial_pmf(4, 2, 0.5) - 6.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_panels_integrate_gaussian() {
        let q = composite_legendre(-8.0, 8.0, 16, 12);
        let v: f64 = q.iter().map(|&(x, w)| w * (-x * x).exp()).sum();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn exact_sum_is_order_independent(mut xs in proptest::collection::vec(-1e6f64..1e6, 1..200), seed in any::<u64>()) {
            let forward: ExactSum = xs.iter().copied().collect();
            // deterministic shuffle
            let mut state = seed | 1;
            for i in (1..xs.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                xs.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let (a, b) = xs.split_at(xs.len() / 2);
            let mut left: ExactSum = a.iter().copied().collect();
            let right: ExactSum = b.iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(forward.value().to_bits(), left.value().to_bits());
        }
    }
}
