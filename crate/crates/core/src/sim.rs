//! Monte Carlo homodyne experiment: readout clicks, then a quadrature sample
//! from the heralded signal state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cat::{readout_prob_inefficient, CatSource, NEGLIGIBLE_PROBABILITY};
use crate::config::{ExperimentConfig, PhaseSchedule};
use crate::error::{Error, Result};
use crate::fock::{clip_density, DensityMatrix, QuadratureLaw};

/// Mass a sampling grid must capture before it is accepted.
pub const REQUIRED_GRID_MASS: f64 = 1.0 - 1e-6;
/// Target error of the piecewise inverse CDF, in probability.
pub const CDF_TOLERANCE: f64 = 1e-7;

pub const RNG_DESCRIPTION: &str =
    "ChaCha20Rng (rand_chacha 0.9) seeded with seed_from_u64(seed), one stream per block (stream = block index); \
     uniforms from rand 0.9 StandardUniform f64";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomodyneRecord {
    pub n_r: usize,
    pub phi: f64,
    pub x: f64,
}

/// Discrete readout law, optionally conditioned on `n_r >= min`.
#[derive(Clone, Debug)]
pub struct ReadoutSampler {
    min: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    acceptance: f64,
}

impl ReadoutSampler {
    pub fn new(eta_d: f64, r: f64) -> Result<Self> {
        Self::at_least(0, eta_d, r)
    }

    /// Readout law conditioned on at least `min` clicks.
    pub fn at_least(min: usize, eta_d: f64, r: f64) -> Result<Self> {
        let mut probs = Vec::new();
        let mut n = min;
        loop {
            let p = readout_prob_inefficient(n, eta_d, r);
            let total: f64 = probs.iter().sum();
            // bins below the absolute floor have no usable conditional state
            if p < NEGLIGIBLE_PROBABILITY.max(1e-12 * total) && !probs.is_empty() {
                break;
            }
            if p > 0.0 || probs.is_empty() {
                probs.push(p);
            }
            n += 1;
            if n > min + 2000 {
                break;
            }
        }
        let acceptance: f64 = probs.iter().sum();
        if acceptance < NEGLIGIBLE_PROBABILITY {
            return Err(Error::NegligibleReadout {
                n: min,
                prob: acceptance,
            });
        }
        // the last bin absorbs the negligible remainder
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p / acceptance;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(ReadoutSampler {
            min,
            probs,
            cdf,
            acceptance,
        })
    }

    pub fn min(&self) -> usize {
        self.min
    }

    pub fn max(&self) -> usize {
        self.min + self.probs.len() - 1
    }

    /// Unconditional probability that a trial is kept.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    /// Conditional probability of `n` clicks given that the trial is kept.
    pub fn probability(&self, n: usize) -> f64 {
        if n < self.min || n > self.max() {
            0.0
        } else {
            self.probs[n - self.min] / self.acceptance
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.min + self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

/// Piecewise-linear inverse-CDF sampler for a one-dimensional density.
///
/// Node masses come from Simpson's rule; inside a cell the density is taken
/// linear between its end points and rescaled to the Simpson mass, so the CDF
/// error stays local to a cell instead of accumulating across the grid.
#[derive(Clone, Debug)]
pub struct InverseCdf {
    x0: f64,
    h: f64,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    masses: Vec<f64>,
}

impl InverseCdf {
    /// `expected_mass` is the full integral of `f` (the state trace).
    pub fn build(f: &dyn Fn(f64) -> Result<f64>, lo: f64, hi: f64, expected_mass: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::invalid("sampling interval is empty"));
        }
        let mut cells = (((hi - lo) / 0.02).ceil() as usize).max(16);
        // values at half-cell spacing: even indices are nodes, odd are midpoints
        let mut vals: Vec<f64> = (0..=2 * cells)
            .map(|i| f(lo + (hi - lo) * i as f64 / (2 * cells) as f64))
            .collect::<Result<_>>()?;
        loop {
            let h = (hi - lo) / cells as f64;
            let mut worst = 0.0f64;
            let mut masses = Vec::with_capacity(cells);
            for c in 0..cells {
                let (a, m, b) = (vals[2 * c], vals[2 * c + 1], vals[2 * c + 2]);
                let simpson = h / 6.0 * (a + 4.0 * m + b);
                let trapezoid = 0.5 * h * (a + b);
                worst = worst.max((simpson - trapezoid).abs());
                masses.push(simpson.max(0.0));
            }
            if worst <= CDF_TOLERANCE || cells >= 1 << 18 {
                let captured: f64 = masses.iter().sum();
                let fraction = captured / expected_mass;
                if fraction < REQUIRED_GRID_MASS {
                    return Err(Error::GridCoverage {
                        captured: fraction,
                        required: REQUIRED_GRID_MASS,
                    });
                }
                let pdf: Vec<f64> = vals.iter().step_by(2).copied().collect();
                let mut cdf = Vec::with_capacity(cells + 1);
                let mut acc = 0.0;
                cdf.push(0.0);
                for m in &masses {
                    acc += m;
                    cdf.push(acc);
                }
                return Ok(InverseCdf {
                    x0: lo,
                    h,
                    pdf,
                    cdf,
                    masses,
                });
            }
            // halve the spacing, reusing every value already computed
            let fine = 4 * cells;
            let mut next = Vec::with_capacity(fine + 1);
            for (i, &v) in vals.iter().enumerate() {
                next.push(v);
                if i < 2 * cells {
                    next.push(f(lo + (hi - lo) * (2 * i + 1) as f64 / fine as f64)?);
                }
            }
            vals = next;
            cells *= 2;
        }
    }

    pub fn cells(&self) -> usize {
        self.masses.len()
    }

    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.x0, self.x0 + self.h * self.masses.len() as f64)
    }

    /// CDF of the sampled (piecewise) law, normalized to one.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let c = (((x - lo) / self.h) as usize).min(self.cells() - 1);
        let t = x - (lo + c as f64 * self.h);
        let (a, b) = self.cell_line(c);
        (self.cdf[c] + a * t + 0.5 * b * t * t) / self.total_mass()
    }

    // linear density a + b t on cell c, scaled to the cell mass
    fn cell_line(&self, c: usize) -> (f64, f64) {
        let (p0, p1) = (self.pdf[c], self.pdf[c + 1]);
        let trap = 0.5 * self.h * (p0 + p1);
        if trap <= 0.0 {
            return (self.masses[c] / self.h, 0.0);
        }
        let s = self.masses[c] / trap;
        (p0 * s, (p1 - p0) * s / self.h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.total_mass();
        let c = self.cdf.partition_point(|&v| v <= u).saturating_sub(1).min(self.cells() - 1);
        let local = (u - self.cdf[c]).max(0.0);
        let (a, b) = self.cell_line(c);
        let t = if b == 0.0 {
            if a > 0.0 {
                local / a
            } else {
                0.5 * self.h
            }
        } else {
            let disc = (a * a + 2.0 * b * local).max(0.0);
            let denom = a + disc.sqrt();
            if denom > 0.0 {
                2.0 * local / denom
            } else {
                0.5 * self.h
            }
        };
        self.x0 + c as f64 * self.h + t.clamp(0.0, self.h)
    }
}

/// Homodyne outcome law of a state seen by a detector of efficiency `eta_h`,
/// built from the lossy state `L(rho)` so that `p(x) = sqrt(eta) p_L(sqrt(eta) x)`.
#[derive(Clone, Debug)]
pub struct QuadratureSampler {
    inverse: InverseCdf,
}

impl QuadratureSampler {
    /// `lossy` is the state after the loss channel of efficiency `eta_h`.
    pub fn from_lossy(lossy: &DensityMatrix, phi: f64, eta_h: f64) -> Result<Self> {
        let law = QuadratureLaw::new(lossy, phi);
        let sqrt_eta = eta_h.sqrt();
        let density = |x: f64| clip_density(x, sqrt_eta * law.raw(sqrt_eta * x));
        let mean_n: f64 = lossy.diagonal().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        // <x_phi^2> <= (2<N> + 1)/4 + sqrt(<N>(<N> + 1))/2 for any phase
        let second = (2.0 * mean_n + 1.0) / 4.0 + 0.5 * (mean_n * (mean_n + 1.0)).sqrt();
        let mut half = 1.0 + 7.0 * (second / eta_h).sqrt();
        let peak = (0..=40)
            .map(|i| density(-half + 2.0 * half * i as f64 / 40.0).unwrap_or(0.0))
            .fold(0.0f64, f64::max);
        for _ in 0..20 {
            let edge = density(-half)?.max(density(half)?);
            if edge < 1e-13 * peak.max(1e-300) {
                break;
            }
            half *= 1.25;
        }
        let inverse = InverseCdf::build(&density, -half, half, lossy.trace())?;
        Ok(QuadratureSampler { inverse })
    }

    pub fn new(rho: &DensityMatrix, phi: f64, eta_h: f64) -> Result<Self> {
        Self::from_lossy(&rho.after_loss(eta_h)?, phi, eta_h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse.sample(rng)
    }

    pub fn inverse_cdf(&self) -> &InverseCdf {
        &self.inverse
    }
}

/// Draw `count` homodyne outcomes of `rho` at a fixed phase.
pub fn sample_quadrature<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    phi: f64,
    eta_h: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sampler = QuadratureSampler::new(rho, phi, eta_h)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

pub fn phase_list(cfg: &ExperimentConfig) -> Vec<f64> {
    match cfg.phase_schedule {
        PhaseSchedule::Even => (0..cfg.phases)
            .map(|i| std::f64::consts::PI * i as f64 / cfg.phases as f64)
            .collect(),
        PhaseSchedule::Random => {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX);
            (0..cfg.phases)
                .map(|_| std::f64::consts::PI * rng.random::<f64>())
                .collect()
        }
    }
}

/// A fully prepared run: readout law, heralded states and phases.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    readout: ReadoutSampler,
    phases: Vec<f64>,
    // index n_r - readout.min(): conditional signal state after homodyne loss
    lossy: Vec<DensityMatrix>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let source = CatSource::new(config.scheme()?)?;
        let readout = ReadoutSampler::at_least(config.herald_min(), config.eta_d, config.r)?;
        let lossy = (readout.min()..=readout.max())
            .into_par_iter()
            .map(|n| source.conditional_mixture(n)?.after_loss(config.eta_h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Experiment {
            config: config.clone(),
            readout,
            phases: phase_list(config),
            lossy,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn readout(&self) -> &ReadoutSampler {
        &self.readout
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn blocks(&self) -> usize {
        self.phases.len()
    }

    /// Records of one block (one phase); independent of every other block.
    pub fn block(&self, index: usize) -> Result<Vec<HomodyneRecord>> {
        let phi = *self
            .phases
            .get(index)
            .ok_or_else(|| Error::invalid(format!("block {index} out of range")))?;
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        let mut samplers: Vec<Option<QuadratureSampler>> = vec![None; self.lossy.len()];
        let mut out = Vec::with_capacity(self.config.samples_per_phase);
        for _ in 0..self.config.samples_per_phase {
            let n_r = self.readout.sample(&mut rng);
            let slot = n_r - self.readout.min();
            if samplers[slot].is_none() {
                samplers[slot] = Some(QuadratureSampler::from_lossy(&self.lossy[slot], phi, self.config.eta_h)?);
            }
            let x = samplers[slot].as_ref().unwrap().sample(&mut rng);
            out.push(HomodyneRecord { n_r, phi, x });
        }
        Ok(out)
    }

    /// All records in block order, blocks generated in parallel.
    pub fn run(&self) -> Result<Vec<HomodyneRecord>> {
        let blocks = (0..self.blocks())
            .into_par_iter()
            .map(|b| self.block(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Same records as [`Experiment::run`], generated one block at a time.
    pub fn stream(&self) -> RecordStream<'_> {
        RecordStream {
            experiment: self,
            next_block: 0,
            buffer: Vec::new().into_iter(),
        }
    }

    pub fn manifest(&self, records: &[HomodyneRecord]) -> RunManifest {
        RunManifest::new(&self.config, self.readout.acceptance(), records)
    }
}

pub struct RecordStream<'a> {
    experiment: &'a Experiment,
    next_block: usize,
    buffer: std::vec::IntoIter<HomodyneRecord>,
}

impl Iterator for RecordStream<'_> {
    type Item = Result<HomodyneRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.buffer.next() {
                return Some(Ok(r));
            }
            if self.next_block >= self.experiment.blocks() {
                return None;
            }
            match self.experiment.block(self.next_block) {
                Ok(b) => self.buffer = b.into_iter(),
                Err(e) => {
                    self.next_block = usize::MAX;
                    return Some(Err(e));
                }
            }
            self.next_block += 1;
        }
    }
}

/// Provenance of a simulated data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub generator: String,
    pub rng: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub records: usize,
    /// Probability that a readout trial is kept (1 when every trial is kept).
    pub acceptance: f64,
    /// Readout trials represented by the records, `records / acceptance`.
    pub equivalent_trials: f64,
    pub bin_counts: BTreeMap<usize, usize>,
    /// SHA-256 of the little-endian `(n_r as u64, phi bits, x bits)` stream.
    pub records_sha256: String,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, acceptance: f64, records: &[HomodyneRecord]) -> Self {
        let mut bin_counts = BTreeMap::new();
        for r in records {
            *bin_counts.entry(r.n_r).or_insert(0) += 1;
        }
        RunManifest {
            format_version: 1,
            generator: crate::formats::generator(),
            rng: RNG_DESCRIPTION.to_string(),
            seed: config.seed,
            config: config.clone(),
            records: records.len(),
            acceptance,
            equivalent_trials: records.len() as f64 / acceptance,
            bin_counts,
            records_sha256: records_digest(records),
        }
    }
}

pub fn records_digest(records: &[HomodyneRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update((r.n_r as u64).to_le_bytes());
        h.update(r.phi.to_bits().to_le_bytes());
        h.update(r.x.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulate a full run and describe it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<HomodyneRecord>, RunManifest)> {
    let exp = Experiment::new(config)?;
    let records = exp.run()?;
    let manifest = exp.manifest(&records);
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat::readout_prob_at_least;
    use crate::fock::{FockVector, SmearedQuadratureLaw};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            phases: 12,
            samples_per_phase: 300,
            dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn readout_law_matches_closed_form() {
        let s = ReadoutSampler::new(0.3, 0.4).unwrap();
        assert!((s.probability(0) + s.probability(1) - 0.996_728_73).abs() < 1e-8);
        let h = ReadoutSampler::at_least(2, 0.3, 0.4).unwrap();
        assert!((h.acceptance() - readout_prob_at_least(2, 0.3, 0.4)).abs() < 1e-12);
        assert!((h.acceptance() - 3.271_27e-3).abs() < 1e-7);
        assert_eq!(h.probability(1), 0.0);
        let total: f64 = (0..40).map(|n| h.probability(n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn readout_frequencies() {
        let s = ReadoutSampler::at_least(2, 0.3, 0.4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 200_000;
        let hits = (0..n).filter(|_| s.sample(&mut rng) == 2).count() as f64 / n as f64;
        let p = s.probability(2);
        assert!((hits - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn vacuum_readout_is_deterministic() {
        let s = ReadoutSampler::new(0.5, 0.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!((0..100).all(|_| s.sample(&mut rng) == 0));
        assert!(ReadoutSampler::at_least(1, 0.5, 0.0).is_err());
    }

    #[test]
    fn inverse_cdf_reproduces_gaussian() {
        let sd = 0.5;
        let f = |x: f64| Ok((-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()));
        let inv = InverseCdf::build(&f, -6.0, 6.0, 1.0).unwrap();
        let normal = Normal::new(0.0, sd).unwrap();
        for x in [-1.2, -0.3, 0.0, 0.4, 1.7] {
            assert!((inv.cdf(x) - normal.cdf(x)).abs() < 1e-6, "{x}");
        }
        // inversion is consistent with the CDF it was built from
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = inv.sample(&mut rng);
            assert!(x.is_finite() && x.abs() < 6.0);
        }
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let f = |x: f64| Ok((-(x * x) / 0.5).exp() / (0.5 * std::f64::consts::PI).sqrt());
        assert!(matches!(
            InverseCdf::build(&f, -0.5, 0.5, 1.0),
            Err(Error::GridCoverage { .. })
        ));
    }

    #[test]
    fn quadrature_sampler_ks_against_exact_law() {
        let v = FockVector::normalized_from(
            (0..6).map(|n| crate::C64::from_polar(0.6f64.powi(n), 0.3 * n as f64)).collect(),
        )
        .unwrap();
        let rho = v.projector();
        let (phi, eta) = (0.9, 0.8);
        let sampler = QuadratureSampler::new(&rho, phi, eta).unwrap();
        let law = SmearedQuadratureLaw::new(&rho, phi, eta).unwrap();
        let nodes = crate::numeric::composite_legendre(-8.0, 0.0, 64, 12);
        let exact_cdf = |x: f64| -> f64 {
            let shifted: Vec<_> = nodes.iter().map(|&(t, w)| (x + t, w)).collect();
            shifted.iter().map(|&(t, w)| w * law.raw(t)).sum()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate().step_by(50) {
            let c = exact_cdf(x);
            d = d.max((c - i as f64 / n as f64).abs()).max((c - (i + 1) as f64 / n as f64).abs());
        }
        // Kolmogorov critical value at 0.1% is 1.95 / sqrt(n)
        assert!(d < 1.95 / (n as f64).sqrt(), "KS distance {d}");
        for x in [-0.8, 0.1, 0.6] {
            assert!((sampler.inverse_cdf().cdf(x) - exact_cdf(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn blocks_are_deterministic_and_seed_dependent() {
        let cfg = small_config();
        let exp = Experiment::new(&cfg).unwrap();
        let a = exp.run().unwrap();
        let b = Experiment::new(&cfg).unwrap().run().unwrap();
        assert_eq!(records_digest(&a), records_digest(&b));
        let other = Experiment::new(&ExperimentConfig { seed: 2, ..cfg.clone() }).unwrap().run().unwrap();
        assert_ne!(records_digest(&a), records_digest(&other));
        assert_eq!(a.len(), cfg.total_records());
        assert!(a.iter().all(|r| r.n_r >= 2));
    }

    #[test]
    fn thread_count_does_not_change_records() {
        let exp = Experiment::new(&small_config()).unwrap();
        let wide = exp.run().unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| exp.run().unwrap());
        assert_eq!(wide, single);
    }

    #[test]
    fn stream_equals_batch() {
        let exp = Experiment::new(&small_config()).unwrap();
        let streamed: Vec<_> = exp.stream().collect::<Result<_>>().unwrap();
        assert_eq!(streamed, exp.run().unwrap());
    }

    #[test]
    fn unheralded_run_keeps_every_trial() {
        let cfg = ExperimentConfig {
            heralded: false,
            ..small_config()
        };
        let (records, manifest) = run_experiment(&cfg).unwrap();
        assert!((manifest.acceptance - 1.0).abs() < 1e-10);
        let zeros = records.iter().filter(|r| r.n_r == 0).count() as f64 / records.len() as f64;
        let p0 = readout_prob_inefficient(0, 0.3, 0.4);
        assert!((zeros - p0).abs() < 5.0 * (p0 * (1.0 - p0) / records.len() as f64).sqrt());
    }

    #[test]
    fn phase_schedules() {
        let even = phase_list(&small_config());
        assert_eq!(even.len(), 12);
        assert_eq!(even[0], 0.0);
        assert!((even[6] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let random = phase_list(&ExperimentConfig {
            phase_schedule: PhaseSchedule::Random,
            ..small_config()
        });
        assert!(random.iter().all(|&p| (0.0..std::f64::consts::PI).contains(&p)));
        assert_ne!(random, even);
    }

    #[test]
    fn manifest_counts_bins() {
        let cfg = small_config();
        let (records, manifest) = run_experiment(&cfg).unwrap();
        assert_eq!(manifest.bin_counts.values().sum::<usize>(), records.len());
        assert_eq!(manifest.records_sha256.len(), 64);
        assert!((manifest.equivalent_trials * manifest.acceptance - records.len() as f64).abs() < 1e-6);
    }
}
