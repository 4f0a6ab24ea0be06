use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cattomo_core::cat::{
    convergence_threshold, readout_prob_at_least, readout_prob_ideal, readout_prob_inefficient, CatSource,
};
use cattomo_core::config::ExperimentConfig;
use cattomo_core::formats::{
    self, generator, render_records, render_report, render_state, render_wigner, render_wigner_stderr,
    EstimateFile, ReconstructionMode,
};
use cattomo_core::numeric::linspace;
use cattomo_core::observables::{
    element_report, estimate_visibility, fidelity, fringe_visibility, histogram_report, number_distribution,
    quadrature_report, wigner_estimate, ComparisonReport, QuadratureTheory, Visibility, CHI2_LEVEL,
};
use cattomo_core::sim::{records_digest, Experiment};
use cattomo_core::tomo::{
    compensate, compensation_weights, estimate_bins, estimate_with, CompensationWeights, PatternFunctions,
};
use cattomo_core::wigner::{wigner, GridSpec};
use cattomo_core::{DensityMatrix, FockVector, HomodyneRecord, RunManifest, TomogramEstimate};

use crate::args::ConfigArgs;
use crate::{CliError, Result};

pub const SUMMARY_FORMAT: &str = "cattomo-summary";
pub const SUMMARY_VERSION: u32 = 1;
/// Points of the grid the visibility is read from.
pub const VISIBILITY_POINTS: usize = 801;
/// Bins of the raw quadrature histogram.
pub const HISTOGRAM_BINS: usize = 30;

/// A named output file held in memory until the run has succeeded.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: impl Into<String>, text: String) -> Self {
        Artifact {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }

    fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        Artifact::text(name, text)
    }
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    for a in artifacts {
        formats::write_atomic(&dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}

// --- config ------------------------------------------------------------------

/// `base`, then the TOML file named by `--config`, then individual flags.
pub fn resolve_config(args: &ConfigArgs, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(&base).map_err(cattomo_core::Error::from)?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(cattomo_core::Error::from)?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let obj = value.as_object_mut().expect("config is a map");
        for (k, v) in table {
            let v = serde_json::to_value(v).map_err(cattomo_core::Error::from)?;
            obj.insert(k, v);
        }
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { cfg.$f = v.into(); } )* };
    }
    set!(
        r,
        r_s,
        eta_d,
        eta_h,
        k,
        n_max,
        dim,
        phases,
        samples_per_phase,
        seed,
        phase_schedule,
        heralded,
        weight_tolerance,
        missing_weight_tolerance,
        quadrature_points,
        quadrature_extent,
        wigner_points,
        wigner_extent,
        output_dir
    );
    cfg.validate()?;
    Ok(cfg)
}

/// Fields fixed by the data; a reconstruction must not change them.
fn check_same_physics(recorded: &ExperimentConfig, cfg: &ExperimentConfig) -> Result<()> {
    let pairs = [
        ("r", recorded.r, cfg.r),
        ("r_s", recorded.r_s, cfg.r_s),
        ("eta_d", recorded.eta_d, cfg.eta_d),
        ("eta_h", recorded.eta_h, cfg.eta_h),
    ];
    for (name, a, b) in pairs {
        if a != b {
            return Err(CliError::Config(format!(
                "records were taken with {name} = {a}, the config asks for {b}"
            )));
        }
    }
    if recorded.heralded && cfg.k < recorded.k {
        return Err(CliError::Config(format!(
            "records keep only n_r >= {}, cannot reconstruct k = {}",
            recorded.k, cfg.k
        )));
    }
    Ok(())
}

fn quadrature_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    linspace(-cfg.quadrature_extent, cfg.quadrature_extent, cfg.quadrature_points)
}

fn wigner_spec(cfg: &ExperimentConfig) -> GridSpec {
    GridSpec::square(cfg.wigner_extent, cfg.wigner_points)
}

// --- theory ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: ExperimentConfig,
    /// `P(0) + P(1)` at the readout efficiency.
    pub p_below_two: f64,
    pub p_exactly_k: f64,
    pub p_at_least_k: f64,
    pub convergence_threshold: f64,
    pub weights: CompensationWeights,
    /// `-min W` of the pure cat and of the conditional mixture.
    pub pure_negativity: f64,
    pub mixture_negativity: f64,
    pub pure_visibility: Option<f64>,
    pub mixture_visibility: Option<f64>,
}

pub const WEIGHTS_FORMAT: &str = "cattomo-weights";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: ExperimentConfig,
    pub weights: CompensationWeights,
}

pub struct TheoryOutput {
    pub summary: TheorySummary,
    pub artifacts: Vec<Artifact>,
}

fn header(out: &mut String, format: &str, cfg: &ExperimentConfig) {
    let _ = writeln!(out, "# {format} 1");
    let _ = writeln!(out, "# generator {}", generator());
    let _ = writeln!(
        out,
        "# config {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn curve_visibility(grid: &[f64], f: &dyn Fn(f64) -> f64) -> Option<f64> {
    let v: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let zeros = vec![0.0; v.len()];
    fringe_visibility(grid, &v, &zeros).ok().map(|v| v.value)
}

pub fn theory(cfg: &ExperimentConfig) -> Result<TheoryOutput> {
    cfg.validate()?;
    let source = CatSource::new(cfg.scheme()?)?;
    let k = cfg.k;
    let pure = source.amplified_cat(k)?.projector();
    let mixture = source.conditional_mixture(k)?;
    let weights = compensation_weights(k, cfg.eta_d, cfg.r, cfg.weight_tolerance)?;

    let mut readout = String::new();
    header(&mut readout, "cattomo-readout", cfg);
    readout.push_str("n,p_ideal,p_detected,p_at_least\n");
    for n in 0..=cfg.n_max {
        let _ = writeln!(
            readout,
            "{n},{},{},{}",
            readout_prob_ideal(n, cfg.r),
            readout_prob_inefficient(n, cfg.eta_d, cfg.r),
            readout_prob_at_least(n, cfg.eta_d, cfg.r)
        );
    }

    let grid = quadrature_grid(cfg);
    let analytic = QuadratureTheory::Analytic { n_r: k, r: cfg.r, r_s: cfg.r_s };
    let f_pure = analytic.density(0.0)?;
    let mix_law = QuadratureTheory::Fock(mixture.clone());
    let f_mix = mix_law.density(0.0)?;
    let seen_law = QuadratureTheory::Smeared(mixture.clone(), cfg.eta_h);
    let f_seen = seen_law.density(0.0)?;
    let mut curves = String::new();
    header(&mut curves, "cattomo-curves", cfg);
    let _ = writeln!(curves, "# phi 0");
    curves.push_str("x,pure,mixture,mixture_detected\n");
    for &x in &grid {
        let _ = writeln!(curves, "{x},{},{},{}", f_pure(x), f_mix(x), f_seen(x));
    }
    let fine = linspace(-cfg.quadrature_extent, cfg.quadrature_extent, VISIBILITY_POINTS);
    let pure_visibility = curve_visibility(&fine, &*f_pure);
    let mixture_visibility = curve_visibility(&fine, &*f_mix);

    let spec = wigner_spec(cfg);
    let w_pure = wigner(&pure, &spec)?;
    let w_mix = wigner(&mixture, &spec)?;

    let summary = TheorySummary {
        format: SUMMARY_FORMAT.into(),
        version: SUMMARY_VERSION,
        generator: generator(),
        config: cfg.clone(),
        p_below_two: readout_prob_inefficient(0, cfg.eta_d, cfg.r) + readout_prob_inefficient(1, cfg.eta_d, cfg.r),
        p_exactly_k: readout_prob_inefficient(k, cfg.eta_d, cfg.r),
        p_at_least_k: readout_prob_at_least(k, cfg.eta_d, cfg.r),
        convergence_threshold: convergence_threshold(),
        weights: weights.clone(),
        pure_negativity: (-w_pure.min()).max(0.0),
        mixture_negativity: (-w_mix.min()).max(0.0),
        pure_visibility,
        mixture_visibility,
    };

    let artifacts = vec![
        Artifact::text("readout.csv", readout),
        Artifact::text(format!("pure_k{k}.txt"), render_state(cfg, &format!("amplified cat, n_r = {k}"), &pure)),
        Artifact::text(
            format!("mixture_k{k}.txt"),
            render_state(cfg, &format!("conditional mixture, detected n_r = {k}"), &mixture),
        ),
        Artifact::text("quadrature_phi0.csv", curves),
        Artifact::text(format!("wigner_pure_k{k}.txt"), render_wigner(cfg, "pure amplified cat", &w_pure)),
        Artifact::text(format!("wigner_mixture_k{k}.txt"), render_wigner(cfg, "conditional mixture", &w_mix)),
        Artifact::json(
            "weights.json",
            &WeightsFile {
                format: WEIGHTS_FORMAT.into(),
                version: SUMMARY_VERSION,
                generator: generator(),
                config: cfg.clone(),
                weights: weights.clone(),
            },
        ),
        Artifact::json("summary.json", &summary),
    ];
    Ok(TheoryOutput { summary, artifacts })
}

// --- simulate ----------------------------------------------------------------

pub struct SimulationOutput {
    pub records: Vec<HomodyneRecord>,
    pub manifest: RunManifest,
    pub artifacts: Vec<Artifact>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let exp = Experiment::new(cfg)?;
    let records = exp.run()?;
    let manifest = exp.manifest(&records);
    let artifacts = vec![
        Artifact::text("records.csv", render_records(cfg, &records)),
        Artifact::json("manifest.json", &manifest),
    ];
    Ok(SimulationOutput {
        records,
        manifest,
        artifacts,
    })
}

// --- reconstruct -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub file: String,
    pub quantity: String,
    pub max_abs_z: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_p_value: f64,
    pub consistent: bool,
}

impl ReportLine {
    fn new(file: &str, r: &ComparisonReport) -> Self {
        ReportLine {
            file: file.into(),
            quantity: r.quantity.clone(),
            max_abs_z: r.max_abs_z,
            chi2: r.chi2,
            dof: r.dof,
            chi2_p_value: r.chi2_p_value(),
            consistent: r.consistent(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: ExperimentConfig,
    pub mode: ReconstructionMode,
    pub k: usize,
    /// What the estimate is compared against.
    pub reference: String,
    pub records: usize,
    pub bin_counts: BTreeMap<usize, usize>,
    pub trace: f64,
    pub trace_stderr: f64,
    /// Overlap with the pure amplified cat.
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    /// Largest `|z|` among populations of the parity the target lacks.
    pub wrong_parity_max_abs_z: f64,
    pub visibility: Option<Visibility>,
    pub reference_visibility: Option<f64>,
    pub reports: Vec<ReportLine>,
    /// Raw histogram chi-square passes at the 1% level.
    pub histogram_consistent: Option<bool>,
}

impl ReconstructionSummary {
    pub fn report(&self, file: &str) -> Option<&ReportLine> {
        self.reports.iter().find(|r| r.file == file)
    }
}

pub struct Reconstruction {
    pub file: EstimateFile,
    pub summary: ReconstructionSummary,
    pub artifacts: Vec<Artifact>,
}

/// Output subdirectory of a reconstruction.
pub fn reconstruction_dir(cfg: &ExperimentConfig, mode: ReconstructionMode) -> PathBuf {
    cfg.output_dir.join(format!("{mode}_k{}", cfg.k))
}

pub fn estimate(
    cfg: &ExperimentConfig,
    records: &[HomodyneRecord],
    mode: ReconstructionMode,
) -> Result<(TomogramEstimate, Option<CompensationWeights>)> {
    let pf = PatternFunctions::new(cfg.dim, cfg.eta_h)?;
    Ok(match mode {
        ReconstructionMode::Plain => {
            let bin: Vec<HomodyneRecord> = records.iter().filter(|r| r.n_r == cfg.k).copied().collect();
            (estimate_with(&pf, &bin)?, None)
        }
        ReconstructionMode::Compensated => {
            let weights = compensation_weights(cfg.k, cfg.eta_d, cfg.r, cfg.weight_tolerance)?;
            let top = cfg.k + weights.j_max;
            let wanted: Vec<HomodyneRecord> = records
                .iter()
                .filter(|r| r.n_r >= cfg.k && r.n_r <= top)
                .copied()
                .collect();
            let bins = estimate_bins(&pf, &wanted)?;
            (compensate(&bins, &weights, cfg.missing_weight_tolerance)?, Some(weights))
        }
    })
}

/// Reads a record file and checks it against the config.
pub fn load_records(path: &Path, args: &ConfigArgs) -> Result<(ExperimentConfig, Vec<HomodyneRecord>)> {
    let (head, records) = formats::read_records(path)?;
    let cfg = resolve_config(args, head.config.clone())?;
    check_same_physics(&head.config, &cfg)?;
    Ok((cfg, records))
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    records: &[HomodyneRecord],
    mode: ReconstructionMode,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let (est, weights) = estimate(cfg, records, mode)?;
    let file = EstimateFile::new(mode, cfg.k, cfg, records_digest(records), est, weights);
    let (summary, mut artifacts) = reports(cfg, &file, Some(records))?;
    artifacts.insert(0, Artifact::json("estimate.json", &file));
    Ok(Reconstruction {
        file,
        summary,
        artifacts,
    })
}

/// Comparison reports, Wigner grids and the summary of an estimate file.
/// The histogram needs the records and is only made in plain mode.
pub fn reports(
    cfg: &ExperimentConfig,
    file: &EstimateFile,
    records: Option<&[HomodyneRecord]>,
) -> Result<(ReconstructionSummary, Vec<Artifact>)> {
    let est = &file.estimate;
    let k = file.k;
    let source = CatSource::new(cfg.scheme()?)?;
    let target: FockVector = source.amplified_cat(k)?;
    let mixture = source.conditional_mixture(k)?;
    let (reference, reference_name, law): (DensityMatrix, &str, QuadratureTheory) = match file.mode {
        ReconstructionMode::Plain => (
            mixture.clone(),
            "exact conditional mixture",
            QuadratureTheory::Fock(mixture.clone()),
        ),
        ReconstructionMode::Compensated => (
            target.projector(),
            "pure amplified cat",
            QuadratureTheory::Analytic { n_r: k, r: cfg.r, r_s: cfg.r_s },
        ),
    };

    let mut artifacts = Vec::new();
    let mut lines = Vec::new();
    let mut push = |name: &str, report: &ComparisonReport, artifacts: &mut Vec<Artifact>| {
        lines.push(ReportLine::new(name, report));
        artifacts.push(Artifact::text(name, render_report(cfg, report)));
    };

    let elements = element_report(est, &reference);
    push("elements.csv", &elements, &mut artifacts);
    let number = number_distribution(est, &reference.diagonal())?;
    push("number.csv", &number, &mut artifacts);
    let wrong_parity_max_abs_z = number
        .z_scores()
        .iter()
        .enumerate()
        .filter(|(n, _)| n % 2 != k % 2)
        .fold(0.0f64, |m, (_, z)| m.max(z.abs()));

    let quad = quadrature_report(est, 0.0, &quadrature_grid(cfg), &law)?;
    push("quadrature_phi0.csv", &quad, &mut artifacts);

    let mut histogram_consistent = None;
    if let (ReconstructionMode::Plain, Some(records)) = (file.mode, records) {
        // nearest recorded phase to zero
        let phi = records
            .iter()
            .filter(|r| r.n_r == k)
            .map(|r| r.phi)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()));
        if let Some(phi) = phi {
            let edges = linspace(-cfg.quadrature_extent, cfg.quadrature_extent, HISTOGRAM_BINS + 1);
            let smeared = QuadratureTheory::Smeared(mixture.clone(), cfg.eta_h);
            let hist = histogram_report(records, k, phi, &edges, &smeared)?;
            histogram_consistent = Some(hist.chi2_p_value() > CHI2_LEVEL);
            push("histogram_phi0.csv", &hist, &mut artifacts);
        }
    }

    let fine = linspace(-cfg.quadrature_extent, cfg.quadrature_extent, VISIBILITY_POINTS);
    let visibility = match estimate_visibility(est, 0.0, &fine) {
        Ok(v) => Some(v),
        Err(cattomo_core::Error::Undefined(why)) => {
            log::warn!("visibility undefined: {why}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let reference_visibility = curve_visibility(&fine, &*law.density(0.0)?);

    let spec = wigner_spec(cfg);
    let w = wigner_estimate(est, &spec)?;
    let w_ref = wigner(&reference, &spec)?;
    artifacts.push(Artifact::text("wigner.txt", render_wigner(cfg, "estimate", &w.grid)));
    artifacts.push(Artifact::text("wigner_stderr.txt", render_wigner_stderr(cfg, "estimate", &w)));
    artifacts.push(Artifact::text("wigner_reference.txt", render_wigner(cfg, reference_name, &w_ref)));

    let trace_g: Vec<f64> = est.layout().entries().iter().map(|&(n, m, _)| if n == m { 1.0 } else { 0.0 }).collect();
    let (trace, trace_stderr) = est.linear(&trace_g);
    let (fid, fid_err) = fidelity(est, &target);
    let summary = ReconstructionSummary {
        format: SUMMARY_FORMAT.into(),
        version: SUMMARY_VERSION,
        generator: generator(),
        config: cfg.clone(),
        mode: file.mode,
        k,
        reference: reference_name.into(),
        records: est.records(),
        bin_counts: est.bin_counts.clone(),
        trace,
        trace_stderr,
        fidelity: fid,
        fidelity_stderr: fid_err,
        wrong_parity_max_abs_z,
        visibility,
        reference_visibility,
        reports: lines,
        histogram_consistent,
    };
    artifacts.push(Artifact::json("summary.json", &summary));
    Ok((summary, artifacts))
}

/// Rebuilds reports from an estimate file on disk.
pub fn report_from_file(
    path: &Path,
    args: &ConfigArgs,
    records: Option<&Path>,
) -> Result<(PathBuf, ReconstructionSummary, Vec<Artifact>)> {
    let file = EstimateFile::read(path)?;
    let cfg = resolve_config(args, file.config.clone())?;
    check_same_physics(&file.config, &cfg)?;
    let recs = match records {
        Some(p) => Some(formats::read_records(p)?.1),
        None => None,
    };
    let (summary, artifacts) = reports(&cfg, &file, recs.as_deref())?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, summary, artifacts))
}
