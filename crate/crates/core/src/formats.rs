//! On-disk formats. Every file starts with a versioned header that echoes the
//! full config and the generator version; see FORMATS.md for the layouts.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::observables::{ComparisonReport, WignerEstimate};
use crate::sim::{HomodyneRecord, RunManifest};
use crate::tomo::{CompensationWeights, TomogramEstimate};
use crate::wigner::{WignerGrid, WIGNER_CONVENTION};

pub const RECORDS_FORMAT: &str = "cattomo-records";
pub const RECORDS_VERSION: u32 = 1;
pub const ESTIMATE_FORMAT: &str = "cattomo-estimate";
pub const ESTIMATE_VERSION: u32 = 1;
pub const STATE_FORMAT: &str = "cattomo-state";
pub const REPORT_FORMAT: &str = "cattomo-report";
pub const WIGNER_FORMAT: &str = "cattomo-wigner";
pub const TEXT_VERSION: u32 = 1;

pub fn generator() -> String {
    format!("cattomo {}", env!("CARGO_PKG_VERSION"))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn config_line(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

// `# format version`, generator and config
fn text_header(out: &mut String, format: &str, version: u32, cfg: &ExperimentConfig) {
    let _ = writeln!(out, "# {format} {version}");
    let _ = writeln!(out, "# generator {}", generator());
    let _ = writeln!(out, "# config {}", config_line(cfg));
}

// --- records -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RecordsHeader {
    pub version: u32,
    pub generator: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Records as text. `f64` values use the shortest representation that parses
/// back to the same bits.
pub fn render_records(cfg: &ExperimentConfig, records: &[HomodyneRecord]) -> String {
    let mut out = String::with_capacity(48 * records.len() + 1024);
    text_header(&mut out, RECORDS_FORMAT, RECORDS_VERSION, cfg);
    let _ = writeln!(out, "# seed {}", cfg.seed);
    let _ = writeln!(out, "# records {}", records.len());
    out.push_str("n_r,phi,x\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.n_r, r.phi, r.x);
    }
    out
}

pub fn write_records(path: &Path, cfg: &ExperimentConfig, records: &[HomodyneRecord]) -> Result<()> {
    write_atomic(path, render_records(cfg, records).as_bytes())
}

fn parse_header_line<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix("# ")
        .and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected '# {key} ...', found {line:?}")))
}

pub fn parse_records(reader: impl BufRead) -> Result<(RecordsHeader, Vec<HomodyneRecord>)> {
    let mut lines = reader.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("truncated records header".into()))?
            .map_err(Error::from)
    };
    let first = next()?;
    let version: u32 = parse_header_line(&first, RECORDS_FORMAT)?
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad version in {first:?}")))?;
    if version != RECORDS_VERSION {
        return Err(Error::Format(format!(
            "records format version {version} is not supported (expected {RECORDS_VERSION})"
        )));
    }
    let generator = parse_header_line(&next()?, "generator")?.to_string();
    let config: ExperimentConfig = serde_json::from_str(parse_header_line(&next()?, "config")?)?;
    let seed_line = next()?;
    let seed: u64 = parse_header_line(&seed_line, "seed")?
        .parse()
        .map_err(|_| Error::Format(format!("bad seed in {seed_line:?}")))?;
    let count_line = next()?;
    let count: usize = parse_header_line(&count_line, "records")?
        .parse()
        .map_err(|_| Error::Format(format!("bad record count in {count_line:?}")))?;
    if next()? != "n_r,phi,x" {
        return Err(Error::Format("missing column header 'n_r,phi,x'".into()));
    }
    let mut records = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("record {}: cannot parse {line:?}", i + 1));
        let mut it = line.split(',');
        let (Some(a), Some(b), Some(c), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        let rec = HomodyneRecord {
            n_r: a.parse().map_err(|_| bad())?,
            phi: b.parse().map_err(|_| bad())?,
            x: c.parse().map_err(|_| bad())?,
        };
        if !rec.phi.is_finite() || !rec.x.is_finite() {
            return Err(bad());
        }
        records.push(rec);
    }
    if records.len() != count {
        return Err(Error::Format(format!(
            "header announces {count} records, file holds {}",
            records.len()
        )));
    }
    Ok((
        RecordsHeader {
            version,
            generator,
            seed,
            config,
        },
        records,
    ))
}

pub fn read_records(path: &Path) -> Result<(RecordsHeader, Vec<HomodyneRecord>)> {
    let file = std::fs::File::open(path)?;
    parse_records(BufReader::new(file))
}

// --- JSON documents ----------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(path, manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    /// Direct estimate of one readout bin.
    Plain,
    /// Weighted combination of bins `k, k+1, ...`.
    Compensated,
}

impl std::fmt::Display for ReconstructionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReconstructionMode::Plain => "plain",
            ReconstructionMode::Compensated => "compensated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub mode: ReconstructionMode,
    /// Readout bin (plain) or target cat index (compensated).
    pub k: usize,
    pub config: ExperimentConfig,
    /// SHA-256 of the record stream the estimate was computed from.
    pub records_sha256: String,
    pub trace: f64,
    pub estimate: TomogramEstimate,
    pub weights: Option<CompensationWeights>,
}

impl EstimateFile {
    pub fn new(
        mode: ReconstructionMode,
        k: usize,
        config: &ExperimentConfig,
        records_sha256: String,
        estimate: TomogramEstimate,
        weights: Option<CompensationWeights>,
    ) -> Self {
        EstimateFile {
            format: ESTIMATE_FORMAT.into(),
            version: ESTIMATE_VERSION,
            generator: generator(),
            mode,
            k,
            config: config.clone(),
            records_sha256,
            trace: estimate.trace(),
            estimate,
            weights,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: EstimateFile = read_json(path)?;
        if file.format != ESTIMATE_FORMAT || file.version != ESTIMATE_VERSION {
            return Err(Error::Format(format!(
                "{} is {} version {}, expected {ESTIMATE_FORMAT} version {ESTIMATE_VERSION}",
                path.display(),
                file.format,
                file.version
            )));
        }
        Ok(file)
    }
}

// --- plot-ready text ---------------------------------------------------------

/// Nonzero elements of a density matrix as `n,m,re,im` rows.
pub fn render_state(cfg: &ExperimentConfig, label: &str, rho: &DensityMatrix) -> String {
    let mut out = String::new();
    text_header(&mut out, STATE_FORMAT, TEXT_VERSION, cfg);
    let _ = writeln!(out, "# state {label}");
    let _ = writeln!(out, "# dim {}", rho.dim());
    out.push_str("n,m,re,im\n");
    let e = rho.elements();
    for n in 0..rho.dim() {
        for m in 0..rho.dim() {
            let z = e[[n, m]];
            if z.re != 0.0 || z.im != 0.0 {
                let _ = writeln!(out, "{n},{m},{},{}", z.re, z.im);
            }
        }
    }
    out
}

pub fn render_report(cfg: &ExperimentConfig, report: &ComparisonReport) -> String {
    let mut out = String::new();
    text_header(&mut out, REPORT_FORMAT, TEXT_VERSION, cfg);
    let _ = writeln!(out, "# quantity {}", report.quantity);
    let _ = writeln!(out, "# max_abs_z {}", report.max_abs_z);
    let _ = writeln!(out, "# chi2 {} dof {} p {}", report.chi2, report.dof, report.chi2_p_value());
    out.push_str("x,estimate,stderr,theory\n");
    for i in 0..report.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            report.grid[i], report.estimate[i], report.stderr[i], report.theory[i]
        );
    }
    out
}

fn render_matrix(out: &mut String, grid: &WignerGrid, values: &ndarray::Array2<f64>) {
    out.push_str("x\\p");
    for p in &grid.p {
        let _ = write!(out, ",{p}");
    }
    out.push('\n');
    for (i, x) in grid.x.iter().enumerate() {
        let _ = write!(out, "{x}");
        for j in 0..grid.p.len() {
            let _ = write!(out, ",{}", values[[i, j]]);
        }
        out.push('\n');
    }
}

/// Wigner values as a matrix: the first row lists `p`, the first column `x`.
pub fn render_wigner(cfg: &ExperimentConfig, label: &str, grid: &WignerGrid) -> String {
    let mut out = String::new();
    text_header(&mut out, WIGNER_FORMAT, TEXT_VERSION, cfg);
    let _ = writeln!(out, "# quantity {label}");
    let _ = writeln!(out, "# convention {WIGNER_CONVENTION}");
    render_matrix(&mut out, grid, &grid.values);
    out
}

/// Standard errors of a Wigner estimate, in the same matrix layout.
pub fn render_wigner_stderr(cfg: &ExperimentConfig, label: &str, w: &WignerEstimate) -> String {
    let mut out = String::new();
    text_header(&mut out, WIGNER_FORMAT, TEXT_VERSION, cfg);
    let _ = writeln!(out, "# quantity standard error of {label}");
    let _ = writeln!(out, "# convention {WIGNER_CONVENTION}");
    render_matrix(&mut out, &w.grid, &w.stderr);
    out
}

/// Reads a Wigner matrix file back into a grid.
pub fn parse_wigner(text: &str) -> Result<WignerGrid> {
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    let head = rows.next().ok_or_else(|| Error::Format("empty Wigner file".into()))?;
    let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
    let p: Vec<f64> = head
        .split(',')
        .skip(1)
        .map(parse)
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut flat = Vec::new();
    for row in rows {
        let mut cells = row.split(',');
        x.push(parse(cells.next().unwrap_or(""))?);
        let vals: Vec<f64> = cells.map(parse).collect::<Result<_>>()?;
        if vals.len() != p.len() {
            return Err(Error::Format(format!("Wigner row has {} values, expected {}", vals.len(), p.len())));
        }
        flat.extend(vals);
    }
    let values = ndarray::Array2::from_shape_vec((x.len(), p.len()), flat)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(WignerGrid { x, p, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockVector;
    use crate::wigner::{wigner, GridSpec};

    fn sample_records() -> Vec<HomodyneRecord> {
        vec![
            HomodyneRecord { n_r: 2, phi: 0.0, x: 0.1 },
            HomodyneRecord { n_r: 3, phi: std::f64::consts::PI / 70.0, x: -1.234_567_890_123_456_7e-3 },
            HomodyneRecord { n_r: 2, phi: 3.0, x: f64::MIN_POSITIVE },
            HomodyneRecord { n_r: 7, phi: 1.0 / 3.0, x: -0.0 },
        ]
    }

    #[test]
    fn records_round_trip_bit_exact() {
        let cfg = ExperimentConfig::default();
        let recs = sample_records();
        let text = render_records(&cfg, &recs);
        let (head, back) = parse_records(text.as_bytes()).unwrap();
        assert_eq!(head.config, cfg);
        assert_eq!(head.seed, cfg.seed);
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.n_r, b.n_r);
            assert_eq!(a.phi.to_bits(), b.phi.to_bits());
            assert_eq!(a.x.to_bits(), b.x.to_bits());
        }
    }

    #[test]
    fn records_rejects_damage() {
        let cfg = ExperimentConfig::default();
        let text = render_records(&cfg, &sample_records());
        let wrong_version = text.replacen("cattomo-records 1", "cattomo-records 2", 1);
        assert!(matches!(parse_records(wrong_version.as_bytes()), Err(Error::Format(_))));
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_records(truncated.as_bytes()), Err(Error::Format(_))));
        let garbled = text.replace("0.1\n", "0.1,9\n");
        assert!(matches!(parse_records(garbled.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn estimate_file_round_trips_bit_exact() {
        let rho = FockVector::vacuum(3).projector();
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(4);
        let mut recs = Vec::new();
        for j in 0..6 {
            let phi = std::f64::consts::PI * j as f64 / 6.0;
            for x in crate::sim::sample_quadrature(&rho, phi, 0.8, 500, &mut rng).unwrap() {
                recs.push(HomodyneRecord { n_r: 2, phi, x });
            }
        }
        let est = crate::tomo::estimate_rho(&recs, 3, 0.8).unwrap();
        let cfg = ExperimentConfig::default();
        let file = EstimateFile::new(ReconstructionMode::Plain, 2, &cfg, "00".into(), est, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.json");
        write_json(&path, &file).unwrap();
        let back = EstimateFile::read(&path).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn wigner_matrix_round_trip() {
        let cfg = ExperimentConfig::default();
        let rho = FockVector::number_state(1, 4).unwrap().projector();
        let grid = wigner(&rho, &GridSpec::square(2.0, 7)).unwrap();
        let text = render_wigner(&cfg, "number state 1", &grid);
        assert!(text.contains("# convention W(x,p)"));
        let back = parse_wigner(&text).unwrap();
        assert_eq!(back.x, grid.x);
        assert_eq!(back.p, grid.p);
        assert_eq!(back.values, grid.values);
    }

    #[test]
    fn state_lists_nonzero_elements() {
        let cfg = ExperimentConfig::default();
        let rho = FockVector::number_state(2, 3).unwrap().projector();
        let text = render_state(&cfg, "fock 2", &rho);
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows, vec!["n,m,re,im", "2,2,1,0"]);
    }
}
