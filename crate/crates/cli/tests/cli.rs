use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cattomo"));
    c.env_remove("CATTOMO_OUTPUT_DIR").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--output-dir").arg(out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--phases", "12", "--samples-per-phase", "3000", "--dim", "6", "--wigner-points", "21"];

fn with(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = SMALL.to_vec();
    v.extend_from_slice(extra);
    v
}

#[test]
fn theory_reports_readout_law_and_suppressed_fringes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["theory"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("P(n_r < 2)        0.9967"), "{}", stdout(&o));
    let s = json(dir.path().join("theory/summary.json"));
    let pure = s["pure_negativity"].as_f64().unwrap();
    let mix = s["mixture_negativity"].as_f64().unwrap();
    assert!(mix < pure, "{mix} vs {pure}");
    assert_eq!(s["weights"]["j_max"], 8);
    for f in ["readout.csv", "pure_k2.txt", "mixture_k2.txt", "quadrature_phi0.csv", "wigner_pure_k2.txt", "weights.json"] {
        let text = std::fs::read_to_string(dir.path().join("theory").join(f)).unwrap();
        assert!(text.contains("\"eta_h\":0.8") || text.contains("\"eta_h\": 0.8"), "{f} lacks the config");
    }
}

#[test]
fn zero_gain_gives_vacuum() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["theory", "--r", "0", "--r-s", "0", "--k", "0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["pure_k0.txt", "mixture_k0.txt"] {
        let text = std::fs::read_to_string(dir.path().join("theory").join(f)).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows, vec!["n,m,re,im", "0,0,1,0"], "{f}");
    }
    assert!(stdout(&o).contains("P(n_r < 2)        1.000000"));
}

#[test]
fn validation_failures_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["simulate", "--eta-h", "0.5"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("must exceed 1/2"));
    assert!(!out.exists());

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus_field = 3\n").unwrap();
    let o = run(&["theory", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "k = 3\nseed = 5\n").unwrap();
    let o = bin()
        .args(["config", "--config", cfg.to_str().unwrap(), "--seed", "9"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("k = 3"));
    assert!(text.contains("seed = 9"));
    assert!(text.contains("eta_d = 0.3"));
}

#[test]
fn simulate_is_reproducible_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&with(&["simulate"]), &a).status.success());
    let o = bin()
        .args(with(&["simulate", "--workers", "3"]))
        .arg("--output-dir")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.success());
    // the output dir is part of the echoed config, so compare the data rows
    let rows = |p: &Path| {
        std::fs::read_to_string(p.join("records.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&a), rows(&b));
    assert_eq!(rows(&a).len(), 1 + 12 * 3000);
    let (ma, mb) = (json(a.join("manifest.json")), json(b.join("manifest.json")));
    assert_eq!(ma["records_sha256"], mb["records_sha256"]);
    // rerun into the same directory: byte-identical files
    let before = std::fs::read(a.join("records.csv")).unwrap();
    assert!(run(&with(&["simulate"]), &a).status.success());
    assert_eq!(before, std::fs::read(a.join("records.csv")).unwrap());
}

#[test]
fn environment_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["theory", "--wigner-points", "11"])
        .env("CATTOMO_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("theory/summary.json").exists());
}

#[test]
fn reconstruct_plain_and_compensated_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(run(&with(&["simulate"]), out).status.success());
    for mode in ["plain", "compensated"] {
        let o = run(&with(&["reconstruct", "--mode", mode, "--missing-weight-tolerance", "1"]), out);
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let sub = out.join(format!("{mode}_k2"));
        let s = json(sub.join("summary.json"));
        assert_eq!(s["mode"], mode);
        let est = json(sub.join("estimate.json"));
        assert_eq!(est["format"], "cattomo-estimate");
        assert_eq!(est["config"]["samples_per_phase"], 3000);
        for f in ["elements.csv", "number.csv", "quadrature_phi0.csv", "wigner.txt", "wigner_stderr.txt"] {
            assert!(sub.join(f).exists(), "{mode}: {f}");
        }
        // reports rebuilt from the estimate file match the originals
        let before = std::fs::read(sub.join("number.csv")).unwrap();
        let o = bin()
            .args(["report", "--estimate"])
            .arg(sub.join("estimate.json"))
            .args(["--wigner-points", "21"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(before, std::fs::read(sub.join("number.csv")).unwrap());
    }
    assert!(out.join("plain_k2/histogram_phi0.csv").exists());
}

#[test]
fn unit_readout_efficiency_makes_modes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let args = with(&["--eta-d", "1"]);
    let mut sim = args.clone();
    sim.push("simulate");
    assert!(run(&sim, out).status.success());
    for mode in ["plain", "compensated"] {
        let mut a = args.clone();
        a.extend_from_slice(&["reconstruct", "--mode", mode]);
        let o = run(&a, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let p = json(out.join("plain_k2/estimate.json"));
    let c = json(out.join("compensated_k2/estimate.json"));
    assert_eq!(p["estimate"]["mean"], c["estimate"]["mean"]);
    assert_eq!(p["estimate"]["covariance"], c["estimate"]["covariance"]);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    // missing record file
    let o = run(&["reconstruct", "--records", "/nonexistent/records.csv"], out);
    assert_eq!(o.status.code(), Some(5));

    assert!(run(&with(&["simulate"]), out).status.success());
    // physics that contradicts the data
    let o = run(&with(&["reconstruct", "--eta-h", "0.9"]), out);
    assert_eq!(o.status.code(), Some(2));
    // no room for empty compensation bins
    let o = run(&with(&["reconstruct", "--missing-weight-tolerance", "0"]), out);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("compensated_k2").exists());
    // damaged record file
    let damaged = out.join("damaged.csv");
    let text = std::fs::read_to_string(out.join("records.csv")).unwrap();
    std::fs::write(&damaged, &text[..text.len() / 2]).unwrap();
    let o = run(&["reconstruct", "--records", damaged.to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(4));
}
