use std::process::ExitCode;

use clap::Parser;

use cattomo_cli::pipeline::{self, load_records, reconstruction_dir, report_from_file};
use cattomo_cli::{resolve_config, write_artifacts, Cli, CliError, Command, ReconstructionSummary, EXIT_OTHER};
use cattomo_core::ExperimentConfig;

fn print_summary(s: &ReconstructionSummary) {
    println!("mode {} k = {} vs {}", s.mode, s.k, s.reference);
    println!("records used      {}  bins {:?}", s.records, s.bin_counts);
    println!("trace             {:.5} +- {:.5}", s.trace, s.trace_stderr);
    println!("fidelity (cat)    {:.4} +- {:.4}", s.fidelity, s.fidelity_stderr);
    println!("wrong-parity |z|  {:.2}", s.wrong_parity_max_abs_z);
    match &s.visibility {
        Some(v) => println!("visibility phi=0  {:.4} +- {:.4}", v.value, v.stderr),
        None => println!("visibility phi=0  undefined"),
    }
    if let Some(v) = s.reference_visibility {
        println!("reference visib.  {v:.4}");
    }
    for r in &s.reports {
        println!(
            "{:<22} max|z| {:6.2}  chi2 {:8.2}/{:<4} {}",
            r.file,
            r.max_abs_z,
            r.chi2,
            r.dof,
            if r.consistent { "consistent" } else { "INCONSISTENT" }
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Config => {
            let cfg = resolve_config(&cli.config, ExperimentConfig::default())?;
            print!("{}", cfg.to_toml());
        }
        Command::Theory => {
            let cfg = resolve_config(&cli.config, ExperimentConfig::default())?;
            let out = pipeline::theory(&cfg)?;
            let dir = cfg.output_dir.join("theory");
            write_artifacts(&dir, &out.artifacts)?;
            let s = &out.summary;
            println!("P(n_r < 2)        {:.6}", s.p_below_two);
            println!("P(n_r = {})        {:.6e}", cfg.k, s.p_exactly_k);
            println!("P(n_r >= {})       {:.6e}", cfg.k, s.p_at_least_k);
            println!(
                "weights           j_max {}  ratio {:.4}  variance factor {:.1}",
                s.weights.j_max, s.weights.asymptotic_ratio, s.weights.variance_factor
            );
            println!("negativity        pure {:.4}  mixture {:.4}", s.pure_negativity, s.mixture_negativity);
            println!("wrote {}", dir.display());
        }
        Command::Simulate => {
            let cfg = resolve_config(&cli.config, ExperimentConfig::default())?;
            let out = pipeline::simulate(&cfg)?;
            write_artifacts(&cfg.output_dir, &out.artifacts)?;
            println!("records           {}", out.manifest.records);
            println!("bins              {:?}", out.manifest.bin_counts);
            println!("sha256            {}", out.manifest.records_sha256);
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Reconstruct { records, mode } => {
            let defaults = resolve_config(&cli.config, ExperimentConfig::default())?;
            let path = records.clone().unwrap_or_else(|| defaults.output_dir.join("records.csv"));
            let (cfg, recs) = load_records(&path, &cli.config)?;
            let mode = (*mode).into();
            let out = pipeline::reconstruct(&cfg, &recs, mode)?;
            let dir = reconstruction_dir(&cfg, mode);
            write_artifacts(&dir, &out.artifacts)?;
            print_summary(&out.summary);
            println!("wrote {}", dir.display());
        }
        Command::Report { estimate, records } => {
            let (dir, summary, artifacts) = report_from_file(estimate, &cli.config, records.as_deref())?;
            write_artifacts(&dir, &artifacts)?;
            print_summary(&summary);
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(if code == 0 { EXIT_OTHER } else { code })
        }
    }
}
