//! Command-line front end: simulate datasets, identify models from CSV, run
//! Monte Carlo studies, compare estimators, and query the output-noise
//! autocovariance.

mod config;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eivarx::acvf::yule_walker_acvf;
use eivarx::mc::{eigenvalue_summary_of, run_mc};
use eivarx::pipeline::{identify, IdentificationReport, PipelineConfig};
use eivarx::signal::corrupt_measurements;
use eivarx::signal::{generate_prbs, simulate_system};
use eivarx::EivarxError;
use serde_json::json;

use crate::config::{mc_config_from, sim_setup_from, RawConfig};
use crate::io::{fmt_sig12, read_dataset, write_dataset, write_manifest};

#[derive(Parser)]
#[command(name = "eivarx", version, about = "Errors-in-variables ARX identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy input-output dataset from a config file
    Simulate(SimulateArgs),
    /// Identify order, delay, variances, and coefficients from a CSV dataset
    Identify(IdentifyArgs),
    /// Run a seeded Monte Carlo study from a config file
    Mc(McArgs),
    /// Monte Carlo comparison across estimators (a method-list override of `mc`)
    Compare(CompareArgs),
    /// Print the output-noise autocovariance implied by AR coefficients
    Acvf(AcvfArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file (flat key = value, or JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Noise seed; omitted: derived from the clock (with a warning)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Input CSV with at least columns u and y
    #[arg(long)]
    data: PathBuf,
    /// Stacking lag L
    #[arg(long)]
    lag: usize,
    /// Equality-test level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Report path; omitted: JSON to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coefficient-significance ratio for the delay decision
    #[arg(long, default_value_t = 2.0)]
    zero_threshold: f64,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Base seed override (otherwise mc.base_seed from the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods override (proposed, dpca, dipca_diag, ols_arx)
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods to compare
    #[arg(long)]
    methods: String,
}

#[derive(Args)]
struct AcvfArgs {
    /// AR coefficients, comma-separated (empty for white noise)
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    a: String,
    /// Driving white-noise variance
    #[arg(long)]
    sigma2: f64,
    #[arg(long, default_value_t = 5)]
    max_lag: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let structural = e
                .downcast_ref::<EivarxError>()
                .is_some_and(|err| matches!(err, EivarxError::NoConstraintStructure));
            ExitCode::from(if structural { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Mc(args) => cmd_mc(args.config, args.out, args.seed, args.methods.as_deref()),
        Command::Compare(args) => cmd_mc(args.config, args.out, args.seed, Some(&args.methods)),
        Command::Acvf(args) => cmd_acvf(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let raw = RawConfig::load(&args.config)?;
    let setup = sim_setup_from(&raw)?;
    let seed = match args.seed {
        Some(s) => s,
        None => {
            let s = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(1);
            eprintln!("warning: no --seed given, using clock-derived seed {s}; rerun with --seed {s} to reproduce");
            s
        }
    };
    let u_star = generate_prbs(setup.prbs_bits, setup.n, setup.prbs_seed, setup.prbs_levels)
        .map_err(|e| anyhow!(e))?;
    let y_star = simulate_system(&setup.model, &u_star).map_err(|e| anyhow!(e))?;
    let series =
        corrupt_measurements(&y_star, &u_star, &setup.model, &setup.noise, seed).map_err(|e| anyhow!(e))?;
    write_dataset(&args.out, &series)?;

    let manifest_path = manifest_path_for(&args.out);
    write_manifest(
        &manifest_path,
        "simulate",
        Some(seed),
        json!({
            "file": raw.resolved(),
            "resolved_noise": { "sigma2_ey": setup.noise.sigma2_ey, "sigma2_eu": setup.noise.sigma2_eu },
        }),
        &[&args.config],
        &[&args.out],
    )?;
    eprintln!("wrote {} ({} rows) and {}", args.out.display(), series.len(), manifest_path.display());
    Ok(())
}

/// The report JSON document, with the flat field layout external tools
/// consume.
fn report_json(report: &IdentificationReport) -> serde_json::Value {
    json!({
        "eta_hat": report.eta_hat,
        "d_hat": report.d_hat,
        "delay_hat": report.delay_hat,
        "a": report.model.a(),
        "b": report.model.b(),
        "sigma2_ey": report.variances.sigma2_ey,
        "sigma2_eu": report.variances.sigma2_eu,
        "eigenvalue_trail": report.eigenvalue_trail,
        "tests": report.test_trail.iter().map(|t| json!({
            "d_guess": t.d_guess,
            "statistic": t.statistic,
            "dof": t.dof,
            "critical": t.critical,
            "reject": t.reject,
        })).collect::<Vec<_>>(),
        "converged": report.converged,
        "iterations": report.iterations_used,
        "degenerate_noise": report.degenerate_noise,
        "lambda_min_refined": report.lambda_min_refined,
    })
}

fn cmd_identify(args: IdentifyArgs) -> Result<()> {
    let series = read_dataset(&args.data)?;
    let mut config = PipelineConfig::new(args.lag);
    config.alpha = args.alpha;
    config.zero_threshold = args.zero_threshold;
    let report = identify(&series, &config).map_err(anyhow::Error::from)?;
    let document = serde_json::to_string_pretty(&report_json(&report))?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &document).with_context(|| format!("writing {}", path.display()))?;
            let manifest_path = manifest_path_for(path);
            write_manifest(
                &manifest_path,
                "identify",
                None,
                json!({ "lag": args.lag, "alpha": args.alpha, "zero_threshold": args.zero_threshold }),
                &[&args.data],
                &[path],
            )?;
            eprintln!("wrote {} and {}", path.display(), manifest_path.display());
        }
        None => println!("{document}"),
    }
    Ok(())
}

fn cmd_mc(config_path: PathBuf, out_dir: PathBuf, seed: Option<u64>, methods: Option<&str>) -> Result<()> {
    let raw = RawConfig::load(&config_path)?;
    let config = mc_config_from(&raw, seed, methods)?;
    if config.replications < 2 {
        eprintln!("warning: fewer than 2 replications; spread columns are degenerate");
    }
    let summary = run_mc(&config).map_err(anyhow::Error::from)?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("summary.csv");
    let json_path = out_dir.join("summary.json");
    let mut csv = String::from("method,parameter,true,mean,two_sigma\n");
    for m in &summary.methods {
        for p in &m.params {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                m.method.name(),
                p.parameter,
                fmt_sig12(p.truth),
                fmt_sig12(p.mean),
                fmt_sig12(p.two_sigma)
            ));
        }
    }
    std::fs::write(&csv_path, csv)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;

    let mut outputs: Vec<PathBuf> = vec![csv_path.clone(), json_path.clone()];
    if let Some(eigen) = eigenvalue_summary_of(&summary) {
        let eig_path = out_dir.join("eigenvalues.csv");
        let mut text = String::from("index,mean,two_sigma\n");
        for e in eigen {
            text.push_str(&format!("{},{},{}\n", e.index, fmt_sig12(e.mean), fmt_sig12(e.two_sigma)));
        }
        std::fs::write(&eig_path, text)?;
        outputs.push(eig_path);
    }

    let manifest = out_dir.join("manifest.json");
    let output_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &manifest,
        if methods.is_some() { "compare" } else { "mc" },
        Some(config.base_seed),
        json!({ "file": raw.resolved(), "methods": config.methods, "replications": config.replications }),
        &[&config_path],
        &output_refs,
    )?;

    for m in &summary.methods {
        let recovery = m
            .order_recovery_rate
            .map(|r| format!(", order recovery {:.0}%", 100.0 * r))
            .unwrap_or_default();
        eprintln!(
            "{}: {} replicates used, {} failed{}",
            m.method.name(),
            m.replicates_used,
            m.failures.len(),
            recovery
        );
    }
    eprintln!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_acvf(args: AcvfArgs) -> Result<()> {
    let a: Vec<f64> = if args.a.trim().is_empty() {
        Vec::new()
    } else {
        args.a
            .split(',')
            .map(|tok| tok.trim().parse::<f64>().map_err(|e| anyhow!("--a: {e} ('{tok}')")))
            .collect::<Result<_>>()?
    };
    if args.sigma2 <= 0.0 {
        bail!("--sigma2 must be positive");
    }
    let max_lag = args.max_lag.max(a.len());
    let acvf = yule_walker_acvf(&a, args.sigma2, max_lag).map_err(anyhow::Error::from)?;
    println!("lag,acvf");
    for (lag, value) in acvf.values().iter().enumerate().take(args.max_lag + 1) {
        println!("{lag},{}", fmt_sig12(*value));
    }
    Ok(())
}

fn manifest_path_for(artifact: &Path) -> PathBuf {
    let stem = artifact
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "output".to_string());
    artifact.with_file_name(format!("{stem}.manifest.json"))
}
