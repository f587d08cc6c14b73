//! `cgrf`: sampling, verification and the three experiments from JSON configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 failed verification, 4 numerical failure.

mod output;

use anyhow::{anyhow, Context, Result};
use cgrf::apps::discovery::{burgers_truth, compare_priors, discover_pde, simulate_data, DiscoveryConfig, Library};
use cgrf::apps::heat::{
    dirichlet_exact, heat_reference_for, max_error_at_slices, solve_heat, HeatBoundary, HeatConfig,
};
use cgrf::apps::tensile::{tensile_experiment, TensileConfig};
use cgrf::cgrf::{bridge_check, verify_conditions};
use cgrf::config::FieldConfig;
use cgrf::gp::{sample, value_queries};
use cgrf::kernels::Kernel;
use clap::{Parser, Subcommand};
use output::{num, Run};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const HEAT_SLICES: [f64; 3] = [0.05, 0.15, 0.25];

#[derive(Parser)]
#[command(name = "cgrf", version, about = "Gaussian random fields with exact linear boundary constraints")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, visible_alias = "out", global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Joint draws of a constrained field at interior and boundary points.
    Sample {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_draws: usize,
    },
    /// Checks mean and variance of every constraint functional on its segment.
    Verify {
        config: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        n_boundary: usize,
    },
    /// Probabilistic solution of the heat equation.
    SolveHeat { config: PathBuf },
    /// Burgers' equation discovery: one run, or a prior comparison with `--replicates`.
    Discover {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicates: usize,
    },
    /// Displacement estimation on the tensile specimen, both priors.
    Tensile {
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
    },
    /// Gaussian-bridge and pinned-endpoint covariance identities on [0, 1].
    BridgeCheck {
        #[arg(long, default_value_t = 0.35)]
        lengthscale: f64,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
    },
}

/// An error with a fixed exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(Exit(code, _)) = cause.downcast_ref::<Exit>() {
            return *code;
        }
        if let Some(err) = cause.downcast_ref::<cgrf::Error>() {
            return if err.is_numerical() { 4 } else { 2 };
        }
    }
    2
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Exit(2, format!("{}: {e}", path.display())))?;
    let value = serde_json::from_slice(&bytes)
        .map_err(|e| Exit(2, format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?;
    Ok((value, bytes))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Sample { config, n_draws } => cmd_sample(cli, config, *n_draws),
        Command::Verify { config, tol, n_boundary } => cmd_verify(cli, config, *tol, *n_boundary),
        Command::SolveHeat { config } => cmd_solve_heat(cli, config),
        Command::Discover { config, replicates } => cmd_discover(cli, config, *replicates),
        Command::Tensile { config, replicates } => cmd_tensile(cli, config, *replicates),
        Command::BridgeCheck { lengthscale, pairs } => cmd_bridge_check(cli, *lengthscale, *pairs),
    }
}

fn field_from(path: &Path) -> Result<(FieldConfig, Vec<u8>)> {
    let (_, bytes) = load::<serde_json::Value>(path)?;
    let src = String::from_utf8(bytes.clone()).map_err(|e| Exit(2, format!("{}: {e}", path.display())))?;
    let cfg = FieldConfig::from_json(&src).with_context(|| path.display().to_string())?;
    Ok((cfg, bytes))
}

fn cmd_sample(cli: &Cli, path: &Path, n_draws: usize) -> Result<u8> {
    let (cfg, bytes) = field_from(path)?;
    let cf = cfg.build()?;
    let report = verify_conditions(&cf, 20, 1e-6)?;
    if !report.pass {
        print_json(&report)?;
        return Err(Exit(3, "constraint verification failed at tol 1e-6; refusing to sample".into()).into());
    }
    let pts = cfg.evaluation_points()?;
    let points: Vec<_> = pts.iter().map(|(p, _)| p.clone()).collect();
    let draws = sample(&cf, &value_queries(&points), n_draws, cli.seed)?;
    let d = cf.constraint_set().domain().dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("on_boundary".into());
    header.extend((1..=n_draws).map(|j| format!("draw_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut run = Run::new("sample", Some(path), &bytes, cli.seed, &cli.out_dir)?;
    let rows = pts.iter().enumerate().map(|(i, (p, b))| {
        let mut r: Vec<String> = p.iter().map(|&v| num(v)).collect();
        r.push(u8::from(*b).to_string());
        r.extend(draws.row(i).iter().map(|&v| num(v)));
        r
    });
    let csv = run.write_csv("draws", &header, rows)?;
    run.finish()?;
    println!("{}", csv.display());
    Ok(0)
}

fn cmd_verify(cli: &Cli, path: &Path, tol: f64, n_boundary: usize) -> Result<u8> {
    let (cfg, bytes) = field_from(path)?;
    let cf = cfg.build()?;
    let report = verify_conditions(&cf, n_boundary, tol)?;
    let mut run = Run::new("verify", Some(path), &bytes, cli.seed, &cli.out_dir)?;
    run.write_json("verify", &report)?;
    run.finish()?;
    print_json(&report)?;
    Ok(if report.pass { 0 } else { 3 })
}

#[derive(Serialize)]
struct HeatMetrics<'a> {
    config: &'a HeatConfig,
    seed: u64,
    diagnostics: &'a cgrf::apps::heat::HeatDiagnostics,
    /// Dirichlet: largest error of the ensemble mean against the separable solution.
    max_error_exact: Option<f64>,
    /// Largest error against the finite-difference reference at the time slices.
    max_error_reference: f64,
    slices: [f64; 3],
    max_boundary_variance: f64,
}

fn cmd_solve_heat(cli: &Cli, path: &Path) -> Result<u8> {
    let (cfg, bytes) = load::<HeatConfig>(path)?;
    cfg.validate()?;
    let sol = solve_heat(&cfg, cli.seed)?;
    let reference = heat_reference_for(&cfg)?;
    let exact = (cfg.boundary == HeatBoundary::Dirichlet)
        .then(|| sol.summary.iter().map(|r| (r.mean - dirichlet_exact(r.t, r.x)).abs()).fold(0.0, f64::max));
    let metrics = HeatMetrics {
        config: &cfg,
        seed: cli.seed,
        diagnostics: &sol.diagnostics,
        max_error_exact: exact,
        max_error_reference: max_error_at_slices(&sol, &reference.solution, &HEAT_SLICES),
        slices: HEAT_SLICES,
        max_boundary_variance: sol
            .summary
            .iter()
            .filter(|r| r.x == 0.0 || r.x == 1.0)
            .map(|r| r.variance)
            .fold(0.0, f64::max),
    };
    let mut run = Run::new("solve-heat", Some(path), &bytes, cli.seed, &cli.out_dir)?;
    let rows = sol.summary.iter().map(|r| vec![num(r.t), num(r.x), num(r.mean), num(r.q025), num(r.q975)]);
    let csv = run.write_csv("heat_summary", &["t", "x", "mean", "q025", "q975"], rows)?;
    run.write_json("heat_metrics", &metrics)?;
    run.finish()?;
    println!("{}", csv.display());
    Ok(0)
}

fn cmd_discover(cli: &Cli, path: &Path, replicates: usize) -> Result<u8> {
    let (cfg, bytes) = load::<DiscoveryConfig>(path)?;
    cfg.validate()?;
    let mut run = Run::new("discover", Some(path), &bytes, cli.seed, &cli.out_dir)?;
    if replicates == 0 {
        let truth = burgers_truth(&cfg)?;
        let data = simulate_data(&cfg, &truth.solution, cli.seed, 0)?;
        let res = discover_pde(&cfg, &data)?;
        let truth_coef = cfg.library()?.truth();
        let rows = res
            .terms
            .iter()
            .zip(&res.coefficients)
            .zip(truth_coef.iter())
            .map(|((t, c), g)| vec![t.clone(), num(*c), num(*g)]);
        run.write_csv("discovery_coefficients", &["term", "coefficient", "truth"], rows)?;
        run.write_json("discovery_metrics", &res)?;
        print_json(&serde_json::json!({
            "selected": res.selected,
            "false_discovery_proportion": res.false_discovery_proportion,
            "coefficient_mse": res.coefficient_mse,
        }))?;
    } else {
        let cmp = compare_priors(&cfg, replicates, cli.seed)?;
        let rows = cmp.rows.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                format!("{:?}", r.prior).to_lowercase(),
                num(r.false_discovery_proportion),
                num(r.coefficient_mse),
                r.selected.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        });
        run.write_csv(
            "discovery_replicates",
            &["replicate", "prior", "false_discovery_proportion", "coefficient_mse", "selected", "error"],
            rows,
        )?;
        let summary = serde_json::json!({
            "replicates": replicates,
            "library": Library::names(&cfg.library()?),
            "median_fdp_cgrf": cmp.median_fdp_cgrf,
            "median_fdp_grf": cmp.median_fdp_grf,
            "median_mse_cgrf": cmp.median_mse_cgrf,
            "median_mse_grf": cmp.median_mse_grf,
            "failed_runs": cmp.rows.iter().filter(|r| r.error.is_some()).count(),
        });
        run.write_json("discovery_comparison", &summary)?;
        print_json(&summary)?;
    }
    run.finish()?;
    Ok(0)
}

fn cmd_tensile(cli: &Cli, path: &Path, replicates: usize) -> Result<u8> {
    let (cfg, bytes) = load::<TensileConfig>(path)?;
    cfg.validate()?;
    if replicates == 0 {
        return Err(Exit(2, "--replicates must be positive".into()).into());
    }
    let exp = tensile_experiment(&cfg, replicates, cli.seed)?;
    let mut run = Run::new("tensile", Some(path), &bytes, cli.seed, &cli.out_dir)?;
    let rows = exp.rows.iter().map(|r| {
        vec![
            r.replicate.to_string(),
            format!("{:?}", r.prior).to_lowercase(),
            num(r.log_mspe),
            num(r.boundary_max_error),
            r.error.clone().unwrap_or_default(),
        ]
    });
    run.write_csv("tensile_replicates", &["replicate", "prior", "log_mspe", "boundary_max_error", "error"], rows)?;
    let summary = serde_json::json!({
        "design": exp.design,
        "noise_sd": exp.noise_sd,
        "replicates": replicates,
        "median_log_mspe_cgrf": exp.median_log_mspe_cgrf,
        "median_log_mspe_grf": exp.median_log_mspe_grf,
        "failed_runs": exp.rows.iter().filter(|r| r.error.is_some()).count(),
    });
    run.write_json("tensile_metrics", &summary)?;
    run.finish()?;
    print_json(&summary)?;
    Ok(0)
}

fn cmd_bridge_check(cli: &Cli, lengthscale: f64, pairs: usize) -> Result<u8> {
    let kernel = Kernel::se(1.0, &[lengthscale]).map_err(|e| anyhow!(Exit(2, e.to_string())))?;
    let params = serde_json::json!({ "lengthscale": lengthscale, "pairs": pairs });
    let report = bridge_check(&kernel, pairs, cli.seed)?;
    let mut run = Run::new("bridge-check", None, params.to_string().as_bytes(), cli.seed, &cli.out_dir)?;
    run.write_json("bridge_check", &report)?;
    run.finish()?;
    println!("bridge max deviation      {:e}", report.bridge_max_deviation);
    println!("example-one max deviation {:e}", report.example_one_max_deviation);
    Ok(if report.bridge_max_deviation < 1e-12 && report.example_one_max_deviation < 1e-14 { 0 } else { 3 })
}
