//! `fpf-lab`: experiment runner for the linear-Gaussian filtering lab.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fpf_core::analysis::{mse_vs_n, mse_vs_time, poc_sweep, TestFunction};
use fpf_core::config::ExperimentConfig;
use fpf_core::fpf::{DeterministicScheme, OmegaMode, Variant};
use fpf_core::io;
use fpf_core::model::{simulate_truth, validate_model};
use fpf_core::riccati::solve_are;
use fpf_core::FilterError;

/// Environment variable overriding the output directory.
const OUT_ENV: &str = "FPF_LAB_OUT";

#[derive(Parser, Debug)]
#[command(name = "fpf-lab", version, about = "Kalman-Bucy and feedback particle filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides FPF_LAB_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    #[arg(long = "M", global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "T", global = true)]
    t: Option<f64>,
    #[arg(long, global = true)]
    variant: Option<VariantArg>,
    #[arg(long, global = true)]
    omega: Option<OmegaArg>,
    #[arg(long, global = true)]
    scheme: Option<SchemeArg>,
    #[arg(long = "test-fn", global = true)]
    test_fn: Option<TestFnArg>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Command {
    /// Check detectability, stabilizability and the prior covariance.
    Validate,
    /// Single-seed particle trajectories with empirical and Kalman moments.
    Trajectory,
    /// Monte-Carlo MSE against the Kalman filter over time.
    MseTime,
    /// Monte-Carlo MSE at t_star over the N grid.
    MseN,
    /// Propagation-of-chaos sweep over the N grid.
    Poc,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VariantArg {
    Deterministic,
    Stochastic,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum OmegaArg {
    Zero,
    Optimal,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SchemeArg {
    MomentMatched,
    Euler,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TestFnArg {
    Tanh,
    Sin,
    Const,
}

enum Failure {
    /// Ill-formed config or arguments.
    Usage(String),
    /// Validation or computation failed.
    Domain(String),
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        Failure::Domain(e.to_string())
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    let run = &mut cfg.run;
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if let Some(n) = cli.n {
        run.N = n;
    }
    if let Some(m) = cli.m {
        run.M = m;
    }
    if let Some(dt) = cli.dt {
        run.dt = dt;
    }
    if let Some(t) = cli.t {
        run.T = t;
    }
    if let Some(v) = cli.variant {
        run.variant = match v {
            VariantArg::Deterministic => Variant::Deterministic,
            VariantArg::Stochastic => Variant::Stochastic,
        };
    }
    if let Some(o) = cli.omega {
        run.omega_mode = match o {
            OmegaArg::Zero => OmegaMode::Zero,
            OmegaArg::Optimal => OmegaMode::Optimal,
        };
    }
    if let Some(s) = cli.scheme {
        run.scheme = match s {
            SchemeArg::MomentMatched => DeterministicScheme::MomentMatched,
            SchemeArg::Euler => DeterministicScheme::Euler,
        };
    }
    if let Some(f) = cli.test_fn {
        run.test_function = match f {
            TestFnArg::Tanh => TestFunction::Tanh,
            TestFnArg::Sin => TestFunction::Sin,
            TestFnArg::Const => TestFunction::Const,
        };
    }
    if let Some(out) = &cli.out {
        run.output_dir = out.clone();
    } else if let Some(env) = std::env::var_os(OUT_ENV) {
        run.output_dir = PathBuf::from(env);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve_config(cli)?;
    let model = cfg.resolve().map_err(|e| Failure::Usage(e.to_string()))?;
    println!("# resolved config\n{}", cfg.to_toml().trim_end());
    println!();

    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot start {w} workers: {e}")))?;
    }

    let report = validate_model(&model, cfg.model.allow_singular_prior);
    if cli.command == Command::Validate || !report.passed() {
        for line in report.lines() {
            println!("{line}");
        }
        if !report.passed() {
            return Err(Failure::Domain("model validation failed".into()));
        }
        if cli.command == Command::Validate {
            let ss = solve_are(&model)?;
            println!("lambda0 = {:.6}", ss.lambda0);
            return Ok(());
        }
    }

    let r = &cfg.run;
    let opts = r.options();
    let out_dir = &r.output_dir;
    match cli.command {
        Command::Validate => unreachable!(),
        Command::Trajectory => {
            let obs = simulate_truth(&model, r.dt, r.T, r.seed)?;
            let csv = io::trajectory_csv(&model, &obs, r.N, r.variant, &opts, r.seed)?;
            let path = out_dir.join("trajectory.csv");
            io::write_file(&path, &csv)?;
            println!("wrote {} ({} steps x {} particles)", path.display(), obs.steps(), r.N);
        }
        Command::MseTime => {
            let rep = mse_vs_time(&model, r.N, r.M, r.dt, r.T, r.variant, &opts, r.seed)?;
            let path = out_dir.join("mse_time.csv");
            io::write_file(&path, &io::mse_time_csv(&rep, r.seed)?)?;
            match &rep.fit {
                Some(f) => println!("decay rate = {:.4} +- {:.4}", -f.slope, f.half_width),
                None => println!("decay rate = n/a"),
            }
            if let Ok(ss) = solve_are(&model) {
                println!("2 lambda0 = {:.4}", 2.0 * ss.lambda0);
            }
            println!("failed replicas: {} of {}", rep.failed, rep.replicas);
            println!("wrote {}", path.display());
        }
        Command::MseN => {
            let rep = mse_vs_n(&model, &r.N_list, r.t_star, r.M, r.dt, r.variant, &opts, r.seed)?;
            let path = out_dir.join("mse_n.csv");
            io::write_file(&path, &io::mse_n_csv(&rep, r.seed)?)?;
            for (name, fit) in [("slope (mean)", &rep.fit), ("slope (cov)", &rep.fit_cov)] {
                match fit {
                    Some(f) => println!("{name} = {:.4} +- {:.4}", f.slope, f.half_width),
                    None => println!("{name} = n/a"),
                }
            }
            println!("failed replicas: {} of {}", rep.failed, rep.replicas);
            println!("wrote {}", path.display());
        }
        Command::Poc => {
            let rep = poc_sweep(&model, &r.N_list, r.t_star, r.M, r.dt, r.test_function, &opts, r.seed)?;
            let path = out_dir.join("poc.csv");
            io::write_file(&path, &io::poc_csv(&rep, r.seed))?;
            for (name, fit) in [("slope (coupling)", &rep.coupling_fit), ("slope (weak)", &rep.weak_fit)] {
                match fit {
                    Some(f) => println!("{name} = {:.4} +- {:.4}", f.slope, f.half_width),
                    None => println!("{name} = n/a"),
                }
            }
            println!("failed replicas: {} of {}", rep.failed, rep.replicas);
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
