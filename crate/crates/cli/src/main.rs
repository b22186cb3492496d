use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use srhc::cache;
use srhc::config::{ControllerType, Experiment, ExperimentConfig};
use srhc::experiment::{
    certificate_report, certify_controller, experiment_moments, run_experiment, solve_once, RunOptions,
};
use srhc::{bundled_config, CliError, Result};

#[derive(Parser)]
#[command(name = "srhc", version, about = "Stochastic receding-horizon control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Artifact directory (default: runs/<config name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for moment caches (default: the artifact directory).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Master seed of the simulated noise paths.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo samples for the moments.
    #[arg(long)]
    samples: Option<u64>,
    /// Solver fixed-point tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Noise realizations per initial state.
    #[arg(long)]
    realizations: Option<usize>,
    /// Number of random initial states (configs that draw them).
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the moment cache for a config, or inspect a cache file.
    Moments {
        config: Option<PathBuf>,
        /// Summarise an existing cache file instead of building one
        #[arg(long, conflicts_with = "config")]
        inspect: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve the finite-horizon program once and print the policy as JSON.
    Solve {
        config: PathBuf,
        /// Initial state, comma separated (default: the config's first).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every controller of a config and write the artifacts.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Mean-square boundedness certificates for the config's policies.
    Certify {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a bundled experiment: example61, example62 or example63.
    Reproduce {
        example: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &Path, o: &Overrides) -> Result<Experiment> {
    apply(ExperimentConfig::load(path)?, o).validate()
}

fn apply(mut c: ExperimentConfig, o: &Overrides) -> ExperimentConfig {
    if let Some(s) = o.seed {
        c.simulation.seed = s;
    }
    if let Some(s) = o.samples {
        c.moments.samples = s;
    }
    if let Some(t) = o.tol {
        c.solver.tol = t;
    }
    if let Some(r) = o.realizations {
        c.simulation.realizations = r;
    }
    if let (Some(n), Some(d)) = (o.draws, c.simulation.x0_draws.as_mut()) {
        d.count = n;
    }
    c
}

fn out_dir(exp: &Experiment, o: &Overrides) -> PathBuf {
    o.out.clone().unwrap_or_else(|| Path::new("runs").join(&exp.config.name))
}

fn run_options(exp: &Experiment, o: &Overrides) -> RunOptions {
    RunOptions {
        out_dir: out_dir(exp, o),
        cache_dir: o.cache_dir.clone(),
    }
}

fn simulate(exp: &Experiment, o: &Overrides) -> Result<()> {
    let opts = run_options(exp, o);
    let summary = run_experiment(exp, &opts)?;
    println!("artifacts in {}", opts.out_dir.display());
    for c in &summary.controllers {
        println!(
            "  {:<16} mean cost {:.6e}  std {:.6e}  used {}/{}  max|u| {:.4}",
            c.name, c.mean_cost, c.std_cost, c.used, c.realizations, c.max_input_inf
        );
    }
    for c in &summary.comparisons {
        println!(
            "  {}/{}: mean ratio {:.6} (std {:.6}), savings {:.2}%",
            c.numerator, c.denominator, c.mean_ratio, c.std_ratio, c.savings_percent
        );
    }
    if !summary.certificates.is_empty() {
        print!("{}", certificate_report(&summary.certificates));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Moments { config, inspect, overrides } => {
            if let Some(path) = inspect {
                print!("{}", cache::inspect(&path)?);
                return Ok(());
            }
            let path = config.ok_or_else(|| CliError::Config("give a config or --inspect <file>".into()))?;
            let exp = load(&path, &overrides)?;
            let dir = overrides.cache_dir.clone().unwrap_or_else(|| out_dir(&exp, &overrides));
            match experiment_moments(&exp, &dir)? {
                Some((r, _)) => {
                    print!("{}", cache::inspect(&dir.join(&r.file))?);
                    Ok(())
                }
                None => Err(CliError::Config("config has no rhc-policy controller needing moments".into())),
            }
        }
        Command::Solve { config, x0, overrides } => {
            let exp = load(&config, &overrides)?;
            let dir = overrides.cache_dir.clone().unwrap_or_else(|| out_dir(&exp, &overrides));
            let (_, stage) = experiment_moments(&exp, &dir)?
                .ok_or_else(|| CliError::Config("config has no rhc-policy controller".into()))?;
            let x0 = x0.map(DVector::from_vec).unwrap_or_else(|| exp.x0[0].clone());
            println!("{}", serde_json::to_string_pretty(&solve_once(&exp, &stage, &x0)?)?);
            Ok(())
        }
        Command::Simulate { config, overrides } => simulate(&load(&config, &overrides)?, &overrides),
        Command::Certify { config, overrides } => {
            let exp = load(&config, &overrides)?;
            let dir = overrides.cache_dir.clone().unwrap_or_else(|| out_dir(&exp, &overrides));
            let stage = experiment_moments(&exp, &dir)?.map(|(_, m)| m);
            let zeta = exp.config.certificate.map_or(0.5, |c| c.zeta);
            let mut certs = Vec::new();
            for c in exp.config.controllers.iter().filter(|c| c.kind == ControllerType::RhcPolicy) {
                certs.push(certify_controller(&exp, c, stage.as_ref(), &exp.x0[0], zeta)?);
            }
            print!("{}", certificate_report(&certs));
            match certs.iter().find_map(|c| c.refused.clone()) {
                Some(reason) => Err(CliError::Numeric(srhc_core::Error::InvalidCertificate(reason))),
                None => Ok(()),
            }
        }
        Command::Reproduce { example, overrides } => {
            let text = bundled_config(&example).ok_or_else(|| {
                CliError::Config(format!("unknown example {example:?}; use example61, example62 or example63"))
            })?;
            let config = ExperimentConfig::from_toml(text, Path::new(&example))?;
            simulate(&apply(config, &overrides).validate()?, &overrides)
        }
    }
}
