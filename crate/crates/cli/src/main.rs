//! `stoch-eit`: simulate expected NtD data for random pixel conductivities and
//! reconstruct inclusions from it.
//!
//! Exit codes: 0 success, 1 contract or configuration error, 2 numerical
//! failure (including failed validation checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stoch_eit::config::{preset, ExperimentConfig};
use stoch_eit::pipeline::{run_noise, run_reconstruct, run_simulate, run_validate, RunArtifacts};
use stoch_eit::Error;

#[derive(Parser)]
#[command(name = "stoch-eit", version, about = "Stochastic EIT simulation and inclusion detection")]
struct Cli {
    /// Output directory; overrides `output` in the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh, clean expected difference matrix and, if configured, its noisy copy.
    Simulate { config: PathBuf },
    /// Perturb a stored matrix at the configured noise level.
    Noise { config: PathBuf, matrix: PathBuf },
    /// Factorization indicator and/or monotonicity mask from a stored matrix.
    Reconstruct { config: PathBuf, matrix: PathBuf },
    /// Run the consistency checks and write a JSON report.
    Validate { config: PathBuf },
    /// Print a built-in configuration (test1, test2, test3, test4).
    Preset { name: String },
}

enum Failure {
    Contract(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Contract(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Contract(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output.clone());
    config.output = out.clone();
    Ok((config, out))
}

fn report(run: &RunArtifacts) {
    for f in &run.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Contract("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Contract(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate { config } => {
            let (c, out) = load(&cli, config)?;
            report(&run_simulate(&c, &out)?);
        }
        Command::Noise { config, matrix } => {
            let (c, out) = load(&cli, config)?;
            report(&run_noise(&c, matrix, &out)?);
        }
        Command::Reconstruct { config, matrix } => {
            let (c, out) = load(&cli, config)?;
            let (run, rec) = run_reconstruct(&c, matrix, &out)?;
            if let Some(fm) = &rec.factorization {
                println!("factorization: tau = {}, indicator max {:.4e}", fm.tau, fm.indicator_max);
                if fm.degenerate {
                    eprintln!("warning: the matrix is zero; the indicator carries no information");
                }
            }
            if let Some(mm) = &rec.monotonicity {
                println!(
                    "monotonicity: {:?}, alpha = {:.4}, beta = {:.4}, epsilon = {:.3e}, {}/{} balls pass",
                    mm.case, mm.alpha, mm.beta, mm.epsilon, mm.passing_balls, mm.balls
                );
            }
            report(&run);
        }
        Command::Validate { config } => {
            let (c, out) = load(&cli, config)?;
            let r = run_validate(&c, &out)?;
            print!("{}", r.summary());
            println!("wrote {}", out.join(stoch_eit::pipeline::VALIDATION_FILE).display());
            if !r.pass {
                let failed: Vec<&str> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                return Err(Failure::Numerical(format!("failed checks: {}", failed.join(", "))));
            }
        }
        Command::Preset { name } => {
            let mut p = preset(name)?;
            if let Some(seed) = cli.seed {
                p.config.seed = seed;
            }
            eprint!("{}", p.description);
            let text = p.config.to_toml()?;
            match &cli.out {
                Some(dir) => {
                    let path = dir.join(format!("{name}.toml"));
                    stoch_eit::io::write_atomic(&path, text.as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
