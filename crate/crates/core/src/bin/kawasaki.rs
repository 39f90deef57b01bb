use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kawasaki_kpz::config::ExperimentConfig;
use kawasaki_kpz::experiments::{self, ExperimentOutput, ToleranceProfile, Tolerances};
use kawasaki_kpz::Error;

/// Reproducible experiments on gradient Kawasaki lattice gases.
#[derive(Parser)]
#[command(name = "kawasaki", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detailed balance, gradient condition, current identity and FD relation.
    Check(Common),
    /// Thermodynamic curve with λ and the Einstein-relation residual.
    Thermo(Common),
    /// Canonical versus grand-canonical expansion tables.
    Ensembles(Common),
    /// Kinetic Monte Carlo replica ensemble.
    Simulate(Common),
    /// Lattice stochastic Burgers runs with matched coefficients.
    Sbe(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Strict,
    Default,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output` in the config, else `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "default")]
    tolerance_profile: Profile,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidConfiguration(_) | Error::InvalidParameter(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Thermo(a) => ("thermo", a),
        Command::Ensembles(a) => ("ensembles", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Sbe(a) => ("sbe", a),
    };
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kawasaki {name}: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("kawasaki {name}: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let profile = match args.tolerance_profile {
        Profile::Strict => ToleranceProfile::Strict,
        Profile::Default => ToleranceProfile::Default,
    };
    let tol = Tolerances::resolve(profile, &cfg);
    let result: kawasaki_kpz::Result<ExperimentOutput> = match &cli.command {
        Command::Check(_) => experiments::cmd_check(&cfg, tol),
        Command::Thermo(_) => experiments::cmd_thermo(&cfg, tol),
        Command::Ensembles(_) => experiments::cmd_ensembles(&cfg),
        Command::Simulate(_) => experiments::cmd_simulate(&cfg),
        Command::Sbe(_) => experiments::cmd_sbe(&cfg, tol),
    };
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("kawasaki {name}: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment));
    if let Err(e) = experiments::write_output(&dir, &cfg, tol, &out) {
        eprintln!("kawasaki {name}: writing {}: {e}", dir.display());
        return ExitCode::from(3);
    }
    println!("{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
    if out.passed {
        ExitCode::SUCCESS
    } else {
        eprintln!("kawasaki {name}: check failed");
        ExitCode::from(1)
    }
}
