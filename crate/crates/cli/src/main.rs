//! Command-line harness for the partition-chain pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use partition_chain::config::RunConfig;
use partition_chain::pipeline;

/// Exit status when the study runs but one of its checks fails.
const EXIT_CHECKS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "partition-chain",
    version,
    about = "Corrected Markov chains on domain partitions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the partition of every level.
    Partition(Common),
    /// Assemble generators from stored partitions.
    Generator(Common),
    /// Simulate chain trajectories and marginals, and reference marginals.
    Simulate(Common),
    /// Run diagnostics on stored artifacts.
    Diagnose(Common),
    /// Run every stage and evaluate the study checks.
    Study(Common),
    /// Print a bundled configuration.
    ShowConfig {
        #[arg(value_enum)]
        name: Bundled,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Bundled {
    LineLattice,
    DiskVoronoi,
    BoxLattice,
}

impl Bundled {
    fn text(self) -> &'static str {
        match self {
            Bundled::LineLattice => include_str!("../../../configs/line-lattice.toml"),
            Bundled::DiskVoronoi => include_str!("../../../configs/disk-voronoi.toml"),
            Bundled::BoxLattice => include_str!("../../../configs/box-lattice.toml"),
        }
    }
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "bundled",
        conflicts_with = "bundled"
    )]
    config: Option<PathBuf>,
    /// Use a bundled configuration instead of a file.
    #[arg(long, value_enum)]
    bundled: Option<Bundled>,
    /// Output directory (overrides the configuration).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Comma-separated subset of levels to run.
    #[arg(long, value_name = "N,...", value_delimiter = ',')]
    level_filter: Option<Vec<usize>>,
}

impl Common {
    fn load(&self) -> partition_chain::Result<(RunConfig, PathBuf)> {
        let mut cfg = match (&self.config, self.bundled) {
            (Some(path), _) => RunConfig::from_path(path)?,
            (None, Some(b)) => RunConfig::from_toml_str(b.text())?,
            (None, None) => unreachable!("clap enforces one source"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> partition_chain::Result<ExitCode> {
    let common = match &cli.command {
        Command::ShowConfig { name } => {
            print!("{}", name.text());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Partition(c)
        | Command::Generator(c)
        | Command::Simulate(c)
        | Command::Diagnose(c)
        | Command::Study(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| partition_chain::Error::InvalidArgument(e.to_string()))?;
    }
    let (cfg, out) = common.load()?;
    let filter = common.level_filter.clone();
    match cli.command {
        Command::Partition(_) => {
            for p in pipeline::cmd_partition(&cfg, &out, &filter)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Generator(_) => {
            for (n, r) in pipeline::cmd_generator(&cfg, &out, &filter)? {
                println!(
                    "n = {n}: cells {} invalid {} | max|c| {:.4} | min q/rho^2 {:.4} | interior eps/rho {:.4} (c1 {:.4})",
                    r.n_cells, r.n_invalid, r.max_abs_c, r.min_q_over_rho2, r.max_eps_over_rho_interior, r.c1
                );
            }
        }
        Command::Simulate(_) => {
            for p in pipeline::cmd_simulate(&cfg, &out, &filter)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Diagnose(_) => {
            pipeline::cmd_diagnose(&cfg, &out, &filter)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
        }
        Command::Study(_) => {
            let outcome = pipeline::cmd_study(&cfg, &out, &filter)?;
            for c in &outcome.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if !outcome.passed() {
                return Ok(ExitCode::from(EXIT_CHECKS_FAILED));
            }
        }
        Command::ShowConfig { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
