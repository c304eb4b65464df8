use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slicekit::harness::{cmd_certify, cmd_leader_follower, cmd_products, ExperimentConfig};
use slicekit::Error;

#[derive(Parser)]
#[command(
    name = "slicekit",
    version,
    about = "Slice-based stability certificates for sub-stochastic products"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random products of single-row updates.
    Products(Common),
    /// Leader-follower simulation over the mobile network.
    Lf(Common),
    /// Certify a slice log.
    Certify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidParams(_)
        | Error::InvalidSubset(_) => EXIT_CONFIG,
        Error::Io { path, .. } if !path.exists() => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let (common, which) = match &cli.command {
        Command::Products(c) => (c, "products"),
        Command::Lf(c) => (c, "lf"),
        Command::Certify(c) => (c, "certify"),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir());

    match which {
        "products" => {
            let rep = cmd_products(&cfg, &out)?;
            let c = &rep.checks;
            println!(
                "products: {} steps, {} slices, min length {}",
                cfg.horizon,
                c.slices,
                c.min_length.map_or("none".into(), |l| l.to_string())
            );
            println!(
                "checks: lengths>=n {} | slice products decreasing {} | norm nonincreasing {} | rho<=norm {}",
                c.lengths_at_least_n, c.slice_products_strictly_decreasing, c.norm_nonincreasing, c.spectral_below_norm
            );
        }
        "lf" => {
            let rep = cmd_leader_follower(&cfg, &out)?;
            println!(
                "lf: {} steps, {} slices, final error {:e}, max steady-state residual {:e}",
                cfg.horizon,
                rep.run.slices.len(),
                rep.final_error,
                rep.max_residual
            );
        }
        _ => {
            let rep = cmd_certify(&cfg, &out)?;
            let cert = &rep.certificate;
            println!(
                "certify: {} slices, verdict {:?}, case {}",
                rep.lengths.len(),
                cert.verdict,
                cert.case_used.map_or("none".into(), |c| c.to_string())
            );
            if !cert.is_certified() {
                return Ok(EXIT_NOT_CERTIFIED);
            }
        }
    }
    println!("outputs in {}", out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("slicekit: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
