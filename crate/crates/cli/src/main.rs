use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nvsr_cli::{run, CliResult, Mode, Overrides, RunConfig};

/// Simulate, fit and compare collective-emission decay traces.
#[derive(Parser, Debug)]
#[command(name = "nvsr", version)]
struct Args {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// TOML run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decay-trace CSV for fit and compare.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest domain size; also pins it in fits.
    #[arg(long)]
    n_max: Option<usize>,
    /// Radiative rate as an ordinary frequency; also pins it in fits.
    #[arg(long)]
    gamma_mhz: Option<f64>,
    /// Gaussian detector-response FWHM.
    #[arg(long)]
    irf_ps: Option<f64>,
}

fn execute(args: Args) -> CliResult<PathBuf> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        mode: args.mode,
        input: args.input,
        out_dir: args.out_dir,
        seed: args.seed,
        n_max: args.n_max,
        gamma_mhz: args.gamma_mhz,
        irf_ps: args.irf_ps,
    });
    run(&cfg)
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(summary) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nvsr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
