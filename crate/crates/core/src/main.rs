use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iforge::cli;

#[derive(Parser)]
#[command(
    name = "iforge",
    version,
    about = "Barrier certificates and safety filters for lane keeping and adaptive cruise control"
)]
struct Args {
    /// TOML configuration; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the lane-keeping certificate and write it to --out
    Synthesize {
        #[arg(long, default_value = "lk.cert")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Verify a lane-keeping certificate and the ACC barrier
    Verify {
        /// certificate file; the built-in certificate when omitted
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// ACC grid points per axis
        #[arg(long, default_value_t = 60)]
        grid: usize,
    },
    /// Run the closed-loop scenario and write the trace and panel CSVs
    Simulate {
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, default_value = "sim_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Compare the closed-form ACC barrier with the integrating oracle
    Oracle {
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(cli::EXIT_BAD_INPUT);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cfg = match cli::load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(code) => return ExitCode::from(code),
    };
    let mut out = std::io::stdout().lock();
    let code = match args.cmd {
        Cmd::Synthesize { out: path, seed } => cli::cmd_synthesize(&cfg, &path, seed, &mut out),
        Cmd::Verify {
            certificate,
            seed,
            grid,
        } => match cli::load_certificate(certificate.as_deref()) {
            Ok(cert) => cli::cmd_verify(&cfg, &cert, seed, grid, &mut out),
            Err(code) => code,
        },
        Cmd::Simulate {
            certificate,
            out: dir,
            seed,
        } => match cli::load_certificate(certificate.as_deref()) {
            Ok(cert) => cli::cmd_simulate(&cfg, cert, &dir, seed, &mut out),
            Err(code) => code,
        },
        Cmd::Oracle { grid } => cli::cmd_oracle(&cfg, grid, &mut out),
    };
    ExitCode::from(code)
}
