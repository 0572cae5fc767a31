use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cgrpo::harness::{self, DecodeMode, DecodeRequest, RunConfig, VerifyParams};
use cgrpo::utility::UtilityKind;
use cgrpo::{Error, Execution};

/// Consensus-GRPO experiments on enumerable sequence policies.
#[derive(Parser)]
#[command(name = "cgrpo", version)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write checkpoints plus metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode every prompt of a checkpoint and print JSONL.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: DecodeMode,
        /// Number of MBR candidates.
        #[arg(long)]
        g: Option<usize>,
        #[arg(long, default_value = "lcs_f")]
        utility: UtilityKind,
        /// Task file with references (default: next to the checkpoint).
        #[arg(long)]
        task: Option<PathBuf>,
        /// JSONL file of pre-sampled MBR candidates.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive oracle checks on small random instances.
    Verify {
        /// Group sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        g: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        vocab: usize,
        #[arg(long, default_value_t = 2)]
        lmax: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "lcs_f")]
        utility: UtilityKind,
        /// Force std normalisation into the Dr.GRPO path (must fail).
        #[arg(long)]
        break_dr_std: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare MBR@G against the trained policy over the configured G set.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render plots and summary.json for a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

enum Failure {
    Err(Error),
    VerifyFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Err(e)
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.cmd {
        Cmd::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let rec = harness::cmd_train(&cfg, exec)?;
            print_json(&rec.summary.final_stats)?;
        }
        Cmd::Decode {
            checkpoint,
            mode,
            g,
            utility,
            task,
            candidates,
            seed,
            out,
        } => {
            let req = DecodeRequest {
                checkpoint,
                task,
                mode,
                g,
                kind: utility,
                candidates,
                seed,
            };
            let rows = harness::cmd_decode(&req, exec)?;
            let mut w = output(&out)?;
            harness::decode::write_jsonl(&rows, &mut w)?;
            w.flush().map_err(|e| Error::io("<output>", e))?;
        }
        Cmd::Verify {
            g,
            vocab,
            lmax,
            seeds,
            utility,
            break_dr_std,
            out,
        } => {
            let params = VerifyParams {
                g,
                vocab,
                l_max: lmax,
                seeds,
                kind: utility,
                break_dr_std,
            };
            let report = harness::cmd_verify(&params, exec)?;
            let mut w = output(&out)?;
            serde_json::to_writer_pretty(&mut w, &report).map_err(Error::from)?;
            writeln!(w).map_err(|e| Error::io("<output>", e))?;
            w.flush().map_err(|e| Error::io("<output>", e))?;
            if !report.passed {
                return Err(Failure::VerifyFailed);
            }
        }
        Cmd::Sweep { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = harness::cmd_sweep(&cfg, exec)?;
            print_json(&out.rows)?;
        }
        Cmd::Report { run } => {
            let out = harness::cmd_report(&run)?;
            print_json(&out.summary)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::VerifyFailed) => {
            eprintln!("error: verification failed");
            ExitCode::from(2)
        }
        Err(Failure::Err(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalAbort { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
