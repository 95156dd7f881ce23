//! Command line entry point; subcommands live in `rymflow_cli::commands`.

use std::path::PathBuf;
use std::process::exit;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rymflow_cli::commands::{self, NumericalFailure};
use rymflow_core::flow::FlowVariant;

#[derive(Parser)]
#[command(
    name = "rymflow",
    version,
    about = "Ricci Yang-Mills flow on the flat torus and the round sphere"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run or resume a flow simulation
    Flow {
        #[command(subcommand)]
        action: FlowCmd,
    },
    /// Print the diagnostics record of a snapshot
    Diag {
        snapshot: PathBuf,
        /// Flow variant the dissipation prediction refers to
        #[arg(long, default_value = "unnormalized")]
        variant: String,
        /// Moser-Trudinger sharpness parameter
        #[arg(long, default_value_t = 1.0)]
        moser_k: f64,
    },
    /// Rotationally symmetric soliton tools
    Soliton {
        #[command(subcommand)]
        action: SolitonCmd,
    },
    /// Lowest stability eigenvalue of a snapshot, with its eigenfield
    Spectrum { snapshot: PathBuf },
}

#[derive(Subcommand)]
enum FlowCmd {
    /// Start a run from a config file
    Run { config: PathBuf },
    /// Continue a run from a checkpoint
    Resume {
        checkpoint: PathBuf,
        /// Replace the configured end time
        #[arg(long)]
        t_end: Option<f64>,
    },
}

#[derive(Subcommand)]
enum SolitonCmd {
    /// Classify a profile file against the soliton equations
    Check {
        profile: PathBuf,
        /// Residual tolerance for the verdict
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            exit(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Flow { action } => match action {
            FlowCmd::Run { config } => commands::flow_run(&config),
            FlowCmd::Resume { checkpoint, t_end } => commands::flow_resume(&checkpoint, t_end),
        },
        Cmd::Diag {
            snapshot,
            variant,
            moser_k,
        } => match FlowVariant::from_str(&variant) {
            Ok(v) => commands::diag(&snapshot, v, moser_k),
            Err(e) => {
                eprintln!("error: {e}");
                exit(1);
            }
        },
        Cmd::Soliton { action } => match action {
            SolitonCmd::Check { profile, tol } => commands::soliton_check(&profile, tol),
        },
        Cmd::Spectrum { snapshot } => commands::spectrum(&snapshot),
    };
    match result {
        Ok(()) => {}
        Err(e) if e.downcast_ref::<NumericalFailure>().is_some() => {
            eprintln!("{e}");
            exit(2);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit(1);
        }
    }
}
