use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gzsl_sb_cli::{
    cmd_eval, cmd_gradcheck, cmd_inspect, cmd_train, cmd_sweep, cmd_synth, gradcheck_table, parse_list,
    CliError, ReportJson,
};

#[derive(Parser)]
#[command(name = "gzsl-sb", version, about = "Compatibility metric learning with semantic borrowing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle from a synth spec file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, history and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (u, s, h).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Train and evaluate over an alpha × seed grid; CSV on stdout.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Comma-separated, e.g. 0,0.01,0.1,1,2
        #[arg(long)]
        alphas: String,
        /// Comma-separated, e.g. 1,2,3,4,5
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        allow_large_alpha: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a bundle or checkpoint.
    Inspect {
        #[arg(long, conflicts_with = "checkpoint")]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out } => {
            let d = cmd_synth(&config, &out)?;
            println!("wrote {} ({} instances)", out.display(), d.num_instances());
        }
        Command::Train { config, bundle, out } => {
            let a = cmd_train(&config, &bundle, &out)?;
            println!("wrote {}", a.checkpoint.display());
            println!("wrote {}", a.history.display());
        }
        Command::Eval {
            checkpoint,
            bundle,
            out,
            json,
        } => {
            let r = cmd_eval(&checkpoint, &bundle, out.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&ReportJson::from_report(&r))?);
            } else {
                print!("{}", r.table());
            }
        }
        Command::Sweep {
            config,
            bundle,
            alphas,
            seeds,
            allow_large_alpha,
            out,
        } => {
            let alphas: Vec<f64> = parse_list("--alphas", &alphas)?;
            let seeds: Vec<u64> = parse_list("--seeds", &seeds)?;
            let outcome = cmd_sweep(&config, &bundle, &alphas, &seeds, allow_large_alpha, out.as_deref())?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", outcome.to_csv());
        }
        Command::Gradcheck { config } => {
            let report = cmd_gradcheck(config.as_deref())?;
            print!("{}", gradcheck_table(&report));
            if !report.all_passed() {
                return Err(gzsl_sb::Error::NonFinite(format!(
                    "gradient check failed (tolerance {:e})",
                    report.tolerance
                ))
                .into());
            }
        }
        Command::Inspect { bundle, checkpoint } => {
            let path = bundle
                .or(checkpoint)
                .ok_or_else(|| CliError::Usage("inspect needs --bundle or --checkpoint".into()))?;
            print!("{}", cmd_inspect(&path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
