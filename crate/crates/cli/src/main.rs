use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scenid::synth::{corpus, parse_drive_specs};
use scenid_cli::{
    cmd_abstract, cmd_detect, cmd_eval, cmd_synth, load_definitions, read_log, CliError, RunConfig,
    Settings,
};

#[derive(Parser)]
#[command(name = "scenid", version, about = "Identify driving scenarios in object-list logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with tunables; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Lane-change classification: precise, simplified or auto.
    #[arg(long)]
    mode: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Dump activities, events, conditions and roles of a log.
    Abstract {
        log: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identify scenario instances in a log.
    Detect {
        log: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Scenario definition file; replaces the built-in set.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic drives with ground truth.
    Synth {
        /// Drive spec file. Omit to generate a corpus instead.
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of corpus drives when no spec file is given.
        #[arg(long, default_value_t = 200)]
        corpus: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Drop per-object in-lane offsets from the logs.
        #[arg(long)]
        strip: bool,
    },
    /// Score detections against the labels of every drive in a directory.
    Eval {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Matching slack in seconds.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn settings(common: &Common, tolerance: Option<f64>) -> Result<Settings, CliError> {
    let file = common.config.as_deref().map(RunConfig::load).transpose()?;
    let flags = RunConfig {
        lane_change_mode: common.mode.clone(),
        eval_tolerance_s: tolerance,
        ..RunConfig::default()
    };
    Settings::resolve(file.as_ref(), &flags)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Abstract { log, common, out } => {
            let s = settings(&common, None)?;
            if common.print_config {
                print!("{}", s.to_toml());
                return Ok(());
            }
            let mut w = output(out.as_deref())?;
            cmd_abstract(&read_log(&log)?, &s, &mut w)?;
            w.flush().map_err(|e| CliError::Input(e.to_string()))
        }
        Command::Detect { log, common, scenarios, out } => {
            let s = settings(&common, None)?;
            if common.print_config {
                print!("{}", s.to_toml());
                return Ok(());
            }
            let defs = load_definitions(scenarios.as_deref(), &s)?;
            let mut w = output(out.as_deref())?;
            cmd_detect(&read_log(&log)?, &defs, &s, &mut w)?;
            w.flush().map_err(|e| CliError::Input(e.to_string()))
        }
        Command::Synth { spec, out, corpus: count, seed, strip } => {
            let specs = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                    parse_drive_specs(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                }
                None => corpus(count, seed),
            };
            let written = cmd_synth(&specs, &out, strip)?;
            println!("wrote {} drives to {}", written.len(), out.display());
            Ok(())
        }
        Command::Eval { dir, common, scenarios, tolerance } => {
            let s = settings(&common, tolerance)?;
            if common.print_config {
                print!("{}", s.to_toml());
                return Ok(());
            }
            let defs = load_definitions(scenarios.as_deref(), &s)?;
            print!("{}", cmd_eval(&dir, &defs, &s)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scenid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
