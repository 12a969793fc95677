//! `repfed` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use repfed::federation::Method;
use repfed_cli::{cmd_generate, cmd_report, cmd_run, cmd_sweep, CliError, Overrides};

#[derive(Parser)]
#[command(name = "repfed", version, about = "Reputation-weighted federated survival analysis experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Aggregation method: ours, fedavg or tffl_proxy.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable peer-channel privacy noise.
    #[arg(long)]
    no_dp: bool,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method,
            seed: self.seed,
            no_dp: self.no_dp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic center CSVs and a metadata sidecar.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "REPFED_OUT")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment and write its CSVs and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "REPFED_OUT")]
        out: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a parameter sweep over several seeds.
    Sweep {
        /// Sweep spec file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "REPFED_OUT")]
        out: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
        /// Also write a gnuplot script next to the summary.
        #[arg(long)]
        plot: bool,
    },
    /// Compare run directories and sweep summaries.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory for comparison.csv and comparison.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let n = cmd_generate(&config, &out, &Overrides { seed, ..Overrides::default() })?;
            println!("wrote {n} centers to {}", out.display());
        }
        Command::Run { config, out, flags } => {
            let fed = cmd_run(&config, &out, &flags.overrides())?;
            let last = fed.metrics().last().expect("round 0 is always logged");
            println!(
                "{} rounds, final global C-index {:.4}, results in {}",
                last.round,
                last.global_c_index,
                out.display()
            );
        }
        Command::Sweep { config, out, flags, plot } => {
            let rows = cmd_sweep(&config, &out, &flags.overrides(), plot)?;
            println!("{} configurations, summary in {}", rows.len(), out.join(repfed_cli::SUMMARY_FILE).display());
        }
        Command::Report { dirs, out } => {
            print!("{}", cmd_report(&dirs, out.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
