use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smtjsim_cli::error::{EXIT_CONFIG, EXIT_OK};
use smtjsim_cli::run::{presets_text, run_analyze, run_anneal, run_simulate, run_sweep};
use smtjsim_cli::{CliError, CliResult, ExperimentSpec, Format, RunOptions};

/// Print to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "smtjsim", version, about = "Coupled stochastic MTJ simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment spec (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the spec's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: the spec's out_dir, else ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// One seeded run: event and sampled traces plus a summary
    Simulate,
    /// Repeat the run over the spec's sweep gains
    Sweep,
    /// Markov-model predictions for a coupled pair
    Analyze,
    /// Gain-schedule annealing of the spec's Ising problem
    Anneal,
    /// List built-in device presets
    Presets,
}

fn load(cli: &Cli) -> CliResult<(ExperimentSpec, RunOptions)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let out_dir = cli.out.clone().or_else(|| spec.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    spec.out_dir = Some(out_dir.clone());
    if cli.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok((spec, RunOptions { out_dir, format: cli.format, workers: cli.workers }))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Command::Presets = cli.command {
        say!("{}", presets_text(cli.format)?);
        return Ok(());
    }
    let (spec, opts) = load(cli)?;
    match cli.command {
        Command::Simulate => {
            let s = run_simulate(&spec, &opts)?;
            if let Some(c) = s.pair.as_ref().and_then(|p| p.pearson) {
                say!("pearson {:.4} +/- {:.4} (n = {})", c.rho, c.std_err, c.n_samples);
            }
        }
        Command::Sweep => {
            for s in run_sweep(&spec, &opts)? {
                let rho = s.pair.as_ref().and_then(|p| p.pearson).map(|c| c.rho);
                say!("gain {:<8} pearson {}", s.gain, rho.map_or("undefined".into(), |r| format!("{r:.4}")));
            }
        }
        Command::Analyze => {
            for r in run_analyze(&spec, &opts)? {
                say!("gain {:<8} g {:.4}/{:.4} rho {:.4} relaxation {:.4e} s", r.gain, r.g[0], r.g[1], r.rho, r.relaxation_time_s);
            }
        }
        Command::Anneal => {
            let r = run_anneal(&spec, &opts)?;
            for d in &r.dominant {
                say!("config {} energy {} occupancy {:.4}", d.label, d.energy, d.probability);
            }
        }
        Command::Presets => unreachable!(),
    }
    say!("outputs in {}", opts.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
