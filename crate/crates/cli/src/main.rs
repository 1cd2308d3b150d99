use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hmsbl_cli::{
    emit_all, emit_plot_data, load_config, read_record, run_experiment, timing_sweep, write_record, CliError,
    PlotKind, RunOptions, WORKERS_ENV,
};

/// Exit status when a run completed but some trials recorded solver errors.
const EXIT_TRIAL_FAILURES: u8 = 3;

#[derive(Parser)]
#[command(name = "hmsbl", version, about = "2-D harmonic retrieval experiments with H-MSBL and MSBL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write record.json plus plot CSVs.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output`.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Trial worker threads.
        #[arg(short, long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Check a config and report every problem found.
    Validate { config: PathBuf },
    /// Regenerate plot CSVs from a record.json.
    EmitPlots {
        record: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long, value_enum, default_value = "all")]
        kind: Kind,
    },
    /// Time both solvers over the config's v-grid sweep.
    Bench { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    All,
    Timing,
    Scatter,
    Convergence,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Run { config, output, workers } => {
            let cfg = load_config(&config)?;
            let dir = output.unwrap_or_else(|| cfg.output.clone());
            let record = run_experiment(&cfg, RunOptions { workers })?;
            let path = write_record(&record, &dir)?;
            println!("wrote {}", path.display());
            for p in emit_all(&record, &dir)? {
                println!("wrote {}", p.display());
            }
            for s in &record.summary {
                match &s.summary {
                    Some(t) => println!(
                        "{:<6} mean rmse {:.4} (std {:.4}), {}/{} trials recovered, {} failed",
                        s.algorithm.label(),
                        t.mean_rmse,
                        t.std_rmse,
                        s.recovered_trials,
                        record.config.trials,
                        s.failed_trials
                    ),
                    None => println!("{:<6} no successful trials", s.algorithm.label()),
                }
            }
            for b in &record.budgets {
                println!("{:<6} budget {:>5}: mean rmse {:.4}", b.algorithm.label(), b.budget, b.mean_rmse);
            }
            if record.has_failures() {
                eprintln!("some trials failed; see {}", path.display());
                return Ok(ExitCode::from(EXIT_TRIAL_FAILURES));
            }
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "{}: valid {:?} config, {} trial(s), {} source(s)",
                config.display(),
                cfg.experiment,
                cfg.trials,
                cfg.scene.num_sources()
            );
        }
        Command::EmitPlots { record, output, kind } => {
            let rec = read_record(&record)?;
            let dir = output
                .or_else(|| record.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let paths = match kind {
                Kind::All => emit_all(&rec, &dir)?,
                Kind::Timing => vec![emit_plot_data(&rec, PlotKind::Timing, &dir)?],
                Kind::Scatter => vec![emit_plot_data(&rec, PlotKind::Scatter, &dir)?],
                Kind::Convergence => vec![emit_plot_data(&rec, PlotKind::Convergence, &dir)?],
            };
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Bench { config } => {
            let cfg = load_config(&config)?;
            println!("{:<6} {:>6} {:>8} {:>14}", "algo", "mv", "columns", "s/iteration");
            for row in timing_sweep(&cfg)? {
                println!(
                    "{:<6} {:>6} {:>8} {:>14.3e}",
                    row.algorithm.label(),
                    row.mv,
                    row.grid_size,
                    row.per_iteration_seconds.unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
