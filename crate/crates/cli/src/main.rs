//! `numevent`: extract, fit, estimate, generate and evaluate from the shell.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, CommandOutcome, ExtractArgs, IrfArgs};

#[derive(Debug, Parser)]
#[command(name = "numevent", version, about = "Paired numeric series and structured events")]
struct Cli {
    /// Override the seed of commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the extraction loop over a document corpus.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Keyword table for the rule backend.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value = "rule")]
        backend: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 3)]
        max_rounds: usize,
        /// Width of the time buckets used for deduplication.
        #[arg(long, default_value_t = 1.0)]
        bucket_width: f64,
    },
    /// Fit a K-type exponential Hawkes process by maximum likelihood.
    FitHawkes {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        k: usize,
        /// Observation window end; defaults to the last event time.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
    },
    /// Estimate impulse responses by local projections.
    EstimateIrf {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// The series file holds differences rather than levels.
        #[arg(long)]
        differenced: bool,
        /// Number of event types; defaults to the largest type seen plus one.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "horizon", default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = 4)]
        lags: usize,
        /// Drop the event indicators at the other kernel offsets from the controls.
        #[arg(long)]
        no_kernel_controls: bool,
        /// Count same-type events on one step instead of a 0/1 indicator.
        #[arg(long)]
        count_events: bool,
    },
    /// Fit AR(4) background dynamics to a series.
    FitAr {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        differenced: bool,
    },
    /// Generate a synthetic paired dataset from a config file.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score predictions against a dataset with monthly precision and recall.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 3)]
        min_slots: usize,
    },
    /// Check a vocabulary file, and optionally an event file against it.
    VocabValidate {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

fn need_out(out: &Option<PathBuf>) -> Result<&PathBuf, CliError> {
    out.as_ref()
        .ok_or_else(|| CliError::Validation("--out is required for this command".into()))
}

fn run(cli: &Cli) -> Result<CommandOutcome, CliError> {
    match &cli.command {
        Command::Extract {
            corpus,
            vocab,
            rules,
            backend,
            threshold,
            max_rounds,
            bucket_width,
        } => commands::cmd_extract(&ExtractArgs {
            corpus,
            vocab,
            rules: rules.as_deref(),
            backend,
            threshold: *threshold,
            max_rounds: *max_rounds,
            bucket_width: *bucket_width,
            out: need_out(&cli.out)?,
        }),
        Command::FitHawkes {
            events,
            k,
            horizon,
            max_iter,
        } => commands::cmd_fit_hawkes(events, *k, *horizon, *max_iter, need_out(&cli.out)?),
        Command::EstimateIrf {
            series,
            events,
            differenced,
            k,
            horizon,
            lags,
            no_kernel_controls,
            count_events,
        } => commands::cmd_estimate_irf(&IrfArgs {
            series,
            events,
            differenced: *differenced,
            k: *k,
            horizon: *horizon,
            lags: *lags,
            kernel_controls: !no_kernel_controls,
            count_events: *count_events,
            out: need_out(&cli.out)?,
        }),
        Command::FitAr {
            series,
            differenced,
        } => commands::cmd_fit_ar(series, *differenced, need_out(&cli.out)?),
        Command::Generate { config } => commands::cmd_generate(config, cli.seed, need_out(&cli.out)?),
        Command::Evaluate {
            pred,
            gold,
            min_slots,
        } => commands::cmd_evaluate(pred, gold, *min_slots, cli.out.as_deref()),
        Command::VocabValidate { vocab, events } => {
            commands::cmd_vocab_validate(vocab, events.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if !cli.quiet {
                println!("{}", outcome.message);
                if let Some(p) = &outcome.report {
                    println!("report: {}", p.display());
                }
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
