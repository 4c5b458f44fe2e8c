//! Thin CLI over the library pipeline. Every subcommand takes a JSON config
//! plus an output directory and is fully deterministic per seed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shiftbench::harness::{
    self, evaluate, load_methods, predict_methods, prepare, read_prediction_files, resolve_out_dir,
    run, run_size_study, summarize, train_methods, write_prediction_files, write_report_csv,
    write_shift_summary, write_summary_csv, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "shiftbench",
    about = "Evaluate predictive-uncertainty quality under dataset shift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method; write models and tuning logs.
    Train(Common),
    /// Predict on all shift levels using models from a prior `train`.
    Predict(Common),
    /// Generate the shift series and write a per-level summary.
    Shift(Common),
    /// Evaluate metrics on prediction files from a prior `predict`.
    Eval(Common),
    /// Full pipeline: train, predict, evaluate, summarize, emit curves.
    Report(Common),
    /// Ensemble/sample size study at one shift coordinate.
    SizeStudy(Common),
}

fn dispatch(cmd: &Command) -> shiftbench::Result<()> {
    let common = match cmd {
        Command::Train(c)
        | Command::Predict(c)
        | Command::Shift(c)
        | Command::Eval(c)
        | Command::Report(c)
        | Command::SizeStudy(c) => c,
    };
    let config = RunConfig::load(&common.config)?;
    let out = resolve_out_dir(&config, common.out.as_deref())?;
    let seed = common.seed.unwrap_or(config.seed);

    match cmd {
        Command::Train(_) => {
            std::fs::create_dir_all(&out)
                .map_err(|e| shiftbench::Error::io(out.display().to_string(), e))?;
            let prepared = prepare(&config, seed)?;
            train_methods(&config, seed, &prepared, Some(&out))?;
        }
        Command::Predict(_) => {
            let prepared = prepare(&config, seed)?;
            let trained = load_methods(&config, &out)?;
            let predictions = predict_methods(&config, seed, &prepared, &trained)?;
            write_prediction_files(&config, &predictions, &out)?;
        }
        Command::Shift(_) => {
            write_shift_summary(&config, seed, &out)?;
        }
        Command::Eval(_) => {
            let predictions = read_prediction_files(&config, &out)?;
            let (rows, _floored) = evaluate(&config, &predictions)?;
            let summary_rows: Vec<harness::MetricRow> = rows
                .iter()
                .filter(|r| r.shift_type != "ood")
                .cloned()
                .collect();
            write_report_csv(&rows, &out.join("report.csv"))?;
            write_summary_csv(&summarize(&summary_rows), &out.join("summary.csv"))?;
            harness::emit_curves(&config, &predictions, &out)?;
        }
        Command::Report(_) => {
            run(&config, &out, seed)?;
        }
        Command::SizeStudy(_) => {
            run_size_study(&config, &out, seed)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
