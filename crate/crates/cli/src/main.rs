//! `pda`: prototype-based domain adaptation over feature bundles.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use pda_core::{
    load_bundle, load_predictions, run_all, run_method, save_bundle, save_predictions,
    AccuracyReport, Method, Metric, PdaError, PipelineConfig, RunReport, ShiftSpec,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pda", version, about = "Feed-forward source-free domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt to a bundle with one method and write a JSON run report.
    Adapt {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        opts: PipelineOpts,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the predictions as a 1-D int64 .npy file.
        #[arg(long)]
        preds_out: Option<PathBuf>,
    },
    /// Score stored predictions against the bundle's labels.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic shifted-Gaussian bundle.
    Synth {
        /// JSON generator settings; missing keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every applicable method on one bundle and compare.
    Bench {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        opts: PipelineOpts,
        /// JSON array of run reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipelineOpts {
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    metric: Metric,
    /// Fraction of each class kept by MCD.
    #[arg(long)]
    h_fraction: Option<f64>,
    /// Random MCD starts iterated to convergence.
    #[arg(long)]
    mcd_starts: Option<usize>,
    /// Random MCD seeds screened before the best starts are refined.
    #[arg(long)]
    mcd_trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Equal class priors in the Gaussian classifier.
    #[arg(long)]
    uniform_priors: bool,
    /// Unweighted prototypes for pda-mcd.
    #[arg(long)]
    onehot: bool,
    /// Weight upper-bound prototypes by the model's true-class probability.
    #[arg(long)]
    upper_weighted: bool,
    /// Class size needed before MCD is used for that class.
    #[arg(long)]
    min_mcd_support: Option<usize>,
}

impl PipelineOpts {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            metric: self.metric,
            onehot: self.onehot,
            upper_weighted: self.upper_weighted,
            ..Default::default()
        };
        let mcd = &mut cfg.rog.mcd;
        if let Some(h) = self.h_fraction {
            mcd.h_fraction = h;
        }
        if let Some(n) = self.mcd_starts {
            mcd.n_starts = n;
        }
        if let Some(n) = self.mcd_trials {
            mcd.n_trials = n;
        }
        if let Some(s) = self.seed {
            mcd.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.rog.uniform_priors = self.uniform_priors;
        cfg.rog.min_mcd_support = self.min_mcd_support;
        cfg
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

/// Usage line of the named subcommand, or of `pda` itself.
fn usage_for(subcommand: Option<String>) -> clap::builder::StyledStr {
    let mut cmd = Cli::command();
    cmd.build();
    match subcommand.and_then(|name| cmd.find_subcommand_mut(&name).cloned()) {
        Some(mut sub) => sub.render_usage(),
        None => cmd.render_usage(),
    }
}

fn exit_code(err: &PdaError) -> u8 {
    match err {
        PdaError::NotFound(_) | PdaError::Schema(_) | PdaError::Data(_) | PdaError::Format(_) => 2,
        PdaError::Precondition(_) | PdaError::State(_) | PdaError::Io { .. } => 3,
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> pda_core::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PdaError::State(format!("cannot serialize output: {e}")))?
        + "\n";
    match out {
        Some(path) => fs::write(path, text).map_err(|e| PdaError::io(path, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| PdaError::io("<stdout>", e)),
    }
}

fn read_spec(path: &Path) -> pda_core::Result<ShiftSpec> {
    let text = fs::read_to_string(path).map_err(|e| PdaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PdaError::Format(format!("{}: {e}", path.display())))
}

fn print_table(reports: &[RunReport]) {
    println!(
        "{:<14} {:>9} {:>11} {:>11} {:>7}",
        "method", "accuracy", "adapt (s)", "infer (s)", "absent"
    );
    for r in reports {
        let acc = r
            .accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{:.2}", 100.0 * a));
        println!(
            "{:<14} {:>9} {:>11.4} {:>11.4} {:>7}",
            r.method.name(),
            acc,
            r.adapt_time_s,
            r.infer_time_s,
            r.num_absent_classes
        );
    }
}

fn run(command: Command) -> pda_core::Result<()> {
    match command {
        Command::Adapt {
            bundle,
            method,
            opts,
            out,
            preds_out,
        } => {
            let bundle = load_bundle(&bundle)?;
            let report = run_method(&bundle, method, &opts.config())?;
            if let Some(path) = preds_out {
                save_predictions(&path, &report.predictions)?;
            }
            write_json(&report, out.as_deref())
        }
        Command::Eval { bundle, preds, out } => {
            let bundle = load_bundle(&bundle)?;
            let labels = bundle
                .labels()
                .ok_or_else(|| PdaError::Schema("bundle has no labels to evaluate against".into()))?;
            let predictions = load_predictions(&preds)?;
            if predictions.len() != labels.len() {
                return Err(PdaError::Schema(format!(
                    "{} predictions for {} examples",
                    predictions.len(),
                    labels.len()
                )));
            }
            let report = AccuracyReport::new(&predictions, labels, bundle.num_classes())?;
            write_json(&report, out.as_deref())
        }
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(path) => read_spec(&path)?,
                None => ShiftSpec::default(),
            };
            let bundle = pda_core::generate(&spec)?;
            save_bundle(&bundle, &out)?;
            log::info!("wrote {} examples to {}", bundle.len(), out.display());
            Ok(())
        }
        Command::Bench { bundle, opts, out } => {
            let bundle = load_bundle(&bundle)?;
            let reports = run_all(&bundle, &opts.config())?;
            print_table(&reports);
            match out {
                Some(path) => write_json(&reports, Some(&path)),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PDA_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(std::env::args().nth(1)));
            }
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pda: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
