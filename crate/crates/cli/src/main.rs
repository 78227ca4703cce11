use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use square_core::corpus::{
    adapt_as2_table, filter_clean_setting, load_jsonl, write_jsonl, AdaptOptions, Dataset, Split, TableFormat,
};
use square_core::harness::{EvalReport, ExperimentConfig, HarnessError, Runner, Stage, Technique};

const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "square", version, about = "Train and evaluate multi-reference QA answer-correctness metrics")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert answer-sentence-selection tables to canonical JSONL.
    Convert {
        #[arg(long, value_parser = parse_format)]
        format: TableFormat,
        /// Input table(s); the split is taken from each file name unless --split is given.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep only questions with at least one positive and one negative candidate.
        #[arg(long)]
        clean: bool,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Train (or fetch from cache) the configured technique and baseline.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score every example of a canonical JSONL file.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment and write the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Baseline technique for relative deltas, overriding the config.
        #[arg(long, value_parser = parse_technique)]
        baseline: Option<Technique>,
    },
    /// Run the five-row reference ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a saved report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse().map_err(|e: square_core::corpus::CorpusError| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse()
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e.stage {
            Stage::Config => EXIT_CONFIG,
            Stage::Data => EXIT_DATA,
            _ => EXIT_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    Ok(ExperimentConfig::from_file(path)?)
}

fn convert(
    format: TableFormat,
    inputs: &[PathBuf],
    out: &PathBuf,
    clean: bool,
    name: Option<String>,
    split: Option<Split>,
) -> Result<(), Failure> {
    let data_err = |e: &dyn std::fmt::Display| Failure::new(EXIT_DATA, e.to_string());
    let opts = AdaptOptions {
        dataset_name: name.clone(),
        split,
    };
    let mut examples = Vec::new();
    let mut rejected = 0;
    for path in inputs {
        let outcome = adapt_as2_table(path, format, &opts).map_err(|e| data_err(&e))?;
        rejected += outcome.rejects.len();
        for r in &outcome.rejects {
            log::warn!("{}: row {}: {}", path.display(), r.line, r.reason);
        }
        examples.extend(outcome.dataset.examples);
    }
    let name = name.unwrap_or_else(|| format.as_str().to_string());
    let mut dataset = Dataset::new(name, examples).map_err(|e| data_err(&e))?;
    if clean {
        dataset = filter_clean_setting(&dataset);
    }
    write_jsonl(&dataset, out).map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
    let count = |s| dataset.examples.iter().filter(|e| e.split == s).count();
    eprintln!(
        "wrote {} examples to {} (train {}, dev {}, test {}; {} rows rejected)",
        dataset.len(),
        out.display(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test),
        rejected
    );
    Ok(())
}

fn score(config: &PathBuf, input: &PathBuf, out: &PathBuf) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let loaded = load_jsonl(input).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    for r in &loaded.rejects {
        log::warn!("{}: line {}: {}", input.display(), r.line, r.reason);
    }
    let (prepared, scores) = Runner::default().score_dataset(&cfg, &loaded.dataset)?;
    for s in &prepared.skipped {
        log::warn!("not scored: {}: {}", s.example_id, s.reason);
    }
    let mut body = String::new();
    for ((id, label), s) in prepared.example_ids.iter().zip(&prepared.labels).zip(&scores) {
        body.push_str(&json!({"example_id": id, "label": label, "score": s}).to_string());
        body.push('\n');
    }
    fs::write(out, body).map_err(|e| Failure::new(EXIT_RUNTIME, format!("{}: {e}", out.display())))?;
    eprintln!(
        "scored {} examples ({} skipped) into {}",
        scores.len(),
        prepared.skipped.len(),
        out.display()
    );
    Ok(())
}

fn print(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Convert {
            format,
            inputs,
            out,
            clean,
            name,
            split,
        } => convert(format, &inputs, &out, clean, name, split),
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            for rec in Runner::default().train_models(&cfg)? {
                let how = match &rec.log {
                    Some(log) => format!("trained, selected epoch {}", log.selected_epoch),
                    None => "cached".to_string(),
                };
                println!("{}\t{}\t{}\t{}", rec.row, rec.fingerprint, how, rec.checkpoint.display());
            }
            Ok(())
        }
        Command::Score { config, input, out } => score(&config, &input, &out),
        Command::Evaluate { config, baseline } => {
            let mut cfg = load_config(&config)?;
            if baseline.is_some() {
                cfg.baseline_technique = baseline;
            }
            let out = Runner::default().run_experiment(&cfg)?;
            print(&out.report.to_text());
            Ok(())
        }
        Command::Ablate { config } => {
            let cfg = load_config(&config)?;
            let out = Runner::default().run_ablation_matrix(&cfg)?;
            print(&out.report.to_text());
            Ok(())
        }
        Command::Report { input, json } => {
            let text = fs::read_to_string(&input)
                .map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", input.display())))?;
            let report = EvalReport::from_json(&text)
                .map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", input.display())))?;
            print(&if json { report.to_json() } else { report.to_text() });
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
