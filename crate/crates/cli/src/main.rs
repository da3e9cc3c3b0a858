use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failtrace::config::{load_sim_config, AppConfig};
use failtrace::detect::{detect, DetectError};
use failtrace::eval::evaluate_verdicts;
use failtrace::ingest::{ingest, EventLogFormat};
use failtrace::model::{build_page_model, PageModel};
use failtrace::report::{read_report, to_records, write_report};
use failtrace::simulate::{generate_dataset, read_labels};
use failtrace::UserTrace;

/// Detect user-perceived failure from app navigation traces.
#[derive(Parser)]
#[command(name = "failtrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the page model from an event log and score every user trace.
    Detect {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: EventLogFormat,
        /// Overrides `detection.epsilon` from the config.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Generate a synthetic labelled event log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Compare a detection report with labels and print metrics as JSON.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Render the page model as a Graphviz digraph.
    ExportDot {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: EventLogFormat,
    },
}

/// Exit 1 for bad data, 2 for bad configuration.
enum Failure {
    Data(String),
    Config(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Data(m) | Failure::Config(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data(format!("cannot write {}: {e}", path.display())))
}

fn load_config(path: &Path, epsilon: Option<f64>) -> Result<AppConfig, Failure> {
    let mut config = AppConfig::load(path).map_err(config_err)?;
    if let Some(eps) = epsilon {
        config.detection.epsilon = eps;
        config.detection.validate().map_err(config_err)?;
    }
    Ok(config)
}

fn model_from_events(
    events: &Path,
    format: EventLogFormat,
    config: &AppConfig,
) -> Result<(Vec<UserTrace>, PageModel), Failure> {
    let ingested = ingest(open(events)?, format, &config.task).map_err(data)?;
    let stats = ingested.stats;
    eprintln!(
        "events_read={} events_malformed={} events_dropped_offtask={} traces_built={}",
        stats.events_read, stats.events_malformed, stats.events_dropped_offtask, stats.traces_built
    );
    if ingested.traces.is_empty() {
        return Err(data(DetectError::EmptyPopulation));
    }
    let model = build_page_model(&ingested.traces, &config.task, &config.model).map_err(data)?;
    Ok((ingested.traces, model))
}

fn cmd_detect(
    events: &Path,
    config: &Path,
    out: &Path,
    format: EventLogFormat,
    epsilon: Option<f64>,
) -> Result<(), Failure> {
    let config = load_config(config, epsilon)?;
    let (traces, model) = model_from_events(events, format, &config)?;
    let reports = detect(&traces, &model, &config.detection).map_err(|e| match e {
        DetectError::InvalidConfig(_) => config_err(e),
        other => data(other),
    })?;
    let mut writer = create(out)?;
    write_report(&mut writer, &to_records(&reports)).map_err(data)?;
    writer.flush().map_err(data)?;
    println!(
        "traces={} flagged={} excluded_pages={}",
        reports.len(),
        reports.iter().filter(|r| r.flagged).count(),
        model.excluded.len()
    );
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, labels: &Path) -> Result<(), Failure> {
    let config = load_sim_config(config).map_err(config_err)?;
    let dataset = generate_dataset(&config).map_err(config_err)?;
    let mut events_out = create(out)?;
    dataset.write_events(&mut events_out).map_err(data)?;
    events_out.flush().map_err(data)?;
    let mut labels_out = create(labels)?;
    dataset.write_labels(&mut labels_out).map_err(data)?;
    labels_out.flush().map_err(data)?;
    println!("users={} failures={}", dataset.traces.len(), dataset.failures());
    Ok(())
}

fn cmd_evaluate(report: &Path, labels: &Path) -> Result<(), Failure> {
    let records = read_report(open(report)?).map_err(|e| data(format!("bad report: {e}")))?;
    if records.is_empty() {
        return Err(data("report contains no traces"));
    }
    let labels = read_labels(open(labels)?).map_err(data)?;
    let metrics = evaluate_verdicts(records.iter().map(|r| (&r.user_id, r.flagged)), &labels).map_err(data)?;
    let json = serde_json::to_string(&metrics).map_err(data)?;
    println!("{json}");
    Ok(())
}

fn cmd_export_dot(events: &Path, config: &Path, out: &Path, format: EventLogFormat) -> Result<(), Failure> {
    let config = load_config(config, None)?;
    let (_, model) = model_from_events(events, format, &config)?;
    let mut writer = create(out)?;
    writer
        .write_all(failtrace::dot::to_dot(&model).as_bytes())
        .and_then(|_| writer.flush())
        .map_err(data)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Detect {
            events,
            config,
            out,
            format,
            epsilon,
        } => cmd_detect(&events, &config, &out, format, epsilon),
        Command::Simulate { config, out, labels } => cmd_simulate(&config, &out, &labels),
        Command::Evaluate { report, labels } => cmd_evaluate(&report, &labels),
        Command::ExportDot {
            events,
            config,
            out,
            format,
        } => cmd_export_dot(&events, &config, &out, format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let _ = writeln!(io::stderr(), "error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
