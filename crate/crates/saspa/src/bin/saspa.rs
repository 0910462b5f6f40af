//! Pipeline CLI; every flag is a config override.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saspa::pipeline::{
    load_config, load_report, run_until, PipelineConfig, PipelineReport, Stage,
};
use saspa::Error;

#[derive(Parser)]
#[command(name = "saspa", version, about = "Structure- and subject-preserving augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the prompt pool.
    Prompts(ConfigArgs),
    /// Extract edge maps for the train split.
    Edges(ConfigArgs),
    /// Plan jobs and generate augmentations.
    Generate(ConfigArgs),
    /// Apply fidelity filters to pending manifest records.
    Filter(ConfigArgs),
    /// Sample replacement plans and drive the trainer.
    Train(ConfigArgs),
    /// Compute metrics over kept augmentations.
    Metrics(ConfigArgs),
    /// Run every stage in order.
    Run(ConfigArgs),
    /// Print the persisted report of an earlier run.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset descriptor path (required without --config).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (required without --config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// saspa | saspa_no_subject | text2img | img2img | edge_plus_img2img
    #[arg(long)]
    method: Option<String>,
    /// Augmentations per real image.
    #[arg(long, short = 'M')]
    m: Option<usize>,
    /// Root seed for every stage.
    #[arg(long)]
    seed: Option<u64>,
    /// mock | http
    #[arg(long)]
    backend: Option<String>,
    /// Generation service endpoint for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// keep_all | hash
    #[arg(long)]
    scorer: Option<String>,
    /// llm_pool | captions
    #[arg(long)]
    prompt_source: Option<String>,
    /// Keep the prompt pool unstyled.
    #[arg(long)]
    no_artistic: bool,
    /// Replacement probability override.
    #[arg(long)]
    alpha: Option<f64>,
    /// full | few_shot | high
    #[arg(long)]
    regime: Option<String>,
    /// Images per class for few-shot runs.
    #[arg(long)]
    shots: Option<usize>,
    /// Training epochs to sample and log.
    #[arg(long)]
    epochs: Option<usize>,
    /// Concurrent generation jobs.
    #[arg(long)]
    workers: Option<usize>,
    /// Generation retries per failed job.
    #[arg(long)]
    retries: Option<u32>,
    /// Top-k confidence cutoff.
    #[arg(long)]
    k: Option<usize>,
    /// Disable the top-k confidence filter.
    #[arg(long)]
    no_topk: bool,
    /// Disable the semantic filter.
    #[arg(long)]
    no_semantic: bool,
    /// Stage-log timestamp (defaults to a fixed epoch for reproducibility).
    #[arg(long)]
    timestamp: Option<String>,
    /// Externally measured accuracy; repeatable.
    #[arg(long = "accuracy-run")]
    accuracy_run: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory holding report.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Print the raw JSON instead of the summary.
    #[arg(long)]
    json: bool,
}

fn build_config(args: &ConfigArgs) -> saspa::Result<PipelineConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => {
            let dataset = args
                .dataset
                .clone()
                .ok_or_else(|| Error::Validation("--dataset or --config is required".into()))?;
            let out_dir = args
                .out_dir
                .clone()
                .ok_or_else(|| Error::Validation("--out-dir or --config is required".into()))?;
            PipelineConfig::new(dataset, out_dir)
        }
    };
    if let Some(v) = &args.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = &args.out_dir {
        config.out_dir = v.clone();
    }
    if let Some(v) = &args.method {
        config.method = v.parse()?;
    }
    if let Some(v) = args.m {
        config.m = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.backend {
        config.backend = v.parse()?;
    }
    if let Some(v) = &args.endpoint {
        config.endpoint = Some(v.clone());
    }
    if let Some(v) = &args.scorer {
        config.scorer = v.parse()?;
    }
    if let Some(v) = &args.prompt_source {
        config.prompt_source = v.parse()?;
    }
    if args.no_artistic {
        config.artistic = false;
    }
    if let Some(v) = args.alpha {
        config.alpha = Some(v);
    }
    if let Some(v) = &args.regime {
        config.regime = v.parse()?;
    }
    if let Some(v) = args.shots {
        config.shots = Some(v);
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.workers {
        config.workers = v;
    }
    if let Some(v) = args.retries {
        config.retries = v;
    }
    if let Some(v) = args.k {
        config.filter.k = v;
    }
    if args.no_topk {
        config.filter.use_topk = false;
    }
    if args.no_semantic {
        config.filter.use_semantic = false;
    }
    if let Some(v) = &args.timestamp {
        config.timestamp = Some(v.clone());
    }
    if !args.accuracy_run.is_empty() {
        config.accuracy_runs = Some(args.accuracy_run.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run_stage(args: &ConfigArgs, last: Stage) -> saspa::Result<()> {
    let config = build_config(args)?;
    let report = run_until(&config, last)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &PipelineReport) {
    println!(
        "dataset {} ({}, m={}, seed={}, alpha={}, backend {})",
        report.dataset_name, report.method, report.m, report.seed, report.alpha, report.backend
    );
    println!(
        "topk filter {}",
        if report.topk_enabled { "enabled" } else { "disabled" }
    );
    for s in &report.stages {
        println!("  {:<9} {:>6}  {}", s.stage.name(), s.count, s.detail);
    }
    println!(
        "planned {}  generated {}  kept {}  dropped {}  failed {}  pending {}",
        report.planned, report.generated, report.kept, report.dropped, report.failed,
        report.pending
    );
    if report.train_epochs > 0 {
        println!(
            "train {} epochs x {} slots",
            report.train_epochs, report.epoch_slots
        );
    }
    if let Some(metrics) = &report.metrics {
        if let Some(fid) = metrics.fid {
            println!("fid {fid:.4}");
        }
        if let Some(diversity) = metrics.diversity {
            println!("diversity {diversity:.4}");
        }
        if let Some(accuracy) = &metrics.accuracy {
            println!(
                "accuracy {:.2} +- {:.2} over {} runs",
                accuracy.mean,
                accuracy.std,
                accuracy.runs.len()
            );
        }
    }
}

fn show_report(args: &ReportArgs) -> saspa::Result<()> {
    let out_dir = match (&args.out_dir, &args.config) {
        (Some(dir), _) => dir.clone(),
        (None, Some(config)) => load_config(config)?.out_dir,
        (None, None) => {
            return Err(Error::Validation("--out-dir or --config is required".into()))
        }
    };
    let report = load_report(&out_dir)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_report(&report);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> saspa::Result<()> {
    match cli.command {
        Command::Prompts(args) => run_stage(&args, Stage::Prompts),
        Command::Edges(args) => run_stage(&args, Stage::Edges),
        Command::Generate(args) => run_stage(&args, Stage::Generate),
        Command::Filter(args) => run_stage(&args, Stage::Filter),
        Command::Train(args) => run_stage(&args, Stage::Train),
        Command::Metrics(args) => run_stage(&args, Stage::Metrics),
        Command::Run(args) => run_stage(&args, Stage::Metrics),
        Command::Report(args) => show_report(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not failures; usage mistakes are validation
            let fatal = e.use_stderr();
            let _ = e.print();
            return if fatal { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // every Error display embeds its cause, so one line suffices
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
