use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driftwatch::config::parse_assignments;
use driftwatch::dto::Verdict;
use driftwatch::ingest::{evaluate, load_csv, synth_stream, CsvSchema, DriftKind, DriftSpec, LabeledStream, StreamMeta};
use driftwatch::pipeline::{train, PipelineConfig};
use driftwatch::{ModelBundle, StreamRunner};
use log::info;

const SEED_ENV: &str = "DRIFTWATCH_SEED";

/// Streaming anomaly detection under concept drift.
#[derive(Parser, Debug)]
#[command(name = "driftwatch", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model bundle on the historical prefix of a CSV stream.
    Train(TrainArgs),
    /// Replay a CSV stream through a bundle, writing NDJSON verdicts.
    Run(RunArgs),
    /// Score NDJSON verdicts against ground-truth labels.
    Eval(EvalArgs),
    /// Generate a synthetic drifting stream as CSV.
    Synth(SynthArgs),
}

/// Configuration sources, lowest precedence first: built-in defaults,
/// `DRIFTWATCH_SEED` (only when the file does not set `seed`), the config
/// file, `--set` assignments, then `--seed`.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one key, e.g. `--set dto.lambda=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column; ignored for features. Defaults to `label` when present.
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output bundle directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Bundle directory written by `train`.
    #[arg(long, required_unless_present_any = ["resume", "print_config"])]
    model: Option<PathBuf>,
    /// Resume from a checkpoint; scoring continues at the checkpointed index.
    #[arg(long, conflicts_with = "model")]
    resume: Option<PathBuf>,
    /// NDJSON output; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Directory for the final checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// NDJSON verdicts from `run`.
    #[arg(long)]
    verdicts: PathBuf,
    /// CSV holding the ground-truth label column.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Instances per evaluation window.
    #[arg(long, default_value_t = 1000)]
    window: usize,
    /// Drift-marker sidecar written by `synth`.
    #[arg(long)]
    markers: Option<PathBuf>,
    /// JSON report output; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "abrupt")]
    kind: String,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    concepts: usize,
    #[arg(long, default_value_t = 0.01)]
    anomaly_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; the drift markers go to `<stem>.markers.json` beside it.
    #[arg(short, long)]
    out: PathBuf,
}

fn resolve_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut cfg = PipelineConfig::default();
    let file_sets_seed = parse_assignments(&text)?.iter().any(|(_, k, _)| k == "seed");
    if !file_sets_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().with_context(|| format!("{SEED_ENV}='{v}' is not an unsigned integer"))?;
        }
    }
    cfg.apply_text(&text)
        .with_context(|| format!("in config {}", args.config.display()))?;
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got '{o}'");
        };
        cfg.set(k.trim(), v).with_context(|| format!("--set {o}"))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn has_column(path: &Path, name: &str) -> Result<bool> {
    let mut header = String::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_line(&mut header)?;
    Ok(header.trim().split(',').any(|h| h.trim() == name))
}

fn read_stream(args: &DataArgs) -> Result<LabeledStream> {
    let label = match &args.label_column {
        Some(l) => Some(l.clone()),
        None => has_column(&args.data, "label")?.then(|| "label".to_string()),
    };
    let schema = CsvSchema {
        label_column: label,
        feature_columns: None,
    };
    load_csv(&args.data, &schema).with_context(|| format!("reading {}", args.data.display()))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    if args.config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(out) = args.out else {
        bail!("train needs --out");
    };
    let stream = read_stream(&args.data)?;
    let h = cfg.history_len(stream.len());
    if h < 2 {
        bail!("history_ratio {} leaves {h} training rows out of {}", cfg.history_ratio, stream.len());
    }
    info!("training on {h} of {} rows, d = {}", stream.len(), stream.dim());
    let bundle: ModelBundle = train(&stream.instances[..h], &cfg)?;
    bundle.save(&out)?;
    info!("bundle written to {}", out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    if args.config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let stream = read_stream(&args.data)?;
    let mut runner = match (&args.model, &args.resume) {
        (Some(m), None) => StreamRunner::new(ModelBundle::load(m).with_context(|| format!("loading bundle {}", m.display()))?, cfg)?,
        (None, Some(r)) => StreamRunner::resume(r, cfg).with_context(|| format!("resuming from {}", r.display()))?,
        _ => bail!("run needs exactly one of --model or --resume"),
    };
    let expected = runner.bundle().input_dim();
    if stream.dim() != expected {
        bail!(
            "feature dimension mismatch: bundle expects d = {expected}, {} has d = {}",
            args.data.data.display(),
            stream.dim()
        );
    }
    let start = runner.summary().instances as usize;
    if start > stream.len() {
        bail!("checkpoint is at instance {start} but the stream has only {} rows", stream.len());
    }
    runner.run_ndjson(&stream.instances[start..], output(&args.out)?)?;
    match &args.checkpoint {
        Some(dir) => runner.checkpoint(dir)?,
        None => runner.flush(),
    }
    let s = runner.summary();
    info!(
        "scored {} instances, {} updates ({} failed), model version {}",
        s.instances, s.updates, s.failed_updates, s.model_version
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let verdicts: Vec<Verdict> = BufReader::new(File::open(&args.verdicts).with_context(|| format!("opening {}", args.verdicts.display()))?)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| -> Result<Verdict> { Ok(serde_json::from_str(&l?).with_context(|| format!("verdict line {}", i + 1))?) })
        .collect::<Result<_>>()?;
    let labels = load_csv(&args.labels, &CsvSchema::labeled(&args.label_column))?
        .labels
        .context("label file has no labels")?;
    if verdicts.len() != labels.len() {
        bail!("{} verdicts but {} labels", verdicts.len(), labels.len());
    }
    let markers = match &args.markers {
        Some(p) => serde_json::from_str::<StreamMeta>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("reading markers {}", p.display()))?
            .drift_markers,
        None => Vec::new(),
    };
    let report = evaluate(&verdicts, &labels, args.window, &markers)?;
    let mut out = output(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn markers_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map_or_else(|| "stream".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.markers.json"))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let kind: DriftKind = args.kind.parse()?;
    let spec = DriftSpec::random(kind, args.n, args.dim, args.concepts, args.anomaly_rate, args.seed);
    let stream = synth_stream(&spec, args.seed)?;
    stream.write_csv(BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?))?;
    let sidecar = markers_path(&args.out);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&stream.meta)?)?;
    info!("{} instances to {}, markers to {}", stream.len(), args.out.display(), sidecar.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
