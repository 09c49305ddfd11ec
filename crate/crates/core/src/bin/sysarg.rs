//! Command-line front end. Exit status: 0 success, 1 configuration error,
//! 2 runtime failure. `SYSARG_LOG` sets log verbosity (e.g. `info`).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sysarg::dataset::Dataset;
use sysarg::experiment::{
    read_dataset, run_ablation, run_mask_study, run_position_study, score_sequences, score_summary, time_overhead,
    train_and_evaluate, ExperimentSpec, Report, Splits,
};
use sysarg::ingest::{format_trace, read_babeltrace, window};
use sysarg::jsonl::{read_jsonl, write_jsonl};
use sysarg::model::{evaluate, evaluate_mlm, Checkpoint, ModelKind, Objective};
use sysarg::repr::Ablation;
use sysarg::synth::{stats, Generator, WorkloadConfig};
use sysarg::{encode_event, Error, Event, Result};

#[derive(Parser)]
#[command(name = "sysarg", version, about = "System-call trace sequence modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Convert a trace to canonical JSONL.
    Ingest(IngestArgs),
    /// Tokenise and window a trace into a dataset file.
    Window(WindowArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Per-window log-likelihood under a next-call model.
    Score(ScoreArgs),
    /// Argument-group ablation grid.
    Ablate(StudyArgs),
    /// Timestamp and position encoding study.
    StudyPosition(StudyArgs),
    /// Masked-pretraining selection-rate study.
    StudyMask(StudyArgs),
    /// Per-epoch time with and without arguments.
    TimeOverhead(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Jsonl,
    Babeltrace,
}

#[derive(Args)]
struct GenArgs {
    /// Workload TOML file; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Canonical JSONL output; stdout when neither this nor `--text` is given.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Babeltrace text output.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Print name frequencies to stderr.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in", value_name = "TRACE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "babeltrace")]
    format: TraceFormat,
    /// Canonical JSONL output; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WindowArgs {
    /// Trace in JSONL or babeltrace text form.
    #[arg(long = "in", value_name = "TRACE")]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long = "len", default_value_t = 256)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Reuse the vocabularies of an existing dataset file.
    #[arg(long)]
    vocab_from: Option<PathBuf>,
}

/// Flags shared by training and the studies; they override the config file.
#[derive(Args)]
struct Overrides {
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Transformer or LSTM layer count.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_batches: Option<usize>,
    #[arg(long)]
    max_eval: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(p) = &self.train {
            spec.data.train = Some(p.clone());
        }
        if let Some(p) = &self.test {
            spec.data.test = Some(p.clone());
        }
        if let Some(s) = &self.seeds {
            spec.seeds = s.clone();
        }
        if let Some(d) = &self.output_dir {
            spec.output_dir = d.clone();
        }
        if let Some(o) = &self.objective {
            spec.objective = Objective::parse(o)?;
        }
        if let Some(k) = &self.kind {
            spec.model.kind = ModelKind::parse(k)?;
        }
        if let Some(a) = &self.ablation {
            spec.ablation = Ablation::parse(a)?;
        }
        if let Some(e) = self.epochs {
            spec.train.max_epochs = e;
            spec.overhead.epochs = e;
        }
        if let Some(lr) = self.lr {
            spec.train.lr = lr;
        }
        if let Some(b) = self.batch_size {
            spec.train.batch_size = b;
        }
        if let Some(l) = self.layers {
            spec.model.tf_layers = l;
            spec.model.lstm_layers = l;
        }
        if let Some(m) = self.max_batches {
            spec.train.max_batches_per_epoch = Some(m);
        }
        if let Some(m) = self.max_eval {
            spec.data.max_eval_sequences = Some(m);
        }
        spec.validate()?;
        info!("resolved config:\n{}", spec.to_toml()?);
        Ok(spec)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Checkpoint path; `<output_dir>/model.ckpt.json` by default.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file to evaluate on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    max_eval: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file, JSONL trace or babeltrace text trace.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYSARG_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Window(a) => window_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Ablate(a) => study(a, "ablation", |s, d| run_ablation(s, d)),
        Command::StudyPosition(a) => study(a, "position", |s, d| run_position_study(s, d)),
        Command::StudyMask(a) => study(a, "mask", |s, d| run_mask_study(s, d)),
        Command::TimeOverhead(a) => study(a, "overhead", |s, d| time_overhead(s, d).map(|(_, r)| r)),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reads a trace, telling JSONL from babeltrace text by its first byte.
fn read_trace(path: &Path) -> Result<Vec<Event>> {
    let mut r = BufReader::new(open(path)?);
    let first = r
        .fill_buf()?
        .iter()
        .copied()
        .find(|b| !b.is_ascii_whitespace());
    match first {
        Some(b'{') => read_jsonl(r),
        Some(_) => read_babeltrace(r),
        None => Ok(Vec::new()),
    }
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => WorkloadConfig::from_toml(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => WorkloadConfig::default(),
    };
    if let Some(n) = a.events {
        cfg.n_events = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let events: Vec<Event> = Generator::new(cfg)?.collect();
    if a.out.is_some() || a.text.is_none() {
        let mut w = output(a.out.as_deref())?;
        write_jsonl(&mut w, &events)?;
        w.flush()?;
    }
    if let Some(p) = &a.text {
        fs::write(p, format_trace(&events, 0))?;
    }
    if a.stats {
        eprint!("{}", stats(&events)?.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

fn ingest(a: IngestArgs) -> Result<ExitCode> {
    let r = BufReader::new(open(&a.input)?);
    let events = match a.format {
        TraceFormat::Babeltrace => read_babeltrace(r)?,
        TraceFormat::Jsonl => read_jsonl(r)?,
    };
    let mut w = output(a.out.as_deref())?;
    write_jsonl(&mut w, &events)?;
    w.flush()?;
    info!("{} events", events.len());
    Ok(ExitCode::SUCCESS)
}

fn window_cmd(a: WindowArgs) -> Result<ExitCode> {
    let events = read_trace(&a.input)?;
    let ds = match &a.vocab_from {
        Some(p) => {
            let base = read_dataset(p)?;
            Dataset::encode(&events, base.sys_vocab, base.proc_vocab, a.window)?
        }
        None => Dataset::from_events(&events, a.min_count, a.window)?,
    };
    ds.write(BufWriter::new(File::create(&a.out)?))?;
    eprintln!(
        "{} events -> {} windows of {} ({} call names, {} process names)",
        events.len(),
        ds.len(),
        a.window,
        ds.sys_vocab.len(),
        ds.proc_vocab.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let spec = a.overrides.resolve()?;
    let splits = spec.load_splits()?;
    let seed = spec.seeds[0];
    let repr = spec.representation_for(spec.ablation);
    let out = train_and_evaluate(&splits, spec.objective, &spec.model, &repr, &spec.train, seed)?;
    let path = match a.out {
        Some(p) => p,
        None => {
            fs::create_dir_all(&spec.output_dir)?;
            spec.output_dir.join("model.ckpt.json")
        }
    };
    let report = out.report(spec.ablation.name());
    Checkpoint::new(out.model, splits.sys_vocab, splits.proc_vocab, Some(spec.train))?.save(&path)?;
    println!("{}", serde_json::to_string(&report)?);
    eprintln!("checkpoint written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut ds = read_dataset(&a.data)?;
    ck.verify_vocab(&ds.sys_vocab, &ds.proc_vocab)?;
    if let Some(m) = a.max_eval {
        ds.sequences.truncate(m);
    }
    let metrics = match ck.model.objective {
        Objective::Lm => evaluate(&ck.model, &ds.sequences)?,
        Objective::Mlm => {
            let plan = ck.train.map(|t| t.mask).unwrap_or_default();
            evaluate_mlm(&ck.model, &ds.sequences, &plan)?
        }
    };
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(ExitCode::SUCCESS)
}

fn score_cmd(a: ScoreArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let is_dataset = {
        let mut head = String::new();
        BufReader::new(open(&a.input)?).read_line(&mut head)?;
        head.contains("\"format\"")
    };
    let seqs = if is_dataset {
        let ds = read_dataset(&a.input)?;
        ck.verify_vocab(&ds.sys_vocab, &ds.proc_vocab)?;
        ds.sequences
    } else {
        let events = read_trace(&a.input)?;
        let records = events.iter().map(|e| encode_event(e, &ck.sys_vocab, &ck.proc_vocab));
        window(records, ck.model.config.window_len)?
    };
    let scores = score_sequences(&ck.model, &seqs)?;
    let mut w = output(None)?;
    w.write_all(score_summary(&scores).as_bytes())?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn study<F>(a: StudyArgs, stem: &str, f: F) -> Result<ExitCode>
where
    F: FnOnce(&ExperimentSpec, &Splits) -> Result<Report>,
{
    let spec = a.overrides.resolve()?;
    let splits = spec.load_splits()?;
    let report = f(&spec, &splits)?;
    let (txt, jsonl) = report.write(&spec.output_dir, stem)?;
    print!("{}", report.to_text());
    eprintln!("wrote {} and {}", txt.display(), jsonl.display());
    Ok(if report.failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
