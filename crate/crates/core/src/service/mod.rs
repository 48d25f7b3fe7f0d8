//! Command-line front end and the re-ranking service.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 checkpoint error.

pub mod ablate;
pub mod server;
pub mod settings;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};

use crate::config::ModelConfig;
use crate::encoders::{FileEmbedder, FileSummaries, TemplateSummary};
use crate::metrics::evaluate;
use crate::pipeline::{
    checkpoint, load_jsonl, train, write_loss_csv, Architecture, TextProviders,
};
use crate::synthgen::generate;

pub use server::{handle_line, RankRequest, Server};
pub use settings::{AblateSettings, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Checkpoint(_) => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Ablate,
    Describe,
    Serve,
}

#[derive(Debug, Parser)]
#[command(name = "rank-moe", version, about = "Role-aware mixture-of-experts talent ranking")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` (and `gen_seed` for `generate`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Omit timestamps from log lines.
    #[arg(long)]
    pub no_timestamp: bool,
}

/// Installs the stderr logger. Level comes from `RANK_MOE_LOG`, default `info`.
pub fn init_logging(no_timestamp: bool) {
    let env = env_logger::Env::new().filter_or("RANK_MOE_LOG", "info");
    let mut b = env_logger::Builder::from_env(env);
    if no_timestamp {
        b.format_timestamp(None);
    }
    let _ = b.try_init();
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run_from<I, S>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli, out)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    init_logging(cli.no_timestamp);
    let mut s = Settings::load(&cli.config).map_err(CliError::Usage)?;
    if let Some(seed) = cli.seed {
        s.train.seed = seed;
        s.gen.seed = seed;
    }
    if let Some(steps) = cli.steps {
        if steps == 0 {
            return Err(CliError::Usage("--steps must be positive".into()));
        }
        s.train.max_steps = steps;
    }
    if let Some(l) = &cli.listen {
        s.listen = l.clone();
    }
    if let Some(c) = &cli.checkpoint {
        s.checkpoint = Some(c.clone());
    }
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    match cli.command {
        Command::Generate => cmd_generate(&s, cli.out.as_deref(), out),
        Command::Train => cmd_train(&s, cli.out.as_deref(), out),
        Command::Eval => cmd_eval(&s, cli.out.as_deref(), out),
        Command::Ablate => cmd_ablate(&s, cli.out.as_deref(), out),
        Command::Describe => cmd_describe(&s.train.model, out).map_err(io),
        Command::Serve => cmd_serve(&s, out),
    }
}

/// Text providers for a model config, honouring the embedding and summary
/// files named in the settings.
pub fn providers(s: &Settings, cfg: &ModelConfig) -> Result<TextProviders, CliError> {
    let mut p = TextProviders::for_config(cfg);
    if let Some(path) = &s.embeddings_file {
        let e = FileEmbedder::load(path, cfg.text_dim).map_err(|e| CliError::Data(e.to_string()))?;
        p.embedder = Arc::new(e);
    }
    if let (Some(path), true) = (&s.summaries_file, cfg.ablation.preference_summary()) {
        let fallback = TemplateSummary::new(cfg.top_k_history_for_summary);
        let f = FileSummaries::load(path, fallback).map_err(|e| CliError::Data(e.to_string()))?;
        p.summary = Arc::new(f);
    }
    Ok(p)
}

fn checkpoint_path(s: &Settings) -> Result<&Path, CliError> {
    s.checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --checkpoint or set `checkpoint`".into()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_records(path: &Path) -> Result<Vec<crate::pipeline::InteractionRecord>, CliError> {
    load_jsonl(path).map_err(|e| CliError::Data(e.to_string()))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Data(e.to_string()))
}

fn cmd_generate(s: &Settings, dir: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = dir.unwrap_or(&s.data_dir);
    let d = generate(&s.gen).map_err(|e| CliError::Usage(e.to_string()))?;
    d.write(dir).map_err(|e| CliError::Data(e.to_string()))?;
    say(
        out,
        format_args!("wrote {} train and {} test records to {}", d.train.len(), d.test.len(), dir.display()),
    )
}

fn cmd_train(s: &Settings, loss_csv: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = checkpoint_path(s)?;
    let records = load_records(&s.train_path())?;
    let p = providers(s, &s.train.model)?;
    let (model, log) = train(&records, &s.train, p).map_err(|e| CliError::Data(e.to_string()))?;
    checkpoint::save(&model, ckpt).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let csv = loss_csv.map_or_else(|| with_suffix(ckpt, ".loss.csv"), Path::to_path_buf);
    write_loss_csv(create(&csv)?, &log).map_err(|e| CliError::Data(e.to_string()))?;
    let last = log.last().expect("at least one step");
    say(
        out,
        format_args!(
            "trained {} steps, final loss {:.6}; checkpoint {}",
            last.step,
            last.total,
            ckpt.display()
        ),
    )
}

fn cmd_eval(s: &Settings, report_csv: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = checkpoint_path(s)?;
    let model = checkpoint::load(ckpt, &s.train.model, providers(s, &s.train.model)?)
        .map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let records = load_records(&s.test_path())?;
    let preds = model.predict(&records).map_err(|e| CliError::Data(e.to_string()))?;
    let report = evaluate(&records, &preds).map_err(|e| CliError::Data(e.to_string()))?;
    let csv = report_csv.map_or_else(|| with_suffix(ckpt, ".eval.csv"), Path::to_path_buf);
    report
        .write_csv(create(&csv)?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    say(out, format_args!("{report}"))
}

fn cmd_ablate(s: &Settings, csv: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let train_set = load_records(&s.train_path())?;
    let test_set = load_records(&s.test_path())?;
    let runs = ablate::plan(&s.train, &s.ablate);
    // Surface provider errors before any training starts.
    for r in &runs {
        providers(s, &r.config.model)?;
    }
    let rows = ablate::run(&runs, &train_set, &test_set, |m| {
        providers(s, m).expect("checked above")
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    let path = csv.map_or_else(|| s.data_dir.join("ablation.csv"), Path::to_path_buf);
    ablate::write_csv(create(&path)?, &rows).map_err(|e| CliError::Data(e.to_string()))?;
    for (label, m) in ablate::median_auc_avg(&rows) {
        say(out, format_args!("{label:<24} median auc_avg {m:.4}"))?;
    }
    Ok(())
}

/// Parameter counts grouped by the first two name segments.
pub fn parameter_groups(cfg: &ModelConfig) -> Result<BTreeMap<String, usize>, CliError> {
    let arch = Architecture::new(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let params = arch
        .init::<f32, _>(&mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut groups = BTreeMap::new();
    for (name, t) in params.iter() {
        let key: Vec<&str> = name.splitn(3, '.').take(2).collect();
        *groups.entry(key.join(".")).or_insert(0) += t.len();
    }
    Ok(groups)
}

fn cmd_describe(cfg: &ModelConfig, out: &mut dyn Write) -> std::io::Result<()> {
    let groups = parameter_groups(cfg).map_err(|e| std::io::Error::other(e.to_string()))?;
    writeln!(out, "variant        {}", cfg.ablation)?;
    writeln!(out, "config digest  {}", cfg.digest_hex())?;
    writeln!(out, "input width    {}", cfg.input_dim())?;
    for (k, n) in &groups {
        writeln!(out, "  {k:<28} {n:>12}")?;
    }
    writeln!(out, "total parameters {}", groups.values().sum::<usize>())
}

fn cmd_serve(s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = checkpoint_path(s)?;
    let model = checkpoint::load(ckpt, &s.train.model, providers(s, &s.train.model)?)
        .map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let server = Server::bind(Arc::new(model), s.listen.as_str())
        .map_err(|e| CliError::Usage(format!("cannot listen on {}: {e}", s.listen)))?;
    let addr = server.local_addr().map_err(|e| CliError::Usage(e.to_string()))?;
    say(out, format_args!("listening on {addr}"))?;
    out.flush().map_err(|e| CliError::Data(e.to_string()))?;
    server.serve().map_err(|e| CliError::Data(e.to_string()))
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
