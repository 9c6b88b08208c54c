//! Command-line front end: train, eval, predict, gradcheck and stats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::corpus::{load_embeddings, parse_dataset, split_train_dev, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{subset_filter, Subset};
use crate::trainer::{
    end_to_end_gradcheck, fit, model_vocabulary, predict_corpus, score, Checkpoint, TrainConfig,
};

/// Relative error the gradient check must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "dhg", version, about = "Joint aspect and sentiment tagging over a dynamic heterogeneous graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write the best checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Write predicted aspects (and optionally DHG traces).
    Predict(PredictArgs),
    /// Check analytic gradients of the full loss against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print corpus counts.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long = "embed-dim")]
    pub embed_dim: Option<usize>,
    #[arg(long = "dhg-times")]
    pub dhg_times: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Overrides {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            apply_kv_text(&mut cfg, &text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.embed_dim {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.dhg_times {
            cfg.dhg.times = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies `key=value` lines; blank lines and `#` comments are skipped.
pub fn apply_kv_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", i + 1)))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training data (TSV). Without --dev a seeded dev split is held out.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Embedding file; give it twice to concatenate two tables.
    #[arg(long)]
    pub embeddings: Vec<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log path (default: `<out>.log`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// The whole file.
    #[default]
    All,
    /// The training side of the checkpoint's seeded split.
    Train,
    /// The dev side of the checkpoint's seeded split.
    Dev,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "all")]
    pub subset: String,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long = "dhg-times")]
    pub dhg_times: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the report as key=value lines.
    #[arg(long)]
    pub kv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit per-iteration edge traces and final graphs.
    #[arg(long)]
    pub trace: bool,
    /// Trace file (default: stderr).
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
    #[arg(long = "dhg-times")]
    pub dhg_times: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

/// Number of values per row of an embedding file.
fn embedding_file_dim(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| l.split_whitespace().count())
        .find(|&n| n > 2)
        .map(|n| n - 1)
        .ok_or_else(|| Error::Load(format!("{}: no embedding rows", path.display())))
}

fn load_tables(paths: &[PathBuf], train: &Corpus, seed: u64) -> Result<Option<EmbeddingTable>> {
    if paths.len() > 2 {
        return Err(Error::invalid("at most two embedding files can be concatenated"));
    }
    let vocab = model_vocabulary(train);
    let mut table: Option<EmbeddingTable> = None;
    for (k, p) in paths.iter().enumerate() {
        let t = load_embeddings(p, &vocab, embedding_file_dim(p)?, seed.wrapping_add(k as u64))?;
        info!("{}: {} of {} words found", p.display(), t.from_file, vocab.len());
        table = Some(match table {
            Some(prev) => prev.concat(&t)?,
            None => t,
        });
    }
    Ok(table)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let data = parse_dataset(&args.data)?;
    let (train, dev) = match &args.dev {
        Some(p) => (data, parse_dataset(p)?),
        None => split_train_dev(&data, cfg.dev_fraction, cfg.seed)?,
    };
    info!("train {} sentences, dev {}", train.len(), dev.len());
    let embeddings = load_tables(&args.embeddings, &train, cfg.seed)?;
    let result = fit(&train, &dev, &cfg, embeddings.as_ref())?;
    result.best.save(&args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", args.out.display())));
    write_text(&log_path, &result.log_text())?;
    let b = &result.best;
    writeln!(
        out,
        "best epoch {}: dev F-a {:.4} acc-s {:.4} F-s {:.4} F-all {:.4}",
        b.epoch, b.dev.f_a, b.dev.acc_s, b.dev.f_s, b.dev.f_all
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn load_for_inference(model: &Path, dhg_times: Option<usize>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::load(model)?;
    if let Some(t) = dhg_times {
        ck.tagger.dhg.times = t;
        ck.tagger.dhg.validate()?;
    }
    Ok(ck)
}

fn select_split(data: Corpus, split: SplitArg, ck: &Checkpoint) -> Result<Corpus> {
    if split == SplitArg::All {
        return Ok(data);
    }
    let (train, dev) = split_train_dev(&data, ck.config.dev_fraction, ck.config.seed)?;
    Ok(if split == SplitArg::Train { train } else { dev })
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let subset: Subset = args.subset.parse()?;
    let ck = load_for_inference(&args.model, args.dhg_times)?;
    let data = select_split(parse_dataset(&args.data)?, args.split, &ck)?;
    let data = subset_filter(&data, subset);
    if data.is_empty() {
        return Err(Error::invalid(format!("subset {subset} is empty")));
    }
    let preds = predict_corpus(&ck.tagger, &data, args.workers)?;
    let report = score(&data, &preds)?;
    if let Some(p) = &args.kv {
        write_text(p, &report.to_kv())?;
    }
    write!(out, "subset {subset}\n{}", report.to_table()).map_err(|e| Error::io("<stdout>", e))
}

fn predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_for_inference(&args.model, args.dhg_times)?;
    let data = parse_dataset(&args.data)?;
    let preds = predict_corpus(&ck.tagger, &data, args.workers)?;
    let lines: String = data
        .sentences
        .iter()
        .zip(&preds)
        .map(|(s, p)| p.to_lines(s))
        .collect();
    match &args.out {
        Some(p) => write_text(p, &lines)?,
        None => out.write_all(lines.as_bytes()).map_err(|e| Error::io("<stdout>", e))?,
    }
    if args.trace {
        let mut trace = String::new();
        for (s, p) in data.sentences.iter().zip(&preds) {
            trace.push_str(&format!("# sentence {}\n", s.id));
            trace.push_str(&p.trace.dump());
            trace.push_str(&p.graph.dump());
        }
        match &args.trace_out {
            Some(p) => write_text(p, &trace)?,
            None => eprint!("{trace}"),
        }
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let report = end_to_end_gradcheck(args.hidden, args.seed, args.eps)?;
    let mut worst = report.per_param.clone();
    worst.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let mut text = String::new();
    for p in worst.iter().take(5) {
        text.push_str(&format!(
            "{:<28} {:.3e} (worst coordinate {:.3e}, {} coords)\n",
            p.name, p.rel_error, p.worst_coord_error, p.coords
        ));
    }
    text.push_str(&format!("max_rel_error={:.6e}\n", report.max_rel_error));
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(report.max_rel_error < GRADCHECK_TOLERANCE)
}

/// Corpus counts laid out like a dataset statistics table.
pub fn stats_text(corpus: &Corpus) -> String {
    let s = corpus.span_stats();
    let row = |k: &str, v: usize| format!("{k:<18}{v:>8}\n");
    [
        row("sentences", s.sentences),
        row("tokens", s.tokens),
        row("aspects", s.aspects),
        row("POS", s.per_polarity[0]),
        row("NEG", s.per_polarity[1]),
        row("NEU", s.per_polarity[2]),
        row("multi-aspect", s.multi_aspect_sentences),
        row("no-aspect", s.no_aspect_sentences),
    ]
    .concat()
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a, out).map(|_| true),
        Command::Eval(a) => eval(a, out).map(|_| true),
        Command::Predict(a) => predict(a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Stats(a) => parse_dataset(&a.data).and_then(|c| {
            out.write_all(stats_text(&c).as_bytes())
                .map(|_| true)
                .map_err(|e| Error::io("<stdout>", e))
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => {
            let _ = writeln!(err, "error: gradient check above tolerance {GRADCHECK_TOLERANCE:e}");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
