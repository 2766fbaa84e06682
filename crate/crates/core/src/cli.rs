//! Command-line front end: `train`, `eval` and `trace`.
//!
//! Hyperparameters resolve as flags over config file over profile. Every
//! failure surfaces as one `error<TAB>category<TAB>message` line on stderr
//! and the category's exit code.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    load_corpus, synthetic_splits, CorpusFormat, EncodedCorpus, RawExample, SyntheticConfig, Vocabulary,
    DEFAULT_MAX_DOC_LEN,
};
use crate::error::{Error, Result};
use crate::model::predict;
use crate::prediction::ensemble_average;
use crate::training::{
    forward_config, score_examples, train, Accuracy, Checkpoint, Dataset, HyperParams, Observer, Overrides, Profile,
    WindowMetrics,
};

pub const CHECKPOINT_FILE: &str = "model.aair";
pub const METRICS_FILE: &str = "metrics.tsv";

#[derive(Parser, Debug)]
#[command(name = "iaa", version, about = "Iterative alternating attention reader")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write the best checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Report accuracy of one checkpoint or an ensemble.
    Eval(EvalArgs),
    /// Export the attention weights of one example as CSV.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Cbt,
    Cnn,
    Synthetic,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Cbt => "cbt",
            Format::Cnn => "cnn",
            Format::Synthetic => "synthetic",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus file or directory (the split to evaluate for eval/trace).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub format: Format,
    /// Seed of the generated synthetic corpus.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub train_size: usize,
    #[arg(long, default_value_t = 500)]
    pub valid_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Validation split for cbt/cnn.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: ProfileArg,
    /// TOML file of hyperparameter overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Batches between validation checks.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub fixed_query_attention: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Repeat to average an ensemble.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source id of the example to trace.
    #[arg(long)]
    pub example: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}

fn corpus_format(f: Format) -> Option<CorpusFormat> {
    match f {
        Format::Cbt => Some(CorpusFormat::Cbt),
        Format::Cnn => Some(CorpusFormat::Cnn),
        Format::Synthetic => None,
    }
}

fn synthetic(args: &DataArgs) -> Result<(Vec<RawExample>, Vec<RawExample>)> {
    let cfg = SyntheticConfig {
        seed: args.data_seed,
        ..SyntheticConfig::default()
    };
    synthetic_splits(&cfg, args.train_size, args.valid_size)
}

/// The split that eval and trace work on: the given file, or the synthetic
/// validation split.
fn target_split(args: &DataArgs) -> Result<Vec<RawExample>> {
    match corpus_format(args.format) {
        Some(fmt) => {
            let path = args
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("--data is required for this format".into()))?;
            load_corpus(path, fmt)
        }
        None => Ok(synthetic(args)?.1),
    }
}

pub fn resolve_hyper(args: &TrainArgs) -> Result<HyperParams> {
    let profile = match args.profile {
        ProfileArg::Paper => Profile::Paper,
        ProfileArg::Desk => Profile::Desk,
    };
    let mut h = HyperParams::profile(profile);
    if profile == Profile::Paper && args.data.format == Format::Cnn {
        h.plateau_window = 5000;
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let o: Overrides =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        h.apply(&o);
    }
    h.apply(&Overrides {
        seed: args.seed,
        steps: args.steps,
        max_epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        plateau_window: args.window,
        dropout: args.dropout,
        fixed_query_attention: args.fixed_query_attention.then_some(true),
        ..Overrides::default()
    });
    h.validate()?;
    Ok(h)
}

/// Writes the metrics log row by row so a long run can be followed.
struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    fn new(mut out: W, header: &[(String, String)]) -> Result<Self> {
        let ctx = |e| Error::io("writing metrics log", e);
        for (k, v) in header {
            writeln!(out, "# {k}={v}").map_err(ctx)?;
        }
        writeln!(out, "window\tepoch\tbatches\ttrain_loss\tvalid_accuracy\tlr").map_err(ctx)?;
        out.flush().map_err(ctx)?;
        Ok(MetricsLog { out })
    }
}

impl<W: Write> Observer for MetricsLog<W> {
    fn window(&mut self, m: &WindowMetrics) -> Result<bool> {
        writeln!(
            self.out,
            "{}\t{}\t{}\t{:.6}\t{:.4}\t{}",
            m.window, m.epoch, m.batches, m.train_loss, m.valid_accuracy, m.lr
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| Error::io("writing metrics log", e))?;
        Ok(true)
    }
}

pub fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let hyper = resolve_hyper(args)?;
    let (train_raw, valid_raw) = match corpus_format(args.data.format) {
        Some(fmt) => {
            let data = args
                .data
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("--data is required for this format".into()))?;
            let valid = args
                .valid
                .as_ref()
                .ok_or_else(|| Error::Config("--valid is required for this format".into()))?;
            require_exists(data)?;
            require_exists(valid)?;
            (load_corpus(data, fmt)?, load_corpus(valid, fmt)?)
        }
        None => synthetic(&args.data)?,
    };
    let all: Vec<RawExample> = train_raw.iter().chain(&valid_raw).cloned().collect();
    let vocab = Vocabulary::build(&all, 1);
    drop(all);
    let train_set = vocab.encode_corpus(&train_raw, DEFAULT_MAX_DOC_LEN)?;
    let valid_set = vocab.encode_corpus(&valid_raw, DEFAULT_MAX_DOC_LEN)?;
    if let Some(id) = train_set.unanswerable.first() {
        return Err(Error::Integrity {
            source_id: id.clone(),
            message: "training example cannot be answered".into(),
        });
    }

    let mut meta = vec![("format".to_string(), args.data.format.name().to_string())];
    if args.data.format == Format::Synthetic {
        meta.push(("data_seed".into(), args.data.data_seed.to_string()));
        meta.push(("train_size".into(), args.data.train_size.to_string()));
        meta.push(("valid_size".into(), args.data.valid_size.to_string()));
    }
    let mut header = meta.clone();
    header.extend(hyper.to_pairs());

    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let log_path = args.out.join(METRICS_FILE);
    let log_file = fs::File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = MetricsLog::new(BufWriter::new(log_file), &header)?;

    let data = Dataset {
        train: &train_set.examples,
        valid: &valid_set.examples,
        valid_unanswerable: valid_set.unanswerable.len(),
    };
    let outcome = train(&data, &vocab, &hyper, args.workers, &meta, &mut log)?;
    let ck_path = args.out.join(CHECKPOINT_FILE);
    outcome.best.save(&ck_path)?;
    let best = outcome.best.optimizer.best_accuracy.unwrap_or(0.0);
    writeln!(
        stdout,
        "windows={} best_valid_accuracy={:.4} checkpoint={}",
        outcome.log.len(),
        best,
        ck_path.display()
    )
    .map_err(|e| Error::io("stdout", e))
}

fn encode_for(ck: &Checkpoint, raws: &[RawExample]) -> Result<EncodedCorpus> {
    let enc = ck.vocab.encode_corpus(raws, DEFAULT_MAX_DOC_LEN)?;
    if !raws.is_empty() && enc.examples.is_empty() {
        return Err(Error::Config(
            "no example of this dataset can be scored with the checkpoint vocabulary".into(),
        ));
    }
    Ok(enc)
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<Accuracy> {
    for p in &args.checkpoint {
        require_exists(p)?;
    }
    if let Some(p) = &args.data.data {
        require_exists(p)?;
    }
    let checkpoints = args
        .checkpoint
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let first = &checkpoints[0];
    if let Some(other) = checkpoints.iter().find(|c| c.vocab != first.vocab) {
        return Err(Error::Config(format!(
            "ensemble members disagree on the vocabulary ({} vs {} tokens)",
            first.vocab.len(),
            other.vocab.len()
        )));
    }
    let raws = target_split(&args.data)?;
    let enc = encode_for(first, &raws)?;
    let mut per_model = Vec::with_capacity(checkpoints.len());
    for ck in &checkpoints {
        per_model.push(score_examples(&ck.params, &enc.examples, &forward_config(&ck.hyper), args.workers)?);
    }
    let scores = (0..enc.examples.len())
        .map(|i| {
            let members: Vec<_> = per_model.iter().map(|m| m[i].clone()).collect();
            ensemble_average(&members)
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = Accuracy::of(&scores, &enc.examples, enc.unanswerable.len());
    writeln!(
        stdout,
        "total={} correct={} accuracy={:.4}",
        acc.total,
        acc.correct,
        acc.value()
    )
    .map_err(|e| Error::io("stdout", e))?;
    Ok(acc)
}

pub fn cmd_trace(args: &TraceArgs, stdout: &mut dyn Write) -> Result<()> {
    require_exists(&args.checkpoint)?;
    if let Some(p) = &args.data.data {
        require_exists(p)?;
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut raws = target_split(&args.data)?;
    if args.data.format == Format::Synthetic {
        // ids are unique across both synthetic splits
        raws.extend(synthetic(&args.data)?.0);
    }
    let raw = raws
        .iter()
        .find(|r| r.source_id == args.example)
        .ok_or_else(|| Error::Lookup(format!("no example with id {:?}", args.example)))?;
    let ex = ck.vocab.encode_example(raw)?;
    let item = ex.as_item();
    let pred = predict(&ck.params, &item, &forward_config(&ck.hyper))?;

    let sink: Box<dyn Write + '_> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?),
        None => Box::new(&mut *stdout),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io {
        context: "writing trace".into(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(["step", "side", "position", "token", "weight"]).map_err(csv_err)?;
    for (t, step) in pred.trace.steps.iter().enumerate() {
        let sides = [("query", &ex.query, &step.query_weights), ("document", &ex.document, &step.doc_weights)];
        for (side, tokens, weights) in sides {
            for (i, (&tok, &wt)) in tokens.iter().zip(weights.iter()).enumerate() {
                w.write_record([
                    (t + 1).to_string(),
                    side.to_string(),
                    i.to_string(),
                    ck.vocab.token(tok).to_string(),
                    format!("{wt:.6}"),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("writing trace", e))
}

/// Parses arguments, runs the subcommand, and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "error\tconfig\t{}", first.trim_start_matches("error: "));
            return crate::Category::Config.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout).map(|_| ()),
        Command::Trace(a) => cmd_trace(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            let msg = e.to_string().replace(['\n', '\r'], " ");
            let _ = writeln!(stderr, "error\t{}\t{}", cat.as_str(), msg);
            cat.exit_code()
        }
    }
}
