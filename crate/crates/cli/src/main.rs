mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};
use gausscse::data::{self, save_jsonl, Label, NliExample, SynthConfig};
use gausscse::direction::{self, DEFAULT_BIN_WIDTH};
use gausscse::encoder::{DEFAULT_BASE_DIM, DEFAULT_BUCKETS, DEFAULT_EMBED_DIM};
use gausscse::formats::{load_checkpoint, load_vectors, save_checkpoint};
use gausscse::trainer::{
    self, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_EVAL_EVERY, DEFAULT_GRID_BATCH_SIZES,
    DEFAULT_GRID_LEARNING_RATES, DEFAULT_LEARNING_RATE, DEFAULT_TEMPERATURE,
};
use gausscse::{nli, seeded_rng, LossVariant, Model, PrecomputedVectors, RngStream, TrainConfig};

/// Gaussian sentence embeddings: training and NLI / direction evaluation.
#[derive(Debug, Parser)]
#[command(name = "gausscse", version, args_override_self = true)]
struct Cli {
    /// Run on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Flat `key = value` file of flags, applied before the command line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on NLI triplets.
    Train(TrainArgs),
    /// Two-way NLI accuracy and AUPRC, threshold chosen on the dev set.
    EvalNli(EvalNliArgs),
    /// Entailment-direction accuracy of a model or of the length baseline.
    EvalDirection(EvalDirectionArgs),
    /// Train over a batch-size × learning-rate grid and rank by dev AUPRC.
    GridSearch(GridArgs),
    /// Train and evaluate once per seed, then report the mean.
    Multiseed(MultiseedArgs),
    /// Write a synthetic NLI corpus as JSONL.
    Synth(SynthArgs),
    /// Histogram of log length ratios (premise / hypothesis).
    Hist(HistArgs),
    /// McNemar's test on two prediction files written by `eval-nli --predictions`.
    Mcnemar(McnemarArgs),
}

#[derive(Debug, Args)]
struct EncoderArgs {
    /// GVEC file of precomputed base vectors; replaces the hashed bag encoder.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Hash buckets of the bag encoder.
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    buckets: usize,
    /// Base vector size of the bag encoder.
    #[arg(long, default_value_t = DEFAULT_BASE_DIM)]
    d_base: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
    dim: usize,
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long, default_value = "ent+con+rev", value_parser = parse_variant)]
    variant: LossVariant,
    /// Softmax temperature.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Steps between dev evaluations.
    #[arg(long, default_value_t = DEFAULT_EVAL_EVERY)]
    eval_every: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training JSONL; triplets are built per premise.
    #[arg(long)]
    data: PathBuf,
    /// Dev JSONL for snapshot selection. Without it the last step is kept.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training log TSV. Defaults to stdout.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalNliArgs {
    /// Test JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Dev JSONL used to pick the threshold.
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// GVEC file, needed for checkpoints over precomputed vectors.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Also write per-example `index score label prediction` TSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("predictor").required(true).args(["model", "length_baseline"])))]
struct EvalDirectionArgs {
    /// JSONL; only entailment pairs are used.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Predict the longer sentence as entailing.
    #[arg(long)]
    length_baseline: bool,
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID_BATCH_SIZES)]
    batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID_LEARNING_RATES)]
    lrs: Vec<f64>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Score table TSV. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("seed_choice").args(["seeds", "seed_list"])))]
struct MultiseedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Test JSONL for NLI metrics; its entailment pairs also give direction accuracy.
    #[arg(long)]
    test: PathBuf,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Results TSV. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().vocab)]
    vocab: usize,
    /// Number of premises; each gives one entailment and one contradiction.
    #[arg(long, default_value_t = SynthConfig::default().count)]
    count: usize,
    #[arg(long, default_value_t = SynthConfig::default().min_len)]
    min_len: usize,
    #[arg(long, default_value_t = SynthConfig::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HistArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    /// Only use pairs with this label.
    #[arg(long)]
    label: Option<Label>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McnemarArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<LossVariant, String> {
    s.parse().map_err(|e: gausscse::Error| e.to_string())
}

/// Bad invocation that clap cannot see, such as a missing input file.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn input(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Usage(format!("no such file: {}", path.display())).into())
    }
}

fn load_examples(path: &Path) -> Result<Vec<NliExample>> {
    let loaded = data::load_jsonl(input(path)?)?;
    if loaded.skipped > 0 {
        eprintln!("{}: skipped {} unlabeled lines", path.display(), loaded.skipped);
    }
    Ok(loaded.examples)
}

fn load_vector_file(path: Option<&PathBuf>) -> Result<Option<Arc<PrecomputedVectors>>> {
    path.map(|p| Ok(Arc::new(load_vectors(input(p)?)?))).transpose()
}

fn load_model(path: &Path, vectors: Option<&PathBuf>) -> Result<Model> {
    let path = input(path)?;
    let vectors = load_vector_file(vectors)?;
    load_checkpoint(path, vectors).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn init_model(encoder: &EncoderArgs, seed: u64) -> Result<Model> {
    let mut rng = seeded_rng(seed, RngStream::Init);
    Ok(match load_vector_file(encoder.vectors.as_ref())? {
        Some(vectors) => Model::random_precomputed(vectors, encoder.dim, &mut rng)?,
        None => Model::random_bag(encoder.buckets, encoder.d_base, encoder.dim, &mut rng)?,
    })
}

fn train_config(hyper: &HyperArgs, batch_size: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        temperature: hyper.tau,
        batch_size,
        learning_rate,
        epochs: hyper.epochs,
        variant: hyper.variant,
        seed: hyper.seed,
        eval_every: hyper.eval_every,
        ..TrainConfig::default()
    }
}

fn triplets_from(path: &Path) -> Result<Vec<gausscse::Triplet>> {
    let set = data::build_triplets(&load_examples(path)?);
    if set.dropped_premises > 0 {
        eprintln!("{}: dropped {} premises without both labels", path.display(), set.dropped_premises);
    }
    if set.triplets.is_empty() {
        bail!("{}: no (entailment, contradiction) triplets", path.display());
    }
    Ok(set.triplets)
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let triplets = triplets_from(&args.data)?;
    let dev = args.dev.as_deref().map(load_examples).transpose()?.unwrap_or_default();
    if dev.is_empty() {
        eprintln!("no dev set: keeping the final parameters");
    }
    let config = train_config(&args.hyper, args.batch_size, args.lr);
    let model = init_model(&args.encoder, config.seed)?;
    let outcome = gausscse::train(&triplets, &dev, &config, model)?;
    save_checkpoint(&args.out, &outcome.model)?;
    let mut log = output(args.log.as_ref())?;
    outcome.log.write_tsv(&mut log)?;
    log.flush()?;
    Ok(())
}

fn cmd_eval_nli(args: &EvalNliArgs) -> Result<()> {
    let test = load_examples(&args.data)?;
    let dev = load_examples(&args.dev)?;
    let model = load_model(&args.model, args.vectors.as_ref())?;
    let report = gausscse::evaluate(&model, &dev, &test)?;
    if let Some(path) = &args.predictions {
        let mut w = output(Some(path))?;
        report.write_predictions_tsv(&mut w)?;
        w.flush()?;
    }
    print_json(&report.summary())
}

fn entailment_pairs(examples: Vec<NliExample>) -> (Vec<NliExample>, usize) {
    let total = examples.len();
    let kept: Vec<_> = examples.into_iter().filter(|e| e.label == Label::Entailment).collect();
    let skipped = total - kept.len();
    (kept, skipped)
}

fn cmd_eval_direction(args: &EvalDirectionArgs) -> Result<()> {
    let (pairs, skipped) = entailment_pairs(load_examples(&args.data)?);
    let report = match &args.model {
        Some(path) => direction::direction_accuracy(&pairs, &load_model(path, args.vectors.as_ref())?)?,
        None => direction::length_baseline(&pairs)?,
    };
    let mut value = serde_json::to_value(report)?;
    value["skipped_non_entailment"] = skipped.into();
    print_json(&value)
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let triplets = triplets_from(&args.data)?;
    let dev = load_examples(&args.dev)?;
    let template = train_config(&args.hyper, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE);
    let init = init_model(&args.encoder, template.seed)?;
    let result = trainer::grid_search(&triplets, &dev, &args.batch_sizes, &args.lrs, &template, &init)?;
    let mut out = output(args.out.as_ref())?;
    result.write_tsv(&mut out)?;
    out.flush()?;
    if result.best.is_none() {
        bail!("every grid cell failed");
    }
    Ok(())
}

fn cmd_multiseed(args: &MultiseedArgs) -> Result<()> {
    let triplets = triplets_from(&args.data)?;
    let dev = load_examples(&args.dev)?;
    let test = load_examples(&args.test)?;
    let (pairs, _) = entailment_pairs(test.clone());
    let seeds: Vec<u64> = match &args.seed_list {
        Some(list) => list.clone(),
        None => (0..args.seeds).map(|k| args.hyper.seed + k).collect(),
    };
    if seeds.is_empty() {
        return Err(Usage("at least one seed is required".into()).into());
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let config = TrainConfig { seed, ..train_config(&args.hyper, args.batch_size, args.lr) };
        let outcome = gausscse::train(&triplets, &dev, &config, init_model(&args.encoder, seed)?)?;
        let report = gausscse::evaluate(&outcome.model, &dev, &test)?;
        let dir = if pairs.is_empty() {
            f64::NAN
        } else {
            direction::direction_accuracy(&pairs, &outcome.model)?.accuracy
        };
        let dev_auprc = outcome.log.best_dev_auprc.ok_or_else(|| anyhow!("dev set is empty"))?;
        rows.push((seed, [dev_auprc, report.accuracy, report.auprc, report.threshold, dir]));
    }
    let mut out = output(args.out.as_ref())?;
    writeln!(out, "seed\tdev_auprc\taccuracy\tauprc\tthreshold\tdirection_accuracy")?;
    let mut mean = [0.0; 5];
    for (seed, values) in &rows {
        write!(out, "{seed}")?;
        for (m, v) in mean.iter_mut().zip(values) {
            write!(out, "\t{v}")?;
            *m += v / rows.len() as f64;
        }
        writeln!(out)?;
    }
    write!(out, "mean")?;
    for m in mean {
        write!(out, "\t{m}")?;
    }
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let examples = data::generate_synthetic(&SynthConfig {
        vocab: args.vocab,
        count: args.count,
        min_len: args.min_len,
        max_len: args.max_len,
        seed: args.seed,
    })?;
    match &args.out {
        Some(path) => save_jsonl(path, &examples)?,
        None => {
            let mut out = output(None)?;
            data::write_jsonl(&mut out, &examples)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_hist(args: &HistArgs) -> Result<()> {
    let mut pairs = load_examples(&args.data)?;
    if let Some(label) = args.label {
        pairs.retain(|p| p.label == label);
    }
    let hist = direction::length_ratio_histogram(&pairs, args.bin_width)?;
    let mut out = output(args.out.as_ref())?;
    hist.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

/// `(labels, predictions)` from an `index score label prediction` TSV.
fn read_predictions(path: &Path) -> Result<(Vec<bool>, Vec<bool>)> {
    let reader = BufReader::new(File::open(input(path)?)?);
    let (mut labels, mut predictions) = (Vec::new(), Vec::new());
    let flag = |s: Option<&str>, line: usize| match s {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        _ => Err(anyhow!("{}:{line}: expected 0 or 1", path.display())),
    };
    for (i, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        let mut cols = line.split('\t').skip(2);
        labels.push(flag(cols.next(), i + 1)?);
        predictions.push(flag(cols.next(), i + 1)?);
    }
    Ok((labels, predictions))
}

fn cmd_mcnemar(args: &McnemarArgs) -> Result<()> {
    let (labels_a, pred_a) = read_predictions(&args.a)?;
    let (labels_b, pred_b) = read_predictions(&args.b)?;
    if labels_a != labels_b {
        bail!("the two prediction files disagree on labels");
    }
    print_json(&nli::mcnemar(&pred_a, &pred_b, &labels_a)?)
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global()?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::EvalNli(a) => cmd_eval_nli(a),
        Command::EvalDirection(a) => cmd_eval_direction(a),
        Command::GridSearch(a) => cmd_grid(a),
        Command::Multiseed(a) => cmd_multiseed(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Hist(a) => cmd_hist(a),
        Command::Mcnemar(a) => cmd_mcnemar(a),
    }
}

fn main() -> ExitCode {
    let args: Vec<_> = std::env::args_os().collect();
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_owned()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let args = match config::expand(args.clone(), &names) {
        Ok(expanded) => expanded.unwrap_or(args),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
