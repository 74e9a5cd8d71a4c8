use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nbest_core::asr_sim::{generate_synthetic_corpus, NoiseProfile, TemplateSet};
use nbest_core::bpe::BpeVocabulary;
use nbest_core::checkpoint::{check_corpus_tags, load_checkpoint, save_checkpoint};
use nbest_core::classifier::{train_model, Model};
use nbest_core::config::RunConfig;
use nbest_core::corpus::{load_corpus, save_corpus};
use nbest_core::eval::{
    domain_records, evaluate, hypothesis_count_sweep, nbest_quality_stats, partition_by_agreement, sweep_csv,
    EvalReport,
};
use nbest_core::exec::Execution;
use nbest_core::integration::{predict_all, rerank_oracle_select, NBestList, StrategyConfig, StrategyKind};

#[derive(Parser)]
#[command(
    name = "nbest",
    version,
    about = "Domain and intent classification over ASR n-best lists"
)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE vocabulary from a corpus.
    BpeTrain(BpeTrainArgs),
    /// Generate a labelled corpus with simulated n-best lists.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with one strategy and write a JSON report.
    Eval(EvalArgs),
    /// Exact-match and better-than-first statistics of an n-best corpus.
    Stats(StatsArgs),
    /// Micro/macro F1 of one checkpoint across hypothesis budgets.
    Sweep(SweepArgs),
}

/// Settings shared by every model command; flags override `--config`.
#[derive(Args)]
struct RunFlags {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    /// domain or intent
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    merges: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    mlp_hidden: Option<String>,
    /// sgd or adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Defaults to NBEST_SEED, then 0.
    #[arg(long)]
    seed: Option<String>,
    /// token or char edit distance for rerank-oracle
    #[arg(long)]
    granularity: Option<String>,
    /// classifier or asr confidence for sort-by-score
    #[arg(long)]
    score_source: Option<String>,
    /// Keep only records of this domain (per-domain intent models).
    #[arg(long)]
    domain: Option<String>,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        self.resolve_over(RunConfig::from_env()?)
    }

    /// Layers the config file and then the flags over `cfg`.
    fn resolve_over(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("strategy", &self.strategy),
            ("label", &self.label),
            ("n", &self.n),
            ("merges", &self.merges),
            ("embed_dim", &self.embed_dim),
            ("hidden_dim", &self.hidden_dim),
            ("mlp_hidden", &self.mlp_hidden),
            ("optimizer", &self.optimizer),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("granularity", &self.granularity),
            ("score_source", &self.score_source),
            ("domain", &self.domain),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TextSource {
    Transcription,
    Nbest,
}

#[derive(Args)]
struct BpeTrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    merges: usize,
    /// Learn from transcriptions or from the top-n hypotheses.
    #[arg(long, value_enum, default_value = "transcription")]
    source: TextSource,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Template file; the built-in five-domain grammar when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Defaults to NBEST_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    substitution: Option<f64>,
    #[arg(long)]
    deletion: Option<f64>,
    #[arg(long)]
    insertion: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value = "utt-")]
    id_prefix: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Training corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary from `bpe-train`; learned from the corpus when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Model for the baseline that RErr is measured against; defaults to
    /// the evaluated checkpoint's own single-text path.
    #[arg(long)]
    baseline_checkpoint: Option<PathBuf>,
    /// Add agree/disagree partition reports.
    #[arg(long)]
    subsets: bool,
    /// Also write per-record predictions as TSV (id, tag, rank chosen by
    /// rerank-oracle).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// JSON report; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value = "token")]
    granularity: String,
    /// CSV table; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the full statistics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    ns: Vec<usize>,
    /// CSV table; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Evaluation defaults to the strategy and budget the model was trained with.
fn checkpoint_defaults(model: &Model) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_env()?;
    cfg.strategy = model.strategy();
    cfg.n = model.n();
    cfg.label = model.label();
    Ok(cfg)
}

fn scoped(corpus: Vec<NBestList>, cfg: &RunConfig) -> Vec<NBestList> {
    match &cfg.domain {
        Some(d) => domain_records(&corpus, d),
        None => corpus,
    }
}

fn bpe_train(args: BpeTrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let texts: Vec<&str> = match args.source {
        TextSource::Transcription => corpus.iter().map(NBestList::transcription).collect::<Result<_, _>>()?,
        TextSource::Nbest => corpus.iter().flat_map(|r| r.top(args.n)).collect(),
    };
    let vocab = BpeVocabulary::train(&texts, args.merges)?;
    vocab.save(&args.output)?;
    eprintln!(
        "{} units ({} merges) -> {}",
        vocab.len(),
        vocab.merges().len(),
        args.output.display()
    );
    Ok(())
}

fn simulate(args: SimulateArgs, exec: Execution) -> Result<()> {
    let templates = match &args.templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::builtin(),
    };
    let seed = match args.seed {
        Some(s) => s,
        None => RunConfig::from_env()?.seed,
    };
    let mut profile = NoiseProfile::moderate(seed);
    if let Some(v) = args.substitution {
        profile.substitution = v;
    }
    if let Some(v) = args.deletion {
        profile.deletion = v;
    }
    if let Some(v) = args.insertion {
        profile.insertion = v;
    }
    if let Some(v) = args.temperature {
        profile.temperature = v;
    }
    let corpus = generate_synthetic_corpus(&templates, args.count, args.n, &profile, &args.id_prefix, exec)?;
    save_corpus(&args.output, &corpus)?;
    eprintln!("{} records -> {}", corpus.len(), args.output.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let corpus = scoped(load_corpus(&args.corpus)?, &cfg);
    if corpus.is_empty() {
        bail!("no training records in {}", args.corpus.display());
    }
    let vocab = args.vocab.as_deref().map(BpeVocabulary::load).transpose()?;
    let (model, trace) = train_model(&corpus, &cfg.train_config(), vocab, None)?;
    save_checkpoint(&model, &args.output)?;
    for (epoch, loss) in trace.epoch_losses.iter().enumerate() {
        eprintln!("epoch {} loss {loss:.6}", epoch + 1);
    }
    eprintln!("{} model -> {}", model.strategy(), args.output.display());
    Ok(())
}

fn eval(args: EvalArgs, exec: Execution) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let cfg = args.run.resolve_over(checkpoint_defaults(&model)?)?;
    let corpus = scoped(load_corpus(&args.corpus)?, &cfg);
    check_corpus_tags(&model, &corpus)?;
    let strategy = cfg.strategy_config();
    let baseline_model: Model = match &args.baseline_checkpoint {
        Some(p) => {
            let b = load_checkpoint(p)?;
            check_corpus_tags(&b, &corpus)?;
            if b.tags() != model.tags() {
                bail!("baseline checkpoint has a different tag set");
            }
            b
        }
        None => model.clone(),
    };
    let baseline_cfg = StrategyConfig::new(StrategyKind::Baseline);

    let mut report = evaluate(&model, &corpus, &strategy, exec)?;
    let baseline = evaluate(&baseline_model, &corpus, &baseline_cfg, exec)?;
    if let Err(e) = report.compare_to(&baseline) {
        eprintln!("note: {e}");
    }
    if args.subsets {
        let (agree, disagree) = partition_by_agreement(&corpus)?;
        let part = |records: &[NBestList]| -> Result<Option<Box<EvalReport>>> {
            if records.is_empty() {
                return Ok(None);
            }
            let mut r = evaluate(&model, records, &strategy, exec)?;
            let b = evaluate(&baseline_model, records, &baseline_cfg, exec)?;
            let _ = r.compare_to(&b);
            Ok(Some(Box::new(r)))
        };
        report.agree = part(&agree)?;
        report.disagree = part(&disagree)?;
    }
    if let Some(path) = &args.predictions {
        let pred = predict_all(&model, &corpus, &strategy, exec)?;
        let mut lines = String::from("id\ttag\tselected_rank\n");
        for (&t, r) in pred.iter().zip(&corpus) {
            let selected = match strategy.kind {
                StrategyKind::RerankOracle => rerank_oracle_select(r, strategy.granularity, strategy.n)?.0.to_string(),
                _ => "-".to_string(),
            };
            lines.push_str(&format!("{}\t{}\t{selected}\n", r.id, model.tags().name(t)));
        }
        std::fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut json = report.to_json();
    json.push('\n');
    write_or_print(args.output.as_deref(), &json)
}

fn stats(args: StatsArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let stats = nbest_quality_stats(&corpus, args.n, args.granularity.parse()?)?;
    eprintln!(
        "{} records considered, {} skipped without transcription, {} with an exact match in the top {} ({} at rank 1)",
        stats.considered, stats.skipped, stats.matched, stats.n, stats.first_match_count
    );
    if let Some(p) = &args.json {
        let text = serde_json::to_string_pretty(&stats)? + "\n";
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    write_or_print(args.output.as_deref(), &stats.to_csv())
}

fn sweep(args: SweepArgs, exec: Execution) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let cfg = args.run.resolve_over(checkpoint_defaults(&model)?)?;
    let corpus = scoped(load_corpus(&args.corpus)?, &cfg);
    check_corpus_tags(&model, &corpus)?;
    if args.ns.contains(&0) {
        bail!("--ns values must be at least 1");
    }
    let strategy = cfg.strategy_config();
    let rows = hypothesis_count_sweep(&model, &corpus, &strategy, &args.ns, exec)?;
    write_or_print(args.output.as_deref(), &sweep_csv(&rows))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::BpeTrain(a) => bpe_train(a),
        Command::Simulate(a) => simulate(a, exec),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, exec),
        Command::Stats(a) => stats(a),
        Command::Sweep(a) => sweep(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
