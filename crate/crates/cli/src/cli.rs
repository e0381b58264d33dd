//! Argument definitions and subcommand handlers.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use clmn::autodiff::read_checkpoint;
use clmn::bundle::{
    load_code_encoder, load_model, load_text_encoder, save_code_encoder, save_model,
    save_text_encoder,
};
use clmn::contrastive::ContrastiveConfig;
use clmn::data::{
    corpus_stats, extract_method_pairs, load_corpus, save_corpus, split, stats_by_repo,
    CorpusStats, KeyPolicy, ReviewSample, SplitSpec,
};
use clmn::fusion::{ClassWeightMode, ClassWeights, TrainConfig};
use clmn::java::{parse_compilation_unit, parse_method_source, serialize_tree, Ast};
use clmn::metrics::{report_csv, ReportRow};

use crate::settings::Settings;
use crate::workflow::{self, Arch, Init, PretrainOptions, Sides, TransferOptions};

#[derive(Debug, Parser)]
#[command(
    name = "clmn",
    version,
    about = "Contrastive multi-modal code review classifier"
)]
pub struct Cli {
    /// Flat JSON file of option values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run seed (default: config `seed`, then $CLMN_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Accept and ignore unknown keys in corpus records.
    #[arg(long, global = true)]
    pub lenient_keys: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Print the tree or graph of each method in a Java file.
    Parse(ParseArgs),
    /// Contrastive pretraining of one encoder.
    #[command(subcommand)]
    Pretrain(PretrainCommand),
    /// Fine-tune the full classifier.
    Train(TrainArgs),
    /// Score a trained model on a corpus.
    Eval(EvalArgs),
    /// Cross-project pretraining against self-pretraining on a target corpus.
    TransferEval(TransferArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Sample count and reject rate.
    Stats(StatsArgs),
    /// Pair changed methods of two versions of a file into corpus records.
    Extract(ExtractArgs),
    /// Deterministic train/test split.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub path: PathBuf,
    /// One row per repository plus a total.
    #[arg(long)]
    pub by_repo: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    pub original: PathBuf,
    pub revised: PathBuf,
    #[arg(long)]
    pub comment: String,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub label: u8,
    #[arg(long)]
    pub out: PathBuf,
    /// Repository name stored in each record (default: the original file's stem).
    #[arg(long)]
    pub repo: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub path: PathBuf,
    /// Training share, strictly between 0 and 1 [default: 0.8].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Split each label separately [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratified: Option<bool>,
    /// [default: <stem>.train.jsonl next to the input]
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// [default: <stem>.test.jsonl next to the input]
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dump {
    Ast,
    Simplified,
    Graph,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// A Java file, or a single method declaration.
    pub file: PathBuf,
    #[arg(long, group = "dump")]
    pub dump_ast: bool,
    #[arg(long, group = "dump")]
    pub dump_simplified: bool,
    #[arg(long, group = "dump")]
    pub dump_graph: bool,
    /// Only methods with this name.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ArchArgs {
    /// Embedding width of freshly created encoders [default: 64].
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Recurrent width; encoder output is twice this [default: 64].
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Graph convolution layers [default: 4].
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    /// Dropout probability [default: 0.1].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Comment tokens kept [default: 64].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Minimum token frequency for the vocabulary [default: 1].
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SkipGramArgs {
    /// Skip-gram epochs for code symbol embeddings, 0 to skip [default: 1].
    #[arg(long)]
    pub skipgram_epochs: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub skipgram_window: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub skipgram_negatives: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; vocabulary and settings are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log (CSV epoch,mean_loss) [default: stdout].
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// Temperature [default: 0.05].
    #[arg(long)]
    pub tau: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Subcommand)]
pub enum PretrainCommand {
    Code {
        #[command(flatten)]
        common: PretrainArgs,
        #[command(flatten)]
        skipgram: SkipGramArgs,
        /// Fragments used [default: both].
        #[arg(long, value_enum)]
        sides: Option<Sides>,
    },
    Text {
        #[command(flatten)]
        common: PretrainArgs,
    },
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// balanced, none, or explicit `reject,accept` weights [default: balanced].
    #[arg(long)]
    pub class_weight: Option<String>,
    /// L2 coefficient [default: 1e-5].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train the head only.
    #[arg(long)]
    pub freeze_encoders: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out corpus; without it a stratified share of --corpus is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Share held out when --val is absent, 0 for none [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, required_unless_present = "partial")]
    pub code_ckpt: Option<PathBuf>,
    #[arg(long, required_unless_present = "partial")]
    pub text_ckpt: Option<PathBuf>,
    /// Accept checkpoints that cover only part of the model; the rest is
    /// initialized fresh.
    #[arg(long)]
    pub partial: bool,
    /// Keep loaded vocabularies as they are instead of adding training tokens.
    #[arg(long)]
    pub fixed_vocab: bool,
    /// Zero the comment vector.
    #[arg(long)]
    pub no_text: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Metric history (CSV epoch,train_loss,val_f1,val_mcc) [default: stdout].
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// [default: csv]
    #[arg(long, value_enum)]
    pub report: Option<ReportFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub pretrain_corpus: PathBuf,
    #[arg(long)]
    pub target_corpus: PathBuf,
    /// Training share of the target corpus [default: 0.8].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Repetitions with seeds seed, seed+1, ... [default: 1].
    #[arg(long)]
    pub runs: Option<u64>,
    /// [default: 0.05]
    #[arg(long)]
    pub tau: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub pretrain_batch: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    /// [default: both]
    #[arg(long, value_enum)]
    pub sides: Option<Sides>,
    #[command(flatten)]
    pub skipgram: SkipGramArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the command and maps the outcome to an exit code:
/// 0 success, 1 runtime failure, 2 usage error.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.seed(cli.seed)?;
    let policy = if settings.pick(cli.lenient_keys.then_some(true), "lenient-keys", false)? {
        KeyPolicy::Lenient
    } else {
        KeyPolicy::Strict
    };
    let ctx = Ctx {
        settings,
        seed,
        policy,
    };
    match cli.command {
        Command::Dataset(DatasetCommand::Stats(a)) => ctx.stats(a),
        Command::Dataset(DatasetCommand::Extract(a)) => extract(a),
        Command::Dataset(DatasetCommand::Split(a)) => ctx.split(a),
        Command::Parse(a) => parse(a),
        Command::Pretrain(PretrainCommand::Code {
            common,
            skipgram,
            sides,
        }) => ctx.pretrain(common, Some((skipgram, sides))),
        Command::Pretrain(PretrainCommand::Text { common }) => ctx.pretrain(common, None),
        Command::Train(a) => ctx.train(a),
        Command::Eval(a) => ctx.eval(a),
        Command::TransferEval(a) => ctx.transfer(a),
    }
}

/// Writes `text` atomically to `out`, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => clmn::io::write_atomic(p, text.as_bytes())
            .with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn stats_line(s: &CorpusStats) -> String {
    format!(
        "{},{},{:.6}",
        s.sample_count, s.rejected_count, s.reject_rate
    )
}

fn extract(a: ExtractArgs) -> Result<()> {
    let read =
        |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let pairs = extract_method_pairs(&read(&a.original)?, &read(&a.revised)?)?;
    let stem = a
        .original
        .file_stem()
        .map_or_else(|| "file".to_string(), |s| s.to_string_lossy().into_owned());
    let repo = a.repo.unwrap_or_else(|| stem.clone());
    let samples: Vec<ReviewSample> = pairs
        .iter()
        .map(|p| {
            ReviewSample::from_sources(
                &format!("{stem}:{}", p.signature()),
                &repo,
                &p.original.source,
                &p.revised.source,
                &a.comment,
                a.label,
            )
        })
        .collect();
    if samples.is_empty() {
        log::warn!("no changed methods found");
    }
    save_corpus(&samples, &a.out)?;
    log::info!("wrote {} records to {}", samples.len(), a.out.display());
    Ok(())
}

fn parse(a: ParseArgs) -> Result<()> {
    let source = std::fs::read_to_string(&a.file)
        .with_context(|| format!("reading {}", a.file.display()))?;
    let dump = if a.dump_ast {
        Dump::Ast
    } else if a.dump_graph {
        Dump::Graph
    } else {
        Dump::Simplified
    };
    let mut methods: Vec<(String, Ast)> = Vec::new();
    match parse_compilation_unit(&source) {
        Ok(found) if !found.is_empty() => {
            for m in found.into_iter().filter(|m| m.has_body) {
                if a.method.as_ref().is_some_and(|n| *n != m.name) {
                    continue;
                }
                let ast = parse_method_source(&m.source)?;
                methods.push((format!("{}({})", m.name, m.param_types.join(",")), ast));
            }
        }
        // not a class body: try a lone method declaration
        _ => methods.push(("method".into(), parse_method_source(&source)?)),
    }
    let mut out = String::new();
    for (name, ast) in &methods {
        out.push_str(&format!("# {name}\n"));
        match dump {
            Dump::Ast => out.push_str(&serialize_tree(ast)),
            Dump::Simplified => out.push_str(&serialize_tree(&ast.simplify())),
            Dump::Graph => {
                let g = ast.simplify().to_code_graph();
                for (i, l) in g.labels().iter().enumerate() {
                    out.push_str(&format!("{i}\t{l}\n"));
                }
                let mut edges = Vec::new();
                for i in 0..g.len() {
                    for j in i + 1..g.len() {
                        if g.edge(i, j) {
                            edges.push(format!("{i}-{j}"));
                        }
                    }
                }
                out.push_str(&format!("edges\t{}\n", edges.join(" ")));
            }
        }
        if !out.ends_with('\n') {
            out.push('\n');
        }
    }
    emit(a.out.as_deref(), &out)
}

fn parse_class_weight(text: &str) -> Result<ClassWeightMode> {
    match text.trim() {
        "balanced" => Ok(ClassWeightMode::Balanced),
        "none" => Ok(ClassWeightMode::None),
        other => {
            let parts: Vec<&str> = other.split(',').collect();
            let [r, a] = parts.as_slice() else {
                bail!("class weight must be balanced, none or `reject,accept`, got {other:?}");
            };
            let r: f64 = r
                .trim()
                .parse()
                .with_context(|| format!("bad reject weight {r:?}"))?;
            let a: f64 = a
                .trim()
                .parse()
                .with_context(|| format!("bad accept weight {a:?}"))?;
            Ok(ClassWeightMode::Explicit(ClassWeights::new(r, a)?))
        }
    }
}

struct Ctx {
    settings: Settings,
    seed: u64,
    policy: KeyPolicy,
}

impl Ctx {
    fn corpus(&self, path: &Path) -> Result<Vec<ReviewSample>> {
        load_corpus(path, self.policy).with_context(|| format!("loading {}", path.display()))
    }

    fn arch(&self, a: &ArchArgs) -> Result<Arch> {
        let d = Arch::default();
        let s = &self.settings;
        Ok(Arch {
            embed_dim: s.pick(a.embed_dim, "embed-dim", d.embed_dim)?,
            hidden_dim: s.pick(a.hidden_dim, "hidden-dim", d.hidden_dim)?,
            gcn_layers: s.pick(a.gcn_layers, "gcn-layers", d.gcn_layers)?,
            dropout_p: s.pick(a.dropout, "dropout", d.dropout_p)?,
            max_len: s.pick(a.max_len, "max-len", d.max_len)?,
            min_count: s.pick(a.min_count, "min-count", d.min_count)?,
        })
    }

    fn sides(&self, flag: Option<Sides>) -> Result<Sides> {
        match self.settings.lookup::<String>(None, "sides")? {
            Some(text) if flag.is_none() => {
                Sides::from_str(&text, true).map_err(|e| anyhow::anyhow!("config key `sides`: {e}"))
            }
            _ => Ok(flag.unwrap_or(Sides::Both)),
        }
    }

    fn skipgram(&self, a: &SkipGramArgs, opts: &mut PretrainOptions) -> Result<()> {
        let s = &self.settings;
        opts.skipgram_epochs =
            s.pick(a.skipgram_epochs, "skipgram-epochs", opts.skipgram_epochs)?;
        opts.skipgram_window =
            s.pick(a.skipgram_window, "skipgram-window", opts.skipgram_window)?;
        opts.skipgram_negatives = s.pick(
            a.skipgram_negatives,
            "skipgram-negatives",
            opts.skipgram_negatives,
        )?;
        Ok(())
    }

    fn train_config(&self, a: &FitArgs) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let s = &self.settings;
        let class_weights = match s.lookup(a.class_weight.clone(), "class-weight")? {
            Some(text) => parse_class_weight(&text)?,
            None => d.class_weights,
        };
        let cfg = TrainConfig {
            lambda: s.pick(a.lambda, "lambda", d.lambda)?,
            lr: s.pick(a.lr, "lr", d.lr)?,
            batch_size: s.pick(a.batch, "batch", d.batch_size)?,
            epochs: s.pick(a.epochs, "epochs", d.epochs)?,
            seed: self.seed,
            class_weights,
            freeze_encoders: s.pick(a.freeze_encoders.then_some(true), "freeze-encoders", false)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn stats(&self, a: StatsArgs) -> Result<()> {
        let samples = self.corpus(&a.path)?;
        let total = corpus_stats(&samples)?;
        let mut out = String::new();
        if a.by_repo {
            out.push_str("repo,samples,rejected,reject_rate\n");
            for (repo, s) in stats_by_repo(&samples)? {
                out.push_str(&format!("{repo},{}\n", stats_line(&s)));
            }
            out.push_str(&format!("all,{}\n", stats_line(&total)));
        } else {
            out.push_str("samples,rejected,reject_rate\n");
            out.push_str(&stats_line(&total));
            out.push('\n');
        }
        emit(a.out.as_deref(), &out)
    }

    fn split(&self, a: SplitArgs) -> Result<()> {
        let samples = self.corpus(&a.path)?;
        let spec = SplitSpec {
            train_fraction: self.settings.pick(a.fraction, "fraction", 0.8)?,
            seed: self.seed,
            stratified: self.settings.pick(a.stratified, "stratified", true)?,
        };
        let (train, test) = split(&samples, &spec)?;
        let stem = a
            .path
            .file_stem()
            .map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned());
        let beside = |suffix: &str| a.path.with_file_name(format!("{stem}.{suffix}.jsonl"));
        let train_out = a.train_out.unwrap_or_else(|| beside("train"));
        let test_out = a.test_out.unwrap_or_else(|| beside("test"));
        save_corpus(&train, &train_out)?;
        save_corpus(&test, &test_out)?;
        emit(
            None,
            &format!(
                "split,samples,path\ntrain,{},{}\ntest,{},{}\n",
                train.len(),
                train_out.display(),
                test.len(),
                test_out.display()
            ),
        )
    }

    fn pretrain_options(&self, a: &PretrainArgs) -> Result<PretrainOptions> {
        let d = ContrastiveConfig::default();
        let s = &self.settings;
        let contrastive = ContrastiveConfig {
            tau: s.pick(a.tau, "tau", d.tau)?,
            batch_size: s.pick(a.batch, "batch", d.batch_size)?,
            epochs: s.pick(a.epochs, "epochs", d.epochs)?,
            lr: s.pick(a.lr, "lr", d.lr)?,
            seed: self.seed,
        };
        contrastive.validate()?;
        Ok(PretrainOptions {
            contrastive,
            ..PretrainOptions::default()
        })
    }

    fn pretrain(&self, a: PretrainArgs, code: Option<(SkipGramArgs, Option<Sides>)>) -> Result<()> {
        let samples = self.corpus(&a.corpus)?;
        let arch = self.arch(&a.arch)?;
        let mut opts = self.pretrain_options(&a)?;
        let history = match code {
            Some((sg, sides)) => {
                self.skipgram(&sg, &mut opts)?;
                let p = workflow::pretrain_code(&samples, self.sides(sides)?, &arch, &opts)?;
                save_code_encoder(&p.encoder, &p.store, &a.out)?;
                p.history
            }
            None => {
                let p = workflow::pretrain_text(&samples, &arch, &opts)?;
                save_text_encoder(&p.encoder, &p.store, &a.out)?;
                p.history
            }
        };
        emit(a.loss_out.as_deref(), &workflow::loss_csv(&history))
    }

    fn train(&self, a: TrainArgs) -> Result<()> {
        let corpus = self.corpus(&a.corpus)?;
        let arch = self.arch(&a.arch)?;
        let cfg = self.train_config(&a.fit)?;
        let (train_set, val_set) = match &a.val {
            Some(p) => (corpus, self.corpus(p)?),
            None => {
                let fraction = self.settings.pick(a.val_fraction, "val-fraction", 0.2)?;
                if fraction == 0.0 {
                    (corpus, Vec::new())
                } else {
                    let spec = SplitSpec {
                        train_fraction: 1.0 - fraction,
                        seed: self.seed,
                        stratified: true,
                    };
                    split(&corpus, &spec)?
                }
            }
        };
        let partial = a.partial;
        let check_exact = |path: &Path, prefix: &str| -> Result<()> {
            if partial {
                return Ok(());
            }
            let dotted = format!("{prefix}.");
            if let Some(extra) = read_checkpoint::<f32>(path)?
                .keys()
                .find(|n| !n.starts_with(&dotted))
            {
                bail!(
                    "{}: parameter {extra} is not part of the {prefix} encoder (use --partial to ignore it)",
                    path.display()
                );
            }
            Ok(())
        };
        let mut init = Init::default();
        if let Some(p) = &a.code_ckpt {
            check_exact(p, "code")?;
            init.code = Some(
                load_code_encoder(p, self.seed)
                    .with_context(|| format!("loading {}", p.display()))?,
            );
        }
        if let Some(p) = &a.text_ckpt {
            check_exact(p, "text")?;
            init.text = Some(
                load_text_encoder(p, self.seed)
                    .with_context(|| format!("loading {}", p.display()))?,
            );
        }
        let fixed = self
            .settings
            .pick(a.fixed_vocab.then_some(true), "fixed-vocab", false)?;
        let no_text = self
            .settings
            .pick(a.no_text.then_some(true), "no-text", false)?;
        let (model, mut store) =
            workflow::assemble(&train_set, init, &arch, !fixed, !no_text, self.seed)?;
        let history = workflow::fit(&model, &mut store, &train_set, &val_set, &cfg)?;
        save_model(&model, &store, &a.out)?;
        emit(a.history.as_deref(), &workflow::history_csv(&history))
    }

    fn eval(&self, a: EvalArgs) -> Result<()> {
        let samples = self.corpus(&a.corpus)?;
        let (model, store) = load_model(&a.model, self.seed)
            .with_context(|| format!("loading {}", a.model.display()))?;
        let rows = workflow::report_rows(&model, &store, &samples)?;
        let format = match self.settings.lookup::<String>(None, "report")? {
            Some(text) if a.report.is_none() => ReportFormat::from_str(&text, true)
                .map_err(|e| anyhow::anyhow!("config key `report`: {e}"))?,
            _ => a.report.unwrap_or(ReportFormat::Csv),
        };
        let text = match format {
            ReportFormat::Csv => report_csv(&rows),
            ReportFormat::Text => report_text(&rows),
        };
        emit(a.out.as_deref(), &text)
    }

    fn transfer(&self, a: TransferArgs) -> Result<()> {
        let source = self.corpus(&a.pretrain_corpus)?;
        let target = self.corpus(&a.target_corpus)?;
        let s = &self.settings;
        let d = ContrastiveConfig::default();
        let mut pretrain = PretrainOptions {
            contrastive: ContrastiveConfig {
                tau: s.pick(a.tau, "tau", d.tau)?,
                batch_size: s.pick(a.pretrain_batch, "pretrain-batch", d.batch_size)?,
                epochs: s.pick(a.pretrain_epochs, "pretrain-epochs", d.epochs)?,
                lr: s.pick(a.pretrain_lr, "pretrain-lr", d.lr)?,
                seed: self.seed,
            },
            ..PretrainOptions::default()
        };
        pretrain.contrastive.validate()?;
        self.skipgram(&a.skipgram, &mut pretrain)?;
        let opts = TransferOptions {
            arch: self.arch(&a.arch)?,
            pretrain,
            train: self.train_config(&a.fit)?,
            sides: self.sides(a.sides)?,
            train_fraction: s.pick(a.fraction, "fraction", 0.8)?,
        };
        let runs: u64 = s.pick(a.runs, "runs", 1)?;
        if runs == 0 {
            bail!("--runs must be at least 1");
        }
        let results = (0..runs)
            .map(|r| workflow::transfer_eval(&source, &target, &opts, self.seed.wrapping_add(r)))
            .collect::<Result<Vec<_>>>()?;
        let (cross, own) = workflow::mean_f1(&results);
        log::info!("mean f1 over {runs} runs: cross {cross:.4}, own {own:.4}");
        emit(a.out.as_deref(), &workflow::transfer_csv(&results))
    }
}

fn report_text(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.repo.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>5}  {:>5}  {:>5}  {:>5}  {:>9}  {:>6}  {:>6}  {:>6}\n",
        "repo", "samples", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "mcc"
    );
    for r in rows {
        let cm = &r.cm;
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>5}  {:>5}  {:>5}  {:>5}  {:>9.4}  {:>6.4}  {:>6.4}  {:>6.4}\n",
            r.repo,
            cm.total(),
            cm.tp,
            cm.fp,
            cm.fn_,
            cm.tn,
            cm.precision(),
            cm.recall(),
            cm.f1(),
            cm.mcc()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weight_forms() {
        assert_eq!(
            parse_class_weight("balanced").unwrap(),
            ClassWeightMode::Balanced
        );
        assert_eq!(parse_class_weight("none").unwrap(), ClassWeightMode::None);
        assert_eq!(
            parse_class_weight("2, 0.5").unwrap(),
            ClassWeightMode::Explicit(ClassWeights {
                reject: 2.0,
                accept: 0.5
            })
        );
        assert!(parse_class_weight("1").is_err());
        assert!(parse_class_weight("a,b").is_err());
        assert!(parse_class_weight("-1,1").is_err());
    }

    #[test]
    fn usage_errors() {
        assert!(Cli::try_parse_from(["clmn", "frobnicate"]).is_err());
        assert!(Cli::try_parse_from(["clmn", "dataset", "stats", "x", "--bogus"]).is_err());
        // both checkpoints are needed unless --partial
        assert!(Cli::try_parse_from([
            "clmn",
            "train",
            "--corpus",
            "c",
            "--out",
            "m",
            "--code-ckpt",
            "k"
        ])
        .is_err());
        assert!(
            Cli::try_parse_from(["clmn", "train", "--corpus", "c", "--out", "m", "--partial"])
                .is_ok()
        );
        assert!(Cli::try_parse_from(["clmn", "parse", "f", "--dump-ast", "--dump-graph"]).is_err());
        let c = Cli::try_parse_from(["clmn", "dataset", "split", "x", "--stratified"]).unwrap();
        assert!(matches!(
            c.command,
            Command::Dataset(DatasetCommand::Split(SplitArgs {
                stratified: Some(true),
                ..
            }))
        ));
    }
}
