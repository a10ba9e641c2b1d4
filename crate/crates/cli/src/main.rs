use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sln::analytics::{self, FeatureGroup};
use sln::eval::{evaluate_repeated, EvalOptions};
use sln::features::{export_features, import_features, FeatureTable, LeakagePolicy};
use sln::graph::{build_timeline, graph_metrics, Timeline};
use sln::ingest::{corpus_stats, ForumCorpus, Roster};
use sln::pipeline::{self, build_features, ingest_file, parse_groups, parse_window, FeatureConfig, InputFormat, RunConfig};
use sln::predictors::{self, ModelKind, ModelSpec, Sampling, TrainedModel};
use sln::synth::{synth_forum, SynthConfig};
use sln::topics::{fit_corpus, topic_table, write_top_words, TopicModel};
use sln::{Result, SlnError};

#[derive(Parser)]
#[command(name = "sln", version, about = "Social learning network construction and link prediction")]
struct Cli {
    /// Root random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or output directory for `run`. CSV outputs default to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a forum export, drop non-learner posts and write a normalized corpus.
    Ingest(IngestArgs),
    /// Build the link timeline or report snapshot statistics.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Fit the topic model or list its top words.
    #[command(subcommand)]
    Topics(TopicsCommand),
    /// Assemble per-pair feature series.
    Features(FeaturesArgs),
    /// Train one predictor on every pair.
    Train(TrainArgs),
    /// Cross-validate a predictor.
    Eval(EvalArgs),
    /// Descriptive analytics as CSV.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run the configured pipeline into the output directory.
    Run,
    /// Generate the synthetic forum fixture as a normalized corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "normalized")]
    format: InputFormat,
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    end: Option<String>,
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long, default_value = "course")]
    course_id: String,
}

fn parse_format(s: &str) -> std::result::Result<InputFormat, String> {
    s.parse().map_err(|e: SlnError| e.to_string())
}

#[derive(Subcommand)]
enum GraphCommand {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        intervals: Option<usize>,
    },
    Metrics {
        #[arg(long)]
        timeline: PathBuf,
        /// Interval number or `final`.
        #[arg(long, default_value = "final")]
        interval: String,
    },
}

#[derive(Subcommand)]
enum TopicsCommand {
    Fit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    TopWords {
        #[arg(long)]
        topics: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
    },
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    timeline: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Topic coverage threshold; defaults to 1/K.
    #[arg(long)]
    threshold: Option<f64>,
    /// Lp value for disconnected pairs; defaults to the learner count.
    #[arg(long)]
    sentinel: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    StrictPrior,
    Concurrent,
}

impl From<Policy> for LeakagePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::StrictPrior => LeakagePolicy::StrictPrior,
            Policy::Concurrent => LeakagePolicy::Concurrent,
        }
    }
}

#[derive(Args)]
struct TrainOptions {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Draw every training example once per epoch instead of balancing classes.
    #[arg(long)]
    proportional: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    options: TrainOptions,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: SlnError| e.to_string())
}

#[derive(Args)]
struct EvalArgs {
    /// A model name or a checkpoint whose spec is reused.
    #[arg(long)]
    model: String,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    dataset: Option<String>,
    #[command(flatten)]
    options: TrainOptions,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    Snr {
        #[arg(long)]
        features: PathBuf,
        /// Use every interval's values instead of the final interval's.
        #[arg(long)]
        pooled: bool,
    },
    Cdf {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        feature: String,
        #[arg(long)]
        pooled: bool,
    },
    Ablation {
        #[arg(long)]
        features: PathBuf,
        /// Feature groups joined by `+`, e.g. `nei+path`.
        #[arg(long)]
        groups: String,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        options: TrainOptions,
    },
    Gates {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Learner ids `u,v`; defaults to the latest-forming pair.
        #[arg(long)]
        pair: Option<String>,
    },
    Graph {
        #[arg(long)]
        timeline: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    learners: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    intervals: Option<usize>,
}

struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
}

impl Context {
    fn required_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| SlnError::InvalidArgument("--out is required for this command".into()))
    }

    /// CSV to `--out`, or stdout.
    fn emit(&self, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.out {
            Some(path) => {
                let file = std::fs::File::create(path).map_err(|source| SlnError::Io { path: path.clone(), source })?;
                let mut w = std::io::BufWriter::new(file);
                write(&mut w)
            }
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                write(&mut lock)
            }
        }
    }

    fn spec(&self, kind: ModelKind, o: &TrainOptions) -> ModelSpec {
        let mut spec = self.config.model_spec(kind);
        if let Some(e) = o.epochs {
            spec.epochs = e;
        }
        if let Some(b) = o.batch {
            spec.batch = b;
        }
        if let Some(lr) = o.lr {
            spec.lr = lr;
        }
        if o.proportional {
            spec.sampling = Sampling::Proportional;
        }
        spec
    }

    fn eval_options(&self, k: Option<usize>, repeats: Option<usize>, threshold: Option<f64>) -> EvalOptions {
        let mut o = self.config.eval_options();
        if let Some(k) = k {
            o.k = k;
        }
        if let Some(r) = repeats {
            o.repeats = r;
        }
        if let Some(t) = threshold {
            o.threshold = t;
        }
        o
    }
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    import_features(path)
}

fn pair_index(table: &FeatureTable, spec: &str) -> Result<usize> {
    let (a, b) = spec
        .split_once(',')
        .ok_or_else(|| SlnError::InvalidArgument(format!("--pair expects `u,v`, got `{spec}`")))?;
    let idx = |id: &str| {
        table
            .learners
            .iter()
            .position(|l| l == id)
            .ok_or_else(|| SlnError::UnknownLearner(id.to_string()))
    };
    let (u, v) = (idx(a.trim())?, idx(b.trim())?);
    let (u, v) = (u.min(v), u.max(v));
    table
        .series
        .iter()
        .position(|s| s.u == u && s.v == v)
        .ok_or_else(|| SlnError::UnknownPair(a.to_string(), b.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    let ctx = Context { config, out: cli.out };
    let config = &ctx.config;

    match cli.command {
        Command::Ingest(a) => {
            let roster = match &a.roster {
                Some(p) => Roster::load(p)?,
                None => Roster::default(),
            };
            let window = parse_window(a.start.as_deref(), a.end.as_deref())?;
            let corpus = ingest_file(&a.input, a.format, &a.course_id, window, &roster)?;
            corpus.save(ctx.required_out()?)?;
            let stats = corpus_stats(&corpus);
            eprintln!("{}", serde_json::to_string(&stats)?);
        }
        Command::Graph(GraphCommand::Build { corpus, intervals }) => {
            let corpus = ForumCorpus::load(&corpus)?;
            let timeline = build_timeline(&corpus, intervals.unwrap_or(config.intervals))?;
            timeline.save(ctx.required_out()?)?;
        }
        Command::Graph(GraphCommand::Metrics { timeline, interval }) => {
            let timeline = Timeline::load(&timeline)?;
            let i = if interval == "final" {
                timeline.intervals()
            } else {
                interval
                    .parse()
                    .ok()
                    .filter(|i| (1..=timeline.intervals()).contains(i))
                    .ok_or_else(|| SlnError::InvalidArgument(format!("--interval must be 1..={} or `final`", timeline.intervals())))?
            };
            let m = graph_metrics(&timeline.snapshot(i));
            ctx.emit(|w| analytics::write_graph_csv(&[(i, m)], w))?;
        }
        Command::Topics(TopicsCommand::Fit { corpus, k, iters }) => {
            let corpus = ForumCorpus::load(&corpus)?;
            let mut params = config.lda_params();
            if let Some(k) = k {
                params.k = k;
            }
            if let Some(n) = iters {
                params.iterations = n;
            }
            fit_corpus(&corpus, &params)?.save(ctx.required_out()?)?;
        }
        Command::Topics(TopicsCommand::TopWords { topics, n }) => {
            let model = TopicModel::load(&topics)?;
            let rows = topic_table(&model, n);
            ctx.emit(|w| write_top_words(&rows, w))?;
        }
        Command::Features(a) => {
            let timeline = Timeline::load(&a.timeline)?;
            let topics = TopicModel::load(&a.topics)?;
            let fc = FeatureConfig {
                policy: a.policy.map(Into::into).unwrap_or(config.features.policy),
                sentinel: a.sentinel.or(config.features.sentinel),
            };
            let threshold = a.threshold.unwrap_or(1.0 / topics.k as f64);
            let table = build_features(&timeline, &topics, threshold, &fc);
            export_features(&table, ctx.required_out()?)?;
        }
        Command::Train(a) => {
            let table = load_features(&a.features)?;
            let spec = ctx.spec(a.model, &a.options);
            let all: Vec<usize> = (0..table.series.len()).collect();
            let model = predictors::fit(&spec, &table, &all)?;
            model.save(ctx.required_out()?)?;
        }
        Command::Eval(a) => {
            let table = load_features(&a.features)?;
            let spec = if Path::new(&a.model).is_file() {
                let mut spec = TrainedModel::load(Path::new(&a.model))?.spec;
                if let Some(s) = cli.seed {
                    spec.seed = s;
                }
                spec
            } else {
                ctx.spec(a.model.parse()?, &a.options)
            };
            let options = ctx.eval_options(a.k, a.repeats, a.threshold);
            let dataset = a.dataset.unwrap_or_else(|| config.dataset.clone());
            let report = evaluate_repeated(&spec, &table, &dataset, options)?;
            ctx.emit(|w| report.write_csv(w))?;
        }
        Command::Analyze(cmd) => match cmd {
            AnalyzeCommand::Snr { features, pooled } => {
                let rows = analytics::snr_table(&load_features(&features)?, pooled)?;
                ctx.emit(|w| analytics::write_snr_csv(&rows, w))?;
            }
            AnalyzeCommand::Cdf { features, feature, pooled } => {
                let curves = analytics::cdf_export(&load_features(&features)?, &feature, pooled)?;
                ctx.emit(|w| analytics::write_cdf_csv(&curves, w))?;
            }
            AnalyzeCommand::Ablation { features, groups, k, options } => {
                let table = load_features(&features)?;
                let groups: Vec<FeatureGroup> = parse_groups(&groups)?;
                let base = ctx.spec(ModelKind::Crnn, &options);
                let report = analytics::ablation(&groups, &base, &table, &config.dataset, ctx.eval_options(k, None, None))?;
                ctx.emit(|w| report.write_csv(w))?;
            }
            AnalyzeCommand::Gates { model, features, pair } => {
                let model = TrainedModel::load(&model)?;
                let table = load_features(&features)?;
                let pair = match pair {
                    Some(p) => pair_index(&table, &p)?,
                    None => pipeline::default_trace_pair(&table)
                        .ok_or_else(|| SlnError::InvalidArgument("no formed pair to trace; pass --pair".into()))?,
                };
                let trace = analytics::gate_trace(&model, &table, pair)?;
                ctx.emit(|w| analytics::write_gate_csv(&trace, w))?;
            }
            AnalyzeCommand::Graph { timeline } => {
                let report = analytics::graph_report(&Timeline::load(&timeline)?);
                ctx.emit(|w| analytics::write_graph_csv(&report, w))?;
            }
        },
        Command::Run => {
            let out = pipeline::run_pipeline(config)?;
            for (name, r) in &out.reports {
                let (auc, sd) = r.auc();
                eprintln!("{name}: AUC {auc:.4} ± {sd:.4}");
            }
        }
        Command::Synth(a) => {
            let mut sc: SynthConfig = config.data.synth.clone();
            sc.seed = cli.seed.unwrap_or(sc.seed);
            if let Some(n) = a.learners {
                sc.learners = n;
            }
            if let Some(n) = a.threads {
                sc.threads = n;
            }
            sc.intervals = a.intervals.unwrap_or(config.intervals);
            synth_forum(&sc)?.save(ctx.required_out()?)?;
        }
    }
    Ok(())
}

fn error_json(e: &SlnError) -> serde_json::Value {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    if let SlnError::Stage { stage, .. } = e {
        v["stage"] = serde_json::Value::from(stage.as_str());
    }
    v
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": message.trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
