use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crowdscope_core::cluster::Linkage;
use crowdscope_core::corpus::TermWeighting;
use crowdscope_core::layout::{scenes_svg, SceneStyle};
use crowdscope_core::pipeline::{self, PipelineConfig, RunReport};
use crowdscope_core::query::{self, QueryParams};
use crowdscope_core::sentiment::StatsScope;
use crowdscope_core::store::Store;
use crowdscope_service::AppState;

/// Cluster microblog users per time step, score sentiment and explore the
/// results as multilevel tag clouds.
#[derive(Parser, Debug)]
#[command(name = "crowdscope", version)]
struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,

    /// Log more (repeat for debug output).
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read posts and store per-step user profiles.
    Ingest(PipelineArgs),
    /// Cluster every step of an ingested dataset.
    Cluster(PipelineArgs),
    /// Score sentiment of a clustered dataset and mark it complete.
    Sentiment(PipelineArgs),
    /// Ingest, cluster and score in one go.
    Run(PipelineArgs),
    /// Write the scenes of a query window as JSON or SVG.
    Export(ExportArgs),
    /// Serve the HTTP API over a store.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// Dataset id inside the store.
    #[arg(long)]
    dataset: Option<String>,
    /// Store directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Input glob of NDJSON (or .gz) post files; repeatable.
    #[arg(long = "input", short = 'i')]
    inputs: Vec<String>,
    /// Stoplist file, one term per line; repeatable.
    #[arg(long = "stoplist")]
    stoplists: Vec<PathBuf>,
    /// Time step length, e.g. 1d or 6h.
    #[arg(long)]
    step: Option<String>,
    /// Start of the first step (RFC 3339).
    #[arg(long)]
    start: Option<String>,
    /// Number of steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Random fractions per step.
    #[arg(long, short = 'p')]
    fractions: Option<usize>,
    /// Leaf clusters per step.
    #[arg(long, short = 'k')]
    leaves: Option<usize>,
    /// Clusters kept per fraction.
    #[arg(long)]
    k_low: Option<usize>,
    #[arg(long)]
    linkage: Option<Linkage>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tags stored per cluster.
    #[arg(long)]
    tag_count: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
    /// Positive sentiment lexicon.
    #[arg(long)]
    lexicon_pos: Option<PathBuf>,
    /// Negative sentiment lexicon.
    #[arg(long)]
    lexicon_neg: Option<PathBuf>,
    /// Population for sentiment means and deviations.
    #[arg(long, value_enum)]
    sentiment_scope: Option<Scope>,
    /// Label steps t1..tN instead of by date.
    #[arg(long)]
    obfuscate_labels: bool,
    /// Default match threshold recorded for queries.
    #[arg(long)]
    theta: Option<f64>,
    /// Also write the run report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weighting {
    Tf,
    Tfidf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scope {
    Global,
    PerStep,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Svg,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// search, similar, positive, negative or posneg.
    #[arg(long)]
    mode: String,
    /// Search term.
    #[arg(long)]
    q: Option<String>,
    /// Step of the reference node in similar mode.
    #[arg(long = "node-step")]
    node_step: Option<usize>,
    /// Reference node in similar mode.
    #[arg(long)]
    node: Option<usize>,
    /// First step of the window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Window length; up to six steps when absent.
    #[arg(long)]
    len: Option<usize>,
    /// treemap or list.
    #[arg(long, default_value = "treemap")]
    view: String,
    #[arg(long, default_value_t = query::DEFAULT_WORD_CAP)]
    word_cap: usize,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Allowed CORS origin; repeatable. Any origin when absent.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl PipelineArgs {
    fn apply(self, config: &mut PipelineConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(config.dataset, self.dataset);
        set!(config.store, self.store);
        if !self.inputs.is_empty() {
            config.inputs = self.inputs;
        }
        if !self.stoplists.is_empty() {
            config.stoplists = self.stoplists;
        }
        set!(config.time.step, self.step);
        if self.start.is_some() {
            config.time.start = self.start;
        }
        if self.steps.is_some() {
            config.time.count = self.steps;
        }
        set!(config.clustering.p, self.fractions);
        set!(config.clustering.k, self.leaves);
        if self.k_low.is_some() {
            config.clustering.k_low = self.k_low;
        }
        set!(config.clustering.linkage, self.linkage);
        set!(config.clustering.seed, self.seed);
        set!(config.clustering.tag_count, self.tag_count);
        set!(
            config.clustering.weighting,
            self.weighting.map(|w| match w {
                Weighting::Tf => TermWeighting::Tf,
                Weighting::Tfidf => TermWeighting::TfIdf,
            })
        );
        if self.lexicon_pos.is_some() {
            config.sentiment.positive = self.lexicon_pos;
        }
        if self.lexicon_neg.is_some() {
            config.sentiment.negative = self.lexicon_neg;
        }
        set!(
            config.sentiment.scope,
            self.sentiment_scope.map(|s| match s {
                Scope::Global => StatsScope::Global,
                Scope::PerStep => StatsScope::PerStep,
            })
        );
        if self.obfuscate_labels {
            config.obfuscate_labels = true;
        }
        set!(config.theta, self.theta);
    }
}

fn run_stage(
    cli_config: Option<&PathBuf>,
    args: PipelineArgs,
    stage: fn(&PipelineConfig) -> crowdscope_core::Result<RunReport>,
) -> Result<()> {
    let mut config = load_config(cli_config)?;
    let report_path = args.report.clone();
    args.apply(&mut config);
    let report = stage(&config)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    if let Some(path) = report_path {
        fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    std::io::stdout().write_all(json.as_bytes())?;
    Ok(())
}

fn export(cli_config: Option<&PathBuf>, args: ExportArgs) -> Result<()> {
    let config = load_config(cli_config)?;
    let store = Store::new(args.store.unwrap_or(config.store));
    let dataset = args.dataset.unwrap_or(config.dataset);
    let params = QueryParams {
        mode: Some(args.mode),
        q: args.q,
        step: args.node_step,
        node: args.node,
        theta: args.theta,
        start: Some(args.start),
        len: args.len,
        view: Some(args.view),
        word_cap: Some(args.word_cap),
    };
    let q = params.window_query()?;
    let ds = store.load_dataset(&dataset)?;
    let style = SceneStyle::default();
    let response = query::window(&ds, &q, &style)?;
    let bytes = match args.format {
        Format::Json => query::to_json_bytes(&response),
        Format::Svg => scenes_svg(&response.scenes, &style).into_bytes(),
    };
    match args.out {
        Some(path) => {
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn serve(cli_config: Option<&PathBuf>, args: ServeArgs) -> Result<()> {
    let config = load_config(cli_config)?;
    let store = Store::new(args.store.unwrap_or(config.store));
    if !store.root().is_dir() {
        bail!("store directory {} does not exist", store.root().display());
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .context("bad listen address")?;
    let state = Arc::new(AppState::new(store));
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(crowdscope_service::serve(addr, state, &args.cors_origins))?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let config = cli.config.as_ref();
    let result = match cli.command {
        Command::Ingest(args) => run_stage(config, args, pipeline::run_ingest),
        Command::Cluster(args) => run_stage(config, args, pipeline::run_cluster),
        Command::Sentiment(args) => run_stage(config, args, pipeline::run_sentiment),
        Command::Run(args) => run_stage(config, args, pipeline::run_pipeline),
        Command::Export(args) => export(config, args),
        Command::Serve(args) => serve(config, args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
