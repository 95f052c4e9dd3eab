use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use boxcf::{
    decompose_with, generate_model, ingest_dump, presort_dimensions, read_canonical,
    regions_to_json_lines, sample_validate, to_canonical_json, AggregationKind, CfQuery,
    DecomposeOptions, DumpFormat, DumpOptions, EnsembleModel, Explainer, RandomModelSpec,
    SearchOptions, TreeClassMap,
};
use boxcf_cli::args::{self, QueryFlags};
use boxcf_cli::render;
use boxcf_cli::request::{answer_cf, answer_set, CfRequest, Reply};
use boxcf_cli::service::{router, AppState, ServiceConfig};
use boxcf_cli::WORKERS_ENV;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "boxcf", version, about = "Exact counterfactuals for tree ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a tree dump into the canonical leaf-box model.
    Convert(ConvertArgs),
    /// Find the nearest counterfactual of a query point.
    Cf(CfArgs),
    /// Evaluate a model at a point.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = args::parse_point, allow_hyphen_values = true)]
        x: ::std::vec::Vec<f64>,
    },
    /// Write the pure-region decomposition as JSON lines.
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = boxcf::DEFAULT_REGION_CAP)]
        max_regions: usize,
        #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
        workers: usize,
    },
    /// Check a model (and optionally its decomposition) at random points.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also decompose the model and check every region.
        #[arg(long)]
        regions: bool,
    },
    /// Write a random canonical model.
    Generate(GenerateArgs),
    /// Serve the HTTP query interface.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Identity,
    Logistic,
    Softmax,
}

impl From<Aggregation> for AggregationKind {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Identity => AggregationKind::IdentitySum,
            Aggregation::Logistic => AggregationKind::LogisticSum,
            Aggregation::Softmax => AggregationKind::SoftmaxSum,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "gbdt-json-dump")]
    format: DumpFormat,
    #[arg(long, value_enum, default_value = "identity")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    base_score: f64,
    #[arg(long)]
    dims: Option<usize>,
    /// Comma-separated feature names.
    #[arg(long)]
    feature_names: Option<String>,
    /// Comma-separated class of each tree; round-robin when absent.
    #[arg(long)]
    tree_classes: Option<String>,
}

#[derive(Args)]
struct CfArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON query file; flags override its fields.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, value_parser = args::parse_point, allow_hyphen_values = true)]
    x: Option<::std::vec::Vec<f64>>,
    #[arg(long)]
    target_class: Option<usize>,
    /// Score interval `LO:HI`.
    #[arg(long, value_parser = args::parse_interval, allow_hyphen_values = true)]
    target_interval: Option<(f64, f64)>,
    /// Probability threshold `EPS[:below|above]`.
    #[arg(long, value_parser = args::parse_threshold)]
    threshold: Option<boxcf::CfTarget>,
    /// Target the prediction at x within this tolerance; needs --radius.
    #[arg(long)]
    epsilon: Option<f64>,
    /// `D=V`: set x[D] to V and keep it fixed.
    #[arg(long, value_parser = args::parse_assignment, allow_hyphen_values = true)]
    fix: Vec<(usize, f64)>,
    /// `D=W`: cost weight of dimension D.
    #[arg(long, value_parser = args::parse_assignment)]
    weight: Vec<(usize, f64)>,
    /// List every target region within this squared distance.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    split_depth: Option<usize>,
    #[arg(long)]
    bound_prune: bool,
    /// Search budget in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Include search statistics in the output.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `N` or `LO:HI`
    #[arg(long, value_parser = args::parse_range, default_value = "1:8")]
    trees: (usize, usize),
    #[arg(long, value_parser = args::parse_range, default_value = "1:3")]
    depth: (usize, usize),
    #[arg(long, value_parser = args::parse_range, default_value = "1:4")]
    dims: (usize, usize),
    #[arg(long, value_enum, default_value = "logistic")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    threshold_pool: usize,
    #[arg(long, default_value_t = 0.1)]
    early_leaf: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    base_score: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory of canonical models to preload.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Per-request search budget in seconds.
    #[arg(long, default_value_t = 30.0)]
    budget: f64,
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    workers: usize,
    /// Threads shared by all searches.
    #[arg(long)]
    pool: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => convert(a),
        Command::Cf(a) => cf(a),
        Command::Evaluate { model, x } => evaluate(&model, &x),
        Command::Decompose {
            model,
            output,
            max_regions,
            workers,
        } => decompose(&model, output.as_deref(), max_regions, workers),
        Command::Validate {
            model,
            points,
            seed,
            regions,
        } => validate(&model, points, seed, regions),
        Command::Generate(a) => generate(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_model(path: &Path) -> anyhow::Result<EnsembleModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_canonical(&text).with_context(|| format!("loading {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).collect()
}

fn convert(a: ConvertArgs) -> anyhow::Result<u8> {
    let source = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let tree_classes = match &a.tree_classes {
        Some(s) => TreeClassMap::Explicit(
            split_list(s)
                .iter()
                .map(|v| v.parse().with_context(|| format!("`{v}` is not a class")))
                .collect::<anyhow::Result<_>>()?,
        ),
        None => TreeClassMap::RoundRobin,
    };
    let options = DumpOptions {
        dims: a.dims,
        classes: a.classes,
        aggregation: a.aggregation.into(),
        base_score: a.base_score,
        feature_names: a.feature_names.as_deref().map(split_list),
        tree_classes,
    };
    let model = ingest_dump(&source, a.format, &options)
        .with_context(|| format!("converting {}", a.input.display()))?;
    let mut text = to_canonical_json(&model);
    text.push('\n');
    match &a.output {
        Some(p) => {
            write_out(Some(p), &text)?;
            eprintln!(
                "N={} D={} K={} trees={}",
                model.num_leaves(),
                model.dims,
                model.classes,
                model.num_trees
            );
        }
        None => write_out(None, &text)?,
    }
    Ok(0)
}

fn cf(a: CfArgs) -> anyhow::Result<u8> {
    let model = load_model(&a.model)?;
    let base = match &a.query {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<CfQuery>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let flags = QueryFlags {
        x: a.x,
        target_class: a.target_class,
        target_interval: a.target_interval,
        threshold: a.threshold,
        epsilon: a.epsilon,
        fix: a.fix,
        weight: a.weight,
        radius: a.radius,
        ..QueryFlags::default()
    };
    let query = match flags.build(base, model.dims) {
        Ok(q) => q,
        Err(m) => bail!(m),
    };
    let mut request = CfRequest::new(query);
    request.split_depth = a.split_depth;
    request.stats = a.stats;
    let options = SearchOptions {
        workers: a.workers.max(1),
        bound_prune: a.bound_prune,
        deadline: a.timeout.map(|s| Instant::now() + Duration::from_secs_f64(s)),
        ..SearchOptions::default()
    };
    let index = presort_dimensions(&model);
    let explainer = Explainer::new(&model, &index);
    let reply = if request.query.radius.is_some() {
        answer_set(&explainer, &request, &options)
    } else {
        answer_cf(&explainer, &request, &options)
    };
    emit(&reply)
}

fn emit(reply: &Reply) -> anyhow::Result<u8> {
    let line = render::to_line(&reply.body());
    match reply {
        Reply::Ok(_) | Reply::NotFound(_) | Reply::Budget(_) => println!("{line}"),
        _ => eprintln!("{line}"),
    }
    Ok(reply.exit_code() as u8)
}

fn evaluate(path: &Path, x: &[f64]) -> anyhow::Result<u8> {
    let model = load_model(path)?;
    let p = model.evaluate(x)?;
    println!("{}", render::to_line(&render::prediction(&p)));
    Ok(0)
}

fn decompose(path: &Path, output: Option<&Path>, max_regions: usize, workers: usize) -> anyhow::Result<u8> {
    let model = load_model(path)?;
    let index = presort_dimensions(&model);
    let opts = DecomposeOptions {
        max_regions,
        workers: workers.max(1),
        ..DecomposeOptions::default()
    };
    let regions = decompose_with(&model, &index, None, opts)?;
    write_out(output, &regions_to_json_lines(&regions))?;
    Ok(0)
}

fn validate(path: &Path, points: usize, seed: u64, with_regions: bool) -> anyhow::Result<u8> {
    let model = load_model(path)?;
    let regions = if with_regions {
        Some(boxcf::decompose(&model, None)?)
    } else {
        None
    };
    let report = sample_validate(&model, regions.as_deref(), points, seed);
    println!("{}", serde_json::to_string(&report)?);
    Ok(if report.is_clean() { 0 } else { 1 })
}

fn generate(a: GenerateArgs) -> anyhow::Result<u8> {
    let spec = RandomModelSpec {
        trees: a.trees,
        depth: a.depth,
        dims: a.dims,
        classes: a.classes,
        seed: a.seed,
        aggregation: a.aggregation.into(),
        threshold_pool: a.threshold_pool,
        early_leaf: a.early_leaf,
        base_score: a.base_score,
    };
    if let Err(m) = spec.validate() {
        bail!(m);
    }
    let mut text = to_canonical_json(&generate_model(&spec));
    text.push('\n');
    write_out(a.output.as_deref(), &text)?;
    Ok(0)
}

fn serve(a: ServeArgs) -> anyhow::Result<u8> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut config = ServiceConfig {
        budget: Duration::from_secs_f64(a.budget),
        default_workers: a.workers.max(1),
        ..ServiceConfig::default()
    };
    if let Some(p) = a.pool {
        config.pool_size = p.max(1);
    }
    let state = AppState::new(config);
    if let Some(dir) = &a.models {
        let ids = state
            .load_dir(dir)
            .with_context(|| format!("loading models from {}", dir.display()))?;
        tracing::info!(count = ids.len(), "preloaded models");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(0)
}
