//! The `raicl` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use raicl_core::prompt::{build_prompt, ExampleImage};
use raicl_core::selection::build_support_set;
use raicl_core::synth::{synthesize_dataset, EmbeddingModel, SynthSpec};
use raicl_core::{Dataset, PromptConfig, RenderConfig, Strategy, Tier, TrialRef};
use tracing_subscriber::EnvFilter;

use crate::config::{self, parse_downsample, AppConfig, ProviderKind, Resolved};
use crate::eval::{comparison_csv, prepare, run_ablation, run_loso, EvalReport, EvalSettings, Prepared};
use crate::fsutil::write_atomic;
use crate::gateway::{BackendKind, Gateway, ImageEmbeddings, ResponseCache};
use crate::image::{rasterize, WaveformImage};
use crate::manifest::{load_manifest, save_dataset};
use crate::provider::{embed_all, fill_store, FileProvider, HttpProvider};
use crate::store::EmbeddingStore;
use crate::synthetic::synthetic_store;
use crate::templates::load_prompt_config;
use crate::{bundle, eval};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "raicl", version, about = "Retrieval-augmented in-context EEG decoding with vision-language models")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Log filter such as `info` or `raicl=debug`.
    #[arg(long, global = true, default_value = "info", value_name = "FILTER")]
    pub log_level: String,
    /// Ignore cached responses and overwrite them with fresh ones.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and optionally a matching embedding store.
    Synth(SynthArgs),
    /// Render one trial to PNG.
    Render {
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        /// Subject id.
        subject: String,
        #[arg(long)]
        /// Trial index within the subject.
        trial: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render every trial and make sure the embedding store covers it.
    Embed {
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Build the support set for one query trial.
    Select {
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out subject id.
        #[arg(long)]
        subject: String,
        /// Query trial index.
        #[arg(long)]
        trial: u64,
        /// Also write the full prompt bundle here.
        #[arg(long)]
        bundle_out: Option<PathBuf>,
    },
    /// Send a saved prompt bundle to the configured backend.
    Query {
        /// Bundle written by `select --bundle-out`.
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Leave-one-subject-out evaluation.
    Evaluate(RunArgs),
    /// Evaluate every combination of the given strategies and tiers.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategies, e.g. `random,repsim`.
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategies: Vec<Strategy>,
        /// Comma-separated tiers, e.g. `reasoning,reasoning_examples`.
        #[arg(long, value_delimiter = ',', value_parser = parse_tier)]
        tiers: Vec<Tier>,
    },
    /// Dump the embedding store as CSV.
    ExportEmbeddings {
        /// Store directory; defaults to `provider.store_dir`.
        #[arg(long)]
        store: Option<PathBuf>,
        /// `-` for stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for reports.
    #[arg(long)]
    pub out: PathBuf,
    /// External baseline as NAME=BCA, repeatable.
    #[arg(long = "baseline", value_parser = parse_baseline)]
    pub baselines: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthEmbeddings {
    None,
    Separable,
    Clustered,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and trial files.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of subjects.
    #[arg(long, default_value_t = 4)]
    pub subjects: usize,
    /// Trials per class per subject, class 0 first.
    #[arg(long, value_delimiter = ',', default_value = "20,20")]
    pub trials_per_class: Vec<usize>,
    /// Channels per trial.
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    /// Trial length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration_s: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 64.0)]
    pub rate: f64,
    /// Leading non-task trials per subject.
    #[arg(long, default_value_t = 4)]
    pub lead_in: usize,
    /// Also write a store of generated embeddings keyed by the rendered images.
    #[arg(long, value_enum, default_value_t = SynthEmbeddings::None)]
    pub embeddings: SynthEmbeddings,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Store directory; defaults to `provider.store_dir`.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    s.parse::<Tier>().map_err(|e| e.to_string())
}

fn parse_baseline(s: &str) -> Result<(String, f64), String> {
    let (name, bca) = s.split_once('=').ok_or("expected NAME=BCA")?;
    let bca: f64 = bca.parse().map_err(|_| format!("{bca:?} is not a number"))?;
    if name.is_empty() || !bca.is_finite() {
        return Err("expected NAME=BCA".into());
    }
    Ok((name.to_owned(), bca))
}

/// The clap command with one flag per configuration key.
pub fn command() -> clap::Command {
    config::add_config_flags(Cli::command())
}

/// Parses, runs and maps the outcome to an exit code: 0 on success, 1 on a
/// runtime failure, 2 on a usage error.
pub fn main_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> ExitCode {
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    init_logging(&cli.log_level);
    let flags = config::flags_from_matches(&matches);
    let resolved = match config::resolve(cli.config.as_deref(), |v| std::env::var(v).ok(), &flags) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(level: &str) {
    let filter = std::env::var("RUST_LOG")
        .ok()
        .and_then(|v| EnvFilter::try_new(v).ok())
        .or_else(|| EnvFilter::try_new(level).ok())
        .unwrap_or_else(|| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal())
        .try_init();
}

fn run(cli: &Cli, resolved: &Resolved) -> CliResult {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    resolved.log_sources();
    let cfg = &resolved.config;
    eprintln!("config digest: {}", cfg.digest());
    match &cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Render {
            manifest,
            subject,
            trial,
            out,
        } => render(cfg, manifest, subject, *trial, out),
        Command::Embed { manifest } => embed(cfg, manifest),
        Command::Select {
            manifest,
            subject,
            trial,
            bundle_out,
        } => select(cfg, manifest, subject, *trial, bundle_out.as_deref()),
        Command::Query { bundle } => query(cfg, bundle, cli.no_cache),
        Command::Evaluate(a) => evaluate(cfg, a, cli.no_cache),
        Command::Ablate { run, strategies, tiers } => ablate(cfg, run, strategies, tiers, cli.no_cache),
        Command::ExportEmbeddings { store, out } => export(cfg, store.as_deref(), out),
    }
}

fn load(cfg: &AppConfig, manifest: &Path) -> CliResult<Dataset> {
    let (_, mut ds) = load_manifest(manifest)?;
    if !cfg.eval.subjects.is_empty() {
        let missing: Vec<&String> = cfg.eval.subjects.iter().filter(|s| ds.subject(s).is_none()).collect();
        if !missing.is_empty() {
            return Err(format!("unknown subject(s): {missing:?}").into());
        }
        ds = ds.filter_subjects(&cfg.eval.subjects);
    }
    Ok(ds.downsample(&parse_downsample(&cfg.eval.downsample)?)?)
}

fn render_config(cfg: &AppConfig, ds: &Dataset) -> CliResult<RenderConfig> {
    Ok(cfg.render.to_render_config(ds.channel_names.len())?)
}

fn store_dir(cfg: &AppConfig) -> PathBuf {
    PathBuf::from(&cfg.provider.store_dir)
}

fn http_provider(cfg: &AppConfig) -> CliResult<HttpProvider> {
    Ok(HttpProvider::connect(&cfg.provider.url, Duration::from_secs_f64(cfg.provider.timeout_s))?)
}

/// Renders and embeds the dataset. The HTTP provider's new vectors are
/// persisted to the store first, so reruns never re-embed.
fn prepared(cfg: &AppConfig, ds: Dataset) -> CliResult<Prepared> {
    let render = render_config(cfg, &ds)?;
    let dir = store_dir(cfg);
    let mut store = EmbeddingStore::open(&dir)?;
    if cfg.provider.kind == ProviderKind::Http {
        let images = eval::render_all(&ds, &render)?;
        let added = fill_store(&mut store, &images, &http_provider(cfg)?)?;
        store.save(&dir)?;
        tracing::info!(added, total = store.len(), "embedding store updated");
    }
    Ok(prepare(ds, &render, &FileProvider::new(Arc::new(store)))?)
}

fn gateway(cfg: &AppConfig, embeddings: Arc<dyn ImageEmbeddings>, no_cache: bool) -> CliResult<Gateway> {
    Ok(match cfg.backend.kind {
        BackendKind::MockNearestSupport => Gateway::mock(cfg.backend.clone(), embeddings)?,
        BackendKind::RemoteChat => Gateway::remote_from_env(cfg.backend.clone())?
            .with_cache(ResponseCache::new(&cfg.cache.dir))
            .with_refresh(no_cache),
    })
}

fn prompt_config(cfg: &AppConfig) -> CliResult<PromptConfig> {
    let p = load_prompt_config(cfg.templates_dir(), cfg.prompt.tier, &cfg.prompt.class_names)?;
    Ok(p.normalized()?)
}

fn settings(cfg: &AppConfig) -> CliResult<EvalSettings> {
    Ok(EvalSettings {
        selection: cfg.selection,
        prompt: prompt_config(cfg)?,
        parse_failure: cfg.eval.parse_failure,
        fallback_random: cfg.eval.fallback_random,
    })
}

fn synth(cfg: &AppConfig, a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        name: format!("synthetic-seed{}", a.seed),
        subjects: a.subjects,
        trials_per_class: a.trials_per_class.clone(),
        channels: a.channels,
        trial_duration_s: a.duration_s,
        sampling_rate: a.rate,
        lead_in: a.lead_in,
    };
    let ds = synthesize_dataset(&spec, a.seed)?;
    let manifest = save_dataset(&ds, &a.out)?;
    emit(&format!(
        "wrote {} trials for {} subjects to {}",
        manifest.total_trials(),
        ds.subjects.len(),
        a.out.join("manifest.json").display()
    ))?;
    let model = match a.embeddings {
        SynthEmbeddings::None => return Ok(()),
        SynthEmbeddings::Separable => EmbeddingModel::separable(a.dim),
        SynthEmbeddings::Clustered => EmbeddingModel::clustered(a.dim),
    };
    let store = synthetic_store(&ds, &render_config(cfg, &ds)?, &model, a.seed)?;
    let dir = a.store.clone().unwrap_or_else(|| store_dir(cfg));
    store.save(&dir)?;
    emit(&format!("wrote {} embeddings to {}", store.len(), dir.display()))?;
    Ok(())
}

fn find_trial<'a>(ds: &'a Dataset, subject: &str, trial: u64) -> CliResult<&'a raicl_core::EegTrial> {
    ds.trial(subject, trial)
        .ok_or_else(|| format!("no trial {subject}/{trial} in the dataset").into())
}

fn render(cfg: &AppConfig, manifest: &Path, subject: &str, trial: u64, out: &Path) -> CliResult {
    let ds = load(cfg, manifest)?;
    let t = find_trial(&ds, subject, trial)?;
    let im = rasterize(t, &render_config(cfg, &ds)?)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("{subject}_{trial:06}.png"));
    write_atomic(&path, &im.png_bytes)?;
    emit(&format!("{} {}", path.display(), im.digest()))?;
    Ok(())
}

fn embed(cfg: &AppConfig, manifest: &Path) -> CliResult {
    let ds = load(cfg, manifest)?;
    let render = render_config(cfg, &ds)?;
    let images: Vec<WaveformImage> = eval::render_all(&ds, &render)?;
    let dir = store_dir(cfg);
    let mut store = EmbeddingStore::open(&dir)?;
    let added = match cfg.provider.kind {
        ProviderKind::Http => fill_store(&mut store, &images, &http_provider(cfg)?)?,
        ProviderKind::File => {
            // Fails listing every digest the store lacks.
            let file = FileProvider::new(Arc::new(store.clone()));
            embed_all(&images, &file)?;
            fill_store(&mut store, &images, &file)?
        }
    };
    store.save(&dir)?;
    emit(&format!("{} images, {} new embeddings, store {}", images.len(), added, dir.display()))?;
    Ok(())
}

fn select(cfg: &AppConfig, manifest: &Path, subject: &str, trial: u64, bundle_out: Option<&Path>) -> CliResult {
    let ds = load(cfg, manifest)?;
    find_trial(&ds, subject, trial)?;
    let p = prepared(cfg, ds)?;
    let query = TrialRef::new(subject, trial);
    let set = build_support_set(&p.dataset, &query, &p.table, &cfg.selection)?;
    let violations = set.violations();
    if !violations.is_empty() {
        return Err(format!("support set for {query} breaks its invariants: {violations:?}").into());
    }
    emit(&serde_json::to_string_pretty(&set)?)?;
    if let Some(path) = bundle_out {
        let prompt = prompt_config(cfg)?;
        let examples: Vec<ExampleImage> = set
            .entries
            .iter()
            .map(|e| ExampleImage {
                label: e.label,
                source: e.source.clone(),
                png: p.images[&e.source].png_bytes.clone(),
            })
            .collect();
        let examples = prompt.tier.needs_examples().then_some(examples.as_slice());
        let b = build_prompt(&prompt, examples, p.images[&query].png_bytes.clone(), Some(query.clone()))?;
        let leaks = eval::audit_bundle(&b, &query);
        if !leaks.is_empty() {
            return Err(format!("bundle audit failed: {leaks:?}").into());
        }
        write_atomic(path, bundle::to_json(&b).as_bytes())?;
        eprintln!("bundle {} written to {}", b.digest, path.display());
    }
    Ok(())
}

fn query(cfg: &AppConfig, path: &Path, no_cache: bool) -> CliResult {
    let b = bundle::from_json(&fs::read_to_string(path)?)?;
    let embeddings: Arc<dyn ImageEmbeddings> = match cfg.backend.kind {
        BackendKind::MockNearestSupport => Arc::new(EmbeddingStore::open(&store_dir(cfg))?),
        BackendKind::RemoteChat => Arc::new(std::collections::HashMap::new()),
    };
    let gw = gateway(cfg, embeddings, no_cache)?;
    let names = prompt_config(cfg)?.class_names;
    let resp = gw.classify(&b, &names)?;
    emit(&serde_json::to_string_pretty(&resp)?)?;
    Ok(())
}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(line: &str) -> CliResult {
    let mut out = io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn with_baselines(mut r: EvalReport, baselines: &[(String, f64)]) -> EvalReport {
    r.baselines = baselines.iter().cloned().collect::<BTreeMap<_, _>>();
    r
}

fn check_audit(r: &EvalReport) -> CliResult {
    if r.audit.violations.is_empty() {
        Ok(())
    } else {
        for v in &r.audit.violations {
            eprintln!("audit: {v}");
        }
        Err(format!("{} leakage violation(s); no report written", r.audit.violations.len()).into())
    }
}

fn summary(r: &EvalReport) -> String {
    let bca = r.aggregate.mean_bca.map(|b| format!("{b:.2}")).unwrap_or_else(|| "n/a".into());
    format!(
        "{} / {}: mean BCA {bca} over {} subject(s), {} evaluated, {} parse failure(s), {} skipped, {} error(s)",
        r.strategy,
        r.tier,
        r.aggregate.subjects_scored,
        r.aggregate.evaluated,
        r.aggregate.parse_failures,
        r.aggregate.skipped,
        r.aggregate.errors
    )
}

/// Builds the gateway before any rendering so a missing key fails fast.
fn start_run(cfg: &AppConfig, a: &RunArgs, no_cache: bool) -> CliResult<(Prepared, Gateway, EvalSettings)> {
    let s = settings(cfg)?;
    let lazy = Arc::new(LazyEmbeddings::default());
    let gw = gateway(cfg, lazy.clone(), no_cache)?;
    let ds = load(cfg, &a.manifest)?;
    let p = prepared(cfg, ds)?;
    lazy.set(p.by_digest.clone());
    Ok((p, gw, s))
}

/// Embedding table filled in once the dataset is prepared.
#[derive(Default)]
struct LazyEmbeddings(std::sync::OnceLock<std::collections::HashMap<String, Arc<[f32]>>>);

impl LazyEmbeddings {
    fn set(&self, m: std::collections::HashMap<String, Arc<[f32]>>) {
        let _ = self.0.set(m);
    }
}

impl ImageEmbeddings for LazyEmbeddings {
    fn by_digest(&self, digest: &str) -> Option<Arc<[f32]>> {
        self.0.get()?.get(digest).cloned()
    }
}

fn evaluate(cfg: &AppConfig, a: &RunArgs, no_cache: bool) -> CliResult {
    let (p, gw, s) = start_run(cfg, a, no_cache)?;
    let report = with_baselines(run_loso(&p, &s, &gw)?, &a.baselines);
    check_audit(&report)?;
    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&a.out.join("predictions.csv"), report.predictions_csv().as_bytes())?;
    write_atomic(&a.out.join("comparison.csv"), comparison_csv(std::slice::from_ref(&report)).as_bytes())?;
    emit(&summary(&report))?;
    Ok(())
}

fn ablate(cfg: &AppConfig, a: &RunArgs, strategies: &[Strategy], tiers: &[Tier], no_cache: bool) -> CliResult {
    let strategies = if strategies.is_empty() { &Strategy::ALL[..] } else { strategies };
    let tiers = if tiers.is_empty() { &Tier::ALL[..] } else { tiers };
    let (p, gw, s) = start_run(cfg, a, no_cache)?;
    let reports: Vec<EvalReport> = run_ablation(&p, &s, strategies, tiers, &gw)?
        .into_iter()
        .map(|r| with_baselines(r, &a.baselines))
        .collect();
    for r in &reports {
        check_audit(r)?;
    }
    fs::create_dir_all(&a.out)?;
    for r in &reports {
        let name = format!("report_{}_{}.json", r.strategy, r.tier);
        write_atomic(&a.out.join(name), r.to_json().as_bytes())?;
        emit(&summary(r))?;
    }
    write_atomic(&a.out.join("comparison.csv"), comparison_csv(&reports).as_bytes())?;
    Ok(())
}

fn export(cfg: &AppConfig, store: Option<&Path>, out: &Path) -> CliResult {
    let dir = store.map(Path::to_path_buf).unwrap_or_else(|| store_dir(cfg));
    let s = EmbeddingStore::open(&dir)?;
    if s.is_empty() {
        return Err(format!("no embeddings in {}", dir.display()).into());
    }
    if out == Path::new("-") {
        let mut buf = Vec::new();
        s.export_csv(&mut buf)?;
        emit(String::from_utf8(buf)?.trim_end())?;
    } else {
        let mut buf = Vec::new();
        s.export_csv(&mut buf)?;
        write_atomic(out, &buf)?;
    }
    Ok(())
}
