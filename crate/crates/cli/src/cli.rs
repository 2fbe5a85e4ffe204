//! `medmsa` subcommands.
//!
//! Exit codes: 0 success, 1 usage or bad input, 2 runtime failure, 3 a run
//! finished with no valid models. With `--json`, results go to stdout as
//! one JSON document and errors to stderr as one JSON line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use medmsa::differential::DifferentialDistribution;
use medmsa::intervene::{intervene, InterventionRequest, InterventionResult};
use medmsa::lm::HttpConfig;
use medmsa::ppl::{enumerate_with_cap, parse, rejection_sample, validate, Budget, Edit, Program, DEFAULT_PATH_CAP};
use medmsa::runner::{execute_run, RunRequest};
use medmsa::store::{RunRecord, RunStore};
use medmsa::synthesis::{NoProgress, SynthesisConfig, Vignette};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::backend::{BackendKind, ClockMode, LmOptions};
use crate::error::{ApiError, ErrorCode};
use crate::service::{self, ServiceConfig};
use crate::views;

#[derive(Debug, Parser)]
#[command(name = "medmsa", version, about = "Synthesize diagnostic models from vignettes and query their ensemble")]
pub struct Cli {
    /// Machine-readable output: JSON on stdout, JSON-line errors on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize k models for a vignette, ensemble them and store the run.
    Run(RunArgs),
    /// Show a stored run's differential as bars.
    Differential(DifferentialArgs),
    /// Apply a point edit to one model of a run and rerun its inference.
    Edit(EditArgs),
    /// Rejection-sample a MedPPL program.
    Sample(SampleArgs),
    /// Exact posterior of a discrete MedPPL program.
    Enumerate(EnumerateArgs),
    /// Serve runs over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct LmArgs {
    /// Fixture directory for the replay and record backends.
    #[arg(long, default_value = "data/fixtures")]
    pub fixtures: PathBuf,
    /// Replay only exact draws instead of cycling through recorded pools.
    #[arg(long)]
    pub strict_replay: bool,
    /// Chat-completions base URL for the http and record backends.
    #[arg(long)]
    pub lm_base_url: Option<String>,
    #[arg(long)]
    pub lm_model: Option<String>,
    /// Request timeout in seconds.
    #[arg(long)]
    pub lm_timeout: Option<u64>,
}

impl LmArgs {
    fn options(&self) -> LmOptions {
        let mut http = HttpConfig::default();
        if let Some(url) = &self.lm_base_url {
            http.base_url = url.clone();
        }
        if let Some(model) = &self.lm_model {
            http.model_name = model.clone();
        }
        if let Some(secs) = self.lm_timeout {
            http.timeout = Duration::from_secs(secs);
        }
        LmOptions {
            fixtures: self.fixtures.clone(),
            strict: self.strict_replay,
            http,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Vignette JSON file: {id, sentences, queries}.
    #[arg(long)]
    pub vignette: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BackendKind::Replay)]
    pub backend: BackendKind,
    /// Runs directory; the run is written to `<out>/<run id>`.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// JSON object of manual canonicalization overrides, raw name to target.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    /// Synthesis configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Accepted samples per model.
    #[arg(long)]
    pub target_samples: Option<u64>,
    #[arg(long, value_enum, default_value_t = ClockMode::Auto)]
    pub clock: ClockMode,
    /// Entries shown per query in the summary.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[command(flatten)]
    pub lm: LmArgs,
}

#[derive(Debug, Args)]
pub struct DifferentialArgs {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Question number (1-based) or query key; all queries when omitted.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Bar width in characters.
    #[arg(long, default_value_t = 40)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Candidate index (1-based) or version id such as v0001.
    #[arg(long)]
    pub model: String,
    /// Edit JSON file: {kind, target, payload, note}.
    #[arg(long)]
    pub edit: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ClockMode::Auto)]
    pub clock: ClockMode,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub program: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 90)]
    pub timeout: u64,
    #[arg(long)]
    pub max_proposals: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub program: PathBuf,
    /// Give up after this many execution paths.
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    pub max_paths: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Runs directory.
    #[arg(long, default_value = "runs")]
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Vignettes `POST /runs` may name by id.
    #[arg(long, default_value = "data/vignettes")]
    pub vignettes: PathBuf,
    /// Default canonicalization overrides for new runs.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    /// Allowed browser origin; repeatable.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    /// Built web UI to serve under /ui.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClockMode::Auto)]
    pub clock: ClockMode,
    #[command(flatten)]
    pub lm: LmArgs,
}

/// Output sink; tests capture it, the binary uses stdout and stderr.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn main_with(argv: Vec<OsString>, io: &mut Io<'_>) -> u8 {
    let json_mode = argv.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(io.out, "{e}");
                return 0;
            }
            if json_mode {
                let err = ApiError::bad_request(e.kind().to_string()).with_details(json!({ "usage": e.to_string() }));
                let _ = writeln!(io.err, "{}", serde_json::to_string(&err.body()).unwrap_or_default());
            } else {
                let _ = write!(io.err, "{e}");
            }
            return 1;
        }
    };
    match dispatch(&cli, io) {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                let _ = writeln!(io.err, "{}", serde_json::to_string(&e.body()).unwrap_or_default());
            } else {
                let _ = writeln!(io.err, "error [{}]: {}", e.code.as_string(), e.message);
            }
            e.code.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<u8, ApiError> {
    match &cli.command {
        Command::Run(a) => run(a, cli.json, io),
        Command::Differential(a) => differential(a, cli.json, io),
        Command::Edit(a) => edit(a, cli.json, io),
        Command::Sample(a) => sample(a, cli.json, io),
        Command::Enumerate(a) => enumerate_cmd(a, cli.json, io),
        Command::Serve(a) => serve(a, io),
    }
}

fn read_text(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, ApiError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

fn emit(io: &mut Io<'_>, value: &Value) -> Result<(), ApiError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ApiError::internal(e.to_string()))?;
    writeln!(io.out, "{text}").map_err(|e| ApiError::internal(e.to_string()))
}

fn say(io: &mut Io<'_>, text: &str) -> Result<(), ApiError> {
    write!(io.out, "{text}").map_err(|e| ApiError::internal(e.to_string()))
}

fn load_program(path: &Path) -> Result<Program, ApiError> {
    let source = read_text(path)?;
    let program = parse(&source).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))?;
    let diagnostics = validate(&program);
    if !diagnostics.is_empty() {
        let text: Vec<&str> = diagnostics.iter().map(|d| d.message.as_str()).collect();
        return Err(ApiError::bad_request(format!("{}: {}", path.display(), text.join("; ")))
            .with_details(json!({ "diagnostics": diagnostics })));
    }
    Ok(program)
}

/// Store and run id for a run directory path.
fn open_run(dir: &Path) -> Result<(RunStore, String), ApiError> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ApiError::bad_request(format!("{} is not a run directory", dir.display())))?
        .to_string();
    let root = dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let root = if root.as_os_str().is_empty() { PathBuf::from(".") } else { root };
    Ok((RunStore::new(root), id))
}

fn status_counts(record: &RunRecord) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in &record.run.candidates {
        let key = serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

fn run(a: &RunArgs, json_mode: bool, io: &mut Io<'_>) -> Result<u8, ApiError> {
    let vignette = Vignette::load(&a.vignette).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut config: SynthesisConfig = match &a.config {
        Some(p) => read_json_file(p)?,
        None => SynthesisConfig::default(),
    };
    if let Some(n) = a.target_samples {
        if n == 0 {
            return Err(ApiError::bad_request("--target-samples must be at least 1"));
        }
        config.target_samples = n;
    }
    if a.k == 0 {
        return Err(ApiError::bad_request("--k must be at least 1"));
    }
    let overrides: BTreeMap<String, String> = match &a.overrides {
        Some(p) => read_json_file(p)?,
        None => BTreeMap::new(),
    };
    let request = RunRequest {
        vignette,
        k: a.k,
        seed: a.seed,
        config,
        overrides,
    };
    let lm = a.lm.options().build(a.backend)?;
    let clock = a.clock.clock(a.backend);
    let store = RunStore::new(&a.out);
    tracing::info!(vignette = %request.vignette.id, k = a.k, seed = a.seed, "starting run");
    let (record, dir) = execute_run(&request, lm.as_ref(), &clock, &store, &NoProgress)?;
    let no_valid = record.run.no_valid_models();

    if json_mode {
        emit(
            io,
            &json!({
                "run_dir": dir,
                "manifest": record.manifest(),
                "differentials": record.differentials.iter().map(|d| medmsa::differential::top_n(d, a.top.max(1))).collect::<Vec<_>>(),
            }),
        )?;
    } else {
        let mut text = format!("run {}\ndirectory {}\n", record.run.run_id, dir.display());
        let counts: Vec<String> = status_counts(&record).into_iter().map(|(k, n)| format!("{k} {n}")).collect();
        text.push_str(&format!("candidates: {}\n", counts.join(", ")));
        if no_valid {
            text.push_str("no valid models; no differential\n");
        }
        for (i, d) in record.differentials.iter().enumerate() {
            let question = record.run.vignette.queries.get(i).map(String::as_str).unwrap_or("");
            text.push_str(&format!("\n{question}\n"));
            text.push_str(&medmsa::differential::top_n(d, a.top.max(1)).render_bars(40));
        }
        say(io, &text)?;
    }
    Ok(if no_valid { ErrorCode::NoValidModels.exit_code() } else { 0 })
}

fn differential(a: &DifferentialArgs, json_mode: bool, io: &mut Io<'_>) -> Result<u8, ApiError> {
    let (store, id) = open_run(&a.run)?;
    let record = store.load(&id)?;
    let dists = views::differentials(&record, a.query.as_deref(), a.top)?;
    if json_mode {
        emit(io, &json!({ "run_id": id, "top": a.top, "distributions": dists }))?;
    } else {
        let text: Vec<String> = dists.iter().map(|d| d.render_bars(a.width)).collect();
        say(io, &text.join("\n"))?;
    }
    Ok(0)
}

fn render_comparison(result: &InterventionResult, top: usize) -> String {
    let pair = |label: &str, b: &DifferentialDistribution, a: &DifferentialDistribution| {
        let mut names: Vec<&str> = b.entries.iter().chain(&a.entries).map(|e| e.category.as_str()).collect();
        let mut seen = std::collections::BTreeSet::new();
        names.retain(|n| seen.insert(*n));
        names.sort_by(|x, y| a.probability(y).total_cmp(&a.probability(x)).then(x.cmp(y)));
        names.truncate(top);
        let width = names.iter().map(|n| n.chars().count()).max().unwrap_or(0);
        let mut out = format!("{label} {}\n", a.query);
        for n in names {
            let (pb, pa) = (b.probability(n), a.probability(n));
            out.push_str(&format!(
                "  {n:<width$}  {:>6.2}% -> {:>6.2}%  ({:+.2})\n",
                pb * 100.0,
                pa * 100.0,
                (pa - pb) * 100.0
            ));
        }
        out
    };
    let mut text = format!(
        "version {} (from {}, root candidate {})\naccepted {} of {} proposals{}\n",
        result.new_model_version_id,
        result.base_model_id,
        result.root_candidate,
        result.accepted_count,
        result.proposed_count,
        if result.budget_exhausted { "; budget exhausted, no accepted samples" } else { "" }
    );
    for (q, b) in &result.before {
        if let Some(a) = result.after.get(q) {
            text.push_str(&pair("model", b, a));
        }
        if let (Some(b), Some(a)) = (result.before_ensemble.get(q), result.after_ensemble.get(q)) {
            text.push_str(&pair("ensemble", b, a));
        }
    }
    text
}

fn edit(a: &EditArgs, json_mode: bool, io: &mut Io<'_>) -> Result<u8, ApiError> {
    let (store, id) = open_run(&a.run)?;
    let manifest = store.manifest(&id)?;
    let edit: Edit = read_json_file(&a.edit).map_err(|e| ApiError::new(ErrorCode::EditInvalid, e.message))?;
    let model = views::parse_model_ref(&a.model)?;
    let backend = if manifest.lm_backend.starts_with("replay") { BackendKind::Replay } else { BackendKind::Http };
    let request = InterventionRequest {
        model,
        edit,
        seed: a.seed,
        lm: None,
    };
    let result = intervene(&store, &id, &request, &a.clock.clock(backend))?;
    if json_mode {
        emit(io, &serde_json::to_value(&result).map_err(|e| ApiError::internal(e.to_string()))?)?;
    } else {
        say(io, &render_comparison(&result, a.top.max(1)))?;
    }
    Ok(0)
}

fn sample(a: &SampleArgs, json_mode: bool, io: &mut Io<'_>) -> Result<u8, ApiError> {
    if a.samples == 0 {
        return Err(ApiError::bad_request("--samples must be at least 1"));
    }
    let program = load_program(&a.program)?;
    let budget = Budget::new(Duration::from_secs(a.timeout), a.max_proposals);
    let set = rejection_sample(&program, a.samples, &budget, a.seed)
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("runtime error: {e}")))?;
    let queries: Vec<String> = program.query_names().map(str::to_string).collect();
    if json_mode {
        let freqs: BTreeMap<&str, BTreeMap<String, f64>> = queries.iter().map(|q| (q.as_str(), set.frequencies(q))).collect();
        emit(
            io,
            &json!({
                "accepted_count": set.accepted_count,
                "proposed_count": set.proposed_count,
                "budget_exhausted": set.budget_exhausted,
                "seed": set.seed,
                "frequencies": freqs,
            }),
        )?;
    } else {
        let mut text = format!(
            "accepted {} of {} proposals{}\n",
            set.accepted_count,
            set.proposed_count,
            if set.budget_exhausted { " (budget exhausted)" } else { "" }
        );
        for q in &queries {
            for (k, p) in set.frequencies(q) {
                text.push_str(&format!("P({q}={k}) ~ {p}\n"));
            }
        }
        say(io, &text)?;
    }
    Ok(if set.accepted_count == 0 { 2 } else { 0 })
}

fn enumerate_cmd(a: &EnumerateArgs, json_mode: bool, io: &mut Io<'_>) -> Result<u8, ApiError> {
    let program = load_program(&a.program)?;
    let exact = enumerate_with_cap(&program, a.max_paths).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if json_mode {
        emit(io, &serde_json::to_value(&exact).map_err(|e| ApiError::internal(e.to_string()))?)?;
    } else {
        let mut text = String::new();
        for (q, dist) in &exact.queries {
            for (k, p) in dist {
                text.push_str(&format!("P({q}={k}) = {p}\n"));
            }
        }
        text.push_str(&format!("evidence = {}\n", exact.evidence));
        say(io, &text)?;
    }
    Ok(0)
}

fn serve(a: &ServeArgs, io: &mut Io<'_>) -> Result<u8, ApiError> {
    std::fs::create_dir_all(&a.root).map_err(|e| ApiError::bad_request(format!("{}: {e}", a.root.display())))?;
    let overrides = match &a.overrides {
        Some(p) => read_json_file(p)?,
        None => BTreeMap::new(),
    };
    let config = ServiceConfig {
        root: a.root.clone(),
        lm: a.lm.options(),
        vignettes: Some(a.vignettes.clone()),
        overrides,
        cors_origins: a.cors_origins.clone(),
        static_dir: a.static_dir.clone(),
        clock: a.clock,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(a.host, a.port))
            .await
            .map_err(|e| ApiError::bad_request(format!("cannot listen on {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| ApiError::internal(e.to_string()))?;
        writeln!(io.out, "listening on http://{addr}").map_err(|e| ApiError::internal(e.to_string()))?;
        io.out.flush().map_err(|e| ApiError::internal(e.to_string()))?;
        service::serve(service::AppState::new(config), listener)
            .await
            .map_err(|e| ApiError::internal(e.to_string()))
    })?;
    Ok(0)
}
