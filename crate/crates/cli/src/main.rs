mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use scengen_core::analyzer::{Analyzer, AnalyzerError, LlmAnalyzer, RuleBasedAnalyzer, DEFAULT_RET_THRESHOLD};
use scengen_core::behaviors::IntentLabel;
use scengen_core::engine::{
    episode_trace, generate_episode, run_campaign, EgoPolicy, EngineConfig, EngineError, ExecMode, RefinementConfig,
};
use scengen_core::llmio::{ChatClient, ClientConfig, HttpClient, LlmError, MockClient};
use scengen_core::membank::{BankError, MemoryBank};
use scengen_core::metrics::CollisionConfig;
use scengen_core::scene::{load_scenario, save_scenario, synth_scenario, Scenario, SceneKind};

#[derive(Debug, Parser)]
#[command(name = "scengen", version, about = "Adversarial driving scenario generation from behavior intents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write deterministic synthetic scenarios.
    Synth {
        #[arg(value_enum)]
        kind: Kind,
        count: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
    /// Generate one adversarial episode from a scenario file.
    Generate {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Also write a per-step ego/critical trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run a campaign over every scenario file in a directory.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Refine episodes on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Inspect or reset a memory bank store.
    Bank {
        #[command(subcommand)]
        action: BankAction,
        #[arg(long, global = true)]
        bank: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum BankAction {
    List,
    Inspect { label: String },
    Clear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Straight,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Rules,
    Llm,
    Mock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ego {
    Replay,
    Reactive,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Mode::Rules)]
    mode: Mode,
    /// Memory bank store; created with the builtin behaviors if absent.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Recorded model replies used by mock mode.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = CollisionConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = RefinementConfig::default().max_iterations)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = Ego::Replay)]
    ego: Ego,
    /// Chat-completions endpoint for llm mode.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Let the model rewrite rules between non-critical refinement iterations.
    #[arg(long)]
    modifier: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    MissingFixture(String),
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Input(_) => 2,
            CliError::MissingFixture(_) => 4,
            CliError::Transport(_) => 5,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::MissingFixture { .. } => CliError::MissingFixture(e.to_string()),
            LlmError::Config(_)
            | LlmError::MissingApiKey(_)
            | LlmError::InvalidRequest(_)
            | LlmError::Fixture { .. } => CliError::Input(e.to_string()),
            _ => CliError::Transport(e.to_string()),
        }
    }
}

impl From<BankError> for CliError {
    fn from(e: BankError) -> Self {
        match e {
            BankError::Llm(l) => l.into(),
            BankError::Io { .. }
            | BankError::Corrupt { .. }
            | BankError::NoStorePath
            | BankError::InvalidThreshold(_) => CliError::Input(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Analyzer(AnalyzerError::Llm(l)) => l.into(),
            EngineError::Bank(b) => b.into(),
            EngineError::InvalidArgument(_) | EngineError::Endpoint { .. } => CliError::Input(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

enum Outcome {
    Done,
    NonCritical,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { kind, count, seed, out } => cmd_synth(kind, count, seed, &out),
        Command::Generate { scenario, run, trace } => cmd_generate(&scenario, &run, trace),
        Command::Batch { dir, run, sequential } => cmd_batch(&dir, &run, sequential),
        Command::Bank { action, bank } => cmd_bank(&action, bank.as_deref()),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NonCritical) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_synth(kind: Kind, count: u64, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let kind = match kind {
        Kind::Straight => SceneKind::Straight,
        Kind::Intersection => SceneKind::Intersection,
    };
    create_dir(out)?;
    for s in seed..seed.saturating_add(count) {
        let path = out.join(format!("{kind}_{s:04}.json"));
        save_scenario(&synth_scenario(kind, s), &path).map_err(input)?;
        println!("{}", path.display());
    }
    Ok(Outcome::Done)
}

fn engine_config(run: &RunArgs) -> Result<EngineConfig, CliError> {
    if !(run.epsilon.is_finite() && run.epsilon > 0.0) {
        return Err(CliError::Input(format!("--epsilon must be positive, got {}", run.epsilon)));
    }
    if run.max_iters == 0 {
        return Err(CliError::Input("--max-iters must be at least 1".into()));
    }
    Ok(EngineConfig {
        policy: match run.ego {
            Ego::Replay => EgoPolicy::Replay,
            Ego::Reactive => EgoPolicy::reactive(),
        },
        refinement: RefinementConfig { max_iterations: run.max_iters, ..Default::default() },
        collision: CollisionConfig::center_distance(run.epsilon),
        ..Default::default()
    })
}

fn client(run: &RunArgs) -> Result<Option<Box<dyn ChatClient>>, CliError> {
    match run.mode {
        Mode::Rules => {
            if run.modifier {
                return Err(CliError::Input("--modifier needs --mode llm or --mode mock".into()));
            }
            Ok(None)
        }
        Mode::Mock => {
            let dir = run.fixtures.as_ref().ok_or_else(|| CliError::Input("--mode mock requires --fixtures".into()))?;
            if !dir.is_dir() {
                return Err(CliError::Input(format!("fixtures directory {} does not exist", dir.display())));
            }
            Ok(Some(Box::new(MockClient::new(dir))))
        }
        Mode::Llm => {
            let endpoint =
                run.endpoint.clone().ok_or_else(|| CliError::Input("--mode llm requires --endpoint".into()))?;
            let defaults = ClientConfig::default();
            let config = ClientConfig {
                endpoint_url: endpoint,
                model: run.model.clone().unwrap_or(defaults.model.clone()),
                api_key_env_name: run.api_key_env.clone(),
                timeout: Duration::from_secs(run.timeout_secs),
                ..defaults
            };
            Ok(Some(Box::new(HttpClient::new(config)?)))
        }
    }
}

fn open_bank(run: &RunArgs) -> Result<MemoryBank, CliError> {
    Ok(match &run.bank {
        Some(path) => MemoryBank::open_or_seed(path)?,
        None => MemoryBank::seeded(DEFAULT_RET_THRESHOLD)?,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_generate(path: &Path, run: &RunArgs, trace: bool) -> Result<Outcome, CliError> {
    let config = engine_config(run)?;
    let scenario = load_scenario(path).map_err(input)?;
    let client = client(run)?;
    let mut bank = open_bank(run)?;
    let id = file_stem(path);
    let rules = RuleBasedAnalyzer;
    let llm = client.as_deref().map(|c| LlmAnalyzer { client: c });
    let analyzer: &dyn Analyzer = match &llm {
        Some(a) => a,
        None => &rules,
    };
    let modifier = client.as_deref().filter(|_| run.modifier);
    let result = generate_episode(&id, &scenario, analyzer, &mut bank, client.as_deref(), modifier, &config)?;

    create_dir(&run.out)?;
    let out = run.out.join(format!("{id}.result.json"));
    write_file(&out, &result.to_json())?;
    if trace {
        let rows = episode_trace(&result.rollout, config.collision.epsilon);
        report::write_csv(&run.out.join(format!("{id}.trace.csv")), &rows)?;
    }
    let m = &result.metrics;
    println!(
        "{id}: intent `{}` ({:?}), collided {}, min TTC {}, iterations {}",
        result.verdict.intent.display(),
        result.memory_event,
        m.collided,
        report::fmt_ttc(m.min_ttc),
        result.iterations_used
    );
    println!("wrote {}", out.display());
    Ok(if result.critical { Outcome::Done } else { Outcome::NonCritical })
}

fn load_dir(dir: &Path) -> Result<Vec<(String, Scenario)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!("no scenario files in {}", dir.display())));
    }
    paths.iter().map(|p| Ok((file_stem(p), load_scenario(p).map_err(input)?))).collect()
}

fn cmd_batch(dir: &Path, run: &RunArgs, sequential: bool) -> Result<Outcome, CliError> {
    let config = engine_config(run)?;
    let scenarios = load_dir(dir)?;
    let client = client(run)?;
    let mut bank = open_bank(run)?;
    let rules = RuleBasedAnalyzer;
    let llm = client.as_deref().map(|c| LlmAnalyzer { client: c });
    let analyzer: &dyn Analyzer = match &llm {
        Some(a) => a,
        None => &rules,
    };
    let modifier = client.as_deref().filter(|_| run.modifier);
    let mode = if sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let report = match run_campaign(&scenarios, analyzer, &mut bank, client.as_deref(), modifier, &config, mode) {
        Ok(r) => r,
        Err(EngineError::AllEpisodesFailed) => {
            return Err(CliError::Failure("every episode failed; rerun with RUST_LOG=error for details".into()))
        }
        Err(e) => return Err(e.into()),
    };

    let results_dir = run.out.join("results");
    create_dir(&results_dir)?;
    for r in report.results.iter().flatten() {
        write_file(&results_dir.join(format!("{}.result.json", r.scenario_id)), &r.to_json())?;
    }
    report::write_episodes(&run.out.join("episodes.csv"), &report.rows)?;
    report::write_histogram(&run.out.join("hist_speed.csv"), &report.gen_samples.speeds, &report.raw_samples.speeds)?;
    report::write_histogram(&run.out.join("hist_accel.csv"), &report.gen_samples.accels, &report.raw_samples.accels)?;
    write_file(&run.out.join("summary.json"), &report::summary_json(&report))?;

    let (g, r) = (&report.metrics, &report.raw_metrics);
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    println!("episodes: {} ({failed} failed)", report.rows.len());
    println!("mean min TTC: {} (raw {})", report::fmt_ttc(g.mean_min_ttc), report::fmt_ttc(r.mean_min_ttc));
    println!("collision rate: {:.3} (raw {:.3})", g.collision_rate, r.collision_rate);
    println!("KL speed: {:.4}  KL accel: {:.4}", g.kl_speed, g.kl_accel);
    println!("abnormal lateral acceleration: {:.4}", g.abnormal_lat_accel_fraction);
    println!("wrote {}", run.out.display());
    Ok(Outcome::Done)
}

fn cmd_bank(action: &BankAction, path: Option<&Path>) -> Result<Outcome, CliError> {
    let path = path.ok_or_else(|| CliError::Input("--bank is required".into()))?;
    match action {
        BankAction::Clear => {
            MemoryBank::seeded(DEFAULT_RET_THRESHOLD)?.save_to(path)?;
            println!("reset {} to the builtin behaviors", path.display());
        }
        BankAction::List => {
            if !path.exists() {
                return Err(CliError::Input(format!("bank {} does not exist", path.display())));
            }
            let bank = MemoryBank::load(path)?;
            println!("K = {}", bank.len());
            for e in &bank.entries {
                println!(
                    "{}\tuses={}\tverified={}\tsource={:?}",
                    e.label().display(),
                    e.use_count,
                    e.verified,
                    e.spec.source
                );
            }
        }
        BankAction::Inspect { label } => {
            if !path.exists() {
                return Err(CliError::Input(format!("bank {} does not exist", path.display())));
            }
            let bank = MemoryBank::load(path)?;
            let query =
                IntentLabel::new(label).ok_or_else(|| CliError::Input(format!("`{label}` is not a usable label")))?;
            let idx = bank.lookup(&query).ok_or_else(|| CliError::Input(format!("no entry matches `{label}`")))?;
            let text = serde_json::to_string_pretty(&bank.entries[idx].to_json())
                .map_err(|e| CliError::Failure(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(Outcome::Done)
}
