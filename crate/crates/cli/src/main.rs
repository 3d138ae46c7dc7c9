mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memloop::backends::{Backends, ChatBackend, Embedder, HashEmbedder, HttpChatClient, HttpEmbedder, Script, ScriptedChat};
use memloop::context::RetrievalConfig;
use memloop::engine::executor::SheetExecutor;
use memloop::engine::{run_task, EngineConfig, TaskInput};
use memloop::eval::{load_suite, render_table, run_experiment, select, write_report, ExperimentConfig};
use memloop::repository::{ImportPolicy, MemoryRepository, RepositoryConfig};

use config::{CliConfig, Settings, ENV_API_KEY, ENV_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "memloop", version, about = "Memory-loop task engine for table automation")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalFlags {
    /// Config file (key = value lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Memory repository file
    #[arg(long, global = true, value_name = "PATH")]
    mr: Option<PathBuf>,
    /// Context budget in tokens
    #[arg(long, global = true, value_name = "N")]
    budget: Option<usize>,
    /// Model proposals allowed per session
    #[arg(long, global = true, value_name = "N")]
    max_revisions: Option<usize>,
    /// Suite tasks run concurrently
    #[arg(long, global = true, value_name = "N")]
    parallelism: Option<usize>,
    /// Answer chat requests from a JSON script instead of a live model
    #[arg(long, global = true, value_name = "SCRIPT")]
    mock_llm: Option<PathBuf>,
    /// Use the built-in hashing embedder
    #[arg(long, global = true)]
    mock_embed: bool,
    /// Retrieve only memories of successful sessions
    #[arg(long, global = true, value_name = "BOOL")]
    success_only: Option<bool>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one task
    Run(RunArgs),
    /// Run a task suite for one or more rounds
    Suite(SuiteArgs),
    /// Manage the memory repository
    #[command(subcommand)]
    Mem(MemCommand),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// The task request
    request: Option<String>,
    /// Take the task, with its workspace and checks, from a suite file
    #[arg(long, value_name = "PATH", requires = "task_id", conflicts_with = "request")]
    task_file: Option<PathBuf>,
    /// Id of the task to take from --task-file
    #[arg(long, value_name = "ID", requires = "task_file")]
    task_id: Option<String>,
    /// Write the session transcript here
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    /// Suite file (JSON)
    path: PathBuf,
    /// Passes over the suite, sharing one repository
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,
    /// Line-delimited report output
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Comma-separated task ids to run instead of the whole suite
    #[arg(long, value_name = "IDS", value_delimiter = ',')]
    ids: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum MemCommand {
    /// List items: id, kind, success, first line of the brief text
    List,
    /// Write every item to a .mrx archive
    Export { path: PathBuf },
    /// Load items from a .mrx archive
    Import {
        path: PathBuf,
        /// skip or overwrite items whose id already exists
        #[arg(long, default_value = "skip")]
        policy: ImportPolicy,
    },
    /// Remove items by id
    Forget {
        ids: Vec<String>,
        /// Forget every item
        #[arg(long, conflicts_with = "ids")]
        all: bool,
    },
    /// Item counts by kind and outcome, as JSON
    Stats,
}

fn settings(global: &GlobalFlags, run: Option<&RunArgs>, suite: Option<&SuiteArgs>) -> Result<CliConfig> {
    let file = global.config.clone().or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
    let mut s = match file {
        Some(path) => Settings::load(&path)?,
        None => Settings::default(),
    };
    if let Ok(key) = std::env::var(ENV_API_KEY) {
        s.set("backend.api_key", key);
    }
    let flags: [(&str, Option<String>); 7] = [
        ("mr_path", global.mr.as_ref().map(|p| p.display().to_string())),
        ("budget", global.budget.map(|v| v.to_string())),
        ("max_revisions", global.max_revisions.map(|v| v.to_string())),
        ("parallelism", global.parallelism.map(|v| v.to_string())),
        ("mock.llm", global.mock_llm.as_ref().map(|p| p.display().to_string())),
        ("mock.embed", global.mock_embed.then(|| "true".to_string())),
        ("success_only", global.success_only.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v);
        }
    }
    if let Some(t) = run.and_then(|r| r.transcript.as_ref()) {
        s.set("transcript", t.display());
    }
    if let Some(a) = suite {
        if let Some(n) = a.rounds {
            s.set("rounds", n);
        }
        if let Some(out) = &a.out {
            s.set("report_path", out.display());
        }
    }
    CliConfig::resolve(&s)
}

fn open_repository(config: &CliConfig) -> Result<MemoryRepository> {
    let rc = RepositoryConfig { dim: config.embed_dim, ..RepositoryConfig::default() };
    MemoryRepository::open(&config.mr_path, rc)
        .with_context(|| format!("cannot open memory repository {}", config.mr_path.display()))
}

fn backends(config: &CliConfig) -> Result<Backends> {
    let chat: Arc<dyn ChatBackend> = match &config.mock_llm {
        Some(path) => Arc::new(ScriptedChat::new(Script::load(path)?)),
        None => Arc::new(HttpChatClient::new(config.chat.clone())?),
    };
    let embedder: Arc<dyn Embedder> = if config.mock_embed {
        Arc::new(HashEmbedder::new(config.embed_dim))
    } else {
        Arc::new(HttpEmbedder::new(config.embed.clone(), config.embed_dim)?)
    };
    let mut b = Backends::new(chat, embedder);
    if let Some(helper) = &config.helper {
        b = b.with_helper(Arc::new(HttpChatClient::new(helper.clone())?));
    }
    Ok(b)
}

fn engine_config(config: &CliConfig) -> EngineConfig {
    EngineConfig {
        budget: config.budget,
        max_revisions: config.max_revisions,
        retrieval: RetrievalConfig {
            success_only: config.success_only,
            thresholds: config.thresholds,
            ..RetrievalConfig::default()
        },
        ..EngineConfig::default()
    }
}

fn cmd_run(global: &GlobalFlags, args: &RunArgs) -> Result<u8> {
    let config = settings(global, Some(args), None)?;
    let task = match (&args.request, &args.task_file, &args.task_id) {
        (Some(request), None, _) => TaskInput::new(request.clone()),
        (None, Some(file), Some(id)) => {
            let suite = load_suite(file)?;
            let picked = select(&suite, std::slice::from_ref(id))?;
            picked[0].to_input()
        }
        _ => bail!("give a request or --task-file with --task-id"),
    };
    let mr = open_repository(&config)?;
    let backends = backends(&config)?;
    let result = run_task(&task, &mr, &backends, &SheetExecutor::default(), &engine_config(&config))?;
    if let Some(path) = &config.transcript {
        std::fs::write(path, result.transcript.render())
            .with_context(|| format!("cannot write transcript {}", path.display()))?;
    }
    let ratio = result.op_ratio.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into());
    println!(
        "status={} executed={} passed={} proposals={} memorized={} op_ratio={} wall_time={:.3}s",
        result.status,
        result.executed,
        result.passed,
        result.proposals,
        result.memorized,
        ratio,
        result.transcript.wall_time
    );
    if let Some(why) = &result.transcript.failure {
        println!("failure: {why}");
    }
    Ok(if result.passed { 0 } else { 1 })
}

fn cmd_suite(global: &GlobalFlags, args: &SuiteArgs) -> Result<u8> {
    let config = settings(global, None, Some(args))?;
    let mut suite = load_suite(&args.path)?;
    if !args.ids.is_empty() {
        suite = select(&suite, &args.ids)?;
    }
    let mr = open_repository(&config)?;
    let backends = backends(&config)?;
    let xc = ExperimentConfig {
        engine: EngineConfig { memorize_failures: false, ..engine_config(&config) },
        parallelism: config.parallelism,
    };
    let experiment = match run_experiment(&suite, config.rounds, &mr, &backends, &SheetExecutor::default(), &xc) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: experiment did not complete: {e}");
            return Ok(1);
        }
    };
    let file = std::fs::File::create(&config.report_path)
        .with_context(|| format!("cannot write report {}", config.report_path.display()))?;
    write_report(&experiment, std::io::BufWriter::new(file))?;
    print!("{}", render_table(&experiment));
    println!("report: {}", config.report_path.display());
    Ok(0)
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

fn cmd_mem(global: &GlobalFlags, command: &MemCommand) -> Result<u8> {
    let config = settings(global, None, None)?;
    let mr = open_repository(&config)?;
    match command {
        MemCommand::List => {
            println!("{:<32}  {:<10}  {:<7}  brief", "id", "kind", "success");
            for item in mr.items() {
                println!("{:<32}  {:<10}  {:<7}  {}", item.id, item.kind.as_str(), item.success, first_line(&item.brief_text));
            }
        }
        MemCommand::Export { path } => {
            let n = mr.export(path)?;
            println!("exported {n} items to {}", path.display());
        }
        MemCommand::Import { path, policy } => {
            let n = mr.import(path, *policy)?;
            println!("imported {n} items from {}", path.display());
        }
        MemCommand::Forget { ids, all } => {
            let ids: Vec<String> = if *all { mr.items().into_iter().map(|i| i.id).collect() } else { ids.clone() };
            let n = mr.forget(&ids)?;
            println!("forgot {n} items");
        }
        MemCommand::Stats => {
            println!("{}", serde_json::to_string(&mr.stats())?);
        }
    }
    Ok(0)
}

/// The error chain, skipping causes already quoted by the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Run(args) => cmd_run(&cli.global, args),
        Command::Suite(args) => cmd_suite(&cli.global, args),
        Command::Mem(cmd) => cmd_mem(&cli.global, cmd),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
