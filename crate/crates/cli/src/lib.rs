//! Command-line front end: argument parsing, configuration and routing to the
//! pipeline stages.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use promptforge::catalog::Catalog;
use promptforge::config::{load_config, AppConfig, ConfigError, ConfigOverrides, ProviderKind};
use promptforge::evalharness::{
    aggregate, ingest_task_dir, run_trials, EvalError, EvalRecord, MetricsReport, ReportFormat, RunOptions, ScoringMode,
};
use promptforge::kbforge::{build_kb, load_tasks, validate_kb, KbError, KbOptions, KnowledgeBase};
use promptforge::promptgen::{generate_for_task, GeneratedTemplate, GenerationOptions, PromptGenError};
use promptforge::storage::{atomic_write, read_jsonl, StorageError};
use promptforge::tempopt::{report_csv, summarize, sweep, temperature_report, SweepPlan, TempOptError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "promptforge",
    version,
    about = "Knowledge-base driven prompt generation and evaluation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Config file (TOML); defaults to $PROMPTFORGE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Provider kind: mock or live.
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    /// Maximum in-flight requests to a live provider.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[arg(long, global = true)]
    mock_seed: Option<u64>,
    /// JSON file of staged embeddings and chat rules for the mock provider.
    #[arg(long, global = true)]
    mock_fixture: Option<PathBuf>,
    /// Append every provider request to this JSONL file.
    #[arg(long, global = true)]
    audit_log: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build, inspect and validate knowledge bases.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Generate a prompt template for a task description.
    Generate(GenerateArgs),
    /// Run and score benchmark evaluations.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Temperature sweeps and significance reports.
    #[command(subcommand)]
    Temp(TempCommand),
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    Build {
        /// JSONL file of {name, description} records.
        #[arg(long)]
        tasks: PathBuf,
        /// Technique catalog JSON; the built-in catalog when omitted.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resumable progress file; defaults to `<out>.checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    Inspect {
        file: PathBuf,
    },
    Validate {
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    kb: PathBuf,
    /// File holding the task description, or `-` for stdin.
    #[arg(long)]
    task_description: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    Run {
        #[arg(long)]
        task_dir: PathBuf,
        /// Generated template JSON or raw template text.
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 10)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        journal: PathBuf,
        /// Label separating runs of different templates in one journal.
        #[arg(long)]
        tag: Option<String>,
    },
    Aggregate {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value = "corrected")]
        mode: ScoringMode,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TempCommand {
    Sweep {
        #[arg(long)]
        task_dir: PathBuf,
        #[arg(long)]
        template: PathBuf,
        /// Sweep plan JSON; defaults apply when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tag: Option<String>,
    },
    Report {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        let code = match e {
            StorageError::Io { .. } => EXIT_IO,
            StorageError::Corrupt { .. } => EXIT_VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        let code = match &e {
            KbError::Provider(_) => EXIT_PROVIDER,
            KbError::Storage(StorageError::Io { .. }) => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Provider(_) => EXIT_PROVIDER,
            EvalError::Io { .. } | EvalError::Storage(StorageError::Io { .. }) => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<PromptGenError> for CliError {
    fn from(e: PromptGenError) -> Self {
        let code = match &e {
            PromptGenError::Provider(_) | PromptGenError::Embedding(_) => EXIT_PROVIDER,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TempOptError> for CliError {
    fn from(e: TempOptError) -> Self {
        match e {
            TempOptError::Eval(inner) => inner.into(),
            other => Self::new(EXIT_VALIDATION, other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

struct Context<'a> {
    config: AppConfig,
    env: &'a HashMap<String, String>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Context<'_> {
    /// Writes to `path` atomically, or to stdout.
    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<(), CliError> {
        match path {
            Some(p) => atomic_write(p, text.as_bytes()).map_err(CliError::from),
            None => self
                .out
                .write_all(text.as_bytes())
                .map_err(|e| CliError::new(EXIT_IO, format!("stdout: {e}"))),
        }
    }

    fn catalog(&self, flag: Option<&Path>) -> Result<Catalog, CliError> {
        match flag.or(self.config.paths.catalog.as_deref()) {
            Some(p) => Catalog::load(p).map_err(|e| CliError::new(EXIT_VALIDATION, format!("{}: {e}", p.display()))),
            None => Ok(Catalog::default_catalog()),
        }
    }

    /// Fixed for reproducible output: `SOURCE_DATE_EPOCH` when set, 0 under the mock.
    fn timestamp(&self) -> Option<u64> {
        if let Some(v) = self.env.get("SOURCE_DATE_EPOCH").and_then(|v| v.trim().parse().ok()) {
            return Some(v);
        }
        (self.config.provider.kind == ProviderKind::Mock).then_some(0)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("PROMPTFORGE_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I, env: &HashMap<String, String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    init_logging(cli.global.verbose);
    let overrides = ConfigOverrides {
        provider: cli.global.provider,
        concurrency: cli.global.concurrency,
        mock_seed: cli.global.mock_seed,
        mock_fixture: cli.global.mock_fixture.clone(),
        audit_log: cli.global.audit_log.clone(),
    };
    let config = match load_config(cli.global.config.as_deref(), env, &overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut ctx = Context { config, env, out, err };
    match run(cli.command, &mut ctx) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {}", e.message);
            e.code
        }
    }
}

fn run(command: Command, ctx: &mut Context<'_>) -> Result<(), CliError> {
    match command {
        Command::Kb(c) => run_kb(c, ctx),
        Command::Generate(a) => run_generate(a, ctx),
        Command::Eval(c) => run_eval(c, ctx),
        Command::Temp(c) => run_temp(c, ctx),
    }
}

fn load_kb(path: &Path) -> Result<KnowledgeBase, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::new(EXIT_VALIDATION, format!("{}: {e}", path.display())))
}

fn run_kb(command: KbCommand, ctx: &mut Context<'_>) -> Result<(), CliError> {
    match command {
        KbCommand::Build {
            tasks,
            catalog,
            out,
            seed,
            checkpoint,
        } => {
            let tasks = load_tasks(&tasks)?;
            let catalog = ctx.catalog(catalog.as_deref())?;
            let provider = ctx.config.build_provider()?;
            let opts = KbOptions {
                chat_model: ctx.config.provider.chat_model.clone(),
                embedding_model: ctx.config.provider.embedding_model.clone(),
                seed,
                temperature: ctx.config.temperatures.knowledge_base,
                max_output_tokens: ctx.config.provider.max_output_tokens,
                ..KbOptions::default()
            };
            let checkpoint = checkpoint.unwrap_or_else(|| {
                let mut name = out.as_os_str().to_owned();
                name.push(".checkpoint.json");
                PathBuf::from(name)
            });
            let kb = build_kb(&tasks, &catalog, provider.as_ref(), &opts, Some(&checkpoint))?;
            kb.save(&out)?;
            let _ = writeln!(
                ctx.err,
                "built knowledge base with {} clusters (silhouette {:.4}) -> {}",
                kb.clusters.len(),
                kb.provenance.silhouette,
                out.display()
            );
            Ok(())
        }
        KbCommand::Inspect { file } => {
            let kb = load_kb(&file)?;
            let mut text = format!(
                "schema_version: {}\nclusters: {}\nsilhouette: {:.6}\nclustering_seed: {}\nembedding_model: {}\ncatalog: {} techniques, sha256 {}\n",
                kb.schema_version,
                kb.clusters.len(),
                kb.provenance.silhouette,
                kb.provenance.clustering_seed,
                kb.provenance.embedding_model,
                kb.catalog_ref.technique_count,
                kb.catalog_ref.sha256,
            );
            for c in &kb.clusters {
                let sel = kb.selection(&c.cluster_id);
                text.push_str(&format!(
                    "\n[{}] {} tasks{}\n  {}\n  techniques: {}\n",
                    c.cluster_id,
                    c.member_task_names.len(),
                    if sel.is_some_and(|s| s.fallback) {
                        " (fallback selection)"
                    } else {
                        ""
                    },
                    c.cluster_description,
                    sel.map(|s| s.technique_ids.join(", "))
                        .unwrap_or_else(|| "<none>".into()),
                ));
            }
            ctx.emit(None, &text)
        }
        KbCommand::Validate { file } => {
            let kb = load_kb(&file)?;
            let violations = validate_kb(&kb);
            if violations.is_empty() {
                ctx.emit(None, "ok\n")
            } else {
                for v in &violations {
                    let _ = writeln!(ctx.err, "violation: {v}");
                }
                Err(CliError::new(
                    EXIT_VALIDATION,
                    format!("{} violation(s) in {}", violations.len(), file.display()),
                ))
            }
        }
    }
}

fn run_generate(args: GenerateArgs, ctx: &mut Context<'_>) -> Result<(), CliError> {
    let kb = load_kb(&args.kb)?;
    let description = if args.task_description == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::new(EXIT_IO, format!("stdin: {e}")))?;
        s
    } else {
        read_text(Path::new(&args.task_description))?
    };
    let provider = ctx.config.build_provider()?;
    let opts = GenerationOptions {
        chat_model: ctx.config.provider.chat_model.clone(),
        embedding_model: ctx.config.provider.embedding_model.clone(),
        temperature: ctx.config.temperatures.generation,
        max_output_tokens: ctx.config.provider.max_output_tokens,
        timestamp: ctx.timestamp(),
        ..GenerationOptions::default()
    };
    let template = generate_for_task(&description, &kb, provider.as_ref(), &opts)?;
    let text = serde_json::to_string_pretty(&template).expect("template serializes") + "\n";
    ctx.emit(args.out.as_deref(), &text)
}

/// Accepts a generated-template JSON document or plain template text.
fn load_template(path: &Path) -> Result<String, CliError> {
    let text = read_text(path)?;
    if let Ok(t) = serde_json::from_str::<GeneratedTemplate>(&text) {
        return Ok(t.template_text);
    }
    Ok(text)
}

fn journal_records(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::new(EXIT_IO, format!("{}: journal not found", path.display())));
    }
    Ok(read_jsonl(path)?)
}

fn run_eval(command: EvalCommand, ctx: &mut Context<'_>) -> Result<(), CliError> {
    match command {
        EvalCommand::Run {
            task_dir,
            template,
            temperature,
            trials,
            seed,
            journal,
            tag,
        } => {
            let task = ingest_task_dir(&task_dir)?;
            let template = load_template(&template)?;
            let provider = ctx.config.build_provider()?;
            let opts = RunOptions {
                model: ctx.config.provider.answer_model.clone(),
                temperature: temperature.unwrap_or(ctx.config.temperatures.evaluation),
                trials,
                seed,
                max_output_tokens: ctx.config.provider.max_output_tokens,
                template_tag: tag,
                ..RunOptions::default()
            };
            let records = run_trials(&task, &template, provider.as_ref(), &opts, Some(&journal))?;
            let report = aggregate(&records, ScoringMode::Corrected)?;
            ctx.emit(None, &report.render(ReportFormat::Json))
        }
        EvalCommand::Aggregate {
            journal,
            mode,
            format,
            out,
        } => {
            let records = journal_records(&journal)?;
            let report: MetricsReport = aggregate(&records, mode)?;
            ctx.emit(out.as_deref(), &report.render(format))
        }
    }
}

fn run_temp(command: TempCommand, ctx: &mut Context<'_>) -> Result<(), CliError> {
    match command {
        TempCommand::Sweep {
            task_dir,
            template,
            plan,
            journal,
            seed,
            tag,
        } => {
            let plan = match plan {
                Some(p) => SweepPlan::from_json(&read_text(&p)?)?,
                None => SweepPlan {
                    temperatures: ctx.config.temperatures.sweep.clone(),
                    ..SweepPlan::default()
                },
            };
            let task = ingest_task_dir(&task_dir)?;
            let template = load_template(&template)?;
            let provider = ctx.config.build_provider()?;
            let base = RunOptions {
                model: ctx.config.provider.answer_model.clone(),
                seed,
                max_output_tokens: ctx.config.provider.max_output_tokens,
                template_tag: tag,
                ..RunOptions::default()
            };
            let matrix = sweep(&task, &template, provider.as_ref(), &plan, &base, Some(&journal))?;
            let summary = summarize(&task.name, &matrix)?;
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
            ctx.emit(None, &text)
        }
        TempCommand::Report { journal, format, out } => {
            let records = journal_records(&journal)?;
            let rows = temperature_report(&records)?;
            let text = match format {
                ReportFormat::Json => serde_json::to_string_pretty(&rows).expect("report serializes") + "\n",
                ReportFormat::Csv => report_csv(&rows),
            };
            ctx.emit(out.as_deref(), &text)
        }
    }
}
