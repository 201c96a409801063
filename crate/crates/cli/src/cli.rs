//! `dse` subcommands. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dse_core::advisor::ProviderKind;
use dse_core::cost_db::{export_finetune_dataset, PointFilter, Verdict};
use dse_core::design_space::{load_workload_file, DeviceProfile, Directives};
use dse_core::evaluator::{evaluate, CalibrationProfile};
use dse_core::explorer::{run_exploration, ExplorationConfig, Strategy, Workspace};
use dse_core::retrieval::load_or_build_index;
use dse_core::templates::AcceleratorDesign;

#[derive(Debug, Parser)]
#[command(name = "dse", version, about = "Design space exploration for template-based FPGA accelerators")]
pub struct Cli {
    /// Workspace directory (database, run folders, index).
    #[arg(long, short = 'w', global = true, default_value = ".")]
    pub workspace: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Exhaustive,
    Heuristic,
    Llm,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Exhaustive => Strategy::Exhaustive,
            StrategyArg::Heuristic => Strategy::Heuristic,
            StrategyArg::Llm => Strategy::Llm,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty workspace.
    Init { dir: PathBuf },
    /// Build (or refresh) the retrieval index of a corpus directory.
    Index {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Evaluate one design with the analytical model and print the report.
    Evaluate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        device: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Run an exploration and print its report.
    Explore {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        device: Option<PathBuf>,
        #[arg(long)]
        directives: PathBuf,
        #[arg(long, value_enum, default_value = "heuristic")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 10)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        candidates: usize,
        #[arg(long, default_value_t = 1)]
        diversity_k: usize,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Corpus for retrieval-grounded prompts (llm strategy).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Chat endpoint for the llm strategy.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// External evaluator command; the run folder is appended as its last argument.
        #[arg(long)]
        external: Option<String>,
    },
    /// Export data points as a fine-tuning dataset (JSON lines).
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        verdict: Option<Verdict>,
        #[arg(long)]
        feasible: Option<bool>,
        #[arg(long = "workload-name")]
        workload: Option<String>,
        #[arg(long = "device-name")]
        device: Option<String>,
    },
    /// Serve the HTTP API for the workspace.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn device_or_default(path: Option<&Path>) -> dse_core::Result<DeviceProfile> {
    path.map_or_else(|| Ok(DeviceProfile::xc7z020()), DeviceProfile::load)
}

fn profile_or_default(path: Option<&Path>) -> dse_core::Result<CalibrationProfile> {
    path.map_or_else(|| Ok(CalibrationProfile::shipped_vecmul()), CalibrationProfile::load)
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let ws = cli.workspace;
    match cli.command {
        Command::Init { dir } => {
            Workspace::init(&dir)?;
            emit(&format!("initialized workspace {}", dir.display()))?;
        }
        Command::Index { corpus } => {
            let ws = Workspace::init(&ws)?;
            let idx = load_or_build_index(&corpus, &ws.index_path())?;
            emit(&format!("indexed {} documents into {}", idx.len(), ws.index_path().display()))?;
        }
        Command::Evaluate { design, device, profile } => {
            let design = AcceleratorDesign::load(&design)?;
            let report = evaluate(
                &design,
                &device_or_default(device.as_deref())?,
                &profile_or_default(profile.as_deref())?,
            )?;
            print_json(&report)?;
        }
        Command::Explore {
            workload,
            device,
            directives,
            strategy,
            iterations,
            seed,
            candidates,
            diversity_k,
            profile,
            corpus,
            endpoint,
            model,
            external,
        } => {
            let mut cfg = ExplorationConfig::new(
                load_workload_file(&workload)?,
                device_or_default(device.as_deref())?,
                Directives::load(&directives)?,
                strategy.into(),
                &ws,
            );
            cfg.max_iterations = iterations;
            cfg.seed = seed;
            cfg.candidates_per_iteration = candidates;
            cfg.diversity_k = diversity_k;
            cfg.profile = profile.as_deref().map(CalibrationProfile::load).transpose()?;
            cfg.corpus = corpus;
            cfg.external_command = external;
            cfg.advisor.seed = seed;
            if matches!(strategy, StrategyArg::Llm) {
                cfg.advisor.provider = ProviderKind::RemoteChat;
            }
            if let Some(url) = endpoint {
                cfg.advisor.endpoint_url = url;
            }
            if let Some(m) = model {
                cfg.advisor.model_name = m;
            }
            let (_, report) = run_exploration(cfg)?;
            print_json(&serde_json::json!({
                "iterations": report.iterations,
                "stop_reason": report.stop_reason,
                "best": report.best,
                "evaluated_count": report.evaluated_count,
                "rejected_count": report.rejected_count,
                "failed_count": report.failed_count,
                "advisor_fallbacks": report.advisor_fallbacks,
            }))?;
        }
        Command::Export {
            out,
            verdict,
            feasible,
            workload,
            device,
        } => {
            let db = Workspace::new(&ws).open_db()?;
            let filter = PointFilter {
                workload,
                device,
                verdict,
                feasible,
            };
            let n = export_finetune_dataset(&db, &filter, &out)?;
            emit(&format!("exported {n} records to {}", out.display()))?;
        }
        Command::Serve { port } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::service::serve(&ws, port))?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
