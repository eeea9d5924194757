use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opsloop::amsn::{default_policies, KnowledgeGraph};
use opsloop::runner::{self, RunConfig, RunError};
use opsloop::sim::{build_topology, TopologySpec};
use opsloop::Vocabulary;

#[derive(Parser)]
#[command(
    name = "opsloop",
    version,
    about = "Closed-loop incident agent over a simulated cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted multi-episode experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the transcript of one episode from a finished run.
    Replay {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        episode: String,
    },
    /// Write the knowledge graph as TSV: the final graph of a configured run,
    /// or the bootstrapped reference graph without `--config`.
    ExportKg {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(
    config: &Path,
    seed: Option<u64>,
    episodes: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), RunError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    let dir = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("opsloop-out"));
    let result = runner::run(&cfg)?;
    runner::write_outputs(&result, &dir)?;
    let a = &result.report.aggregates;
    let summary = format!(
        "{} episodes, top-1 accuracy {:.3}, {} resolved, {} escalated, {} rules validated, {} retired, {} compute units",
        a.episodes,
        a.top1_accuracy,
        a.resolved,
        a.escalated,
        a.rules_validated,
        a.rules_retired,
        a.compute_total.as_units()
    );
    emit(&format!("{summary}\nartifacts in {}\n", dir.display()))
}

/// Writes to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> Result<(), RunError> {
    match io::stdout().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn export_kg(out: &Path, config: Option<&Path>) -> Result<(), RunError> {
    let kg = match config {
        Some(path) => runner::run(&RunConfig::load(path)?)?.agent.kg,
        None => {
            let topo = build_topology(&TopologySpec::reference())
                .map_err(|e| RunError::Config(e.to_string()))?;
            KnowledgeGraph::bootstrap(&topo, &Vocabulary::default(), &default_policies())
                .map_err(|e| RunError::Runtime(e.to_string()))?
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    kg.export_tsv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            episodes,
            out,
        } => run(&config, seed, episodes, out),
        Command::Replay { report, episode } => {
            runner::replay(&report, &episode).and_then(|t| emit(&t))
        }
        Command::ExportKg { out, config } => export_kg(&out, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("opsloop: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
