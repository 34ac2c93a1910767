//! `stitch` command-line interface.
//!
//! Exit status: 0 on success, 1 when a command fails, 2 on usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use stitch_core::poseval::Task;

#[derive(Parser, Debug)]
#[command(name = "stitch", version, about = "Positional control for joint-attention image generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decompose a prompt into sub-prompts and boxes
    Plan(PlanArgs),
    /// Run the full generation and write a run directory
    Generate(GenerateArgs),
    /// Rank attention heads by how well they segment probe objects
    SelectHead(SelectHeadArgs),
    /// Benchmark prompt sets and evaluation
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Aggregate verdict files into an accuracy table
    Report(ReportArgs),
    /// Sweep the number of constrained steps
    AblateS(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Llm,
    Fallback,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long, value_enum, default_value_t = ProviderKind::Fallback)]
    provider: ProviderKind,
    /// Layout grid size; defaults to the config value
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the layout here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Full prompt; overrides the layout's prompt when both are given
    #[arg(long)]
    prompt: Option<String>,
    /// Layout file; planned from the prompt when omitted
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ProviderKind::Fallback)]
    provider: ProviderKind,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run the constrained branches one after another
    #[arg(long)]
    sequential_branches: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectHeadArgs {
    /// Object names, one per line
    #[arg(long)]
    probe_objects: PathBuf,
    /// Directory of `<object>.pgm` reference masks; objects without one are skipped
    #[arg(long)]
    references: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = stitch_core::cutout::DEFAULT_ETA_GRID)]
    etas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    kappa: usize,
    /// Rows in the report, one per head
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Generate a prompt set as JSON lines
    Gen(BenchGenArgs),
    /// Evaluate detections against a prompt set
    Eval(BenchEvalArgs),
    /// Produce synthetic detections from layouts
    OracleDetect(OracleArgs),
}

#[derive(Args, Debug)]
struct BenchGenArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchEvalArgs {
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    prompts: PathBuf,
    /// Directory of `<index>.json` layouts; missing ones are planned on the 2x2 grid
    #[arg(long)]
    layouts: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    canvas: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Verdict files, or directories containing `verdicts.jsonl`
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "model")]
    model: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    s_values: Vec<usize>,
    /// Layout files to run
    #[arg(long)]
    layout: Vec<PathBuf>,
    /// Prompts to plan with the fallback planner and run
    #[arg(long)]
    prompt: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: stitch_core::poseval::PosevalError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let mut message = e.render().to_string();
            if !message.contains("Usage:") {
                message.push_str(&format!("\n{}\n", Cli::command().render_usage()));
            }
            eprint!("{message}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
