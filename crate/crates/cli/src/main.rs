use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radr_core::harness::{
    render_table, run_compile_bench, run_eval, run_mine, run_score, run_train_toy, Grouping, HarnessError, RunConfig,
    EXIT_FATAL, EXIT_OK,
};
use radr_core::llm::BackendKind;
use radr_core::trainkit::Preset;

#[derive(Parser)]
#[command(
    name = "radr",
    version,
    about = "Reasoning-chain mining, RadRScore evaluation and toy GRPO training"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured completion backend (remote, mock, cache-only).
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Worker threads for mining and scoring.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Mine reasoning chains and compile the benchmark bundle.
    Mine {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a bundle from a corpus and a chains file.
    CompileBench {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score model outputs with RadRScore and the composite reward.
    Score {
        /// Corpus JSONL file or bundle directory.
        #[arg(long)]
        corpus: PathBuf,
        /// JSONL records with `id` and `output`.
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a score run into a table with bootstrap intervals.
    Eval {
        /// Output directory of a `score` run.
        #[arg(long)]
        scores: PathBuf,
        /// task or source; overrides the configured grouping.
        #[arg(long)]
        group_by: Option<Grouping>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy policy under an ablation preset.
    TrainToy {
        /// Print the available presets and exit.
        #[arg(long)]
        list_presets: bool,
        /// Overrides the configured preset.
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, required_unless_present = "list_presets")]
        corpus: Option<PathBuf>,
        #[arg(long, required_unless_present = "list_presets")]
        out: Option<PathBuf>,
    },
}

fn load_config(global: &Global) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(backend) = global.backend {
        cfg.backend = backend;
    }
    Ok(cfg)
}

fn required(p: Option<PathBuf>) -> PathBuf {
    p.expect("clap enforces presence")
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    if let Command::TrainToy { list_presets: true, .. } = cli.command {
        for p in Preset::ALL {
            println!("{:<12} {}", p.as_str(), p.describe());
        }
        return Ok(EXIT_OK);
    }
    let cfg = load_config(&cli.global)?;
    let workers = cli.global.workers.max(1);
    match cli.command {
        Command::Mine { corpus, out } => {
            let code = run_mine(&cfg, &corpus, &out, workers)?;
            report_dir("mine", &out);
            Ok(code)
        }
        Command::CompileBench { corpus, chains, out } => {
            let code = run_compile_bench(&cfg, &corpus, &chains, &out)?;
            report_dir("compile-bench", &out);
            Ok(code)
        }
        Command::Score { corpus, outputs, out } => {
            let code = run_score(&cfg, &corpus, &outputs, &out, workers)?;
            report_dir("score", &out);
            Ok(code)
        }
        Command::Eval { scores, group_by, out } => {
            let report = run_eval(&cfg, &scores, group_by, &out)?;
            print!("{}", render_table(&report));
            Ok(EXIT_OK)
        }
        Command::TrainToy {
            preset, corpus, out, ..
        } => {
            let out = required(out);
            let summary = run_train_toy(&cfg, preset, &required(corpus), &out)?;
            println!(
                "{} steps={} final_reward={} final_process_factuality={} checkpoint_sha256={}",
                summary.preset.as_str(),
                summary.steps,
                fmt_opt(summary.final_mean_reward),
                fmt_opt(summary.final_rl_process_factuality),
                summary.checkpoint_sha256
            );
            report_dir("train-toy", &out);
            Ok(EXIT_OK)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn report_dir(command: &str, out: &Path) {
    eprintln!("{command}: wrote {}", out.display());
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    // Usage errors are config errors; clap's own code 2 would read as sample errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_FATAL as u8 } else { 0 });
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    };
    ExitCode::from(code as u8)
}
