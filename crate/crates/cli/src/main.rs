mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use afsc_core::bank::{BankError, BankFormat};
use afsc_core::bench::{
    episode_seed, heatmap_csv, heatmap_sweep, run_episodes, run_seeded_episode, summarize,
    BenchmarkError, EpisodeFailure,
};
use afsc_core::criteria::CriteriaError;
use afsc_core::{
    generate_synthetic_bank, EpisodeResult, SelectionStrategy, StrategyRegistry, SyntheticSpec,
};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("{message}")]
    Episode { message: String, seed: u64 },
    #[error("{0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Episode { .. } => 3,
            _ => 2,
        }
    }
}

impl From<CriteriaError> for CliError {
    fn from(e: CriteriaError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        match e.replay_seed() {
            Some(seed) => CliError::Episode {
                message: e.to_string(),
                seed,
            },
            None => CliError::Config(e.to_string()),
        }
    }
}

/// Active few-shot classification benchmark harness.
#[derive(Debug, Parser)]
#[command(name = "afsc", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `smoothing.kappa=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (`bench`), CSV file (`heatmap`), JSONL file
    /// (`episode`) or bank file (`synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Benchmark seed (`bench`, `heatmap`), episode replay seed (`episode`) or
    /// generator seed (`synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured strategy on the same episodes.
    Bench,
    /// Sweep labels x samples x alpha and write active-minus-baseline diffs.
    Heatmap,
    /// Run a single episode and print its round-by-round trace.
    Episode,
    /// Generate a synthetic Gaussian-mixture bank.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    center_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    within_std: f64,
    /// `csv` or `binary`; defaults to the output extension.
    #[arg(long)]
    format: Option<BankFormat>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Episode { seed, .. } = &e {
                eprintln!("replay with: afsc episode --seed {seed} (same --config and overrides)");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(args) => synth(&args, g.seed.unwrap_or(0), g.out.as_deref()),
        command => {
            let mut cfg = RunConfig::load(g.config.as_deref(), &g.overrides)?;
            match command {
                Command::Bench => {
                    if let Some(seed) = g.seed {
                        cfg.bench.seed = seed;
                    }
                    bench(&cfg, g.out.as_deref())
                }
                Command::Heatmap => {
                    if let Some(seed) = g.seed {
                        cfg.bench.seed = seed;
                    }
                    heatmap(&cfg, g.out.as_deref())
                }
                Command::Episode => episode(&cfg, g.seed, g.out.as_deref()),
                Command::Synth(_) => unreachable!(),
            }
        }
    }
}

fn resolve(cfg: &RunConfig, names: &[String]) -> Result<Vec<Arc<dyn SelectionStrategy>>, CliError> {
    let registry = StrategyRegistry::builtin(cfg.oracle.clone());
    names
        .iter()
        .map(|n| registry.get(n).map_err(CliError::from))
        .collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

fn jsonl(results: &[EpisodeResult]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in results {
        serde_json::to_writer(&mut out, r).expect("episode results serialize");
        out.push(b'\n');
    }
    out
}

fn bench(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let strategies = resolve(cfg, &cfg.strategies)?;
    let bank = cfg.bank.load()?;
    let pipeline = cfg.pipeline();
    let dir = out.unwrap_or(&cfg.output);
    let config_json = serde_json::to_value(cfg).expect("config serializes");

    let mut rows = Vec::new();
    for strategy in &strategies {
        if cfg.verbosity > 0 {
            eprintln!(
                "running {} on {} episodes",
                strategy.name(),
                cfg.bench.tasks
            );
        }
        let results = run_episodes(&bank, &cfg.bench, &pipeline, strategy.as_ref())?;
        let mut report = summarize(&bank, &cfg.bench, &pipeline, strategy.name(), &results);
        report.config = serde_json::json!({ "run": config_json, "bank": bank.source() });
        let name = strategy.name();
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        write_file(&dir.join(format!("{name}.json")), &json)?;
        write_file(
            &dir.join(format!("{name}.episodes.jsonl")),
            &jsonl(&results),
        )?;
        rows.push((
            name.to_string(),
            report.mean_weighted_accuracy,
            report.ci95,
            report.tasks,
        ));
    }

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{:<10} {:>8} {:>8} {:>7}",
        "strategy", "mean", "ci95", "tasks"
    );
    for (name, mean, ci, tasks) in rows {
        let _ = writeln!(stdout, "{name:<10} {mean:>8.4} {ci:>8.4} {tasks:>7}");
    }
    Ok(())
}

fn heatmap(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let h = &cfg.heatmap;
    let chosen = resolve(cfg, &[h.active.clone(), h.baseline.clone()])?;
    let bank = cfg.bank.load()?;
    if cfg.verbosity > 0 {
        eprintln!(
            "sweeping {} cells of {} vs {}",
            h.labels.len() * h.samples.len() * h.alphas.len(),
            h.active,
            h.baseline
        );
    }
    let cells = heatmap_sweep(
        &bank,
        &cfg.bench,
        &cfg.pipeline(),
        &h.labels,
        &h.samples,
        &h.alphas,
        chosen[0].as_ref(),
        chosen[1].as_ref(),
    )?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.join("heatmap.csv"));
    write_file(&path, heatmap_csv(&cells).as_bytes())?;
    println!("wrote {} cells to {}", cells.len(), path.display());
    Ok(())
}

fn episode(cfg: &RunConfig, seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let strategies = resolve(cfg, &cfg.strategies)?;
    let bank = cfg.bank.load()?;
    let pipeline = cfg.pipeline();
    let seed = seed.unwrap_or_else(|| episode_seed(cfg.bench.seed, 0));

    let mut results = Vec::new();
    for strategy in &strategies {
        let result = run_seeded_episode(&bank, &cfg.bench, &pipeline, strategy.as_ref(), seed)
            .map_err(|e| CliError::Episode {
                message: match e {
                    EpisodeFailure::Task(e) => format!("episode failed to sample: {e}"),
                    EpisodeFailure::Episode(e) => format!("episode failed: {e}"),
                },
                seed,
            })?;
        print_episode(&result);
        results.push(result);
    }
    if let Some(path) = out {
        write_file(path, &jsonl(&results))?;
    }
    Ok(())
}

fn fmt_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_episode(r: &EpisodeResult) {
    println!(
        "strategy {}  seed {}  task {}",
        r.strategy, r.seed, r.task_digest
    );
    for t in &r.traces {
        let scores: Vec<String> = t
            .scores_at_selection
            .iter()
            .map(|s| format!("{s:.4}"))
            .collect();
        println!(
            "  round {}: samples [{}] bank rows [{}] scores [{}] objective {:.4}{}",
            t.round_index,
            fmt_list(&t.selected),
            fmt_list(&t.selected_rows),
            scores.join(" "),
            t.objective,
            if t.substitutions > 0 {
                format!(" ({} substitutions)", t.substitutions)
            } else {
                String::new()
            }
        );
    }
    let recalls: Vec<String> = r
        .class_recalls
        .iter()
        .enumerate()
        .map(|(c, rec)| match rec {
            Some(v) => format!("{c}:{v:.3}"),
            None => format!("{c}:-"),
        })
        .collect();
    println!("  recalls {}", recalls.join(" "));
    println!("  weighted accuracy {:.4}", r.weighted_accuracy);
}

fn synth(args: &SynthArgs, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let out = out.ok_or_else(|| CliError::Config("synth requires --out".into()))?;
    let spec = SyntheticSpec {
        classes: args.classes,
        dim: args.dim,
        samples_per_class: args.per_class,
        center_spread: args.center_spread,
        within_std: args.within_std,
        seed,
    };
    let bank = generate_synthetic_bank(&spec)?;
    let format = args.format.unwrap_or_else(|| BankFormat::from_path(out));
    bank.write(out, format)?;
    println!("{}  {}", bank.digest(), out.display());
    Ok(())
}
