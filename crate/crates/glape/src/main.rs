use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use glape::answers::TaskKind;
use glape::backend::http::HttpConfig;
use glape::backend::ResponseCache;
use glape::config::{AppConfig, RoleConfig};
use glape::dataset::{load_dataset, sample_subset, Dataset};
use glape::harness::{accuracy, clean_dataset};
use glape::optimizer::store::LOG_FILE;
use glape::optimizer::{
    evaluate_prompt, load_pool, load_run_dataset, mean_sc, run_optimization, QuestionVote,
    RunOutcome, RunStore,
};
use glape::report::write_report;
use glape::{Error, Result};

#[derive(Parser)]
#[command(name = "glape", version, about = "Label-free prompt evaluation and optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop, or resume an interrupted run
    Optimize {
        /// TOML run configuration
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Where run artifacts go (default: glape-run-<seed>)
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
        /// Resume this run directory from its checkpoint; uses the archived
        /// config snapshot
        #[arg(long, value_name = "DIR", conflicts_with_all = ["config", "run_dir", "seed", "iterations", "candidates_per_iteration"])]
        resume: Option<PathBuf>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the iteration budget
        #[arg(long)]
        iterations: Option<usize>,
        /// Override how many candidates each iteration requests
        #[arg(long)]
        candidates_per_iteration: Option<usize>,
    },
    /// Score one prompt on a dataset and print per-question results
    Evaluate {
        #[arg(long)]
        prompt: String,
        /// JSON Lines question file
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// numeric, multiple_choice, boolean, or freeform
        #[arg(long)]
        task_kind: TaskKind,
        /// "http" or "replay:<fixture path>"
        #[arg(long)]
        backend: String,
        #[arg(long, default_value = "gpt-3.5-turbo-0613")]
        model: String,
        #[arg(long, default_value_t = 10)]
        n_samples: usize,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 1024)]
        max_tokens: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Evaluate a seeded subset of this size instead of the whole file
        #[arg(long)]
        subset_size: Option<usize>,
        /// Response cache file for the http backend
        #[arg(long, value_name = "FILE")]
        cache: Option<PathBuf>,
    },
    /// Recompute scores for a run directory and write its report/
    Analyze {
        run_dir: PathBuf,
    },
    /// Write a cleaned copy of a run's dataset (gold labels required)
    Clean {
        /// Run directory whose evaluations drive the cleaning
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Destination JSON Lines file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print response-cache statistics
    CacheInfo {
        cache: PathBuf,
    },
}

fn init_logging(log_file: Option<&Path>) {
    use tracing_subscriber::layer::SubscriberExt;
    use tracing_subscriber::util::SubscriberInitExt;
    use tracing_subscriber::{fmt, EnvFilter};

    let filter = EnvFilter::try_from_env("GLAPE_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    let stderr_layer = fmt::layer()
        .with_writer(std::io::stderr)
        .with_target(false);
    let file_layer = log_file
        .and_then(|path| {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .ok()
        })
        .map(|f| {
            fmt::layer()
                .with_writer(std::sync::Arc::new(f))
                .with_ansi(false)
                .with_target(false)
        });
    tracing_subscriber::registry()
        .with(filter)
        .with(stderr_layer)
        .with(file_layer)
        .init();
}

fn print_outcome(run_dir: &Path, outcome: &RunOutcome) {
    println!("run directory: {}", run_dir.display());
    println!(
        "prompts evaluated: {} over {} iteration(s) (stop: {})",
        outcome.scores.pool_size, outcome.completed_iterations, outcome.stop_reason
    );
    println!(
        "best prompt: {} (glape mean {:.2}, raw sc mean {:.2})",
        outcome.best.prompt_id, outcome.best.glape_mean, outcome.best.mean_sc
    );
    println!("  {:?}", outcome.best.prompt_text);
}

fn cmd_optimize(
    config: Option<PathBuf>,
    run_dir: Option<PathBuf>,
    resume: Option<PathBuf>,
    seed: Option<u64>,
    iterations: Option<usize>,
    candidates_per_iteration: Option<usize>,
) -> Result<()> {
    if let Some(dir) = resume {
        let store = RunStore::open(&dir)?;
        init_logging(Some(&store.log_path()));
        let cfg = store.load_config_snapshot()?;
        let outcome = run_optimization(&cfg, &dir, true)?;
        print_outcome(&dir, &outcome);
        return Ok(());
    }
    let config_path = config.ok_or_else(|| {
        Error::Usage("optimize needs --config <FILE> (or --resume <DIR>)".into())
    })?;
    let mut cfg = AppConfig::load(&config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(i) = iterations {
        cfg.optimizer.iterations = i;
    }
    if let Some(c) = candidates_per_iteration {
        cfg.optimizer.candidates_per_iteration = c;
    }
    cfg.validate()?;
    let dir = run_dir.unwrap_or_else(|| PathBuf::from(format!("glape-run-{}", cfg.seed)));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    init_logging(Some(&dir.join(LOG_FILE)));
    let outcome = run_optimization(&cfg, &dir, false)?;
    print_outcome(&dir, &outcome);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    prompt: String,
    dataset: PathBuf,
    task_kind: TaskKind,
    backend: String,
    model: String,
    n_samples: usize,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
    subset_size: Option<usize>,
    cache: Option<PathBuf>,
) -> Result<()> {
    init_logging(None);
    let role = RoleConfig {
        backend,
        model,
        temperature,
        n_samples,
        max_tokens,
        system_text: None,
        http: HttpConfig {
            cache_path: cache,
            ..HttpConfig::default()
        },
    };
    role.validate("evaluate")?;
    let ds = load_dataset(&dataset, task_kind)?;
    let ds = match subset_size {
        Some(n) => sample_subset(&ds, n, seed)?,
        None => ds,
    };
    let backend = role.build_backend(seed)?;
    let votes = evaluate_prompt(&prompt, &ds, backend.as_ref(), &role).map_err(Error::from)?;
    for v in &votes {
        let answer = v
            .vote
            .answer
            .as_ref()
            .map(|a| a.to_string())
            .unwrap_or_else(|| "-".to_string());
        println!("{}\t{}\t{:.1}", v.question_id, answer, v.vote.sc);
    }
    println!("mean sc: {:.2}", mean_sc(&votes));
    if ds.has_gold() {
        println!("accuracy: {:.1}%", accuracy(&votes, &ds)?);
    }
    Ok(())
}

fn fmt_corr(r: Option<f64>) -> String {
    match r {
        Some(r) => format!("{r:.4}"),
        None => "undefined".to_string(),
    }
}

fn cmd_analyze(run_dir: PathBuf) -> Result<()> {
    init_logging(None);
    let summary = write_report(&run_dir)?;
    println!(
        "report for {} prompt(s) over {} question(s) written to {}",
        summary.pool_size,
        summary.question_count,
        summary.report_dir.display()
    );
    println!(
        "best prompt: {} (iteration {}, glape mean {:.2})",
        summary.best.prompt_id, summary.best.iteration, summary.best.glape_mean
    );
    if summary.has_gold {
        println!(
            "correlation with accuracy: raw sc {}, refined {}",
            fmt_corr(summary.spearman_sc),
            fmt_corr(summary.spearman_glape)
        );
        if let Some(c) = &summary.cleaning {
            println!(
                "cleaning would remove {} question(s); correlation cleaned {}, controls {}",
                c.removed.len(),
                fmt_corr(c.spearman_cleaned),
                fmt_corr(c.control_mean)
            );
        }
    } else {
        println!("gold labels absent: accuracy sections skipped");
    }
    Ok(())
}

fn cmd_clean(run: PathBuf, out: PathBuf) -> Result<()> {
    init_logging(None);
    let store = RunStore::open(&run)?;
    let cfg = store.load_config_snapshot()?;
    let pool = load_pool(&store)?;
    if pool.is_empty() {
        return Err(Error::Data(format!(
            "{} has an empty trajectory; nothing to clean against",
            run.display()
        )));
    }
    let ds = load_run_dataset(&cfg)?;
    let pool_votes: Vec<(String, Vec<QuestionVote>)> = pool
        .iter()
        .map(|p| (p.prompt_id(), p.votes.clone()))
        .collect();
    let outcome = clean_dataset(&pool_votes, &ds)?;
    let keep: std::collections::HashSet<&str> =
        outcome.kept.iter().map(String::as_str).collect();
    let cleaned = Dataset {
        records: ds
            .records
            .iter()
            .filter(|r| keep.contains(r.id.as_str()))
            .cloned()
            .collect(),
        ..ds.clone()
    };
    if cleaned.records.is_empty() {
        return Err(Error::Data(
            "cleaning removed every question; refusing to write an empty dataset".into(),
        ));
    }
    glape::dataset::save_dataset(&cleaned, &out)?;
    println!(
        "kept {} of {} question(s); cleaned dataset written to {}",
        outcome.kept.len(),
        ds.records.len(),
        out.display()
    );
    for id in &outcome.removed {
        println!("removed: {id}");
    }
    Ok(())
}

fn cmd_cache_info(cache: PathBuf) -> Result<()> {
    init_logging(None);
    let cache_store = ResponseCache::open(&cache).map_err(Error::from)?;
    let stats = cache_store.stats();
    println!("cache: {}", cache.display());
    println!("entries: {}", stats.records);
    println!("bytes: {}", stats.bytes);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize {
            config,
            run_dir,
            resume,
            seed,
            iterations,
            candidates_per_iteration,
        } => cmd_optimize(config, run_dir, resume, seed, iterations, candidates_per_iteration),
        Command::Evaluate {
            prompt,
            dataset,
            task_kind,
            backend,
            model,
            n_samples,
            temperature,
            max_tokens,
            seed,
            subset_size,
            cache,
        } => cmd_evaluate(
            prompt, dataset, task_kind, backend, model, n_samples, temperature, max_tokens, seed,
            subset_size, cache,
        ),
        Command::Analyze { run_dir } => cmd_analyze(run_dir),
        Command::Clean { run, out } => cmd_clean(run, out),
        Command::CacheInfo { cache } => cmd_cache_info(cache),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
