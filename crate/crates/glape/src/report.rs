//! Post-hoc reports over a finished (or checkpointed) run directory.
//!
//! `write_report` recomputes pool scores from the stored vote details, adds
//! accuracy-based sections when the dataset carries gold labels, and writes
//! `report/` inside the run directory. Scores-only reporting works without
//! labels; label-dependent sections are then skipped with a notice.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::AppConfig;
use crate::dataset::{sample_subset, Dataset};
use crate::error::{Error, Result};
use crate::harness::{accuracy, clean_dataset, spearman, CleanOutcome};
use crate::optimizer::store::REPORT_DIR;
use crate::optimizer::{
    load_pool, load_run_dataset, select_best, snapshot_scores, EvaluatedPrompt, RunStore,
    ScoredPrompt, ScoresSnapshot,
};
use crate::solver::RefinedScores;

#[derive(Debug, Clone)]
pub struct CleaningSummary {
    pub removed: Vec<String>,
    pub kept: usize,
    pub spearman_original: Option<f64>,
    pub spearman_cleaned: Option<f64>,
    /// Mean over the control subsets that had a defined correlation.
    pub control_mean: Option<f64>,
    pub control_subsets: usize,
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub report_dir: PathBuf,
    pub pool_size: usize,
    pub question_count: usize,
    pub completed_iterations: usize,
    pub stop_reason: Option<String>,
    pub best: ScoredPrompt,
    pub best_iteration: usize,
    pub has_gold: bool,
    pub spearman_sc: Option<f64>,
    pub spearman_glape: Option<f64>,
    pub cleaning: Option<CleaningSummary>,
}

/// Per-prompt aggregate over a restricted question set: the refined-score
/// sum and the accuracy on just those questions.
fn restricted_columns(
    pool: &[EvaluatedPrompt],
    refined: &[RefinedScores],
    ds: &Dataset,
    keep: &HashSet<&str>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut glape = vec![0.0; pool.len()];
    let mut correct = vec![0usize; pool.len()];
    let mut count = 0usize;
    for (qi, record) in ds.records.iter().enumerate() {
        if !keep.contains(record.id.as_str()) {
            continue;
        }
        count += 1;
        let gold = record.gold_answer.as_ref().ok_or_else(|| {
            Error::Data(format!("question \"{}\" has no gold answer", record.id))
        })?;
        for (pi, p) in pool.iter().enumerate() {
            glape[pi] += refined[qi].score_for(&p.prompt_id()).ok_or_else(|| {
                Error::Data(format!(
                    "prompt {} missing from refined question \"{}\"",
                    p.prompt_id(),
                    record.id
                ))
            })?;
            if p.votes[qi].vote.answer.as_ref() == Some(gold) {
                correct[pi] += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("restricted question set is empty".into()));
    }
    let acc = correct
        .iter()
        .map(|&c| 100.0 * c as f64 / count as f64)
        .collect();
    Ok((glape, acc))
}

fn cleaning_summary(
    pool: &[EvaluatedPrompt],
    refined: &[RefinedScores],
    ds: &Dataset,
    outcome: &CleanOutcome,
    spearman_original: Option<f64>,
    seed: u64,
) -> Result<CleaningSummary> {
    let mut summary = CleaningSummary {
        removed: outcome.removed.clone(),
        kept: outcome.kept.len(),
        spearman_original,
        spearman_cleaned: None,
        control_mean: None,
        control_subsets: 0,
    };
    if outcome.kept.is_empty() {
        return Ok(summary);
    }
    let keep: HashSet<&str> = outcome.kept.iter().map(String::as_str).collect();
    let (glape, acc) = restricted_columns(pool, refined, ds, &keep)?;
    summary.spearman_cleaned = spearman(&glape, &acc)?;

    let mut controls = Vec::new();
    for i in 0..10u64 {
        let subset = sample_subset(ds, outcome.kept.len(), seed.wrapping_add(100 + i))?;
        let ids: HashSet<&str> = subset.records.iter().map(|r| r.id.as_str()).collect();
        let (g, a) = restricted_columns(pool, refined, ds, &ids)?;
        if let Some(r) = spearman(&g, &a)? {
            controls.push(r);
        }
    }
    summary.control_subsets = controls.len();
    if !controls.is_empty() {
        summary.control_mean = Some(controls.iter().sum::<f64>() / controls.len() as f64);
    }
    Ok(summary)
}

fn write_prompts_csv(
    path: &Path,
    snapshot: &ScoresSnapshot,
    accuracies: Option<&[f64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let io_err = |e: csv::Error| Error::Data(format!("cannot write {}: {e}", path.display()));
    let mut header = vec!["prompt_id", "iteration", "glape_total", "glape_mean", "mean_sc"];
    if accuracies.is_some() {
        header.push("accuracy");
    }
    header.push("prompt_text");
    w.write_record(&header).map_err(io_err)?;
    for (i, p) in snapshot.prompts.iter().enumerate() {
        let mut row = vec![
            p.prompt_id.clone(),
            p.iteration.to_string(),
            format!("{:.4}", p.glape_total),
            format!("{:.4}", p.glape_mean),
            format!("{:.4}", p.mean_sc),
        ];
        if let Some(acc) = accuracies {
            row.push(format!("{:.4}", acc[i]));
        }
        row.push(p.prompt_text.clone());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_score_accuracy_csv(
    path: &Path,
    snapshot: &ScoresSnapshot,
    accuracies: &[f64],
    score_of: impl Fn(&ScoredPrompt) -> f64,
    score_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let io_err = |e: csv::Error| Error::Data(format!("cannot write {}: {e}", path.display()));
    w.write_record(["prompt_id", score_name, "accuracy"])
        .map_err(io_err)?;
    for (p, acc) in snapshot.prompts.iter().zip(accuracies) {
        w.write_record([
            p.prompt_id.clone(),
            format!("{:.4}", score_of(p)),
            format!("{acc:.4}"),
        ])
        .map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn fmt_corr(r: Option<f64>) -> String {
    match r {
        Some(r) => format!("{r:.4}"),
        None => "undefined (constant ranking)".to_string(),
    }
}

fn render_summary(
    cfg: &AppConfig,
    ds: &Dataset,
    summary: &ReportSummary,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "prompts evaluated: {}", summary.pool_size);
    let _ = writeln!(
        s,
        "iterations completed: {}{}",
        summary.completed_iterations,
        summary
            .stop_reason
            .as_deref()
            .map(|r| format!(" (stop: {r})"))
            .unwrap_or_default()
    );
    let _ = writeln!(
        s,
        "questions: {} ({}, {})",
        summary.question_count, ds.name, cfg.dataset.task_kind
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "best prompt: {} (iteration {}, glape mean {:.2}, raw sc mean {:.2})",
        summary.best.prompt_id,
        summary.best.iteration,
        summary.best.glape_mean,
        summary.best.mean_sc
    );
    let _ = writeln!(s, "  {:?}", summary.best.prompt_text);
    let trailing = summary.completed_iterations.saturating_sub(summary.best_iteration);
    let _ = writeln!(
        s,
        "best score first reached at iteration {}; no improvement over the final {} iteration(s).",
        summary.best_iteration, trailing
    );
    let _ = writeln!(s);
    if summary.has_gold {
        let _ = writeln!(s, "rank correlation with accuracy over {} prompts:", summary.pool_size);
        let _ = writeln!(
            s,
            "  raw self-consistency vs accuracy: {}",
            fmt_corr(summary.spearman_sc)
        );
        let _ = writeln!(
            s,
            "  refined score vs accuracy:        {}",
            fmt_corr(summary.spearman_glape)
        );
        if let Some(c) = &summary.cleaning {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "cleaning: removed {} of {} question(s){}",
                c.removed.len(),
                summary.question_count,
                if c.removed.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", c.removed.join(", "))
                }
            );
            let _ = writeln!(s, "  correlation on original set: {}", fmt_corr(c.spearman_original));
            let _ = writeln!(s, "  correlation on cleaned set:  {}", fmt_corr(c.spearman_cleaned));
            let _ = writeln!(
                s,
                "  mean over {} control subset(s) of the same size: {}",
                c.control_subsets,
                fmt_corr(c.control_mean)
            );
        }
    } else {
        let _ = writeln!(
            s,
            "gold labels absent: accuracy, correlation, and cleaning sections skipped."
        );
    }
    s
}

/// Recompute scores for a run directory and write `report/` inside it.
pub fn write_report(run_dir: &Path) -> Result<ReportSummary> {
    let store = RunStore::open(run_dir)?;
    let cfg = store.load_config_snapshot()?;
    let pool = load_pool(&store)?;
    if pool.is_empty() {
        return Err(Error::Data(format!(
            "{} has an empty trajectory; nothing to report",
            run_dir.display()
        )));
    }
    let snapshot = snapshot_scores(&pool, &cfg.solver)?;
    let ds = load_run_dataset(&cfg)?;
    if ds.records.len() != snapshot.question_count {
        return Err(Error::Data(format!(
            "dataset now has {} questions but the run evaluated {}",
            ds.records.len(),
            snapshot.question_count
        )));
    }
    let checkpoint = store.load_checkpoint()?;
    let best = select_best(&snapshot.prompts)
        .expect("non-empty pool has a best prompt")
        .clone();

    let report_dir = run_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", report_dir.display())))?;

    let has_gold = ds.has_gold();
    let mut summary = ReportSummary {
        report_dir: report_dir.clone(),
        pool_size: pool.len(),
        question_count: snapshot.question_count,
        completed_iterations: checkpoint
            .as_ref()
            .map(|c| c.completed_iterations)
            .unwrap_or(0),
        stop_reason: checkpoint.and_then(|c| c.stop_reason),
        best_iteration: best.iteration,
        best,
        has_gold,
        spearman_sc: None,
        spearman_glape: None,
        cleaning: None,
    };

    let accuracies: Option<Vec<f64>> = if has_gold {
        Some(
            pool.iter()
                .map(|p| accuracy(&p.votes, &ds))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    write_prompts_csv(
        &report_dir.join("prompts.csv"),
        &snapshot,
        accuracies.as_deref(),
    )?;

    if let Some(acc) = &accuracies {
        if pool.len() >= 2 {
            let sc_col: Vec<f64> = snapshot.prompts.iter().map(|p| p.mean_sc).collect();
            let glape_col: Vec<f64> = snapshot.prompts.iter().map(|p| p.glape_mean).collect();
            summary.spearman_sc = spearman(&sc_col, acc)?;
            summary.spearman_glape = spearman(&glape_col, acc)?;
        }
        write_score_accuracy_csv(
            &report_dir.join("sc_accuracy.csv"),
            &snapshot,
            acc,
            |p| p.mean_sc,
            "mean_sc",
        )?;
        write_score_accuracy_csv(
            &report_dir.join("glape_accuracy.csv"),
            &snapshot,
            acc,
            |p| p.glape_mean,
            "glape_mean",
        )?;
        if pool.len() >= 2 {
            let pool_votes: Vec<(String, Vec<crate::optimizer::QuestionVote>)> = pool
                .iter()
                .map(|p| (p.prompt_id(), p.votes.clone()))
                .collect();
            let outcome = clean_dataset(&pool_votes, &ds)?;
            summary.cleaning = Some(cleaning_summary(
                &pool,
                &snapshot.per_question,
                &ds,
                &outcome,
                summary.spearman_glape,
                cfg.seed,
            )?);
        }
    }

    let text = render_summary(&cfg, &ds, &summary);
    let summary_path = report_dir.join("summary.txt");
    std::fs::write(&summary_path, text)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", summary_path.display())))?;
    Ok(summary)
}
