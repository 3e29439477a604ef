//! Prompt evaluation and the optimization loop.
//!
//! The loop keeps a pool of evaluated prompts. Each iteration scores the
//! pool (self-consistency refined across prompts), renders the scored pool
//! into a meta-prompt, asks the optimization backend for new candidates,
//! evaluates the novel ones, and checkpoints. Gold labels are never read
//! here; the pool is scored purely from answer agreement, and a dataset
//! without labels optimizes identically.

pub mod store;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answers::{vote, ResponseSet, VoteResult};
use crate::backend::{Backend, BackendError, ChatRequest, Purpose};
use crate::config::{AppConfig, RoleConfig};
use crate::dataset::{load_dataset, sample_subset, Dataset};
use crate::error::{Error, Result};
use crate::solver::{
    glape_aggregate, refine_question, PromptEntry, PromptScore, QuestionEntries, RefinedScores,
    SolverConfig,
};

pub use store::{Checkpoint, PromptDetail, RunStore, TrajectoryEntry};

/// Vote outcome for one question, in dataset order within a prompt's
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionVote {
    pub question_id: String,
    pub vote: VoteResult,
}

/// A pool member: one prompt with its per-question votes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedPrompt {
    pub index: usize,
    pub iteration: usize,
    pub prompt_text: String,
    pub votes: Vec<QuestionVote>,
    pub mean_sc: f64,
}

impl EvaluatedPrompt {
    pub fn prompt_id(&self) -> String {
        store::prompt_id(self.index)
    }
}

/// The instruction is appended after the question, separated by a blank
/// line.
pub fn compose_user_text(question: &str, prompt: &str) -> String {
    format!("{question}\n\n{prompt}")
}

pub fn mean_sc(votes: &[QuestionVote]) -> f64 {
    if votes.is_empty() {
        return 0.0;
    }
    votes.iter().map(|v| v.vote.sc).sum::<f64>() / votes.len() as f64
}

/// Sample and vote one prompt over every question in the dataset.
pub fn evaluate_prompt(
    prompt: &str,
    ds: &Dataset,
    backend: &dyn Backend,
    role: &RoleConfig,
) -> std::result::Result<Vec<QuestionVote>, BackendError> {
    let mut votes = Vec::with_capacity(ds.records.len());
    for q in &ds.records {
        let req = ChatRequest {
            model_id: role.model.clone(),
            system_text: role.system_text.clone(),
            user_text: compose_user_text(&q.question, prompt),
            temperature: role.temperature,
            n_samples: role.n_samples,
            max_tokens: role.max_tokens,
            purpose: Purpose::Evaluation,
        };
        let responses = backend.complete(&req)?;
        let set = ResponseSet {
            prompt_id: prompt.to_string(),
            question_id: q.id.clone(),
            responses,
        };
        votes.push(QuestionVote {
            question_id: q.id.clone(),
            vote: vote(&set, q.task_kind, q.options.as_deref()),
        });
    }
    Ok(votes)
}

/// Refine the whole pool question by question and aggregate per prompt.
/// Every pool member must carry votes for the same question sequence.
pub fn score_pool(
    pool: &[EvaluatedPrompt],
    cfg: &SolverConfig,
) -> Result<(Vec<PromptScore>, Vec<RefinedScores>)> {
    let first = pool
        .first()
        .ok_or_else(|| Error::Data("cannot score an empty prompt pool".into()))?;
    let qids: Vec<&str> = first.votes.iter().map(|v| v.question_id.as_str()).collect();
    for p in pool {
        if p.votes.len() != qids.len() {
            return Err(Error::Data(format!(
                "prompt {} covers {} questions, expected {}",
                p.prompt_id(),
                p.votes.len(),
                qids.len()
            )));
        }
        for (v, qid) in p.votes.iter().zip(&qids) {
            if v.question_id != *qid {
                return Err(Error::Data(format!(
                    "prompt {} has vote for \"{}\" where \"{qid}\" was expected",
                    p.prompt_id(),
                    v.question_id
                )));
            }
        }
    }
    let refined: Vec<RefinedScores> = (0..qids.len())
        .map(|qi| {
            let entries = pool
                .iter()
                .map(|p| PromptEntry {
                    prompt_id: p.prompt_id(),
                    answer: p.votes[qi].vote.answer.clone(),
                    sc: p.votes[qi].vote.sc,
                })
                .collect();
            refine_question(
                &QuestionEntries {
                    question_id: qids[qi].to_string(),
                    entries,
                },
                cfg,
            )
        })
        .collect();
    let scores = pool
        .iter()
        .map(|p| glape_aggregate(&refined, &p.prompt_id()))
        .collect::<Result<Vec<_>>>()?;
    Ok((scores, refined))
}

const META_HEADER: &str = "I have some texts along with their corresponding scores. \
The texts are arranged in ascending order based on their scores, where higher scores \
indicate better quality.";
const META_FOOTER: &str = "Write your new text that is different from the old ones and \
has a score as high as possible. Write the text in square brackets.";

/// Render the scored pool into the optimizer's input. Shows at most `top_k`
/// best entries, ascending by score, each with its mean rounded to one
/// decimal.
pub fn build_meta_prompt(scored: &[(String, f64)], top_k: usize) -> String {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then(a.cmp(&b)));
    let shown = &order[order.len().saturating_sub(top_k)..];
    let mut out = String::from(META_HEADER);
    out.push_str("\n\n");
    for &i in shown {
        let (text, score) = &scored[i];
        out.push_str(&format!("text:\n{text}\nscore:\n{score:.1}\n\n"));
    }
    out.push_str(META_FOOTER);
    out
}

/// The candidate is the last square-bracketed span in a completion.
pub fn parse_candidate(text: &str) -> Option<String> {
    let close = text.rfind(']')?;
    let open = text[..close].rfind('[')?;
    let inner = text[open + 1..close].trim();
    (!inner.is_empty()).then(|| inner.to_string())
}

/// Key used to deduplicate candidate prompts: runs of whitespace collapse,
/// case and punctuation stay significant.
pub fn dedup_key(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Ask the optimization backend for `count` samples and keep parseable
/// candidates not already in `existing`, in sample order.
pub fn propose_candidates(
    meta_prompt: &str,
    backend: &dyn Backend,
    role: &RoleConfig,
    count: usize,
    existing: &HashSet<String>,
) -> std::result::Result<Vec<String>, BackendError> {
    let req = ChatRequest {
        model_id: role.model.clone(),
        system_text: role.system_text.clone(),
        user_text: meta_prompt.to_string(),
        temperature: role.temperature,
        n_samples: count,
        max_tokens: role.max_tokens,
        purpose: Purpose::Optimization,
    };
    let responses = backend.complete(&req)?;
    let mut seen: HashSet<String> = existing.clone();
    let mut novel = Vec::new();
    for r in &responses {
        match parse_candidate(&r.text) {
            Some(candidate) => {
                if seen.insert(dedup_key(&candidate)) {
                    novel.push(candidate);
                }
            }
            None => {
                tracing::warn!(sample = r.sample_index, "proposal has no bracketed candidate");
            }
        }
    }
    Ok(novel)
}

/// Final pool-wide scores, persisted as `scores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub prompt_id: String,
    pub iteration: usize,
    pub prompt_text: String,
    pub glape_total: f64,
    pub glape_mean: f64,
    pub mean_sc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresSnapshot {
    pub pool_size: usize,
    pub question_count: usize,
    pub prompts: Vec<ScoredPrompt>,
    pub per_question: Vec<RefinedScores>,
}

/// Highest aggregate score wins; ties go to the earliest evaluated prompt.
pub fn select_best(prompts: &[ScoredPrompt]) -> Option<&ScoredPrompt> {
    let mut best: Option<&ScoredPrompt> = None;
    for p in prompts {
        if best.map_or(true, |b| p.glape_total > b.glape_total) {
            best = Some(p);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: ScoredPrompt,
    pub scores: ScoresSnapshot,
    pub completed_iterations: usize,
    pub stop_reason: String,
}

pub const STOP_BUDGET: &str = "budget_exhausted";
pub const STOP_NO_NOVEL: &str = "no_novel_candidates";

/// Test hook: when this variable holds an iteration number, the process
/// exits right after the first trajectory append of that iteration, leaving
/// a partial iteration behind the checkpoint.
pub const CRASH_ENV: &str = "GLAPE_TEST_CRASH_AFTER_ITER";

fn crash_target() -> Option<usize> {
    std::env::var(CRASH_ENV).ok().and_then(|v| v.parse().ok())
}

/// Errors that condemn one candidate but not the run.
fn is_candidate_local(e: &BackendError) -> bool {
    matches!(
        e,
        BackendError::ReplayMiss(_) | BackendError::MalformedPayload(_)
    )
}

/// Dataset a run evaluates on: the configured file, subset applied.
pub fn load_run_dataset(cfg: &AppConfig) -> Result<Dataset> {
    let full = load_dataset(Path::new(&cfg.dataset.path), cfg.dataset.task_kind)?;
    match cfg.dataset.subset_size {
        Some(n) => sample_subset(&full, n, cfg.subset_seed()),
        None => Ok(full),
    }
}

/// Rebuild the evaluated pool from a run directory's trajectory and details.
pub fn load_pool(store: &RunStore) -> Result<Vec<EvaluatedPrompt>> {
    let entries = store.load_entries()?;
    let mut pool = Vec::with_capacity(entries.len());
    for (pos, e) in entries.into_iter().enumerate() {
        if e.index != pos {
            return Err(Error::Data(format!(
                "trajectory index {} found at position {pos}",
                e.index
            )));
        }
        let detail = store.load_detail(&e.detail_ref)?;
        pool.push(EvaluatedPrompt {
            index: e.index,
            iteration: e.iteration,
            prompt_text: e.prompt_text,
            votes: detail.votes,
            mean_sc: e.mean_sc,
        });
    }
    Ok(pool)
}

pub fn snapshot_scores(
    pool: &[EvaluatedPrompt],
    cfg: &SolverConfig,
) -> Result<ScoresSnapshot> {
    let (scores, refined) = score_pool(pool, cfg)?;
    let prompts = pool
        .iter()
        .zip(&scores)
        .map(|(p, s)| ScoredPrompt {
            prompt_id: p.prompt_id(),
            iteration: p.iteration,
            prompt_text: p.prompt_text.clone(),
            glape_total: s.total,
            glape_mean: s.mean,
            mean_sc: p.mean_sc,
        })
        .collect();
    Ok(ScoresSnapshot {
        pool_size: pool.len(),
        question_count: pool.first().map_or(0, |p| p.votes.len()),
        prompts,
        per_question: refined,
    })
}

/// Drive the full loop against a run directory. With `resume` the directory
/// must hold a checkpoint; trajectory entries past it are discarded and the
/// run continues as if never interrupted.
pub fn run_optimization(cfg: &AppConfig, run_dir: &Path, resume: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let ds = load_run_dataset(cfg)?;
    let eval_backend = cfg.evaluation.build_backend(cfg.seed)?;
    let opt_backend = cfg.optimization.build_backend(cfg.seed)?;
    let crash_target = crash_target();

    let store;
    let mut pool: Vec<EvaluatedPrompt> = Vec::new();
    let mut completed: usize = 0;
    let mut stop_reason: Option<String> = None;

    if resume {
        store = RunStore::open(run_dir)?;
        let ck = store.load_checkpoint()?.ok_or_else(|| {
            Error::Data(format!(
                "{} has no checkpoint; it cannot be resumed",
                run_dir.display()
            ))
        })?;
        completed = ck.completed_iterations;
        stop_reason = ck.stop_reason;
        let entries = store.load_entries()?;
        let kept: Vec<TrajectoryEntry> = entries
            .into_iter()
            .filter(|e| e.iteration <= completed)
            .collect();
        store.rewrite_entries(&kept)?;
        pool = load_pool(&store)?;
        tracing::info!(
            entries = pool.len(),
            completed_iterations = completed,
            "resuming run"
        );
    } else {
        store = RunStore::create(run_dir, cfg)?;
    }

    let mut append_prompt =
        |pool: &mut Vec<EvaluatedPrompt>, iteration: usize, text: String, votes: Vec<QuestionVote>| -> Result<()> {
            let index = pool.len();
            let evaluated = EvaluatedPrompt {
                index,
                iteration,
                prompt_text: text,
                mean_sc: mean_sc(&votes),
                votes,
            };
            let detail_ref = store.write_detail(&PromptDetail {
                prompt_id: evaluated.prompt_id(),
                prompt_text: evaluated.prompt_text.clone(),
                votes: evaluated.votes.clone(),
            })?;
            store.append_entry(&TrajectoryEntry {
                index,
                iteration,
                prompt_text: evaluated.prompt_text.clone(),
                mean_sc: evaluated.mean_sc,
                detail_ref,
            })?;
            tracing::info!(
                prompt = %evaluated.prompt_id(),
                iteration,
                mean_sc = evaluated.mean_sc,
                "evaluated prompt"
            );
            pool.push(evaluated);
            Ok(())
        };

    if pool.is_empty() {
        let mut last_skip: Option<BackendError> = None;
        let initial = cfg.optimizer.initial_prompts.clone();
        for text in initial {
            match evaluate_prompt(&text, &ds, eval_backend.as_ref(), &cfg.evaluation) {
                Ok(votes) => append_prompt(&mut pool, 0, text, votes)?,
                Err(e) if is_candidate_local(&e) => {
                    tracing::warn!(prompt = %text, error = %e, "initial prompt left unevaluated");
                    last_skip = Some(e);
                }
                Err(e) => return Err(e.into()),
            }
        }
        if pool.is_empty() {
            return Err(last_skip
                .map(Error::from)
                .unwrap_or_else(|| Error::Data("no initial prompts to evaluate".into())));
        }
        store.write_checkpoint(&Checkpoint {
            completed_iterations: 0,
            stop_reason: None,
        })?;
    }

    for iteration in (completed + 1)..=cfg.optimizer.iterations {
        if stop_reason.is_some() {
            break;
        }
        let (scores, _) = score_pool(&pool, &cfg.solver)?;
        let scored: Vec<(String, f64)> = pool
            .iter()
            .zip(&scores)
            .map(|(p, s)| (p.prompt_text.clone(), s.mean))
            .collect();
        let meta = build_meta_prompt(&scored, cfg.optimizer.top_k);
        let existing: HashSet<String> = pool.iter().map(|p| dedup_key(&p.prompt_text)).collect();
        let candidates = propose_candidates(
            &meta,
            opt_backend.as_ref(),
            &cfg.optimization,
            cfg.optimizer.candidates_per_iteration,
            &existing,
        )
        .map_err(Error::from)?;
        if candidates.is_empty() {
            tracing::info!(iteration, "no novel candidates; stopping early");
            stop_reason = Some(STOP_NO_NOVEL.to_string());
            completed = iteration;
            store.write_checkpoint(&Checkpoint {
                completed_iterations: iteration,
                stop_reason: stop_reason.clone(),
            })?;
            break;
        }
        let mut appended = 0usize;
        for text in candidates {
            match evaluate_prompt(&text, &ds, eval_backend.as_ref(), &cfg.evaluation) {
                Ok(votes) => {
                    append_prompt(&mut pool, iteration, text, votes)?;
                    appended += 1;
                    if crash_target == Some(iteration) && appended == 1 {
                        tracing::error!(iteration, "test hook: exiting mid-iteration");
                        std::process::exit(86);
                    }
                }
                Err(e) if is_candidate_local(&e) => {
                    tracing::warn!(prompt = %text, error = %e, "candidate left unevaluated");
                }
                Err(e) => return Err(e.into()),
            }
        }
        completed = iteration;
        store.write_checkpoint(&Checkpoint {
            completed_iterations: iteration,
            stop_reason: None,
        })?;
    }

    let snapshot = snapshot_scores(&pool, &cfg.solver)?;
    store.write_scores(&snapshot)?;
    let best = select_best(&snapshot.prompts)
        .expect("non-empty pool has a best prompt")
        .clone();
    let stop_reason = stop_reason.unwrap_or_else(|| STOP_BUDGET.to_string());
    tracing::info!(
        best = %best.prompt_id,
        glape_mean = best.glape_mean,
        stop = %stop_reason,
        "run finished"
    );
    Ok(RunOutcome {
        best,
        scores: snapshot,
        completed_iterations: completed,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answers::CanonicalAnswer;

    #[test]
    fn user_text_puts_question_first() {
        let s = compose_user_text("How many apples?", "Think hard.");
        assert_eq!(s, "How many apples?\n\nThink hard.");
    }

    #[test]
    fn meta_prompt_is_ascending_with_rounded_scores() {
        let scored = vec![
            ("prompt a".to_string(), 75.04),
            ("prompt b".to_string(), 68.91),
            ("prompt c".to_string(), 71.0),
        ];
        let meta = build_meta_prompt(&scored, 20);
        let pos = |needle: &str| meta.find(needle).unwrap_or_else(|| panic!("missing {needle:?}"));
        assert!(pos("prompt b") < pos("prompt c"));
        assert!(pos("prompt c") < pos("prompt a"));
        assert!(meta.contains("score:\n68.9\n"));
        assert!(meta.contains("score:\n75.0\n"));
        assert!(meta.starts_with(META_HEADER));
        assert!(meta.ends_with(META_FOOTER));
    }

    #[test]
    fn meta_prompt_keeps_only_top_k() {
        let scored: Vec<(String, f64)> =
            (0..30).map(|i| (format!("p{i:02}"), i as f64)).collect();
        let meta = build_meta_prompt(&scored, 20);
        assert!(!meta.contains("text:\np09\n"));
        assert!(meta.contains("text:\np10\n"));
        assert!(meta.contains("text:\np29\n"));
    }

    #[test]
    fn candidate_parsing_takes_last_bracketed_span() {
        assert_eq!(
            parse_candidate("Sure [draft one] and final: [Let's verify each step.]"),
            Some("Let's verify each step.".to_string())
        );
        assert_eq!(parse_candidate("no brackets at all"), None);
        assert_eq!(parse_candidate("empty [  ] span"), None);
    }

    #[test]
    fn dedup_key_collapses_whitespace_only() {
        assert_eq!(dedup_key("a  b\tc"), dedup_key("a b c"));
        assert_ne!(dedup_key("A b"), dedup_key("a b"));
    }

    fn pool_member(index: usize, qids: &[&str], answer: &str, sc: f64) -> EvaluatedPrompt {
        let votes: Vec<QuestionVote> = qids
            .iter()
            .map(|q| QuestionVote {
                question_id: (*q).to_string(),
                vote: VoteResult {
                    answer: Some(CanonicalAnswer::Numeric(answer.to_string())),
                    sc,
                    tally: vec![(CanonicalAnswer::Numeric(answer.to_string()), 1)],
                    failures: 0,
                },
            })
            .collect();
        EvaluatedPrompt {
            index,
            iteration: 0,
            prompt_text: format!("prompt {index}"),
            mean_sc: sc,
            votes,
        }
    }

    #[test]
    fn score_pool_requires_aligned_questions() {
        let a = pool_member(0, &["q1", "q2"], "5", 80.0);
        let b = pool_member(1, &["q1"], "5", 60.0);
        let err = score_pool(&[a, b], &SolverConfig::default()).unwrap_err();
        assert!(err.to_string().contains("p001"), "got: {err}");
    }

    #[test]
    fn score_pool_refines_agreeing_prompts() {
        let a = pool_member(0, &["q1"], "5", 100.0);
        let b = pool_member(1, &["q1"], "5", 70.0);
        let (scores, refined) = score_pool(&[a, b], &SolverConfig::default()).unwrap();
        assert_eq!(refined.len(), 1);
        assert!((scores[0].total - 90.0).abs() < 1e-9);
        assert!((scores[1].total - 80.0).abs() < 1e-9);
    }

    #[test]
    fn best_prompt_ties_go_to_earliest() {
        let mk = |id: &str, total: f64| ScoredPrompt {
            prompt_id: id.to_string(),
            iteration: 0,
            prompt_text: id.to_string(),
            glape_total: total,
            glape_mean: total,
            mean_sc: 0.0,
        };
        let prompts = vec![mk("p000", 70.0), mk("p001", 90.0), mk("p002", 90.0)];
        assert_eq!(select_best(&prompts).unwrap().prompt_id, "p001");
    }
}
