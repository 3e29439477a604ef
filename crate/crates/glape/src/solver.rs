//! Mutual-consistency refinement of self-consistency scores.
//!
//! For one question, each prompt i brings a majority answer and a raw
//! self-consistency score c_i in [0, 100]. Refinement finds scores f that
//! minimize
//!
//! ```text
//! alpha * sum_i (f_i - c_i)^2  +  (1 - alpha) * sum_{i<j, same answer} (f_i - f_j)^2
//! ```
//!
//! The loss separates over clusters of prompts sharing a majority answer
//! (prompts whose extraction failed form singleton clusters). Within a
//! cluster of size m, setting the gradient to zero gives
//!
//! ```text
//! alpha * (f_i - c_i) + (1 - alpha) * (m * f_i - sum_j f_j) = 0
//! ```
//!
//! Summing over i shows sum f = sum c, so each equation solves to
//!
//! ```text
//! f_i = (alpha * c_i + (1 - alpha) * sum_j c_j) / (alpha + (1 - alpha) * m)
//! ```
//!
//! a convex combination of the cluster's raw scores. That is the closed form
//! used by default; plain gradient descent on the same loss is kept as an
//! independent route and for cross-checking.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::answers::CanonicalAnswer;
use crate::error::{Error, Result};

/// One prompt's vote outcome on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub prompt_id: String,
    /// Majority answer; `None` when every sample failed extraction.
    pub answer: Option<CanonicalAnswer>,
    /// Raw self-consistency score in [0, 100].
    pub sc: f64,
}

/// All prompts' entries for one question, in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEntries {
    pub question_id: String,
    pub entries: Vec<PromptEntry>,
}

/// Refined scores for one question, `(prompt_id, f)` aligned with the input
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedScores {
    pub question_id: String,
    pub scores: Vec<(String, f64)>,
}

impl RefinedScores {
    pub fn score_for(&self, prompt_id: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|(id, _)| id == prompt_id)
            .map(|(_, f)| *f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ClosedForm,
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the self term; (1 - alpha) weighs the cross-prompt term.
    pub alpha: f64,
    pub method: SolveMethod,
    /// Gradient-descent step size. The descent map contracts only while
    /// lr < 1 / (alpha + (1 - alpha) * m) for the largest cluster size m,
    /// so the closed form is the default for big prompt pools.
    pub lr: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 0.5,
            method: SolveMethod::ClosedForm,
            lr: 0.05,
            max_iters: 100_000,
            grad_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "solver.alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "solver.lr must be positive, got {}",
                self.lr
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("solver.max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Group entry indices by equal majority answer, in order of first
/// appearance. Entries without an answer become singletons.
pub fn partition_clusters(q: &QuestionEntries) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut by_answer: HashMap<&CanonicalAnswer, usize> = HashMap::new();
    for (i, e) in q.entries.iter().enumerate() {
        match &e.answer {
            Some(a) => {
                if let Some(&k) = by_answer.get(a) {
                    clusters[k].push(i);
                } else {
                    by_answer.insert(a, clusters.len());
                    clusters.push(vec![i]);
                }
            }
            None => clusters.push(vec![i]),
        }
    }
    clusters
}

/// Exact minimizer for one cluster of raw scores.
pub fn solve_cluster(cs: &[f64], alpha: f64) -> Vec<f64> {
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    if cs.len() <= 1 || cs.windows(2).all(|w| w[0] == w[1]) {
        return cs.to_vec();
    }
    let m = cs.len() as f64;
    let sum: f64 = cs.iter().sum();
    let denom = alpha + (1.0 - alpha) * m;
    cs.iter()
        .map(|&c| (alpha * c + (1.0 - alpha) * sum) / denom)
        .collect()
}

/// Full refinement loss at `f`.
pub fn loss_total(q: &QuestionEntries, f: &[f64], alpha: f64) -> f64 {
    assert_eq!(q.entries.len(), f.len());
    let mut l_self = 0.0;
    for (fi, e) in f.iter().zip(&q.entries) {
        let d = fi - e.sc;
        l_self += d * d;
    }
    let mut l_cross = 0.0;
    for i in 0..f.len() {
        for j in (i + 1)..f.len() {
            if let (Some(a), Some(b)) = (&q.entries[i].answer, &q.entries[j].answer) {
                if a == b {
                    let d = f[i] - f[j];
                    l_cross += d * d;
                }
            }
        }
    }
    alpha * l_self + (1.0 - alpha) * l_cross
}

/// Analytic gradient of [`loss_total`] at `f`.
pub fn grad_total(q: &QuestionEntries, f: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(q.entries.len(), f.len());
    let mut g: Vec<f64> = f
        .iter()
        .zip(&q.entries)
        .map(|(fi, e)| 2.0 * alpha * (fi - e.sc))
        .collect();
    for i in 0..f.len() {
        for j in (i + 1)..f.len() {
            if let (Some(a), Some(b)) = (&q.entries[i].answer, &q.entries[j].answer) {
                if a == b {
                    let d = 2.0 * (1.0 - alpha) * (f[i] - f[j]);
                    g[i] += d;
                    g[j] -= d;
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdReport {
    pub converged: bool,
    pub iterations: usize,
    pub grad_inf_norm: f64,
}

/// Gradient descent on the refinement loss, starting from the raw scores.
/// On non-convergence the iterate with the smallest gradient norm is
/// returned along with the report.
pub fn gd_refine(q: &QuestionEntries, cfg: &SolverConfig) -> (RefinedScores, GdReport) {
    let mut f: Vec<f64> = q.entries.iter().map(|e| e.sc).collect();
    let mut best = f.clone();
    let mut best_norm = f64::INFINITY;
    let mut report = GdReport {
        converged: false,
        iterations: 0,
        grad_inf_norm: f64::INFINITY,
    };
    for it in 0..=cfg.max_iters {
        let g = grad_total(q, &f, cfg.alpha);
        let norm = g.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        if norm < best_norm {
            best_norm = norm;
            best.copy_from_slice(&f);
        }
        if norm < cfg.grad_tol {
            report = GdReport {
                converged: true,
                iterations: it,
                grad_inf_norm: norm,
            };
            break;
        }
        if it == cfg.max_iters {
            report = GdReport {
                converged: false,
                iterations: it,
                grad_inf_norm: best_norm,
            };
            break;
        }
        for (fi, gi) in f.iter_mut().zip(&g) {
            *fi -= cfg.lr * gi;
        }
    }
    let scores = q
        .entries
        .iter()
        .zip(&best)
        .map(|(e, &fi)| (e.prompt_id.clone(), fi))
        .collect();
    (
        RefinedScores {
            question_id: q.question_id.clone(),
            scores,
        },
        report,
    )
}

/// Refine one question's scores with the configured method.
pub fn refine_question(q: &QuestionEntries, cfg: &SolverConfig) -> RefinedScores {
    match cfg.method {
        SolveMethod::ClosedForm => {
            let mut f: Vec<f64> = q.entries.iter().map(|e| e.sc).collect();
            for cluster in partition_clusters(q) {
                let cs: Vec<f64> = cluster.iter().map(|&i| q.entries[i].sc).collect();
                for (&i, fi) in cluster.iter().zip(solve_cluster(&cs, cfg.alpha)) {
                    f[i] = fi;
                }
            }
            let scores = q
                .entries
                .iter()
                .zip(f)
                .map(|(e, fi)| (e.prompt_id.clone(), fi))
                .collect();
            RefinedScores {
                question_id: q.question_id.clone(),
                scores,
            }
        }
        SolveMethod::GradientDescent => {
            let (refined, report) = gd_refine(q, cfg);
            if !report.converged {
                tracing::warn!(
                    question = %q.question_id,
                    iterations = report.iterations,
                    grad_inf_norm = report.grad_inf_norm,
                    "refinement did not converge; returning best iterate"
                );
            }
            refined
        }
    }
}

/// A prompt's aggregate over a question set: the sum of refined per-question
/// scores, plus the mean for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub total: f64,
    pub mean: f64,
}

/// Sum one prompt's refined scores across questions.
pub fn glape_aggregate(per_question: &[RefinedScores], prompt_id: &str) -> Result<PromptScore> {
    if per_question.is_empty() {
        return Err(Error::Data(format!(
            "no refined questions to aggregate for prompt \"{prompt_id}\""
        )));
    }
    let mut total = 0.0;
    for rq in per_question {
        total += rq.score_for(prompt_id).ok_or_else(|| {
            Error::Data(format!(
                "prompt \"{prompt_id}\" missing from refined question \"{}\"",
                rq.question_id
            ))
        })?;
    }
    Ok(PromptScore {
        prompt_id: prompt_id.to_string(),
        total,
        mean: total / per_question.len() as f64,
    })
}
