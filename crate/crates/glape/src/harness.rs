//! Gold-label analysis: accuracy, rank correlation, and dataset cleaning.
//!
//! Everything here consumes evaluation artifacts after the fact. The
//! optimizer never calls into this module, so runs on unlabeled data remain
//! possible; these functions error when a needed gold label is absent.

use std::collections::{HashMap, HashSet};

use crate::answers::CanonicalAnswer;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::optimizer::QuestionVote;

fn gold_map(ds: &Dataset) -> Result<HashMap<&str, &CanonicalAnswer>> {
    ds.records
        .iter()
        .map(|r| {
            r.gold_answer
                .as_ref()
                .map(|g| (r.id.as_str(), g))
                .ok_or_else(|| {
                    Error::Data(format!("question \"{}\" has no gold answer", r.id))
                })
        })
        .collect()
}

/// Fraction of questions whose majority answer matches gold, as a
/// percentage.
pub fn accuracy(votes: &[QuestionVote], ds: &Dataset) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::Data("cannot compute accuracy of zero votes".into()));
    }
    let gold = gold_map(ds)?;
    let mut correct = 0usize;
    for v in votes {
        let g = gold.get(v.question_id.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "vote references unknown question \"{}\"",
                v.question_id
            ))
        })?;
        if v.vote.answer.as_ref() == Some(*g) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / votes.len() as f64)
}

/// Self-consistency scores split by whether the majority answer was correct.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectnessSplit {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

pub fn sc_by_correctness(votes: &[QuestionVote], ds: &Dataset) -> Result<CorrectnessSplit> {
    let gold = gold_map(ds)?;
    let mut split = CorrectnessSplit::default();
    for v in votes {
        let g = gold.get(v.question_id.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "vote references unknown question \"{}\"",
                v.question_id
            ))
        })?;
        if v.vote.answer.as_ref() == Some(*g) {
            split.correct.push(v.vote.sc);
        } else {
            split.incorrect.push(v.vote.sc);
        }
    }
    Ok(split)
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks, which
/// handles ties. Returns `Ok(None)` when either side is constant (no ranking
/// exists to correlate).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "rank correlation needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Data(
            "rank correlation needs at least two observations".into(),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Data(
            "rank correlation inputs must be finite".into(),
        ));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean;
        let dy = y - mean;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (var_a * var_b).sqrt()))
}

/// Outcome of reliability cleaning.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    /// Ids kept, in dataset order.
    pub kept: Vec<String>,
    /// Ids removed, in dataset order.
    pub removed: Vec<String>,
}

/// Remove questions no prompt answers both correctly and confidently: a
/// question is kept only if some prompt's majority answer matches gold with
/// a self-consistency strictly above 50. Deterministic, so running it on an
/// already cleaned set removes nothing.
pub fn clean_dataset(
    pool_votes: &[(String, Vec<QuestionVote>)],
    ds: &Dataset,
) -> Result<CleanOutcome> {
    if pool_votes.is_empty() {
        return Err(Error::Data("cleaning needs at least one prompt".into()));
    }
    let gold = gold_map(ds)?;
    let mut reliable: HashSet<&str> = HashSet::new();
    for (_, votes) in pool_votes {
        for v in votes {
            let g = gold.get(v.question_id.as_str()).ok_or_else(|| {
                Error::Data(format!(
                    "vote references unknown question \"{}\"",
                    v.question_id
                ))
            })?;
            if v.vote.answer.as_ref() == Some(*g) && v.vote.sc > 50.0 {
                reliable.insert(v.question_id.as_str());
            }
        }
    }
    let mut outcome = CleanOutcome {
        kept: Vec::new(),
        removed: Vec::new(),
    };
    for r in &ds.records {
        if reliable.contains(r.id.as_str()) {
            outcome.kept.push(r.id.clone());
        } else {
            outcome.removed.push(r.id.clone());
        }
    }
    Ok(outcome)
}
