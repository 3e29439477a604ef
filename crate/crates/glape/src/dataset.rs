//! Question datasets: JSON Lines loading, validation, and seeded subsetting.
//!
//! One JSON object per line: `{"id", "question", "answer"?, "options"?}`.
//! Gold answers are optional; every label-free code path works without them.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answers::{canonicalize_gold, CanonicalAnswer, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub task_kind: TaskKind,
    pub gold_answer: Option<CanonicalAnswer>,
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub task_kind: TaskKind,
    pub records: Vec<QuestionRecord>,
    /// Where the records came from, including any subsetting applied.
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_gold(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.gold_answer.is_some())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<String>>,
}

/// Load and validate a dataset. Blank lines are permitted; every other line
/// must parse, ids must be unique and non-empty, multiple-choice records need
/// at least two options, and any gold answer must canonicalize under `kind`.
pub fn load_dataset(path: &Path, kind: TaskKind) -> Result<Dataset> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}:{lineno}: invalid record: {e}", path.display()))
        })?;
        if parsed.id.trim().is_empty() {
            return Err(Error::Data(format!(
                "{}:{lineno}: record has an empty id",
                path.display()
            )));
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::Data(format!(
                "{}:{lineno}: duplicate id \"{}\"",
                path.display(),
                parsed.id
            )));
        }
        if parsed.question.trim().is_empty() {
            return Err(Error::Data(format!(
                "{}:{lineno}: record \"{}\" has an empty question",
                path.display(),
                parsed.id
            )));
        }
        match (kind, &parsed.options) {
            (TaskKind::MultipleChoice, Some(opts)) if opts.len() < 2 => {
                return Err(Error::Data(format!(
                    "{}:{lineno}: record \"{}\" needs at least two options",
                    path.display(),
                    parsed.id
                )));
            }
            (TaskKind::MultipleChoice, None) => {
                return Err(Error::Data(format!(
                    "{}:{lineno}: record \"{}\" is multiple choice but has no options",
                    path.display(),
                    parsed.id
                )));
            }
            (k, Some(_)) if k != TaskKind::MultipleChoice => {
                return Err(Error::Data(format!(
                    "{}:{lineno}: record \"{}\" has options but task kind is {k}",
                    path.display(),
                    parsed.id
                )));
            }
            _ => {}
        }
        let gold_answer = match &parsed.answer {
            Some(raw_gold) => Some(
                canonicalize_gold(raw_gold, kind, parsed.options.as_deref()).map_err(|e| {
                    Error::Data(format!(
                        "{}:{lineno}: gold answer {raw_gold:?} for \"{}\" is not {kind}: {e}",
                        path.display(),
                        parsed.id
                    ))
                })?,
            ),
            None => None,
        };
        records.push(QuestionRecord {
            id: parsed.id,
            question: parsed.question,
            task_kind: kind,
            gold_answer,
            options: parsed.options,
        });
    }
    if records.is_empty() {
        return Err(Error::Data(format!(
            "{}: dataset contains no records",
            path.display()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset {
        name,
        task_kind: kind,
        records,
        source: path.display().to_string(),
    })
}

/// Write a dataset back out as JSON Lines. Reloading the file with the same
/// task kind reproduces the records.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in &ds.records {
        let line = RecordLine {
            id: r.id.clone(),
            question: r.question.clone(),
            answer: r.gold_answer.as_ref().map(|a| a.as_gold_string()),
            options: r.options.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| Error::Data(format!("cannot write dataset {}: {e}", path.display())))
}

/// Draw a fixed subset of `n` records without replacement, keeping the
/// original dataset order. The draw depends only on (len, n, seed).
pub fn sample_subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.records.len() {
        return Err(Error::Data(format!(
            "subset size {n} out of range for dataset of {} records",
            ds.records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..ds.records.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..n].to_vec();
    chosen.sort_unstable();
    let records = chosen.iter().map(|&i| ds.records[i].clone()).collect();
    Ok(Dataset {
        name: ds.name.clone(),
        task_kind: ds.task_kind,
        records,
        source: format!("{}#subset(n={n},seed={seed})", ds.source),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_numeric_dataset_with_gold() {
        let f = write_lines(&[
            r#"{"id": "q1", "question": "2 + 2?", "answer": "4"}"#,
            "",
            r#"{"id": "q2", "question": "10 / 4?", "answer": "2.50"}"#,
        ]);
        let ds = load_dataset(f.path(), TaskKind::Numeric).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.has_gold());
        assert_eq!(
            ds.records[1].gold_answer,
            Some(CanonicalAnswer::Numeric("2.5".into()))
        );
    }

    #[test]
    fn duplicate_id_reports_line_number() {
        let f = write_lines(&[
            r#"{"id": "q1", "question": "a?"}"#,
            r#"{"id": "q1", "question": "b?"}"#,
        ]);
        let err = load_dataset(f.path(), TaskKind::Numeric).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "got: {msg}");
        assert!(msg.contains("duplicate id"), "got: {msg}");
    }

    #[test]
    fn multiple_choice_requires_options() {
        let f = write_lines(&[r#"{"id": "q1", "question": "pick one", "answer": "A"}"#]);
        let err = load_dataset(f.path(), TaskKind::MultipleChoice).unwrap_err();
        assert!(err.to_string().contains("no options"), "got: {err}");
    }

    #[test]
    fn gold_must_match_task_kind() {
        let f = write_lines(&[r#"{"id": "q1", "question": "2+2?", "answer": "four-ish"}"#]);
        let err = load_dataset(f.path(), TaskKind::Numeric).unwrap_err();
        assert!(err.to_string().contains("not numeric"), "got: {err}");
    }

    #[test]
    fn missing_gold_is_allowed() {
        let f = write_lines(&[r#"{"id": "q1", "question": "2+2?"}"#]);
        let ds = load_dataset(f.path(), TaskKind::Numeric).unwrap();
        assert!(!ds.has_gold());
        assert_eq!(ds.records[0].gold_answer, None);
    }

    #[test]
    fn save_then_load_round_trips() {
        let f = write_lines(&[
            r#"{"id": "q1", "question": "2 + 2?", "answer": "004.0"}"#,
            r#"{"id": "q2", "question": "1 - 3?", "answer": "-2"}"#,
        ]);
        let ds = load_dataset(f.path(), TaskKind::Numeric).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&ds, out.path()).unwrap();
        let again = load_dataset(out.path(), TaskKind::Numeric).unwrap();
        assert_eq!(ds.records, again.records);
    }

    fn toy_dataset(n: usize) -> Dataset {
        Dataset {
            name: "toy".into(),
            task_kind: TaskKind::Numeric,
            records: (0..n)
                .map(|i| QuestionRecord {
                    id: format!("q{i}"),
                    question: format!("what is {i}?"),
                    task_kind: TaskKind::Numeric,
                    gold_answer: None,
                    options: None,
                })
                .collect(),
            source: "toy".into(),
        }
    }

    #[test]
    fn subset_is_deterministic_and_ordered() {
        let ds = toy_dataset(50);
        let a = sample_subset(&ds, 10, 7).unwrap();
        let b = sample_subset(&ds, 10, 7).unwrap();
        let ids = |d: &Dataset| d.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.len(), 10);
        let positions: Vec<usize> = a
            .records
            .iter()
            .map(|r| r.id[1..].parse::<usize>().unwrap())
            .collect();
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        assert_eq!(positions, sorted, "subset must keep dataset order");
    }

    #[test]
    fn subset_differs_across_seeds() {
        let ds = toy_dataset(50);
        let a = sample_subset(&ds, 10, 1).unwrap();
        let b = sample_subset(&ds, 10, 2).unwrap();
        let ids = |d: &Dataset| d.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn subset_rejects_bad_sizes() {
        let ds = toy_dataset(5);
        assert!(sample_subset(&ds, 0, 1).is_err());
        assert!(sample_subset(&ds, 6, 1).is_err());
        assert_eq!(sample_subset(&ds, 5, 1).unwrap().len(), 5);
    }
}
