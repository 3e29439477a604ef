//! Answer extraction, canonicalization, and self-consistency voting.
//!
//! Raw completion text is reduced to a [`CanonicalAnswer`] so that surface
//! variants ("$1,000.00", "1000") land in the same bucket before majority
//! voting. Canonicalization is exact string normalization, never float
//! parsing, so values like very long integers survive intact.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Answer format of a task; drives both extraction and gold parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Numeric,
    MultipleChoice,
    Boolean,
    Freeform,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Numeric => "numeric",
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::Boolean => "boolean",
            TaskKind::Freeform => "freeform",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(TaskKind::Numeric),
            "multiple_choice" => Ok(TaskKind::MultipleChoice),
            "boolean" => Ok(TaskKind::Boolean),
            "freeform" => Ok(TaskKind::Freeform),
            other => Err(format!(
                "unknown task kind {other:?} (expected numeric, multiple_choice, boolean, or freeform)"
            )),
        }
    }
}

/// A normalized answer. Two responses agree exactly when their canonical
/// answers are equal.
///
/// `Numeric` holds a canonical decimal string (no separators, no leading
/// zeros, no trailing fractional zeros, `-0` collapsed to `0`), compared as
/// an exact decimal rather than a float.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CanonicalAnswer {
    Numeric(String),
    MultipleChoice(char),
    Boolean(bool),
    Freeform(String),
}

impl CanonicalAnswer {
    fn variant_rank(&self) -> u8 {
        match self {
            CanonicalAnswer::Numeric(_) => 0,
            CanonicalAnswer::MultipleChoice(_) => 1,
            CanonicalAnswer::Boolean(_) => 2,
            CanonicalAnswer::Freeform(_) => 3,
        }
    }

    /// Gold-file representation; feeding it back through gold parsing yields
    /// the same answer.
    pub fn as_gold_string(&self) -> String {
        match self {
            CanonicalAnswer::Numeric(v) => v.clone(),
            CanonicalAnswer::MultipleChoice(c) => c.to_string(),
            CanonicalAnswer::Boolean(true) => "yes".to_string(),
            CanonicalAnswer::Boolean(false) => "no".to_string(),
            CanonicalAnswer::Freeform(v) => v.clone(),
        }
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_gold_string())
    }
}

impl Ord for CanonicalAnswer {
    fn cmp(&self, other: &Self) -> Ordering {
        use CanonicalAnswer::*;
        match (self, other) {
            (Numeric(a), Numeric(b)) => cmp_decimal(a, b).then_with(|| a.cmp(b)),
            (MultipleChoice(a), MultipleChoice(b)) => a.cmp(b),
            (Boolean(a), Boolean(b)) => a.cmp(b),
            (Freeform(a), Freeform(b)) => a.cmp(b),
            (a, b) => a.variant_rank().cmp(&b.variant_rank()),
        }
    }
}

impl PartialOrd for CanonicalAnswer {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact comparison of two canonical decimal strings by numeric value.
fn cmp_decimal(a: &str, b: &str) -> Ordering {
    let a_neg = a.starts_with('-');
    let b_neg = b.starts_with('-');
    match (a_neg, b_neg) {
        (true, false) => return Ordering::Less,
        (false, true) => return Ordering::Greater,
        _ => {}
    }
    let ord = cmp_decimal_magnitude(a.trim_start_matches('-'), b.trim_start_matches('-'));
    if a_neg {
        ord.reverse()
    } else {
        ord
    }
}

fn cmp_decimal_magnitude(a: &str, b: &str) -> Ordering {
    let (ai, af) = a.split_once('.').unwrap_or((a, ""));
    let (bi, bf) = b.split_once('.').unwrap_or((b, ""));
    // canonical integer parts have no leading zeros, so longer means larger
    ai.len()
        .cmp(&bi.len())
        .then_with(|| ai.cmp(bi))
        // canonical fractions have no trailing zeros, so a strict prefix is smaller
        .then_with(|| af.cmp(bf))
}

/// Why extraction produced no answer. Failed extractions still count toward
/// the vote denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionFailure {
    NoNumberFound,
    NoOptionFound,
    NoBooleanFound,
    NoAnswerCue,
}

impl fmt::Display for ExtractionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExtractionFailure::NoNumberFound => "no number found",
            ExtractionFailure::NoOptionFound => "no option letter found",
            ExtractionFailure::NoBooleanFound => "no yes/no found",
            ExtractionFailure::NoAnswerCue => "no answer cue found",
        };
        f.write_str(s)
    }
}

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?[$€£¥]?\d[\d,]*(?:\.\d+)?%?").unwrap());
static ANSWER_CUE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\banswer\b\s*(?:is|:)?").unwrap());
static BOOL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());
static PAREN_OPTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").unwrap());
static LEADING_OPTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\s\*]*\(?([A-Za-z])\)?(?:[\s.,:;!?]|$)").unwrap());

/// Normalize a decimal literal: strip thousands separators, currency symbols,
/// and a trailing percent sign; drop leading integer zeros and trailing
/// fractional zeros; collapse `-0` to `0`. Returns `None` when the remaining
/// string is not a plain decimal.
fn normalize_decimal(raw: &str) -> Option<String> {
    let mut s: String = raw
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | '$' | '€' | '£' | '¥'))
        .collect();
    if s.ends_with('%') {
        s.pop();
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s.as_str())),
    };
    let (int_part, frac_part) = rest.split_once('.').unwrap_or((rest, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let int_norm = {
        let t = int_part.trim_start_matches('0');
        if t.is_empty() { "0" } else { t }
    };
    let frac_norm = frac_part.trim_end_matches('0');
    let mut out = String::new();
    if neg && !(int_norm == "0" && frac_norm.is_empty()) {
        out.push('-');
    }
    out.push_str(int_norm);
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    Some(out)
}

/// Lowercase, collapse runs of whitespace, and strip trailing terminal
/// punctuation until a fixpoint, so the result is idempotent.
fn normalize_freeform(raw: &str) -> String {
    let folded = raw.to_lowercase();
    let mut s = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let t = s.trim_end().trim_end_matches(['.', '!', '?']).to_string();
        if t == s {
            break;
        }
        s = t;
    }
    s
}

fn parse_boolean_word(raw: &str) -> Option<bool> {
    match normalize_freeform(raw).as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// Parse a gold answer from its dataset string form.
pub fn canonicalize_gold(
    raw: &str,
    kind: TaskKind,
    options: Option<&[String]>,
) -> Result<CanonicalAnswer, ExtractionFailure> {
    match kind {
        TaskKind::Numeric => normalize_decimal(raw)
            .map(CanonicalAnswer::Numeric)
            .ok_or(ExtractionFailure::NoNumberFound),
        TaskKind::MultipleChoice => {
            let trimmed = raw.trim().trim_matches(['(', ')']);
            let mut chars = trimmed.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_alphabetic() => {
                    let letter = c.to_ascii_uppercase();
                    if option_in_range(letter, options) {
                        Ok(CanonicalAnswer::MultipleChoice(letter))
                    } else {
                        Err(ExtractionFailure::NoOptionFound)
                    }
                }
                _ => Err(ExtractionFailure::NoOptionFound),
            }
        }
        TaskKind::Boolean => parse_boolean_word(raw)
            .map(CanonicalAnswer::Boolean)
            .ok_or(ExtractionFailure::NoBooleanFound),
        TaskKind::Freeform => {
            let v = normalize_freeform(raw);
            if v.is_empty() {
                Err(ExtractionFailure::NoAnswerCue)
            } else {
                Ok(CanonicalAnswer::Freeform(v))
            }
        }
    }
}

fn option_in_range(letter: char, options: Option<&[String]>) -> bool {
    match options {
        Some(opts) if !opts.is_empty() => {
            let last = (b'A' + (opts.len() - 1).min(25) as u8) as char;
            ('A'..=last).contains(&letter)
        }
        _ => letter.is_ascii_uppercase(),
    }
}

/// Extract a canonical answer from one completion.
///
/// Numeric: the first number after the last "answer" cue that has one, else
/// the last number anywhere. Multiple choice: the last in-range option letter
/// that is parenthesized or follows a cue. Boolean: the first standalone
/// yes/no. Freeform: the text after the last cue.
pub fn extract_answer(
    text: &str,
    kind: TaskKind,
    options: Option<&[String]>,
) -> Result<CanonicalAnswer, ExtractionFailure> {
    match kind {
        TaskKind::Numeric => extract_numeric(text),
        TaskKind::MultipleChoice => extract_multiple_choice(text, options),
        TaskKind::Boolean => extract_boolean(text),
        TaskKind::Freeform => extract_freeform(text),
    }
}

fn extract_numeric(text: &str) -> Result<CanonicalAnswer, ExtractionFailure> {
    let cue_ends: Vec<usize> = ANSWER_CUE_RE.find_iter(text).map(|m| m.end()).collect();
    for &end in cue_ends.iter().rev() {
        if let Some(m) = NUMBER_RE.find_at(text, end) {
            if let Some(v) = normalize_decimal(m.as_str()) {
                return Ok(CanonicalAnswer::Numeric(v));
            }
        }
    }
    let last = NUMBER_RE
        .find_iter(text)
        .last()
        .ok_or(ExtractionFailure::NoNumberFound)?;
    normalize_decimal(last.as_str())
        .map(CanonicalAnswer::Numeric)
        .ok_or(ExtractionFailure::NoNumberFound)
}

fn extract_multiple_choice(
    text: &str,
    options: Option<&[String]>,
) -> Result<CanonicalAnswer, ExtractionFailure> {
    let mut found: Option<(usize, char)> = None;
    let mut consider = |pos: usize, raw: char| {
        let letter = raw.to_ascii_uppercase();
        if option_in_range(letter, options) && found.map_or(true, |(p, _)| pos > p) {
            found = Some((pos, letter));
        }
    };
    for caps in PAREN_OPTION_RE.captures_iter(text) {
        let m = caps.get(1).unwrap();
        consider(m.start(), m.as_str().chars().next().unwrap());
    }
    for cue in ANSWER_CUE_RE.find_iter(text) {
        if let Some(caps) = LEADING_OPTION_RE.captures(&text[cue.end()..]) {
            let m = caps.get(1).unwrap();
            consider(cue.end() + m.start(), m.as_str().chars().next().unwrap());
        }
    }
    found
        .map(|(_, c)| CanonicalAnswer::MultipleChoice(c))
        .ok_or(ExtractionFailure::NoOptionFound)
}

fn extract_boolean(text: &str) -> Result<CanonicalAnswer, ExtractionFailure> {
    BOOL_RE
        .find(text)
        .map(|m| CanonicalAnswer::Boolean(m.as_str().eq_ignore_ascii_case("yes")))
        .ok_or(ExtractionFailure::NoBooleanFound)
}

fn extract_freeform(text: &str) -> Result<CanonicalAnswer, ExtractionFailure> {
    let cue = ANSWER_CUE_RE
        .find_iter(text)
        .last()
        .ok_or(ExtractionFailure::NoAnswerCue)?;
    let tail = normalize_freeform(&text[cue.end()..]);
    if tail.is_empty() {
        Err(ExtractionFailure::NoAnswerCue)
    } else {
        Ok(CanonicalAnswer::Freeform(tail))
    }
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub sample_index: usize,
    pub text: String,
}

/// All samples for one (prompt, question) pair.
#[derive(Debug, Clone)]
pub struct ResponseSet {
    pub prompt_id: String,
    pub question_id: String,
    pub responses: Vec<RawResponse>,
}

/// Majority-vote outcome for one (prompt, question) pair.
///
/// `sc` is on a 0..=100 scale: 100 * (votes for the winner) / (all samples,
/// including extraction failures). `answer` is `None` only when every sample
/// failed extraction. The tally is sorted ascending by canonical answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub answer: Option<CanonicalAnswer>,
    pub sc: f64,
    pub tally: Vec<(CanonicalAnswer, u32)>,
    pub failures: u32,
}

/// Majority-vote over a response set. Ties break toward the smallest answer
/// in canonical order, so the result is independent of sample order.
pub fn vote(set: &ResponseSet, kind: TaskKind, options: Option<&[String]>) -> VoteResult {
    assert!(!set.responses.is_empty(), "vote over empty response set");
    let mut tally: BTreeMap<CanonicalAnswer, u32> = BTreeMap::new();
    let mut failures = 0u32;
    for r in &set.responses {
        match extract_answer(&r.text, kind, options) {
            Ok(a) => *tally.entry(a).or_insert(0) += 1,
            Err(_) => failures += 1,
        }
    }
    let mut answer = None;
    let mut best = 0u32;
    for (a, &count) in &tally {
        if count > best {
            best = count;
            answer = Some(a.clone());
        }
    }
    let sc = 100.0 * f64::from(best) / set.responses.len() as f64;
    VoteResult {
        answer,
        sc,
        tally: tally.into_iter().collect(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(texts: &[&str]) -> ResponseSet {
        ResponseSet {
            prompt_id: "p".into(),
            question_id: "q".into(),
            responses: texts
                .iter()
                .enumerate()
                .map(|(i, t)| RawResponse {
                    sample_index: i,
                    text: (*t).to_string(),
                })
                .collect(),
        }
    }

    fn numeric_set(values: &[&str]) -> ResponseSet {
        let texts: Vec<String> = values
            .iter()
            .map(|v| format!("The answer is {v}."))
            .collect();
        ResponseSet {
            prompt_id: "p".into(),
            question_id: "q".into(),
            responses: texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| RawResponse {
                    sample_index: i,
                    text,
                })
                .collect(),
        }
    }

    #[test]
    fn numeric_cue_takes_priority() {
        let got = extract_answer(
            "She starts with 4 and buys 5 more boxes of 6. The answer is 34.",
            TaskKind::Numeric,
            None,
        );
        assert_eq!(got, Ok(CanonicalAnswer::Numeric("34".into())));
    }

    #[test]
    fn numeric_last_cue_wins() {
        let got = extract_answer(
            "A wrong answer is 12. Rechecking, the answer is 31.",
            TaskKind::Numeric,
            None,
        );
        assert_eq!(got, Ok(CanonicalAnswer::Numeric("31".into())));
    }

    #[test]
    fn numeric_falls_back_to_last_number() {
        let got = extract_answer("4 + 5 * 6 = 34", TaskKind::Numeric, None);
        assert_eq!(got, Ok(CanonicalAnswer::Numeric("34".into())));
    }

    #[test]
    fn numeric_cue_without_number_falls_back() {
        let got = extract_answer(
            "We compute 7 * 3 = 21. The answer is unclear.",
            TaskKind::Numeric,
            None,
        );
        assert_eq!(got, Ok(CanonicalAnswer::Numeric("21".into())));
    }

    #[test]
    fn numeric_strips_currency_separators_percent() {
        for (raw, want) in [
            ("The answer is $1,000.00.", "1000"),
            ("The answer is 50%.", "50"),
            ("The answer is €2,500", "2500"),
            ("The answer is -4.50", "-4.5"),
        ] {
            assert_eq!(
                extract_answer(raw, TaskKind::Numeric, None),
                Ok(CanonicalAnswer::Numeric(want.into())),
                "raw: {raw}"
            );
        }
    }

    #[test]
    fn numeric_none_found() {
        assert_eq!(
            extract_answer("no digits here", TaskKind::Numeric, None),
            Err(ExtractionFailure::NoNumberFound)
        );
    }

    #[test]
    fn decimal_normalization_cases() {
        for (raw, want) in [
            ("31", "31"),
            ("0031", "31"),
            ("31.0", "31"),
            ("-0", "0"),
            ("-0.0", "0"),
            ("0.50", "0.5"),
            ("1,234,567", "1234567"),
            ("$99.90", "99.9"),
            ("12%", "12"),
            ("+17", "17"),
        ] {
            assert_eq!(normalize_decimal(raw).as_deref(), Some(want), "raw: {raw}");
        }
        assert_eq!(normalize_decimal("abc"), None);
        assert_eq!(normalize_decimal(""), None);
    }

    #[test]
    fn decimal_ordering_is_numeric_not_lexicographic() {
        let a = CanonicalAnswer::Numeric("9".into());
        let b = CanonicalAnswer::Numeric("10".into());
        assert!(a < b);
        let c = CanonicalAnswer::Numeric("-10".into());
        let d = CanonicalAnswer::Numeric("-9".into());
        assert!(c < d);
        let e = CanonicalAnswer::Numeric("1.25".into());
        let f = CanonicalAnswer::Numeric("1.5".into());
        assert!(e < f);
    }

    #[test]
    fn multiple_choice_last_mention_wins() {
        let opts: Vec<String> = ["12", "16", "20", "24"].iter().map(|s| s.to_string()).collect();
        let got = extract_answer(
            "Option (A) fails the check. The answer is (C).",
            TaskKind::MultipleChoice,
            Some(&opts),
        );
        assert_eq!(got, Ok(CanonicalAnswer::MultipleChoice('C')));
    }

    #[test]
    fn multiple_choice_after_cue_without_parens() {
        let opts: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        let got = extract_answer("The answer is b.", TaskKind::MultipleChoice, Some(&opts));
        assert_eq!(got, Ok(CanonicalAnswer::MultipleChoice('B')));
    }

    #[test]
    fn multiple_choice_ignores_out_of_range_letters() {
        let opts: Vec<String> = ["1", "2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            extract_answer("The answer is (F).", TaskKind::MultipleChoice, Some(&opts)),
            Err(ExtractionFailure::NoOptionFound)
        );
    }

    #[test]
    fn multiple_choice_cue_followed_by_word_is_not_an_option() {
        let opts: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            extract_answer("The answer is Boston.", TaskKind::MultipleChoice, Some(&opts)),
            Err(ExtractionFailure::NoOptionFound)
        );
    }

    #[test]
    fn boolean_first_standalone_word() {
        let got = extract_answer(
            "No. Iggy Pop, whose real name is James Newell Osterberg Jr., does not use his birth name as a stage name.",
            TaskKind::Boolean,
            None,
        );
        assert_eq!(got, Ok(CanonicalAnswer::Boolean(false)));
        assert_eq!(
            extract_answer("Yes, that follows.", TaskKind::Boolean, None),
            Ok(CanonicalAnswer::Boolean(true))
        );
        assert_eq!(
            extract_answer("It is unknowable.", TaskKind::Boolean, None),
            Err(ExtractionFailure::NoBooleanFound)
        );
    }

    #[test]
    fn boolean_embedded_words_do_not_match() {
        // "nose" and "yesterday" contain yes/no but are not standalone
        assert_eq!(
            extract_answer("Yesterday his nose grew.", TaskKind::Boolean, None),
            Err(ExtractionFailure::NoBooleanFound)
        );
    }

    #[test]
    fn freeform_tail_after_last_cue() {
        let got = extract_answer(
            "Some reasoning. The answer is  Paris .",
            TaskKind::Freeform,
            None,
        );
        assert_eq!(got, Ok(CanonicalAnswer::Freeform("paris".into())));
        assert_eq!(
            extract_answer("Just rambling text.", TaskKind::Freeform, None),
            Err(ExtractionFailure::NoAnswerCue)
        );
    }

    #[test]
    fn freeform_normalization_fixpoint() {
        assert_eq!(normalize_freeform("  The   Cat. ! "), "the cat");
        assert_eq!(normalize_freeform("x. !"), "x");
        let once = normalize_freeform("A b. !");
        assert_eq!(normalize_freeform(&once), once);
    }

    #[test]
    fn gold_parsing_round_trip() {
        let cases = [
            ("31", TaskKind::Numeric),
            ("yes", TaskKind::Boolean),
            ("false", TaskKind::Boolean),
            ("(b)", TaskKind::MultipleChoice),
            ("Paris, France.", TaskKind::Freeform),
        ];
        for (raw, kind) in cases {
            let a = canonicalize_gold(raw, kind, None).unwrap();
            let again = canonicalize_gold(&a.as_gold_string(), kind, None).unwrap();
            assert_eq!(a, again, "raw: {raw}");
        }
    }

    #[test]
    fn vote_unanimous_scores_100() {
        let s = numeric_set(&["31"; 10]);
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, Some(CanonicalAnswer::Numeric("31".into())));
        assert_eq!(v.sc, 100.0);
        assert_eq!(v.failures, 0);
    }

    #[test]
    fn vote_majority_of_ten() {
        let s = numeric_set(&["19", "31", "31", "31", "31", "31", "31", "31", "36", "36"]);
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, Some(CanonicalAnswer::Numeric("31".into())));
        assert_eq!(v.sc, 70.0);
    }

    #[test]
    fn vote_tie_breaks_to_smallest_answer() {
        let s = numeric_set(&["36", "36", "31", "31"]);
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, Some(CanonicalAnswer::Numeric("31".into())));
        assert_eq!(v.sc, 50.0);
    }

    #[test]
    fn vote_failures_stay_in_denominator() {
        let mut s = numeric_set(&["8", "8", "8"]);
        s.responses.push(RawResponse {
            sample_index: 3,
            text: "no idea".into(),
        });
        s.responses.push(RawResponse {
            sample_index: 4,
            text: "cannot tell".into(),
        });
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, Some(CanonicalAnswer::Numeric("8".into())));
        assert_eq!(v.sc, 60.0);
        assert_eq!(v.failures, 2);
    }

    #[test]
    fn vote_all_failures_yields_no_answer() {
        let s = set(&["nothing", "nada"]);
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, None);
        assert_eq!(v.sc, 0.0);
        assert_eq!(v.failures, 2);
    }

    #[test]
    fn vote_surface_variants_agree() {
        let s = numeric_set(&["1,000", "$1000", "1000.00"]);
        let v = vote(&s, TaskKind::Numeric, None);
        assert_eq!(v.answer, Some(CanonicalAnswer::Numeric("1000".into())));
        assert_eq!(v.sc, 100.0);
    }

    proptest! {
        #[test]
        fn freeform_normalization_idempotent(raw in "\\PC{0,60}") {
            let once = normalize_freeform(&raw);
            prop_assert_eq!(normalize_freeform(&once), once);
        }

        #[test]
        fn decimal_normalization_idempotent(int in 0u64..1_000_000, frac in 0u32..10_000) {
            let raw = format!("{int}.{frac:04}");
            let once = normalize_decimal(&raw).unwrap();
            prop_assert_eq!(normalize_decimal(&once).as_deref(), Some(once.as_str()));
        }

        #[test]
        fn vote_counts_are_conserved(values in proptest::collection::vec(0u8..5, 1..30)) {
            let texts: Vec<String> = values.iter().map(|v| match v {
                4 => "no parse here".to_string(),
                v => format!("The answer is {v}."),
            }).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let v = vote(&set(&refs), TaskKind::Numeric, None);
            let tallied: u32 = v.tally.iter().map(|(_, c)| c).sum();
            prop_assert_eq!(tallied + v.failures, values.len() as u32);
            prop_assert!(v.sc >= 0.0 && v.sc <= 100.0);
            if v.answer.is_some() {
                prop_assert!(v.sc > 0.0);
            }
        }
    }
}
