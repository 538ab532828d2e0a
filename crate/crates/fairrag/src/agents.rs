//! Prompt templates and agent-output parsers.
//!
//! Templates live as external UTF-8 files under `prompts/` and are also
//! compiled in as defaults. Placeholders use single-brace `{name}` syntax.
//! Every parser returns a typed value or [`Error::Parse`] carrying the raw
//! text — none panic on arbitrary input.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;

use crate::domain::{Answer, Disclaimer, QueryClass, SeaReport, SubQuery, SubQueryOrigin};
use crate::error::{Error, Result};

/// Sentinel emitted when a ruling-style question is answered.
pub const FATWA_SENTINEL: &str = "[هشدار] من مرجع صدور فتوا نیستم";
/// Sentinel prefixed to answers built from limited evidence.
pub const PARTIAL_SENTINEL: &str = "[هشدار] اطلاعات کاملی برای پاسخ قطعی به این پرسش در شواهد موجود یافت نشده";
/// Sentinel returned when no evidence was relevant at all.
pub const NO_EVIDENCE_SENTINEL: &str =
    "[هشدار] متأسفانه، شواهد ارائه شده حاوی اطلاعات مرتبطی برای پاسخ به این پرسش نبودند";

fn placeholder_regex() -> Regex {
    Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("static regex")
}

/// A prompt body with `{name}` slots.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let placeholders = placeholder_regex()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        PromptTemplate {
            name: name.into(),
            body,
            placeholders,
        }
    }

    /// Exact substitution, no escaping. Fails on the first unbound slot.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = self.body.clone();
        for ph in &self.placeholders {
            match bindings.get(ph.as_str()) {
                Some(value) => out = out.replace(&format!("{{{ph}}}"), value),
                None => {
                    return Err(Error::MissingPlaceholder {
                        template: self.name.clone(),
                        placeholder: ph.clone(),
                    })
                }
            }
        }
        Ok(out)
    }
}

/// The full set of templates the pipeline and eval harness use.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    pub validator: PromptTemplate,
    pub decomposer: PromptTemplate,
    pub filter: PromptTemplate,
    pub sea: PromptTemplate,
    pub refiner: PromptTemplate,
    pub generator: PromptTemplate,
    pub direct_answer: PromptTemplate,
    pub judges: BTreeMap<String, PromptTemplate>,
    pub failure_analysis: PromptTemplate,
}

const JUDGE_NAMES: [&str; 10] = [
    "decomposition_score",
    "filter_audit",
    "sufficiency",
    "refinement_score",
    "context_relevance",
    "faithfulness",
    "relevance_correctness",
    "negative_rejection",
    "noise_robustness",
    "iterative_ranking",
];

impl PromptLibrary {
    /// Templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut judges = BTreeMap::new();
        let judge_bodies: [(&str, &str); 10] = [
            (
                "decomposition_score",
                include_str!("../prompts/judges/decomposition_score.txt"),
            ),
            (
                "filter_audit",
                include_str!("../prompts/judges/filter_audit.txt"),
            ),
            (
                "sufficiency",
                include_str!("../prompts/judges/sufficiency.txt"),
            ),
            (
                "refinement_score",
                include_str!("../prompts/judges/refinement_score.txt"),
            ),
            (
                "context_relevance",
                include_str!("../prompts/judges/context_relevance.txt"),
            ),
            (
                "faithfulness",
                include_str!("../prompts/judges/faithfulness.txt"),
            ),
            (
                "relevance_correctness",
                include_str!("../prompts/judges/relevance_correctness.txt"),
            ),
            (
                "negative_rejection",
                include_str!("../prompts/judges/negative_rejection.txt"),
            ),
            (
                "noise_robustness",
                include_str!("../prompts/judges/noise_robustness.txt"),
            ),
            (
                "iterative_ranking",
                include_str!("../prompts/judges/iterative_ranking.txt"),
            ),
        ];
        for (name, body) in judge_bodies {
            judges.insert(name.to_string(), PromptTemplate::new(name, body));
        }
        PromptLibrary {
            validator: PromptTemplate::new("validator", include_str!("../prompts/validator.txt")),
            decomposer: PromptTemplate::new(
                "decomposer",
                include_str!("../prompts/decomposer.txt"),
            ),
            filter: PromptTemplate::new("filter", include_str!("../prompts/filter.txt")),
            sea: PromptTemplate::new("sea", include_str!("../prompts/sea.txt")),
            refiner: PromptTemplate::new("refiner", include_str!("../prompts/refiner.txt")),
            generator: PromptTemplate::new("generator", include_str!("../prompts/generator.txt")),
            direct_answer: PromptTemplate::new(
                "direct_answer",
                include_str!("../prompts/direct_answer.txt"),
            ),
            judges,
            failure_analysis: PromptTemplate::new(
                "failure_analysis",
                include_str!("../prompts/failure_analysis.txt"),
            ),
        }
    }

    /// Loads every template from `dir`, so users can edit prompts without
    /// rebuilding. Expects the same layout the crate ships under `prompts/`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<PromptTemplate> {
            let path = dir.join(format!("{name}.txt"));
            let body = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("prompt file {}: {e}", path.display())))?;
            Ok(PromptTemplate::new(name, body))
        };
        let mut judges = BTreeMap::new();
        for name in JUDGE_NAMES {
            let path = dir.join("judges").join(format!("{name}.txt"));
            let body = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("prompt file {}: {e}", path.display())))?;
            judges.insert(name.to_string(), PromptTemplate::new(name, body));
        }
        Ok(PromptLibrary {
            validator: read("validator")?,
            decomposer: read("decomposer")?,
            filter: read("filter")?,
            sea: read("sea")?,
            refiner: read("refiner")?,
            generator: read("generator")?,
            direct_answer: read("direct_answer")?,
            judges,
            failure_analysis: read("failure_analysis")?,
        })
    }

    pub fn judge(&self, kind: JudgeKind) -> &PromptTemplate {
        self.judges
            .get(kind.as_str())
            .expect("library holds all judge kinds")
    }
}

/// Parses the validator's output into a triage label.
///
/// Accepts the label after a "Selected Label:" marker (same line or the
/// next non-empty line), or a bare label as the whole trimmed output.
pub fn parse_validation(raw: &str) -> Result<QueryClass> {
    let trimmed = raw.trim();
    if let Ok(class) = trimmed.parse::<QueryClass>() {
        return Ok(class);
    }
    let lines: Vec<&str> = raw.lines().collect();
    for (i, line) in lines.iter().enumerate().rev() {
        if let Some(pos) = line.find("Selected Label") {
            let after = line[pos + "Selected Label".len()..].trim_start_matches(':').trim();
            if let Some(class) = find_label(after) {
                return Ok(class);
            }
            for follow in &lines[i + 1..] {
                let follow = follow.trim();
                if follow.is_empty() {
                    continue;
                }
                if let Some(class) = find_label(follow) {
                    return Ok(class);
                }
                break;
            }
        }
    }
    // Last resort: a label token anywhere on the final non-empty line.
    if let Some(last) = lines.iter().rev().find(|l| !l.trim().is_empty()) {
        if let Some(class) = find_label(last) {
            return Ok(class);
        }
    }
    Err(Error::Parse {
        stage: "validator",
        message: "no recognizable class label".to_string(),
        raw: raw.to_string(),
    })
}

fn find_label(text: &str) -> Option<QueryClass> {
    // Longest labels first so VALID_OBVIOUS is not shadowed by a prefix.
    let mut best: Option<(usize, QueryClass)> = None;
    for class in QueryClass::ALL {
        if text.contains(class.label()) {
            let len = class.label().len();
            if best.map_or(true, |(l, _)| len > l) {
                best = Some((len, class));
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Collects hyphen-prefixed or numbered query lines, capped at 4.
pub fn parse_query_list(raw: &str, origin: SubQueryOrigin, iteration: usize) -> Result<Vec<SubQuery>> {
    let item = Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+)$").expect("static regex");
    let mut queries = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        if trimmed.ends_with("Queries:") || trimmed.ends_with("Queries (Output):") {
            // Header line; queries follow.
            continue;
        }
        if let Some(c) = item.captures(line) {
            let text = c[1].trim().to_string();
            if !text.is_empty() {
                queries.push(SubQuery {
                    text,
                    origin,
                    iteration,
                });
            }
        }
    }
    if queries.is_empty() {
        return Err(Error::Parse {
            stage: "query_list",
            message: "no hyphen-prefixed or numbered query lines".to_string(),
            raw: raw.to_string(),
        });
    }
    queries.truncate(4);
    Ok(queries)
}

/// The filter's decision over one batch of temporary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterVerdict {
    pub unhelpful_ids: BTreeSet<String>,
    /// Ids the model named that were not in the batch; dropped, not fatal.
    pub warnings: Vec<String>,
}

/// Parses "Unhelpful Document IDs: [doc_2], [doc_3]" or "None".
pub fn parse_filter(raw: &str, batch_ids: &BTreeSet<String>) -> Result<FilterVerdict> {
    let relevant = match raw.rfind("Unhelpful Document IDs") {
        Some(pos) => &raw[pos..],
        None => raw,
    };
    let id_re = Regex::new(r"\[(doc_[0-9]+)\]").expect("static regex");
    let mut unhelpful_ids = BTreeSet::new();
    let mut warnings = Vec::new();
    for c in id_re.captures_iter(relevant) {
        let id = c[1].to_string();
        if batch_ids.contains(&id) {
            unhelpful_ids.insert(id);
        } else {
            warnings.push(format!("filter named {id} outside the presented batch"));
        }
    }
    let saw_any_token = id_re.is_match(relevant);
    let none_re = Regex::new(r"(?i)\bnone\b").expect("static regex");
    if !saw_any_token && !none_re.is_match(relevant) {
        return Err(Error::Parse {
            stage: "filter",
            message: "output is neither \"None\" nor a list of [doc_X] ids".to_string(),
            raw: raw.to_string(),
        });
    }
    Ok(FilterVerdict {
        unhelpful_ids,
        warnings,
    })
}

/// Parses the structured assessment's prose sections and Yes/No verdict.
pub fn parse_sea(raw: &str) -> Result<SeaReport> {
    // Markdown emphasis is decoration only; strip it before sectioning.
    let clean = raw.replace("**", "").replace('*', "");
    const HEADERS: [&str; 6] = [
        "Main Goal:",
        "Required Findings:",
        "Confirmed Findings:",
        "Remaining Gaps:",
        "Conclusion:",
        "Sufficient:",
    ];
    let mut marks: Vec<(usize, &str)> = Vec::new();
    for header in HEADERS {
        if let Some(pos) = clean.find(header) {
            marks.push((pos, header));
        }
    }
    marks.sort();
    let section = |header: &str| -> String {
        let Some(&(start, _)) = marks.iter().find(|(_, h)| *h == header) else {
            return String::new();
        };
        let body_start = start + header.len();
        let end = marks
            .iter()
            .filter(|(p, _)| *p > start)
            .map(|(p, _)| *p)
            .min()
            .unwrap_or(clean.len());
        let mut slice = &clean[body_start..end];
        // Numbered section headings ("3. Final Assessment:") delimit
        // sections just like the named headers do.
        let heading = Regex::new(r"\n\s*\d+\.\s").expect("static regex");
        if let Some(m) = heading.find(slice) {
            slice = &slice[..m.start()];
        }
        let mut text = slice.trim().to_string();
        // Strip a trailing list bullet that belongs to the next section.
        while text.ends_with('-') || text.ends_with('#') {
            text.pop();
            text = text.trim_end().to_string();
        }
        text.trim_start_matches('-').trim().to_string()
    };

    let sufficient_text = section("Sufficient:");
    let word = sufficient_text
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric());
    let sufficient = if marks.iter().any(|(_, h)| *h == "Sufficient:") {
        if word.eq_ignore_ascii_case("yes") {
            true
        } else if word.eq_ignore_ascii_case("no") {
            false
        } else {
            return Err(Error::Parse {
                stage: "sea",
                message: format!("Sufficient verdict {word:?} is not Yes/No"),
                raw: raw.to_string(),
            });
        }
    } else {
        return Err(Error::Parse {
            stage: "sea",
            message: "missing Sufficient line".to_string(),
            raw: raw.to_string(),
        });
    };

    let findings_text = section("Required Findings:");
    let required_findings: Vec<String> = findings_text
        .split(';')
        .map(|s| s.trim().trim_end_matches('.').trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    Ok(SeaReport {
        main_goal: section("Main Goal:"),
        required_findings,
        confirmed_findings: section("Confirmed Findings:"),
        remaining_gaps: section("Remaining Gaps:"),
        conclusion: section("Conclusion:"),
        sufficient,
    })
}

/// Extracts `[k]` citations and the Persian sentinel disclaimers.
///
/// Text is preserved verbatim; citations are sorted and deduplicated.
/// Bracketed numbers above `n_evidence` are still reported so trace
/// validation can flag them.
pub fn parse_answer(raw: &str, _n_evidence: usize) -> Answer {
    let cite_re = Regex::new(r"\[(\d+)\]").expect("static regex");
    let mut citations: Vec<usize> = cite_re
        .captures_iter(raw)
        .filter_map(|c| c[1].parse::<usize>().ok())
        .collect();
    citations.sort_unstable();
    citations.dedup();

    let mut disclaimers = BTreeSet::new();
    if raw.contains(FATWA_SENTINEL) {
        disclaimers.insert(Disclaimer::FatwaWarning);
    }
    if raw.contains(PARTIAL_SENTINEL) {
        disclaimers.insert(Disclaimer::PartialEvidence);
    }
    if raw.contains(NO_EVIDENCE_SENTINEL) {
        disclaimers.insert(Disclaimer::NoEvidence);
    }

    Answer {
        text: raw.to_string(),
        citations,
        disclaimers,
    }
}

/// The eleven verdict schemas the evaluation judges emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JudgeKind {
    DecompositionScore,
    FilterAudit,
    Sufficiency,
    RefinementScore,
    ContextRelevance,
    Faithfulness,
    RelevanceCorrectness,
    NegativeRejection,
    NoiseRobustness,
    IterativeRanking,
    FailureMode,
}

impl JudgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JudgeKind::DecompositionScore => "decomposition_score",
            JudgeKind::FilterAudit => "filter_audit",
            JudgeKind::Sufficiency => "sufficiency",
            JudgeKind::RefinementScore => "refinement_score",
            JudgeKind::ContextRelevance => "context_relevance",
            JudgeKind::Faithfulness => "faithfulness",
            JudgeKind::RelevanceCorrectness => "relevance_correctness",
            JudgeKind::NegativeRejection => "negative_rejection",
            JudgeKind::NoiseRobustness => "noise_robustness",
            JudgeKind::IterativeRanking => "iterative_ranking",
            JudgeKind::FailureMode => "failure_mode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaithfulnessVerdict {
    FullyFaithful,
    PartiallyFaithful,
    NotFaithful,
}

impl FaithfulnessVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            FaithfulnessVerdict::FullyFaithful => "Fully Faithful",
            FaithfulnessVerdict::PartiallyFaithful => "Partially Faithful",
            FaithfulnessVerdict::NotFaithful => "Not Faithful",
        }
    }
}

/// The six root-cause categories of the failure-mode taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FailureCategory {
    QueryDecompositionError,
    RetrievalFailure,
    EvidenceFilteringError,
    SeaError,
    QueryRefinementError,
    GenerationFailure,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 6] = [
        FailureCategory::QueryDecompositionError,
        FailureCategory::RetrievalFailure,
        FailureCategory::EvidenceFilteringError,
        FailureCategory::SeaError,
        FailureCategory::QueryRefinementError,
        FailureCategory::GenerationFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::QueryDecompositionError => "Query Decomposition Error",
            FailureCategory::RetrievalFailure => "Retrieval Failure",
            FailureCategory::EvidenceFilteringError => "Evidence Filtering Error",
            FailureCategory::SeaError => "SEA Error",
            FailureCategory::QueryRefinementError => "Query Refinement Error",
            FailureCategory::GenerationFailure => "Generation Failure",
        }
    }
}

/// One parsed judge verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum JudgeVerdict {
    DecompositionScore { score: f64 },
    FilterAudit {
        incorrectly_kept_ids: Vec<String>,
        incorrectly_discarded_ids: Vec<String>,
    },
    Sufficiency { is_sufficient: bool },
    RefinementScore { score: f64 },
    ContextRelevance { scores: Vec<(String, f64)> },
    Faithfulness { verdict: FaithfulnessVerdict },
    RelevanceCorrectness {
        relevance_score: f64,
        correctness_score: f64,
    },
    NegativeRejection { correctly_rejected: bool },
    NoiseRobustness { is_robust: bool, is_correct: bool },
    IterativeRanking { ranking: Vec<String> },
    FailureMode { category: FailureCategory },
}

fn strip_code_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    // Prefer the outermost JSON object; judges wrap it in prose and fences.
    if let (Some(start), Some(end)) = (trimmed.find('{'), trimmed.rfind('}')) {
        if start < end {
            return &trimmed[start..=end];
        }
    }
    trimmed
}

fn parse_err(kind: JudgeKind, message: impl Into<String>, raw: &str) -> Error {
    Error::Parse {
        stage: "judge",
        message: format!("{}: {}", kind.as_str(), message.into()),
        raw: raw.to_string(),
    }
}

fn require_f64(v: &serde_json::Value, key: &str, kind: JudgeKind, raw: &str) -> Result<f64> {
    v.get(key)
        .and_then(|x| x.as_f64())
        .ok_or_else(|| parse_err(kind, format!("missing numeric {key:?}"), raw))
}

fn require_bool(v: &serde_json::Value, key: &str, kind: JudgeKind, raw: &str) -> Result<bool> {
    v.get(key)
        .and_then(|x| x.as_bool())
        .ok_or_else(|| parse_err(kind, format!("missing boolean {key:?}"), raw))
}

fn string_list(v: &serde_json::Value, key: &str, kind: JudgeKind, raw: &str) -> Result<Vec<String>> {
    let arr = v
        .get(key)
        .and_then(|x| x.as_array())
        .ok_or_else(|| parse_err(kind, format!("missing list {key:?}"), raw))?;
    arr.iter()
        .map(|x| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| parse_err(kind, format!("non-string entry in {key:?}"), raw))
        })
        .collect()
}

/// Strips code fences, parses the JSON object, and validates the schema.
pub fn parse_judge_json(raw: &str, kind: JudgeKind) -> Result<JudgeVerdict> {
    let body = strip_code_fences(raw);
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| parse_err(kind, format!("malformed JSON: {e}"), raw))?;

    match kind {
        JudgeKind::DecompositionScore => Ok(JudgeVerdict::DecompositionScore {
            score: require_f64(&value, "score", kind, raw)?,
        }),
        JudgeKind::FilterAudit => Ok(JudgeVerdict::FilterAudit {
            incorrectly_kept_ids: string_list(&value, "incorrectly_kept_ids", kind, raw)?,
            incorrectly_discarded_ids: string_list(
                &value,
                "incorrectly_discarded_ids",
                kind,
                raw,
            )?,
        }),
        JudgeKind::Sufficiency => Ok(JudgeVerdict::Sufficiency {
            is_sufficient: require_bool(&value, "is_sufficient", kind, raw)?,
        }),
        JudgeKind::RefinementScore => Ok(JudgeVerdict::RefinementScore {
            score: require_f64(&value, "score", kind, raw)?,
        }),
        JudgeKind::ContextRelevance => {
            let arr = value
                .get("relevance_scores")
                .and_then(|x| x.as_array())
                .ok_or_else(|| parse_err(kind, "missing list \"relevance_scores\"", raw))?;
            let mut scores = Vec::with_capacity(arr.len());
            for entry in arr {
                let doc_id = entry
                    .get("doc_id")
                    .and_then(|x| x.as_str())
                    .ok_or_else(|| parse_err(kind, "entry missing \"doc_id\"", raw))?;
                let score = require_f64(entry, "score", kind, raw)?;
                scores.push((doc_id.to_string(), score));
            }
            Ok(JudgeVerdict::ContextRelevance { scores })
        }
        JudgeKind::Faithfulness => {
            let verdict = value
                .get("faithfulness_verdict")
                .and_then(|x| x.as_str())
                .ok_or_else(|| parse_err(kind, "missing \"faithfulness_verdict\"", raw))?;
            let verdict = match verdict {
                "Fully Faithful" => FaithfulnessVerdict::FullyFaithful,
                "Partially Faithful" => FaithfulnessVerdict::PartiallyFaithful,
                "Not Faithful" => FaithfulnessVerdict::NotFaithful,
                other => {
                    return Err(parse_err(
                        kind,
                        format!("verdict {other:?} is not one of the three allowed strings"),
                        raw,
                    ))
                }
            };
            Ok(JudgeVerdict::Faithfulness { verdict })
        }
        JudgeKind::RelevanceCorrectness => Ok(JudgeVerdict::RelevanceCorrectness {
            relevance_score: require_f64(&value, "relevance_score", kind, raw)?,
            correctness_score: require_f64(&value, "correctness_score", kind, raw)?,
        }),
        JudgeKind::NegativeRejection => Ok(JudgeVerdict::NegativeRejection {
            correctly_rejected: require_bool(&value, "correctly_rejected", kind, raw)?,
        }),
        JudgeKind::NoiseRobustness => Ok(JudgeVerdict::NoiseRobustness {
            is_robust: require_bool(&value, "is_robust", kind, raw)?,
            is_correct: require_bool(&value, "is_correct", kind, raw)?,
        }),
        JudgeKind::IterativeRanking => {
            let ranking_str = value
                .get("ranking")
                .and_then(|x| x.as_str())
                .ok_or_else(|| parse_err(kind, "missing string \"ranking\"", raw))?;
            let id_re = Regex::new(r"^iter_\d+$").expect("static regex");
            let ranking: Vec<String> = ranking_str
                .split(',')
                .map(|s| s.trim().trim_matches('\'').trim_matches('"').to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if ranking.is_empty() {
                return Err(parse_err(kind, "empty ranking", raw));
            }
            for id in &ranking {
                if !id_re.is_match(id) {
                    return Err(parse_err(
                        kind,
                        format!("ranking entry {id:?} is not an iter_N id"),
                        raw,
                    ));
                }
            }
            Ok(JudgeVerdict::IterativeRanking { ranking })
        }
        JudgeKind::FailureMode => {
            let category = value
                .get("failure_category")
                .and_then(|x| x.as_str())
                .ok_or_else(|| parse_err(kind, "missing \"failure_category\"", raw))?;
            let category = FailureCategory::ALL
                .into_iter()
                .find(|c| c.as_str() == category)
                .ok_or_else(|| {
                    parse_err(
                        kind,
                        format!("category {category:?} is not in the six-way taxonomy"),
                        raw,
                    )
                })?;
            Ok(JudgeVerdict::FailureMode { category })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn render_substitutes_exactly() {
        let t = PromptTemplate::new("t", "ask: {user_query} end");
        let out = t.render(&bind(&[("user_query", "X")])).unwrap();
        assert_eq!(out, "ask: X end");
    }

    #[test]
    fn render_names_the_missing_placeholder() {
        let t = PromptTemplate::new("validator", "ask: {user_query}");
        let err = t.render(&BTreeMap::new()).unwrap_err();
        match err {
            Error::MissingPlaceholder { placeholder, template } => {
                assert_eq!(placeholder, "user_query");
                assert_eq!(template, "validator");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn render_without_placeholders_is_identity() {
        let t = PromptTemplate::new("t", "no slots here");
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), "no slots here");
    }

    #[test]
    fn builtin_library_has_expected_placeholders() {
        let lib = PromptLibrary::builtin();
        assert!(lib.validator.placeholders.contains("user_query"));
        assert!(lib.decomposer.placeholders.contains("user_query"));
        assert_eq!(
            lib.filter.placeholders,
            BTreeSet::from([
                "original_query".to_string(),
                "batch_number".to_string(),
                "numbered_candidates_text_for_prompt".to_string(),
            ])
        );
        assert!(lib.sea.placeholders.contains("combined_evidence"));
        assert!(lib.refiner.placeholders.contains("analysis_summary"));
        assert!(lib.refiner.placeholders.contains("combined_previous_queries"));
        assert!(lib.generator.placeholders.contains("combined_evidence"));
        assert!(lib.generator.placeholders.contains("original_query"));
        assert_eq!(lib.judges.len(), 10);
        assert!(lib.failure_analysis.placeholders.contains("iteration_reports"));
    }

    #[test]
    fn validation_accepts_marker_and_bare_forms() {
        assert_eq!(
            parse_validation("Selected Label: VALID_OBVIOUS").unwrap(),
            QueryClass::ValidObvious
        );
        assert_eq!(
            parse_validation("Selected Label:\nUNETHICAL").unwrap(),
            QueryClass::Unethical
        );
        assert_eq!(
            parse_validation("  VALID_REASONER  ").unwrap(),
            QueryClass::ValidReasoner
        );
        assert!(parse_validation("I think the answer is 42").is_err());
    }

    #[test]
    fn validation_uses_the_last_marker() {
        let raw = "Selected Label: VALID_SMALL\nOn reflection:\nSelected Label: VALID_LARGE";
        assert_eq!(parse_validation(raw).unwrap(), QueryClass::ValidLarge);
    }

    #[test]
    fn query_list_parses_numbered_output() {
        let raw = "Optimized Queries:\n1. تفسیر مفهوم عدالت در قرآن توسط متفکران اسلامی\n2. عدالت در حکومت از منظر فقه و فلسفه سیاسی اسلامی\n3. تحلیل تاریخی کاربرد عدالت قرآنی در مدیریت جامعه\n4. اندیشه سیاسی اسلامی و مفهوم عدالت\n";
        let qs = parse_query_list(raw, SubQueryOrigin::Decomposition, 1).unwrap();
        assert_eq!(qs.len(), 4);
        assert_eq!(qs[0].text, "تفسیر مفهوم عدالت در قرآن توسط متفکران اسلامی");
        assert_eq!(qs[3].text, "اندیشه سیاسی اسلامی و مفهوم عدالت");
    }

    #[test]
    fn query_list_parses_hyphen_output() {
        let raw = "Improved Queries:\n- Surah Yusuf total verses\n- Surah Yusuf verse count\n- Surah Yusuf chapter length\n";
        let qs = parse_query_list(raw, SubQueryOrigin::Refinement, 2).unwrap();
        assert_eq!(
            qs.iter().map(|q| q.text.as_str()).collect::<Vec<_>>(),
            vec![
                "Surah Yusuf total verses",
                "Surah Yusuf verse count",
                "Surah Yusuf chapter length"
            ]
        );
        assert!(qs.iter().all(|q| q.iteration == 2));
    }

    #[test]
    fn query_list_truncates_to_four() {
        let raw = "- a\n- b\n- c\n- d\n- e\n- f";
        let qs = parse_query_list(raw, SubQueryOrigin::Decomposition, 1).unwrap();
        assert_eq!(qs.len(), 4);
        assert_eq!(qs[3].text, "d");
    }

    #[test]
    fn query_list_errors_on_zero() {
        assert!(parse_query_list("no lists here", SubQueryOrigin::Decomposition, 1).is_err());
    }

    #[test]
    fn filter_parses_id_list() {
        let batch: BTreeSet<String> =
            ["doc_1", "doc_2", "doc_3"].iter().map(|s| s.to_string()).collect();
        let v = parse_filter("Unhelpful Document IDs: [doc_2], [doc_3]", &batch).unwrap();
        assert_eq!(
            v.unhelpful_ids,
            BTreeSet::from(["doc_2".to_string(), "doc_3".to_string()])
        );
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn filter_parses_none() {
        let batch: BTreeSet<String> = ["doc_1".to_string()].into();
        let v = parse_filter("None", &batch).unwrap();
        assert!(v.unhelpful_ids.is_empty());
    }

    #[test]
    fn filter_drops_out_of_batch_ids_with_warning() {
        let batch: BTreeSet<String> = ["doc_1".to_string(), "doc_2".to_string()].into();
        let v = parse_filter("[doc_9]", &batch).unwrap();
        assert!(v.unhelpful_ids.is_empty());
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].contains("doc_9"));
    }

    #[test]
    fn filter_rejects_unrecognizable_output() {
        let batch: BTreeSet<String> = ["doc_1".to_string()].into();
        assert!(parse_filter("all of them look fine to me", &batch).is_err());
    }

    #[test]
    fn sea_parses_insufficient_example() {
        let raw = "1. Mission Deconstruction:\n\n- **Main Goal:** To find the total number of verses in the surah revealed after the Prophet's night journey to Jerusalem.\n- **Required Findings:** A: The identification of the night journey event; B: The name of the surah revealed after this event; C: The total number of verses in that surah.\n\n2. Intelligence Synthesis & Analysis:\n\n- **Confirmed Findings:** A: The evidence confirms the night journey is Isra and Mi'raj. B: The evidence confirms the surah revealed after is Surah Al-Kahf.\n- **Remaining Gaps:** C: The total number of verses in Surah Al-Kahf.\n\n3. Final Assessment:\n\n- **Conclusion:** We have identified the night journey as Isra and Mi'raj and the surah revealed after as Surah Al-Kahf, but the evidence lacks the total number of verses in Surah Al-Kahf to answer the question.\n- **Sufficient:** No\n";
        let report = parse_sea(raw).unwrap();
        assert!(!report.sufficient);
        assert!(!report.gaps_empty());
        assert!(report.remaining_gaps.contains("Surah Al-Kahf"));
        assert_eq!(report.required_findings.len(), 3);
        assert!(report.main_goal.starts_with("To find the total number"));
    }

    #[test]
    fn sea_parses_sufficient_example() {
        let raw = "1. Mission Deconstruction:\n\n- **Main Goal:** To compare the construction dates of the mosque where the qibla was changed and the mosque built by the first muezzin.\n- **Required Findings:** A: The construction date of the mosque where the qibla was changed; B: The construction date of the mosque built by the first muezzin.\n\n2. Intelligence Synthesis & Analysis:\n\n- **Confirmed Findings:** A: Masjid al-Qiblatain, built in 2 AH (623 CE). B: Masjid Bilal, built in 14 AH (635 CE).\n- **Remaining Gaps:** None.\n\n3. Final Assessment:\n\n- **Conclusion:** We have found the construction dates for both required mosques and can therefore perform the comparison.\n- **Sufficient:** Yes\n";
        let report = parse_sea(raw).unwrap();
        assert!(report.sufficient);
        assert!(report.gaps_empty());
        assert_eq!(report.required_findings.len(), 2);
    }

    #[test]
    fn sea_rejects_non_yes_no_verdict() {
        assert!(parse_sea("- **Sufficient:** maybe").is_err());
        assert!(parse_sea("no verdict at all").is_err());
    }

    #[test]
    fn answer_extracts_sorted_unique_citations() {
        let raw = "حضرت یونس (ع) در نینوا [3] و حضرت ابراهیم (ع) در اور [1] زاده شد [2]. [1] [4]";
        let a = parse_answer(raw, 4);
        assert_eq!(a.citations, vec![1, 2, 3, 4]);
        assert!(a.disclaimers.is_empty());
        assert_eq!(a.text, raw);
    }

    #[test]
    fn answer_detects_sentinels() {
        let a = parse_answer(NO_EVIDENCE_SENTINEL, 3);
        assert!(a.disclaimers.contains(&Disclaimer::NoEvidence));
        assert!(a.citations.is_empty());

        let partial = format!("{PARTIAL_SENTINEL} با این حال [1]");
        let a = parse_answer(&partial, 2);
        assert!(a.disclaimers.contains(&Disclaimer::PartialEvidence));
        assert_eq!(a.citations, vec![1]);

        let fatwa = format!("{FATWA_SENTINEL}. پاسخ [2]");
        let a = parse_answer(&fatwa, 2);
        assert!(a.disclaimers.contains(&Disclaimer::FatwaWarning));
    }

    #[test]
    fn judge_faithfulness_accepts_the_three_verdicts() {
        let raw = r#"{"faithfulness_verdict": "Fully Faithful", "reasoning": "ok"}"#;
        let v = parse_judge_json(raw, JudgeKind::Faithfulness).unwrap();
        assert_eq!(
            v,
            JudgeVerdict::Faithfulness {
                verdict: FaithfulnessVerdict::FullyFaithful
            }
        );
        let raw = r#"{"faithfulness_verdict": "Mostly Faithful"}"#;
        assert!(parse_judge_json(raw, JudgeKind::Faithfulness).is_err());
    }

    #[test]
    fn judge_negative_rejection() {
        let v = parse_judge_json(r#"{"correctly_rejected": true}"#, JudgeKind::NegativeRejection)
            .unwrap();
        assert_eq!(
            v,
            JudgeVerdict::NegativeRejection {
                correctly_rejected: true
            }
        );
    }

    #[test]
    fn judge_strips_code_fences_and_prose() {
        let raw = "Here is my verdict:\n```json\n{\"score\": 4.5, \"reasoning\": \"good\"}\n```\n";
        let v = parse_judge_json(raw, JudgeKind::DecompositionScore).unwrap();
        assert_eq!(v, JudgeVerdict::DecompositionScore { score: 4.5 });
    }

    #[test]
    fn judge_failure_mode_validates_the_taxonomy() {
        let raw = r#"{"failure_category": "Retrieval Failure", "reasoning": "", "root_cause_analysis": "", "suggested_improvement": ""}"#;
        let v = parse_judge_json(raw, JudgeKind::FailureMode).unwrap();
        assert_eq!(
            v,
            JudgeVerdict::FailureMode {
                category: FailureCategory::RetrievalFailure
            }
        );
        let raw = r#"{"failure_category": "Retrieval Bug"}"#;
        assert!(parse_judge_json(raw, JudgeKind::FailureMode).is_err());
    }

    #[test]
    fn judge_iterative_ranking_parses_comma_list() {
        let raw = r#"{"ranking": "iter_3,iter_4,iter_2,iter_1", "reasoning": "later is better"}"#;
        let v = parse_judge_json(raw, JudgeKind::IterativeRanking).unwrap();
        assert_eq!(
            v,
            JudgeVerdict::IterativeRanking {
                ranking: vec![
                    "iter_3".to_string(),
                    "iter_4".to_string(),
                    "iter_2".to_string(),
                    "iter_1".to_string()
                ]
            }
        );
        let raw = r#"{"ranking": "third,first"}"#;
        assert!(parse_judge_json(raw, JudgeKind::IterativeRanking).is_err());
    }

    #[test]
    fn judge_filter_audit_parses_id_lists() {
        let raw = r#"{"incorrectly_kept_ids": ["c7"], "incorrectly_discarded_ids": []}"#;
        let v = parse_judge_json(raw, JudgeKind::FilterAudit).unwrap();
        assert_eq!(
            v,
            JudgeVerdict::FilterAudit {
                incorrectly_kept_ids: vec!["c7".to_string()],
                incorrectly_discarded_ids: vec![]
            }
        );
    }

    #[test]
    fn judge_context_relevance_parses_scores() {
        let raw = r#"{"relevance_scores": [{"doc_id": "a", "score": 5.0}, {"doc_id": "b", "score": 1.0}]}"#;
        let v = parse_judge_json(raw, JudgeKind::ContextRelevance).unwrap();
        assert_eq!(
            v,
            JudgeVerdict::ContextRelevance {
                scores: vec![("a".to_string(), 5.0), ("b".to_string(), 1.0)]
            }
        );
    }

    #[test]
    fn judge_rejects_malformed_json() {
        assert!(parse_judge_json("not json at all", JudgeKind::Sufficiency).is_err());
        assert!(parse_judge_json(r#"{"wrong_key": 1}"#, JudgeKind::Sufficiency).is_err());
    }

    #[test]
    fn library_loads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path();
        std::fs::create_dir(base.join("judges")).unwrap();
        let builtin = PromptLibrary::builtin();
        for (name, t) in [
            ("validator", &builtin.validator),
            ("decomposer", &builtin.decomposer),
            ("filter", &builtin.filter),
            ("sea", &builtin.sea),
            ("refiner", &builtin.refiner),
            ("generator", &builtin.generator),
            ("direct_answer", &builtin.direct_answer),
            ("failure_analysis", &builtin.failure_analysis),
        ] {
            std::fs::write(base.join(format!("{name}.txt")), &t.body).unwrap();
        }
        for (name, t) in &builtin.judges {
            std::fs::write(base.join("judges").join(format!("{name}.txt")), &t.body).unwrap();
        }
        let loaded = PromptLibrary::from_dir(base).unwrap();
        assert_eq!(loaded.validator.body, builtin.validator.body);
        assert_eq!(loaded.judges.len(), builtin.judges.len());
    }
}
