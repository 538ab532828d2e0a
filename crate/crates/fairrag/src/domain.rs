//! Core data types shared by every pipeline stage.
//!
//! All types here are immutable after construction and serialize to the
//! JSON forms used by trace files and the eval harness. The only behavior
//! is validation ([`validate_trace`]).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One searchable text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub text: String,
    pub source_url: String,
    pub token_count: usize,
    pub kind: ChunkKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Encyclopedia,
    Qa,
}

/// Six-way triage label driving routing and short-circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryClass {
    #[serde(rename = "VALID_OBVIOUS")]
    ValidObvious,
    #[serde(rename = "VALID_SMALL")]
    ValidSmall,
    #[serde(rename = "VALID_LARGE")]
    ValidLarge,
    #[serde(rename = "VALID_REASONER")]
    ValidReasoner,
    #[serde(rename = "OUT_OF_SCOPE_ISLAMIC")]
    OutOfScopeIslamic,
    #[serde(rename = "UNETHICAL")]
    Unethical,
}

impl QueryClass {
    pub const ALL: [QueryClass; 6] = [
        QueryClass::ValidObvious,
        QueryClass::ValidSmall,
        QueryClass::ValidLarge,
        QueryClass::ValidReasoner,
        QueryClass::OutOfScopeIslamic,
        QueryClass::Unethical,
    ];

    pub fn label(self) -> &'static str {
        match self {
            QueryClass::ValidObvious => "VALID_OBVIOUS",
            QueryClass::ValidSmall => "VALID_SMALL",
            QueryClass::ValidLarge => "VALID_LARGE",
            QueryClass::ValidReasoner => "VALID_REASONER",
            QueryClass::OutOfScopeIslamic => "OUT_OF_SCOPE_ISLAMIC",
            QueryClass::Unethical => "UNETHICAL",
        }
    }

    /// True for the classes that proceed into decomposition and retrieval.
    pub fn needs_retrieval(self) -> bool {
        matches!(
            self,
            QueryClass::ValidSmall | QueryClass::ValidLarge | QueryClass::ValidReasoner
        )
    }
}

impl FromStr for QueryClass {
    type Err = String;

    /// Parsing is total over exactly the six labels; anything else errors.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for class in QueryClass::ALL {
            if s == class.label() {
                return Ok(class);
            }
        }
        Err(format!("unknown query class label: {s:?}"))
    }
}

impl fmt::Display for QueryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Generator model size tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    Small,
    Large,
    Reasoner,
}

impl fmt::Display for ModelTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelTier::Small => "small",
            ModelTier::Large => "large",
            ModelTier::Reasoner => "reasoner",
        };
        f.write_str(s)
    }
}

/// Where a sub-query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubQueryOrigin {
    Decomposition,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuery {
    pub text: String,
    pub origin: SubQueryOrigin,
    /// 1-based iteration the sub-query was generated for.
    pub iteration: usize,
}

/// Parsed Structured Evidence Assessment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaReport {
    pub main_goal: String,
    pub required_findings: Vec<String>,
    pub confirmed_findings: String,
    /// May be "None" when no gaps remain.
    pub remaining_gaps: String,
    pub conclusion: String,
    pub sufficient: bool,
}

impl SeaReport {
    /// Whether the gaps field reads as empty.
    pub fn gaps_empty(&self) -> bool {
        let g = self.remaining_gaps.trim().trim_end_matches('.');
        g.is_empty() || g.eq_ignore_ascii_case("none")
    }
}

/// One pass of the retrieval/filter/assess loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    pub sub_queries: Vec<SubQuery>,
    /// Retrieved chunk ids, one list per sub-query, in sub-query order.
    pub retrieved_ids: Vec<Vec<String>>,
    /// Chunk ids the filter discarded during this iteration.
    pub discarded_ids: BTreeSet<String>,
    pub sea: SeaReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disclaimer {
    FatwaWarning,
    PartialEvidence,
    NoEvidence,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// 1-based indices into the evidence list supplied to generation.
    pub citations: Vec<usize>,
    pub disclaimers: BTreeSet<Disclaimer>,
}

/// Per-query call and token accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub api_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
    pub latency_s: f64,
}

/// Full execution record of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query: String,
    /// Absent when the validator itself failed.
    pub class: Option<QueryClass>,
    pub iterations: Vec<IterationRecord>,
    pub final_evidence: Vec<Chunk>,
    /// Absent when a stage aborted; see `error`.
    pub answer: Option<Answer>,
    pub accounting: Accounting,
    /// Name and message of the stage that aborted the pipeline, if any.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Checks every type invariant and returns a description per violation.
///
/// Violations are data, not failures: an ill-formed trace still loads.
pub fn validate_trace(trace: &QueryTrace, max_iter: usize) -> Vec<String> {
    let mut violations = Vec::new();

    if trace.iterations.len() > max_iter {
        violations.push(format!(
            "iterations {} > max_iter {max_iter}",
            trace.iterations.len()
        ));
    }

    let mut retrieved_so_far: BTreeSet<&str> = BTreeSet::new();
    for (pos, iter) in trace.iterations.iter().enumerate() {
        if iter.index != pos + 1 {
            violations.push(format!(
                "iteration at position {pos} has index {} (expected {})",
                iter.index,
                pos + 1
            ));
        }
        for sq in &iter.sub_queries {
            if sq.text.trim().is_empty() {
                violations.push(format!(
                    "iteration {}: sub_query text empty after trimming",
                    iter.index
                ));
            }
        }
        for ids in &iter.retrieved_ids {
            for id in ids {
                retrieved_so_far.insert(id.as_str());
            }
        }
        for id in &iter.discarded_ids {
            if !retrieved_so_far.contains(id.as_str()) {
                violations.push(format!(
                    "iteration {}: discarded id {id:?} never retrieved",
                    iter.index
                ));
            }
        }
        if iter.sea.sufficient && !iter.sea.gaps_empty() {
            violations.push(format!(
                "iteration {}: sea sufficient=true but remaining_gaps {:?} not empty",
                iter.index, iter.sea.remaining_gaps
            ));
        }
    }

    let mut evidence_ids = BTreeSet::new();
    for chunk in &trace.final_evidence {
        if !evidence_ids.insert(chunk.id.as_str()) {
            violations.push(format!("final_evidence repeats chunk id {:?}", chunk.id));
        }
    }

    if let Some(answer) = &trace.answer {
        let n = trace.final_evidence.len();
        for &c in &answer.citations {
            if c < 1 || c > n {
                violations.push(format!("citation {c} out of range 1..{n}"));
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: &str) -> Chunk {
        Chunk {
            id: id.to_string(),
            text: format!("text of {id}"),
            source_url: "https://example.org".to_string(),
            token_count: 3,
            kind: ChunkKind::Encyclopedia,
            embedding: None,
        }
    }

    fn well_formed_trace() -> QueryTrace {
        QueryTrace {
            query: "q".to_string(),
            class: Some(QueryClass::ValidLarge),
            iterations: vec![IterationRecord {
                index: 1,
                sub_queries: vec![SubQuery {
                    text: "sq".to_string(),
                    origin: SubQueryOrigin::Decomposition,
                    iteration: 1,
                }],
                retrieved_ids: vec![vec!["a".to_string(), "b".to_string()]],
                discarded_ids: BTreeSet::from(["b".to_string()]),
                sea: SeaReport {
                    main_goal: "g".to_string(),
                    required_findings: vec!["f".to_string()],
                    confirmed_findings: "f confirmed".to_string(),
                    remaining_gaps: "None".to_string(),
                    conclusion: "done".to_string(),
                    sufficient: true,
                },
            }],
            final_evidence: vec![chunk("a")],
            answer: Some(Answer {
                text: "answer [1]".to_string(),
                citations: vec![1],
                disclaimers: BTreeSet::new(),
            }),
            accounting: Accounting::default(),
            error: None,
        }
    }

    #[test]
    fn query_class_parses_exactly_six_labels() {
        for class in QueryClass::ALL {
            assert_eq!(class.label().parse::<QueryClass>().unwrap(), class);
        }
        assert!("VALID".parse::<QueryClass>().is_err());
        assert!("valid_large".parse::<QueryClass>().is_err());
        assert!("".parse::<QueryClass>().is_err());
    }

    #[test]
    fn citation_out_of_range_is_reported() {
        let mut trace = well_formed_trace();
        trace.final_evidence = vec![chunk("a"), chunk("b"), chunk("c"), chunk("d")];
        trace.answer.as_mut().unwrap().citations = vec![5];
        let violations = validate_trace(&trace, 3);
        assert_eq!(violations, vec!["citation 5 out of range 1..4".to_string()]);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut trace = well_formed_trace();
        let mut it = trace.iterations[0].clone();
        trace.iterations.clear();
        for i in 1..=4 {
            it.index = i;
            it.sea.sufficient = false;
            it.sea.remaining_gaps = "gap".to_string();
            trace.iterations.push(it.clone());
        }
        let violations = validate_trace(&trace, 3);
        assert!(violations.contains(&"iterations 4 > max_iter 3".to_string()));
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        assert!(validate_trace(&well_formed_trace(), 3).is_empty());
    }

    #[test]
    fn discarded_id_must_have_been_retrieved() {
        let mut trace = well_formed_trace();
        trace.iterations[0]
            .discarded_ids
            .insert("never-seen".to_string());
        let violations = validate_trace(&trace, 3);
        assert!(violations.iter().any(|v| v.contains("never-seen")));
    }

    #[test]
    fn sufficient_with_gaps_is_reported() {
        let mut trace = well_formed_trace();
        trace.iterations[0].sea.remaining_gaps = "verse count missing".to_string();
        let violations = validate_trace(&trace, 3);
        assert!(violations.iter().any(|v| v.contains("remaining_gaps")));
    }

    #[test]
    fn trace_json_round_trip() {
        let trace = well_formed_trace();
        let json = serde_json::to_string(&trace).unwrap();
        let back: QueryTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(trace, back);
    }
}
