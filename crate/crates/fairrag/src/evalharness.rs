//! Batch evaluation: dataset loading, judge invocation, metric
//! aggregation, and failure-mode classification.
//!
//! Judges run on their own gateway so a scripted judge can audit a live
//! pipeline and vice versa. Judge parse failures exclude the affected
//! verdict from the means and are counted per record, never fatal.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{
    parse_judge_json, FailureCategory, FaithfulnessVerdict, JudgeKind, JudgeVerdict,
    PromptLibrary,
};
use crate::domain::{Accounting, ModelTier, QueryTrace};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::orchestrator::{number_evidence, Pipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCategory {
    Multihop,
    NegativeRejection,
    Noise,
    Obvious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
    pub category: EvalCategory,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distractor_ids: Option<Vec<String>>,
}

/// Strict JSONL loader; enforces the noise-category invariant.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord =
            serde_json::from_str(&line).map_err(|e| Error::CorpusSchema {
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.category == EvalCategory::Noise
            && record.distractor_ids.as_ref().map_or(true, Vec::is_empty)
        {
            return Err(Error::CorpusSchema {
                line: i + 1,
                message: format!(
                    "noise record {:?} requires non-empty distractor_ids",
                    record.id
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Judge wrapper: renders the judge prompt and parses the JSON verdict.
pub struct Judge<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptLibrary,
    pub tier: ModelTier,
}

impl<'a> Judge<'a> {
    pub fn verdict(
        &self,
        kind: JudgeKind,
        binds: &BTreeMap<&'static str, String>,
        acct: &mut Accounting,
    ) -> Result<JudgeVerdict> {
        let template = match kind {
            JudgeKind::FailureMode => &self.prompts.failure_analysis,
            other => self.prompts.judge(other),
        };
        let prompt = template.render(binds)?;
        let resp = self.gateway.complete_with_tier(self.tier, prompt, acct)?;
        parse_judge_json(&resp.text, kind)
    }
}

/// Everything collected for one dataset record.
#[derive(Debug)]
pub struct RecordOutcome {
    pub record: EvalRecord,
    pub trace: QueryTrace,
    /// Keyed by judge kind name; absent when the judge failed to parse.
    pub verdicts: BTreeMap<&'static str, JudgeVerdict>,
    pub judge_errors: Vec<String>,
    pub judge_accounting: Accounting,
}

/// Runs the pipeline and the category-appropriate judges over `dataset`.
pub fn run_eval(
    dataset: &[EvalRecord],
    pipeline: &Pipeline<'_>,
    judge: &Judge<'_>,
) -> Vec<RecordOutcome> {
    dataset
        .iter()
        .map(|record| eval_record(record, pipeline, judge))
        .collect()
}

/// Like [`run_eval`] but evaluates up to `jobs` records concurrently.
/// Output order matches dataset order regardless of completion order.
pub fn run_eval_parallel(
    dataset: &[EvalRecord],
    pipeline: &Pipeline<'_>,
    judge: &Judge<'_>,
    jobs: usize,
) -> Vec<RecordOutcome> {
    let jobs = jobs.max(1);
    if jobs == 1 || dataset.len() <= 1 {
        return run_eval(dataset, pipeline, judge);
    }
    let mut slots: Vec<Option<RecordOutcome>> = Vec::new();
    slots.resize_with(dataset.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(dataset.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= dataset.len() {
                    break;
                }
                let outcome = eval_record(&dataset[i], pipeline, judge);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .iter_mut()
        .map(|s| s.take().expect("every slot filled"))
        .collect()
}

fn eval_record(
    record: &EvalRecord,
    pipeline: &Pipeline<'_>,
    judge: &Judge<'_>,
) -> RecordOutcome {
    let trace = match (&record.category, &record.distractor_ids) {
        (EvalCategory::Noise, Some(ids)) => {
            let distractors: Vec<_> = ids
                .iter()
                .filter_map(|id| pipeline.index.chunk(id).cloned())
                .collect();
            pipeline.run_query_with_injected(&record.question, &distractors)
        }
        _ => pipeline.run_query(&record.question),
    };

    let mut verdicts = BTreeMap::new();
    let mut judge_errors = Vec::new();
    let mut acct = Accounting::default();
    let final_answer = trace
        .answer
        .as_ref()
        .map(|a| a.text.clone())
        .unwrap_or_default();
    let final_evidence = number_evidence(&trace.final_evidence);

    let mut ask = |kind: JudgeKind, binds: BTreeMap<&'static str, String>| match judge
        .verdict(kind, &binds, &mut acct)
    {
        Ok(v) => {
            verdicts.insert(kind.as_str(), v);
        }
        Err(e) => judge_errors.push(format!("{}: {e}", kind.as_str())),
    };

    let base = |extra: &[(&'static str, String)]| -> BTreeMap<&'static str, String> {
        let mut b: BTreeMap<&'static str, String> = BTreeMap::from([
            ("question", record.question.clone()),
            ("ground_truth_answer", record.ground_truth.clone()),
            ("final_answer", final_answer.clone()),
            ("final_evidence", final_evidence.clone()),
        ]);
        for (k, v) in extra {
            b.insert(k, v.clone());
        }
        b
    };

    match record.category {
        EvalCategory::NegativeRejection => {
            ask(JudgeKind::NegativeRejection, base(&[]));
        }
        EvalCategory::Noise => {
            ask(JudgeKind::NoiseRobustness, base(&[]));
            ask(JudgeKind::RelevanceCorrectness, base(&[]));
        }
        EvalCategory::Obvious | EvalCategory::Multihop => {
            ask(JudgeKind::RelevanceCorrectness, base(&[]));
            if !trace.final_evidence.is_empty() {
                ask(JudgeKind::Faithfulness, base(&[]));
                ask(JudgeKind::ContextRelevance, base(&[]));
            }
            if let Some(first) = trace.iterations.first() {
                let sub_queries = first
                    .sub_queries
                    .iter()
                    .map(|q| format!("- {}", q.text))
                    .collect::<Vec<_>>()
                    .join("\n");
                ask(
                    JudgeKind::DecompositionScore,
                    base(&[("sub_queries", sub_queries)]),
                );
            }
        }
    }

    // Filter audit over the whole run, when any filtering happened.
    let discarded: Vec<String> = trace
        .iterations
        .iter()
        .flat_map(|it| it.discarded_ids.iter().cloned())
        .collect();
    if !trace.final_evidence.is_empty() || !discarded.is_empty() {
        let kept_docs = number_evidence(&trace.final_evidence);
        let discarded_docs = if discarded.is_empty() {
            "(none)".to_string()
        } else {
            discarded
                .iter()
                .map(|id| {
                    let text = pipeline
                        .index
                        .chunk(id)
                        .map(|c| c.text.clone())
                        .unwrap_or_default();
                    format!("{id}: {text}")
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        ask(
            JudgeKind::FilterAudit,
            base(&[("kept_docs", kept_docs), ("discarded_docs", discarded_docs)]),
        );
    }

    // Sufficiency audit of the last SEA verdict.
    if trace.iterations.last().is_some() {
        ask(
            JudgeKind::Sufficiency,
            base(&[("evidence", final_evidence.clone())]),
        );
    }

    RecordOutcome {
        record: record.clone(),
        trace,
        verdicts,
        judge_errors,
        judge_accounting: acct,
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 && recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// Per-record filter audit arithmetic. `None` precision when nothing kept.
pub fn filter_audit_metrics(
    kept: usize,
    incorrectly_kept: usize,
    incorrectly_discarded: usize,
) -> (Option<f64>, f64) {
    let correct_kept = kept.saturating_sub(incorrectly_kept);
    let precision = if kept == 0 {
        None
    } else {
        Some(correct_kept as f64 / kept as f64)
    };
    let denom = correct_kept + incorrectly_discarded;
    // denom = 0 forces correct_kept = 0: nothing was correctly kept.
    let recall = if denom == 0 {
        0.0
    } else {
        correct_kept as f64 / denom as f64
    };
    (precision, recall)
}

/// Aggregated ranking metrics over per-question iterative-ranking verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    /// Mean 1-based rank position per iter id.
    pub avg_rank: BTreeMap<String, f64>,
    /// Fraction of questions where iter_k precedes iter_1, for k = 2..4.
    pub improvement_rate: BTreeMap<String, f64>,
    pub excluded: usize,
}

/// `rankings` holds the judge's best-to-worst id lists, one per question.
/// Lists missing any of iter_1..iter_4 are excluded.
pub fn iterative_ranking(rankings: &[Vec<String>]) -> IterationMetrics {
    let levels = ["iter_1", "iter_2", "iter_3", "iter_4"];
    let mut positions: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut improvements: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut excluded = 0usize;

    for ranking in rankings {
        if !levels.iter().all(|l| ranking.iter().any(|r| r == l)) {
            excluded += 1;
            continue;
        }
        let pos = |id: &str| ranking.iter().position(|r| r == id).unwrap() + 1;
        for level in levels {
            positions
                .entry(level.to_string())
                .or_default()
                .push(pos(level) as f64);
        }
        let base = pos("iter_1");
        for level in &levels[1..] {
            let e = improvements.entry(level.to_string()).or_default();
            e.1 += 1;
            if pos(level) < base {
                e.0 += 1;
            }
        }
    }

    IterationMetrics {
        avg_rank: positions
            .into_iter()
            .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        improvement_rate: improvements
            .into_iter()
            .map(|(k, (hits, total))| (k, hits as f64 / total as f64))
            .collect(),
        excluded,
    }
}

/// Failure histogram over the six-way taxonomy plus an unclassified bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureHistogram {
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
    pub unclassified: usize,
    pub total: usize,
}

/// `categories` carry `None` for judge outputs that violated the taxonomy.
pub fn classify_failures(categories: &[Option<FailureCategory>]) -> FailureHistogram {
    let mut counts: BTreeMap<String, usize> = FailureCategory::ALL
        .iter()
        .map(|c| (c.as_str().to_string(), 0))
        .collect();
    let mut unclassified = 0usize;
    for c in categories {
        match c {
            Some(cat) => *counts.get_mut(cat.as_str()).expect("all keys present") += 1,
            None => unclassified += 1,
        }
    }
    let total = categories.len();
    let percentages = counts
        .iter()
        .map(|(k, &v)| {
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * v as f64 / total as f64
            };
            (k.clone(), pct)
        })
        .collect();
    FailureHistogram {
        counts,
        percentages,
        unclassified,
        total,
    }
}

/// The aggregate metrics report. Optional fields are absent when no
/// verdict of that kind was collected.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct MetricsReport {
    pub records: usize,
    pub judge_exclusions: usize,
    pub answer_relevance_mean: Option<f64>,
    pub correctness_mean: Option<f64>,
    /// Fraction of answers with correctness score >= the threshold.
    pub correctness_acc: Option<f64>,
    pub faithfulness_fully_pct: Option<f64>,
    pub context_relevance_mean: Option<f64>,
    pub negative_rejection_acc: Option<f64>,
    pub noise_robustness_acc: Option<f64>,
    pub decomposition_mean: Option<f64>,
    pub filter_precision: Option<f64>,
    pub filter_recall: Option<f64>,
    pub filter_f1: Option<f64>,
    pub sea_accuracy: Option<f64>,
    pub sea_precision: Option<f64>,
    pub sea_recall: Option<f64>,
    pub sea_f1: Option<f64>,
    pub refinement_mean: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Reduces record outcomes to the metrics table.
pub fn aggregate(outcomes: &[RecordOutcome], correctness_threshold: f64) -> MetricsReport {
    let mut relevance = Vec::new();
    let mut correctness = Vec::new();
    let mut correct_hits = 0usize;
    let mut faithful_total = 0usize;
    let mut faithful_fully = 0usize;
    let mut ctx_scores = Vec::new();
    let mut rejections = Vec::new();
    let mut noise = Vec::new();
    let mut decomposition = Vec::new();
    let mut refinement = Vec::new();
    let mut judge_exclusions = 0usize;

    // Micro-averaged filter audit accumulators.
    let mut kept_sum = 0usize;
    let mut correct_kept_sum = 0usize;
    let mut incorrectly_discarded_sum = 0usize;
    let mut any_filter_audit = false;

    // SEA confusion counts; positive class = "continue searching".
    let mut sea_tp = 0usize;
    let mut sea_fp = 0usize;
    let mut sea_fn = 0usize;
    let mut sea_tn = 0usize;

    for outcome in outcomes {
        judge_exclusions += outcome.judge_errors.len();
        for (kind, verdict) in &outcome.verdicts {
            match verdict {
                JudgeVerdict::RelevanceCorrectness {
                    relevance_score,
                    correctness_score,
                } => {
                    relevance.push(*relevance_score);
                    correctness.push(*correctness_score);
                    if *correctness_score >= correctness_threshold {
                        correct_hits += 1;
                    }
                }
                JudgeVerdict::Faithfulness { verdict } => {
                    faithful_total += 1;
                    if *verdict == FaithfulnessVerdict::FullyFaithful {
                        faithful_fully += 1;
                    }
                }
                JudgeVerdict::ContextRelevance { scores } => {
                    ctx_scores.extend(scores.iter().map(|(_, s)| *s));
                }
                JudgeVerdict::NegativeRejection { correctly_rejected } => {
                    rejections.push(*correctly_rejected);
                }
                JudgeVerdict::NoiseRobustness {
                    is_robust,
                    is_correct,
                } => {
                    noise.push(*is_robust && *is_correct);
                }
                JudgeVerdict::DecompositionScore { score } => decomposition.push(*score),
                JudgeVerdict::RefinementScore { score } => refinement.push(*score),
                JudgeVerdict::FilterAudit {
                    incorrectly_kept_ids,
                    incorrectly_discarded_ids,
                } => {
                    any_filter_audit = true;
                    let kept = outcome.trace.final_evidence.len();
                    kept_sum += kept;
                    correct_kept_sum += kept.saturating_sub(incorrectly_kept_ids.len());
                    incorrectly_discarded_sum += incorrectly_discarded_ids.len();
                }
                JudgeVerdict::Sufficiency { is_sufficient } => {
                    if let Some(last) = outcome.trace.iterations.last() {
                        // Pipeline positive = wanted to continue searching.
                        let pipeline_continue = !last.sea.sufficient;
                        let judge_continue = !is_sufficient;
                        match (pipeline_continue, judge_continue) {
                            (true, true) => sea_tp += 1,
                            (true, false) => sea_fp += 1,
                            (false, true) => sea_fn += 1,
                            (false, false) => sea_tn += 1,
                        }
                    }
                }
                JudgeVerdict::IterativeRanking { .. } | JudgeVerdict::FailureMode { .. } => {
                    let _ = kind; // aggregated by their dedicated functions
                }
            }
        }
    }

    let frac = |hits: usize, total: usize| -> Option<f64> {
        if total == 0 {
            None
        } else {
            Some(hits as f64 / total as f64)
        }
    };

    let (filter_precision, filter_recall, filter_f1) = if any_filter_audit {
        let p = frac(correct_kept_sum, kept_sum);
        let r_denom = correct_kept_sum + incorrectly_discarded_sum;
        let r = if r_denom == 0 {
            Some(0.0)
        } else {
            Some(correct_kept_sum as f64 / r_denom as f64)
        };
        let f = match (p, r) {
            (Some(p), Some(r)) => Some(f1(p, r)),
            _ => None,
        };
        (p, r, f)
    } else {
        (None, None, None)
    };

    let sea_total = sea_tp + sea_fp + sea_fn + sea_tn;
    let (sea_accuracy, sea_precision, sea_recall, sea_f1) = if sea_total > 0 {
        let acc = (sea_tp + sea_tn) as f64 / sea_total as f64;
        let p = frac(sea_tp, sea_tp + sea_fp);
        let r = frac(sea_tp, sea_tp + sea_fn);
        let f = match (p, r) {
            (Some(p), Some(r)) => Some(f1(p, r)),
            _ => None,
        };
        (Some(acc), p, r, f)
    } else {
        (None, None, None, None)
    };

    MetricsReport {
        records: outcomes.len(),
        judge_exclusions,
        answer_relevance_mean: mean(&relevance),
        correctness_mean: mean(&correctness),
        correctness_acc: frac(correct_hits, correctness.len()),
        faithfulness_fully_pct: frac(faithful_fully, faithful_total).map(|f| 100.0 * f),
        context_relevance_mean: mean(&ctx_scores),
        negative_rejection_acc: frac(rejections.iter().filter(|b| **b).count(), rejections.len()),
        noise_robustness_acc: frac(noise.iter().filter(|b| **b).count(), noise.len()),
        decomposition_mean: mean(&decomposition),
        filter_precision,
        filter_recall,
        filter_f1,
        sea_accuracy,
        sea_precision,
        sea_recall,
        sea_f1,
        refinement_mean: mean(&refinement),
    }
}
