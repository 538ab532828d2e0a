//! The pipeline state machine: triage, decomposition, the retrieve →
//! filter → assess → refine loop, and grounded generation.
//!
//! One [`Pipeline`] execution produces one [`QueryTrace`]. With a scripted
//! backend and a fixed corpus the trace JSON is byte-identical across runs.

use std::collections::{BTreeMap, BTreeSet};

use crate::agents::{self, PromptLibrary};
use crate::domain::{
    Accounting, Answer, Chunk, Disclaimer, IterationRecord, QueryClass, QueryTrace, SubQuery,
    SubQueryOrigin,
};
use crate::econ::LatencyModel;
use crate::error::{Error, Result};
use crate::gateway::{AgentRole, Gateway};
use crate::retrieval::{EmbeddingProvider, Index};

/// Fixed refusal for unethical and out-of-scope queries.
pub const REJECTION_TEXT: &str =
    "متأسفم، این پرسش در حوزه پاسخ‌گویی این سامانه قرار ندارد و نمی‌توانم به آن پاسخ دهم.";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Refinement-loop cap, 1..=4.
    pub max_iter: usize,
    /// Documents taken from each retriever and from the fused list.
    pub top_k: usize,
    /// Candidates per filter prompt.
    pub filter_batch_size: usize,
    /// Once discarded, never re-presented to the filter.
    pub filter_memoization: bool,
    /// Fall back to BM25 alone when the embedding provider fails.
    pub sparse_only_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_iter: 3,
            top_k: 3,
            filter_batch_size: 10,
            filter_memoization: true,
            sparse_only_fallback: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.max_iter) {
            return Err(Error::Config(format!(
                "max_iter {} outside 1..=4",
                self.max_iter
            )));
        }
        if self.top_k == 0 || self.filter_batch_size == 0 {
            return Err(Error::Config(
                "top_k and filter_batch_size must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Evidence accumulated across iterations. Kept order is first-kept order.
#[derive(Debug, Default)]
pub struct EvidencePool {
    kept: Vec<Chunk>,
    kept_ids: BTreeSet<String>,
    discarded: BTreeSet<String>,
    provenance: BTreeMap<String, Vec<(usize, String)>>,
}

impl EvidencePool {
    pub fn kept(&self) -> &[Chunk] {
        &self.kept
    }

    pub fn discarded(&self) -> &BTreeSet<String> {
        &self.discarded
    }

    pub fn provenance(&self, id: &str) -> &[(usize, String)] {
        self.provenance.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.kept_ids.contains(id)
    }

    fn keep(&mut self, chunk: Chunk) {
        if self.kept_ids.insert(chunk.id.clone()) {
            self.discarded.remove(&chunk.id);
            self.kept.push(chunk);
        }
    }

    fn discard(&mut self, id: &str) {
        self.discarded.insert(id.to_string());
    }

    fn record_provenance(&mut self, id: &str, iteration: usize, sub_query: &str) {
        self.provenance
            .entry(id.to_string())
            .or_default()
            .push((iteration, sub_query.to_string()));
    }
}

/// Numbers evidence for the SEA/generator prompts: "1. text (Source_URL: u)".
pub fn number_evidence(chunks: &[Chunk]) -> String {
    if chunks.is_empty() {
        return "No evidence collected.".to_string();
    }
    chunks
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {} (Source_URL: {})", i + 1, c.text, c.source_url))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything one query execution needs, shared immutably.
pub struct Pipeline<'a> {
    pub config: PipelineConfig,
    pub index: &'a Index,
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptLibrary,
    pub provider: Option<&'a dyn EmbeddingProvider>,
    pub latency: LatencyModel,
}

impl<'a> Pipeline<'a> {
    pub fn run_query(&self, query: &str) -> QueryTrace {
        self.run(query, &[])
    }

    /// Noise-robustness variant: `distractors` join the unfiltered
    /// candidate set of iteration 1, recorded as an extra retrieved list.
    pub fn run_query_with_injected(&self, query: &str, distractors: &[Chunk]) -> QueryTrace {
        self.run(query, distractors)
    }

    fn run(&self, query: &str, distractors: &[Chunk]) -> QueryTrace {
        let mut trace = QueryTrace {
            query: query.to_string(),
            class: None,
            iterations: Vec::new(),
            final_evidence: Vec::new(),
            answer: None,
            accounting: Accounting::default(),
            error: None,
        };
        if let Err(e) = self.run_inner(query, distractors, &mut trace) {
            trace.error = Some(e.to_string());
            trace.answer = None;
        }
        let acct = &mut trace.accounting;
        acct.latency_s = self.latency.predict(
            (acct.prompt_tokens + acct.completion_tokens) as f64,
            acct.api_calls as f64,
        );
        trace
    }

    /// One agent call with a single retry on parse failure. Transport and
    /// scripting errors are not retried here; the gateway owns transport
    /// retries.
    fn agent_call<T>(
        &self,
        stage: &'static str,
        role: AgentRole,
        class: Option<QueryClass>,
        prompt: &str,
        acct: &mut Accounting,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let mut last = None;
        for _attempt in 0..2 {
            let resp = self
                .gateway
                .complete(role, class, prompt.to_string(), acct)?;
            match parse(&resp.text) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Stage {
            stage,
            message: last.expect("loop ran").to_string(),
        })
    }

    fn run_inner(
        &self,
        query: &str,
        distractors: &[Chunk],
        trace: &mut QueryTrace,
    ) -> Result<()> {
        self.config.validate()?;

        // Phase 1a: triage.
        let validator_prompt = self.prompts.validator.render(&bindings(&[(
            "user_query",
            query,
        )]))?;
        let class = self.agent_call(
            "validator",
            AgentRole::Validator,
            None,
            &validator_prompt,
            &mut trace.accounting,
            |raw| agents::parse_validation(raw),
        )?;
        trace.class = Some(class);

        match class {
            QueryClass::Unethical | QueryClass::OutOfScopeIslamic => {
                trace.answer = Some(Answer {
                    text: REJECTION_TEXT.to_string(),
                    citations: Vec::new(),
                    disclaimers: BTreeSet::from([Disclaimer::Rejection]),
                });
                return Ok(());
            }
            QueryClass::ValidObvious => {
                let prompt = self
                    .prompts
                    .direct_answer
                    .render(&bindings(&[("user_query", query)]))?;
                let answer = self.agent_call(
                    "direct_answer",
                    AgentRole::DirectAnswer,
                    Some(class),
                    &prompt,
                    &mut trace.accounting,
                    |raw| Ok(agents::parse_answer(raw, 0)),
                )?;
                trace.answer = Some(answer);
                return Ok(());
            }
            _ => {}
        }

        // Phase 1b: decomposition.
        let decomposer_prompt = self
            .prompts
            .decomposer
            .render(&bindings(&[("user_query", query)]))?;
        let mut active = self.agent_call(
            "decomposer",
            AgentRole::Decomposer,
            Some(class),
            &decomposer_prompt,
            &mut trace.accounting,
            |raw| agents::parse_query_list(raw, SubQueryOrigin::Decomposition, 1),
        )?;

        let mut pool = EvidencePool::default();
        let mut all_queries: Vec<String> = Vec::new();

        // Phase 2 + 3: retrieve / filter / assess / refine.
        for iteration in 1..=self.config.max_iter {
            let mut retrieved_ids: Vec<Vec<String>> = Vec::new();
            let mut candidates: Vec<Chunk> = Vec::new();
            let mut seen: BTreeSet<String> = BTreeSet::new();

            for sq in &active {
                all_queries.push(sq.text.clone());
                let hits = self.index.hybrid_retrieve(
                    &sq.text,
                    self.provider,
                    self.config.sparse_only_fallback,
                    self.config.top_k,
                )?;
                retrieved_ids.push(hits.iter().map(|c| c.id.clone()).collect());
                for chunk in hits {
                    pool.record_provenance(&chunk.id, iteration, &sq.text);
                    self.consider(&mut candidates, &mut seen, &pool, chunk);
                }
            }
            if iteration == 1 && !distractors.is_empty() {
                retrieved_ids.push(distractors.iter().map(|c| c.id.clone()).collect());
                for chunk in distractors {
                    self.consider(&mut candidates, &mut seen, &pool, chunk.clone());
                }
            }

            // Filter in batches of <= filter_batch_size with temp ids.
            let mut discarded_now: BTreeSet<String> = BTreeSet::new();
            let mut batch_number = 0usize;
            for batch in candidates.chunks(self.config.filter_batch_size) {
                batch_number += 1;
                let temp_ids: Vec<String> =
                    (1..=batch.len()).map(|i| format!("doc_{i}")).collect();
                let listing = batch
                    .iter()
                    .zip(&temp_ids)
                    .map(|(c, tid)| format!("[{tid}]: {}", c.text))
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let batch_no = batch_number.to_string();
                let prompt = self.prompts.filter.render(&bindings(&[
                    ("original_query", query),
                    ("batch_number", &batch_no),
                    ("numbered_candidates_text_for_prompt", &listing),
                ]))?;
                let batch_id_set: BTreeSet<String> = temp_ids.iter().cloned().collect();
                let verdict = self.agent_call(
                    "filter",
                    AgentRole::Filter,
                    Some(class),
                    &prompt,
                    &mut trace.accounting,
                    |raw| agents::parse_filter(raw, &batch_id_set),
                )?;
                for (chunk, tid) in batch.iter().zip(&temp_ids) {
                    if verdict.unhelpful_ids.contains(tid) {
                        pool.discard(&chunk.id);
                        discarded_now.insert(chunk.id.clone());
                    } else {
                        pool.keep(chunk.clone());
                    }
                }
            }

            // SEA over everything kept so far.
            let combined_evidence = number_evidence(pool.kept());
            let sea_prompt = self.prompts.sea.render(&bindings(&[
                ("original_query", query),
                ("combined_evidence", &combined_evidence),
            ]))?;
            let sea = self.agent_call(
                "sea",
                AgentRole::Sea,
                Some(class),
                &sea_prompt,
                &mut trace.accounting,
                |raw| agents::parse_sea(raw),
            )?;
            let sufficient = sea.sufficient;
            let analysis_summary = format!(
                "Confirmed Findings: {}\nRemaining Gaps: {}",
                sea.confirmed_findings, sea.remaining_gaps
            );

            trace.iterations.push(IterationRecord {
                index: iteration,
                sub_queries: active.clone(),
                retrieved_ids,
                discarded_ids: discarded_now,
                sea,
            });

            if sufficient {
                break;
            }
            if iteration == self.config.max_iter {
                break; // final attempt: generate from whatever exists
            }

            // Refinement replaces the active set for the next pass.
            let combined_previous_queries = all_queries
                .iter()
                .map(|q| format!("- {q}"))
                .collect::<Vec<_>>()
                .join("\n");
            let refiner_prompt = self.prompts.refiner.render(&bindings(&[
                ("original_query", query),
                ("analysis_summary", &analysis_summary),
                ("combined_previous_queries", &combined_previous_queries),
            ]))?;
            let next_iteration = iteration + 1;
            active = self.agent_call(
                "refiner",
                AgentRole::Refiner,
                Some(class),
                &refiner_prompt,
                &mut trace.accounting,
                |raw| agents::parse_query_list(raw, SubQueryOrigin::Refinement, next_iteration),
            )?;
        }

        // Phase 4: grounded generation, always exactly once on this path.
        trace.final_evidence = pool.kept().to_vec();
        let combined_evidence = number_evidence(pool.kept());
        let generator_prompt = self.prompts.generator.render(&bindings(&[
            ("combined_evidence", &combined_evidence),
            ("original_query", query),
        ]))?;
        let n = trace.final_evidence.len();
        let answer = self.agent_call(
            "generator",
            AgentRole::Generator,
            Some(class),
            &generator_prompt,
            &mut trace.accounting,
            |raw| Ok(agents::parse_answer(raw, n)),
        )?;
        trace.answer = Some(answer);
        Ok(())
    }

    /// Adds `chunk` to the candidate list unless already kept, already in
    /// this round, or memoized as discarded.
    fn consider(
        &self,
        candidates: &mut Vec<Chunk>,
        seen: &mut BTreeSet<String>,
        pool: &EvidencePool,
        chunk: Chunk,
    ) {
        if pool.contains(&chunk.id) || seen.contains(&chunk.id) {
            return;
        }
        if self.config.filter_memoization && pool.discarded().contains(&chunk.id) {
            return;
        }
        seen.insert(chunk.id.clone());
        candidates.push(chunk);
    }
}

fn bindings<'b>(pairs: &[(&'static str, &'b str)]) -> BTreeMap<&'static str, String> {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

/// Convenience for tests and the eval harness: collect all sub-query texts
/// in a trace in execution order.
pub fn all_sub_queries(trace: &QueryTrace) -> Vec<&SubQuery> {
    trace
        .iterations
        .iter()
        .flat_map(|it| it.sub_queries.iter())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ChunkKind;
    use crate::econ::CostModel;
    use crate::gateway::{RoutingTable, ScriptRule, ScriptedBackend};
    use crate::ingest::{Tokenizer, WordTokenizer};
    use crate::retrieval::IndexParams;
    use std::sync::Arc;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: id.to_string(),
            text: text.to_string(),
            source_url: format!("https://example.org/{id}"),
            token_count: WordTokenizer.count(text),
            kind: ChunkKind::Encyclopedia,
            embedding: None,
        }
    }

    fn index(chunks: Vec<Chunk>) -> Index {
        Index::build(chunks, IndexParams::default(), Arc::new(WordTokenizer)).unwrap()
    }

    fn rule(pattern: &str, response: &str) -> ScriptRule {
        ScriptRule {
            pattern: pattern.to_string(),
            response: response.to_string(),
        }
    }

    fn gateway(rules: Vec<ScriptRule>) -> Gateway {
        Gateway::new(
            Box::new(ScriptedBackend::new(rules)),
            RoutingTable::default(),
            CostModel::default(),
        )
    }

    fn pipeline<'a>(
        config: PipelineConfig,
        index: &'a Index,
        gateway: &'a Gateway,
        prompts: &'a PromptLibrary,
    ) -> Pipeline<'a> {
        Pipeline {
            config,
            index,
            gateway,
            prompts,
            provider: None,
            latency: LatencyModel::default(),
        }
    }

    const SEA_NO: &str = "- Main Goal: g\n- Required Findings: A: f.\n- Confirmed Findings: nothing yet.\n- Remaining Gaps: A: f.\n- Conclusion: missing.\n- Sufficient: No\n";
    const SEA_YES: &str = "- Main Goal: g\n- Required Findings: A: f.\n- Confirmed Findings: A: found.\n- Remaining Gaps: None.\n- Conclusion: complete.\n- Sufficient: Yes\n";

    #[test]
    fn unethical_short_circuits_with_one_call() {
        let idx = index(vec![chunk("a", "alpha beta")]);
        let gw = gateway(vec![rule("Selected Label", "Selected Label: UNETHICAL")]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
            .run_query("چگونه تقلب کنم؟");
        assert_eq!(trace.class, Some(QueryClass::Unethical));
        assert_eq!(trace.accounting.api_calls, 1);
        assert!(trace.iterations.is_empty());
        let answer = trace.answer.unwrap();
        assert!(answer.disclaimers.contains(&Disclaimer::Rejection));
        assert_eq!(answer.text, REJECTION_TEXT);
    }

    #[test]
    fn obvious_path_makes_exactly_two_calls() {
        let idx = index(vec![chunk("a", "alpha beta")]);
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_OBVIOUS"),
            rule("direct Persian answer", "پنج"),
        ]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
            .run_query("ارکان اسلام چند است؟");
        assert_eq!(trace.accounting.api_calls, 2);
        assert!(trace.iterations.is_empty());
        assert_eq!(trace.answer.unwrap().text, "پنج");
    }

    #[test]
    fn sufficient_first_pass_call_count() {
        // 1 validate + 1 decompose + 1 filter batch + 1 SEA + 1 generate = 5
        let idx = index(vec![chunk("a", "mecca qibla history")]);
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_LARGE"),
            rule("Optimized Queries", "Optimized Queries:\n- mecca qibla"),
            rule("Unhelpful Document IDs", "Unhelpful Document IDs: None"),
            rule("Mission Deconstruction", SEA_YES),
            rule("final attempt", "answer [1]"),
        ]);
        let prompts = PromptLibrary::builtin();
        let cfg = PipelineConfig {
            max_iter: 1,
            ..PipelineConfig::default()
        };
        let trace = pipeline(cfg, &idx, &gw, &prompts).run_query("qibla?");
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.accounting.api_calls, 5);
        assert_eq!(trace.iterations.len(), 1);
        assert!(trace.iterations[0].sea.sufficient);
        assert_eq!(trace.final_evidence.len(), 1);
        assert_eq!(trace.answer.unwrap().citations, vec![1]);
    }

    #[test]
    fn always_insufficient_runs_max_iter_then_generates() {
        for max_iter in 1..=4usize {
            let idx = index(vec![chunk("a", "alpha beta gamma")]);
            let mut rules = vec![
                rule("Selected Label", "Selected Label: VALID_LARGE"),
                rule("Optimized Queries", "Optimized Queries:\n- alpha"),
            ];
            for i in 0..max_iter {
                rules.push(rule("Unhelpful Document IDs", "Unhelpful Document IDs: None"));
                rules.push(rule("Mission Deconstruction", SEA_NO));
                if i + 1 < max_iter {
                    rules.push(rule(
                        "Improved Queries",
                        &format!("Improved Queries:\n- refined query {i}"),
                    ));
                }
            }
            rules.push(rule("final attempt", "best effort [1]"));
            let gw = gateway(rules);
            let prompts = PromptLibrary::builtin();
            let cfg = PipelineConfig {
                max_iter,
                ..PipelineConfig::default()
            };
            let trace = pipeline(cfg, &idx, &gw, &prompts).run_query("alpha?");
            assert!(trace.error.is_none(), "max_iter={max_iter}: {:?}", trace.error);
            assert_eq!(trace.iterations.len(), max_iter);
            assert!(trace.iterations.iter().all(|it| !it.sea.sufficient));
            assert!(trace.answer.is_some());
            // No refiner call after the final iteration: the batch above
            // provided exactly max_iter-1 refiner rules and all were used.
        }
    }

    #[test]
    fn refinement_replaces_active_queries() {
        let idx = index(vec![
            chunk("a", "first topic text"),
            chunk("b", "second topic text"),
        ]);
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_LARGE"),
            rule("Optimized Queries", "Optimized Queries:\n- first topic"),
            rule("Unhelpful Document IDs", "Unhelpful Document IDs: None"),
            rule("Mission Deconstruction", SEA_NO),
            rule("Improved Queries", "Improved Queries:\n- second topic"),
            rule("Unhelpful Document IDs", "Unhelpful Document IDs: None"),
            rule("Mission Deconstruction", SEA_YES),
            rule("final attempt", "done [1][2]"),
        ]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
            .run_query("first and second?");
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(trace.iterations[0].sub_queries[0].text, "first topic");
        assert_eq!(trace.iterations[1].sub_queries[0].text, "second topic");
        assert_eq!(
            trace.iterations[1].sub_queries[0].origin,
            SubQueryOrigin::Refinement
        );
        assert_eq!(trace.iterations[1].sub_queries[0].iteration, 2);
    }

    #[test]
    fn discarded_chunks_stay_discarded_with_memoization() {
        let idx = index(vec![chunk("a", "shared topic words")]);
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_LARGE"),
            rule("Optimized Queries", "Optimized Queries:\n- shared topic"),
            rule("Unhelpful Document IDs", "Unhelpful Document IDs: [doc_1]"),
            rule("Mission Deconstruction", SEA_NO),
            rule("Improved Queries", "Improved Queries:\n- shared topic words"),
            // Iteration 2 re-retrieves chunk a, but memoization keeps it
            // out of the batch, so no filter rule is needed.
            rule("Mission Deconstruction", SEA_YES),
            rule("final attempt", "nothing to cite"),
        ]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
            .run_query("shared?");
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(
            trace.iterations[0].discarded_ids,
            BTreeSet::from(["a".to_string()])
        );
        assert!(trace.iterations[1].discarded_ids.is_empty());
        assert!(trace.final_evidence.is_empty());
    }

    #[test]
    fn parse_failure_after_retry_marks_the_stage() {
        let idx = index(vec![chunk("a", "alpha")]);
        // Two malformed validator outputs: first consumed by the call,
        // second by the retry.
        let gw = gateway(vec![
            rule("Selected Label", "garbage"),
            rule("Selected Label", "more garbage"),
        ]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts).run_query("q");
        assert!(trace.answer.is_none());
        let err = trace.error.unwrap();
        assert!(err.contains("validator"), "{err}");
        assert_eq!(trace.accounting.api_calls, 2);
    }

    #[test]
    fn injected_distractors_join_iteration_one_candidates() {
        let idx = index(vec![chunk("a", "real topic content")]);
        let distractor = chunk("noise1", "irrelevant rambling");
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_LARGE"),
            rule("Optimized Queries", "Optimized Queries:\n- real topic"),
            rule("Unhelpful Document IDs", "Unhelpful Document IDs: [doc_2]"),
            rule("Mission Deconstruction", SEA_YES),
            rule("final attempt", "clean answer [1]"),
        ]);
        let prompts = PromptLibrary::builtin();
        let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
            .run_query_with_injected("real topic?", &[distractor]);
        assert!(trace.error.is_none(), "{:?}", trace.error);
        let it = &trace.iterations[0];
        assert!(it.retrieved_ids.iter().flatten().any(|id| id == "noise1"));
        assert_eq!(it.discarded_ids, BTreeSet::from(["noise1".to_string()]));
        assert_eq!(trace.final_evidence.len(), 1);
        assert_eq!(trace.final_evidence[0].id, "a");
    }

    #[test]
    fn empty_kept_evidence_still_runs_sea() {
        let idx = index(vec![chunk("a", "completely unrelated words")]);
        let gw = gateway(vec![
            rule("Selected Label", "Selected Label: VALID_LARGE"),
            rule("Optimized Queries", "Optimized Queries:\n- zzz qqq"),
            // No retrieval hits -> no filter batch; SEA still runs on
            // "No evidence collected."
            rule("No evidence collected.", SEA_YES),
            rule("final attempt", "nothing"),
        ]);
        let prompts = PromptLibrary::builtin();
        let cfg = PipelineConfig {
            max_iter: 1,
            ..PipelineConfig::default()
        };
        let trace = pipeline(cfg, &idx, &gw, &prompts).run_query("zzz?");
        assert!(trace.error.is_none(), "{:?}", trace.error);
        assert_eq!(trace.accounting.api_calls, 4);
        assert!(trace.final_evidence.is_empty());
    }

    #[test]
    fn trace_is_byte_identical_across_runs() {
        let make = || {
            let idx = index(vec![chunk("a", "mecca qibla history")]);
            let gw = gateway(vec![
                rule("Selected Label", "Selected Label: VALID_LARGE"),
                rule("Optimized Queries", "Optimized Queries:\n- mecca qibla"),
                rule("Unhelpful Document IDs", "Unhelpful Document IDs: None"),
                rule("Mission Deconstruction", SEA_YES),
                rule("final attempt", "answer [1]"),
            ]);
            let prompts = PromptLibrary::builtin();
            let trace = pipeline(PipelineConfig::default(), &idx, &gw, &prompts)
                .run_query("qibla?");
            serde_json::to_string(&trace).unwrap()
        };
        assert_eq!(make(), make());
    }
}
