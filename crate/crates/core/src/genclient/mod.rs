//! Comment generation against an LLM provider with retry and accounting.

mod http;
mod mock;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{plan_chunks_over, ChunkPlan, LineIndex, TokenBudget, Tokenizer};
use crate::corpus::{LanguageId, SourceFile};
use crate::masking::{MaskedFile, PlaceholderId};

pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{MockAction, MockScope, MockScript, ScriptedProvider};
pub use prompt::{
    build_prompt, build_prompt_with, parse_response, response_schema, ParsedResponse,
    DEFAULT_TEMPLATE, TEMPLATE_VERSION,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_RETRIES: u32 = 5;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("prompt assembly failed: {0}")]
    Prompt(String),
    #[error("prompt template error: {0}")]
    Template(String),
    #[error("unparseable response: {0}")]
    Parse(String),
    #[error("invalid model profile: {0}")]
    Profile(String),
    #[error("chunk {chunk} has {tokens} tokens, over the budget of {budget}")]
    ChunkTooLarge {
        chunk: String,
        tokens: usize,
        budget: usize,
    },
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub context_window: usize,
    /// Currency per million input tokens.
    #[serde(default)]
    pub input_price: f64,
    /// Currency per million output tokens.
    #[serde(default)]
    pub output_price: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl ModelProfile {
    pub fn new(name: &str, context_window: usize) -> Self {
        ModelProfile {
            name: name.to_string(),
            context_window,
            input_price: 0.0,
            output_price: 0.0,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_prices(mut self, input_price: f64, output_price: f64) -> Self {
        self.input_price = input_price;
        self.output_price = output_price;
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.context_window < 1 {
            return Err(GenError::Profile(format!(
                "{}: context_window must be at least 1",
                self.name
            )));
        }
        if !(self.input_price >= 0.0 && self.output_price >= 0.0) {
            return Err(GenError::Profile(format!(
                "{}: prices must be non-negative",
                self.name
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GenError::Profile(format!(
                "{}: temperature must be non-negative",
                self.name
            )));
        }
        Ok(())
    }

    /// Token budget for one chunk.
    pub fn chunk_budget(&self) -> usize {
        self.context_window / 2
    }

    /// The four evaluated models with their context windows. Prices are
    /// left at zero; set them from the run configuration.
    pub fn presets() -> Vec<ModelProfile> {
        vec![
            ModelProfile::new("claude-3-sonnet", 200_000),
            ModelProfile::new("llama-3-70b-instruct", 8_192),
            ModelProfile::new("mixtral-8x7b-instruct", 32_768),
            ModelProfile::new("gpt-4-turbo-preview", 128_000),
        ]
    }

    pub fn preset(name: &str) -> Option<ModelProfile> {
        ModelProfile::presets().into_iter().find(|p| p.name == name)
    }
}

/// Cost of a token count in a single rounding step.
pub fn compute_cost(input_tokens: u64, output_tokens: u64, profile: &ModelProfile) -> f64 {
    (input_tokens as f64 * profile.input_price + output_tokens as f64 * profile.output_price) / 1e6
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    /// Stable key of the chunk being documented.
    pub chunk: String,
    /// 0 for the first call, then one more per retry.
    pub attempt: u32,
    pub language: LanguageId,
    pub ids: Vec<PlaceholderId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("transport failure: {message}")]
    Transport {
        message: String,
        /// Time spent before the failure.
        #[serde(default)]
        latency_secs: f64,
    },
    #[error("provider configuration: {0}")]
    Config(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(
        &self,
        request: &PromptRequest,
        profile: &ModelProfile,
    ) -> Result<Completion, ProviderError>;

    /// Upper bound on concurrent calls this provider accepts.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

/// Clock used for processing time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSource {
    /// Wall time per call, never less than the reported latency.
    #[default]
    Wall,
    /// Provider-reported latencies only; reproducible with a mock.
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub max_retries: u32,
    pub time_source: TimeSource,
    pub concurrency: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_retries: DEFAULT_MAX_RETRIES,
            time_source: TimeSource::Wall,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRequest {
    pub key: String,
    pub language: LanguageId,
    pub text: String,
    pub token_count: usize,
    pub ids: Vec<PlaceholderId>,
}

/// Plans chunks on the original file's structure with token counts taken
/// from the masked text, and builds one request per chunk that has
/// placeholders. Keys are `path#k` with `k` the 1-based chunk index.
pub fn chunk_requests(
    original: &SourceFile,
    masked: &MaskedFile,
    tokenizer: &dyn Tokenizer,
    budget: TokenBudget,
) -> (ChunkPlan, Vec<ChunkRequest>) {
    let text = LineIndex::new(masked.masked_text.clone());
    let plan = plan_chunks_over(original, &text, tokenizer, budget);
    let requests = plan
        .chunks
        .iter()
        .enumerate()
        .filter_map(|(k, c)| {
            let ids = masked.ids_in_lines(c.start(), c.end());
            (!ids.is_empty()).then(|| ChunkRequest {
                key: format!("{}#{}", original.path, k + 1),
                language: original.language,
                text: text.span(c.start(), c.end()).to_string(),
                token_count: c.token_count,
                ids,
            })
        })
        .collect();
    (plan, requests)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationBatchResult {
    pub chunk: String,
    pub model: String,
    pub comments: BTreeMap<PlaceholderId, String>,
    pub retries: u32,
    pub processing_time: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub failed_ids: Vec<PlaceholderId>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Requests comments for every id in the chunk, re-requesting missing ids
/// until all are filled or `max_retries` retries have been spent.
pub fn generate_comments(
    chunk: &ChunkRequest,
    profile: &ModelProfile,
    provider: &dyn Provider,
    options: &GenOptions,
) -> Result<GenerationBatchResult, GenError> {
    profile.validate()?;
    if chunk.token_count > profile.chunk_budget() {
        return Err(GenError::ChunkTooLarge {
            chunk: chunk.key.clone(),
            tokens: chunk.token_count,
            budget: profile.chunk_budget(),
        });
    }
    let mut result = GenerationBatchResult {
        chunk: chunk.key.clone(),
        model: profile.name.clone(),
        comments: BTreeMap::new(),
        retries: 0,
        processing_time: 0.0,
        input_tokens: 0,
        output_tokens: 0,
        cost: 0.0,
        failed_ids: Vec::new(),
        warnings: Vec::new(),
    };
    let requested: BTreeSet<&PlaceholderId> = chunk.ids.iter().collect();
    let mut missing: Vec<PlaceholderId> = chunk.ids.clone();
    let mut attempt = 0;
    while !missing.is_empty() {
        let request = PromptRequest {
            chunk: chunk.key.clone(),
            attempt,
            language: chunk.language,
            ids: missing.clone(),
            text: build_prompt(&chunk.text, &missing, chunk.language)?,
        };
        let started = Instant::now();
        let outcome = provider.complete(&request, profile);
        let wall = started.elapsed().as_secs_f64();
        let reported = match &outcome {
            Ok(c) => c.latency_secs,
            Err(ProviderError::Transport { latency_secs, .. }) => *latency_secs,
            Err(ProviderError::Config(_)) => 0.0,
        };
        result.processing_time += match options.time_source {
            TimeSource::Wall => wall.max(reported),
            TimeSource::Reported => reported,
        };
        match outcome {
            Ok(completion) => {
                result.input_tokens += completion.input_tokens;
                result.output_tokens += completion.output_tokens;
                match parse_response(&completion.text) {
                    Ok(parsed) => {
                        result.warnings.extend(parsed.warnings);
                        for (id, text) in parsed.comments {
                            if !requested.contains(&id) {
                                result.warnings.push(format!("ignored unrequested id {id}"));
                            } else if text.trim().is_empty() {
                                result.warnings.push(format!("empty comment for {id}"));
                            } else {
                                result.comments.entry(id).or_insert(text);
                            }
                        }
                    }
                    Err(e) => result.warnings.push(format!("attempt {attempt}: {e}")),
                }
            }
            Err(e) => {
                // Configuration problems will not heal on retry.
                let fatal = matches!(e, ProviderError::Config(_));
                result.warnings.push(format!("attempt {attempt}: {e}"));
                if fatal {
                    break;
                }
            }
        }
        missing.retain(|id| !result.comments.contains_key(id));
        if missing.is_empty() || result.retries >= options.max_retries {
            break;
        }
        result.retries += 1;
        attempt += 1;
    }
    result.failed_ids = missing;
    result.cost = compute_cost(result.input_tokens, result.output_tokens, profile);
    Ok(result)
}

/// Runs many chunks with at most `options.concurrency` calls in flight,
/// further capped by the provider. Results keep input order.
pub fn generate_all(
    chunks: &[ChunkRequest],
    profile: &ModelProfile,
    provider: &dyn Provider,
    options: &GenOptions,
) -> Vec<Result<GenerationBatchResult, GenError>> {
    let limit = provider
        .max_concurrency()
        .map_or(options.concurrency, |c| c.min(options.concurrency))
        .clamp(1, chunks.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GenerationBatchResult, GenError>>>> =
        chunks.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(chunk) = chunks.get(i) else { break };
                let r = generate_comments(chunk, profile, provider, options);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every chunk ran"))
        .collect()
}

/// Totals over many batch results. Cost is computed once from the summed
/// token counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub chunks: usize,
    pub retries: u64,
    pub failed: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub processing_time: f64,
    pub cost: f64,
}

pub fn summarize(results: &[GenerationBatchResult], profile: &ModelProfile) -> CostSummary {
    let mut s = CostSummary::default();
    for r in results {
        s.chunks += 1;
        s.retries += u64::from(r.retries);
        s.failed += r.failed_ids.len();
        s.input_tokens += r.input_tokens;
        s.output_tokens += r.output_tokens;
        s.processing_time += r.processing_time;
    }
    s.cost = compute_cost(s.input_tokens, s.output_tokens, profile);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<PlaceholderId> {
        v.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn chunk(v: &[&str]) -> ChunkRequest {
        let text: String = v
            .iter()
            .map(|id| format!(" S X=1 <INLINE_COMMENT {id}>\n"))
            .collect();
        ChunkRequest {
            key: "t.m#1".into(),
            language: LanguageId::Mumps,
            token_count: text.len().div_ceil(4),
            text,
            ids: ids(v),
        }
    }

    fn script(json: &str) -> ScriptedProvider {
        ScriptedProvider::new(serde_json::from_str(json).unwrap())
    }

    fn profile() -> ModelProfile {
        ModelProfile::new("mock", 8192).with_prices(3.0, 15.0)
    }

    fn opts() -> GenOptions {
        GenOptions {
            time_source: TimeSource::Reported,
            ..GenOptions::default()
        }
    }

    #[test]
    fn cost_arithmetic() {
        let p = profile();
        assert_eq!(compute_cost(1_000_000, 0, &p), 3.0);
        assert_eq!(compute_cost(0, 0, &p), 0.0);
        assert_eq!(compute_cost(1000, 500, &p), 0.0105);
    }

    #[test]
    fn presets_match_context_windows() {
        let windows: Vec<_> = ModelProfile::presets()
            .iter()
            .map(|p| p.context_window)
            .collect();
        assert_eq!(windows, [200_000, 8_192, 32_768, 128_000]);
        assert!(ModelProfile::presets().iter().all(|p| p.temperature == 0.7));
        assert!(ModelProfile::new("x", 0).validate().is_err());
        assert!(ModelProfile::new("x", 1)
            .with_prices(-1.0, 0.0)
            .validate()
            .is_err());
    }

    #[test]
    fn all_ids_first_call() {
        let p = script(r#"{"calls": []}"#);
        let r = generate_comments(
            &chunk(&["a1a1a1", "b2b2b2", "c3c3c3"]),
            &profile(),
            &p,
            &opts(),
        )
        .unwrap();
        assert_eq!(r.retries, 0);
        assert!(r.failed_ids.is_empty());
        assert_eq!(r.comments.len(), 3);
    }

    #[test]
    fn one_dropped_then_filled() {
        let p = script(r#"{"calls": [{"action": "drop", "count": 1}]}"#);
        let r = generate_comments(
            &chunk(&["a1a1a1", "b2b2b2", "c3c3c3"]),
            &profile(),
            &p,
            &opts(),
        )
        .unwrap();
        assert_eq!(r.retries, 1);
        assert_eq!(r.comments.len(), 3);
        assert_eq!(p.requests()[1].ids, ids(&["a1a1a1"]));
    }

    #[test]
    fn never_returned_id_fails_at_cap() {
        let p = script(r#"{"calls": [], "never": ["q9q9q9"]}"#);
        let r = generate_comments(&chunk(&["a1a1a1", "q9q9q9"]), &profile(), &p, &opts()).unwrap();
        assert_eq!(r.retries, 5);
        assert_eq!(r.failed_ids, ids(&["q9q9q9"]));
        assert_eq!(p.requests().len(), 6);
    }

    #[test]
    fn transport_failure_counts_as_retry() {
        let p =
            script(r#"{"calls": [{"action": "fail", "message": "reset"}], "latency_secs": 0.25}"#);
        let r = generate_comments(&chunk(&["a1a1a1"]), &profile(), &p, &opts()).unwrap();
        assert_eq!(r.retries, 1);
        assert!(r.failed_ids.is_empty());
        assert_eq!(r.processing_time, 0.5);
    }

    #[test]
    fn accounting_accumulates_over_calls() {
        let p = script(
            r#"{"calls": [{"action": "drop", "count": 1}], "input_tokens": 500, "output_tokens": 250}"#,
        );
        let r = generate_comments(&chunk(&["a1a1a1", "b2b2b2"]), &profile(), &p, &opts()).unwrap();
        assert_eq!((r.input_tokens, r.output_tokens), (1000, 500));
        assert_eq!(r.cost, 0.0105);
    }

    #[test]
    fn oversize_chunk_is_rejected() {
        let p = script(r#"{"calls": []}"#);
        let mut c = chunk(&["a1a1a1"]);
        c.token_count = 5000;
        assert!(matches!(
            generate_comments(&c, &profile(), &p, &opts()),
            Err(GenError::ChunkTooLarge { .. })
        ));
    }

    #[test]
    fn batch_keeps_order_and_is_deterministic() {
        let chunks: Vec<_> = ["a1a1a1", "b2b2b2", "c3c3c3", "d4d4d4"]
            .iter()
            .enumerate()
            .map(|(i, id)| ChunkRequest {
                key: format!("c{i}"),
                ..chunk(&[id])
            })
            .collect();
        let run = || {
            let p = script(r#"{"calls": [{"action": "drop", "count": 1}]}"#);
            generate_all(&chunks, &profile(), &p, &opts())
                .into_iter()
                .map(Result::unwrap)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(
            a.iter().map(|r| r.chunk.as_str()).collect::<Vec<_>>(),
            ["c0", "c1", "c2", "c3"]
        );
        assert_eq!(summarize(&a, &profile()).retries, 1);
    }
}
