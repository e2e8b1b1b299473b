//! `chunk`, `mask`, `generate` and `unmask`, plus the dry-run estimate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use legacydoc_core::chunker::{ChunkPlan, TokenBudget, Tokenizer, TokenizerRegistry};
use legacydoc_core::corpus::{sha256_hex, SourceFile};
use legacydoc_core::genclient::{
    build_prompt, chunk_requests, compute_cost, generate_all, summarize, ChunkRequest, GenError,
    GenOptions, GenerationBatchResult, HttpProvider, HttpProviderConfig, ModelProfile, Provider,
    ScriptedProvider,
};
use legacydoc_core::masking::{
    diff_guard, mask_comments, unmask as unmask_file, DiffVerdict, MaskedFile, MissingPolicy,
    PlaceholderId,
};

use super::corpus::{load_corpora, read_corpora};
use super::{Options, Stage, StageOutcome};
use crate::artifact::{read_json, require_stage, StageWriter};
use crate::config::ProviderSpec;
use crate::{CliError, LoadedConfig};

/// Output allowance per placeholder in the dry-run cost ceiling.
pub const ESTIMATED_OUTPUT_TOKENS_PER_ID: u64 = 64;

const LEDGER: &str = "ledger.jsonl";

/// Mask seed of one file: the run seed mixed with the file path, so files
/// do not share an id sequence.
pub fn file_seed(seed: u64, path: &str) -> u64 {
    let digest = sha256_hex(format!("{seed}:{path}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

fn tokenizer(cfg: &LoadedConfig) -> Result<std::sync::Arc<dyn Tokenizer>, CliError> {
    TokenizerRegistry::default()
        .get(&cfg.config.tokenizer)
        .map_err(|e| CliError::validation(e.to_string()))
}

fn budget(profile: &ModelProfile) -> Result<TokenBudget, CliError> {
    TokenBudget::from_context_window(profile.context_window)
        .map_err(|e| CliError::validation(e.to_string()))
}

fn mask_all(cfg: &LoadedConfig, files: &[SourceFile]) -> Vec<MaskedFile> {
    files
        .par_iter()
        .map(|f| mask_comments(f, file_seed(cfg.config.mask_seed, &f.path)))
        .collect()
}

fn all_files(cfg: &LoadedConfig) -> Result<Vec<SourceFile>, CliError> {
    Ok(load_corpora(cfg)?
        .into_iter()
        .flat_map(|c| c.files)
        .collect())
}

/// Requests for one model over every file, in file order.
fn requests_for(
    files: &[SourceFile],
    masked: &[MaskedFile],
    tok: &dyn Tokenizer,
    profile: &ModelProfile,
) -> Result<(Vec<ChunkPlan>, Vec<ChunkRequest>), CliError> {
    let budget = budget(profile)?;
    let mut plans = Vec::new();
    let mut requests = Vec::new();
    for (f, m) in files.iter().zip(masked) {
        let (plan, reqs) = chunk_requests(f, m, tok, budget);
        plans.push(plan);
        requests.extend(reqs);
    }
    Ok((plans, requests))
}

#[derive(Serialize)]
struct ChunkSummary<'a> {
    model: &'a str,
    budget: usize,
    chunks: usize,
    oversize: usize,
}

/// Plans on each file's subroutine structure, counting tokens on the masked
/// text the model will actually receive.
pub fn chunk(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let files = all_files(cfg)?;
    let masked = mask_all(cfg, &files);
    let tok = tokenizer(cfg)?;
    let mut w = StageWriter::begin(cfg, "chunk")?;
    let mut summaries = Vec::new();
    for profile in &cfg.config.models {
        let (plans, _) = requests_for(&files, &masked, tok.as_ref(), profile)?;
        summaries.push((
            profile.name.clone(),
            plans.iter().map(|p| p.chunks.len()).sum::<usize>(),
            plans
                .iter()
                .flat_map(|p| &p.chunks)
                .filter(|c| c.oversize_split)
                .count(),
            profile.chunk_budget(),
        ));
        w.json(format!("{}.json", profile.name), &plans)?;
    }
    let rows: Vec<ChunkSummary> = summaries
        .iter()
        .map(|(m, c, o, b)| ChunkSummary {
            model: m,
            budget: *b,
            chunks: *c,
            oversize: *o,
        })
        .collect();
    w.json("summary.json", &rows)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: cfg.config.models.len() + 1,
        ..Default::default()
    })
}

pub fn mask(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let files = all_files(cfg)?;
    let masked = mask_all(cfg, &files);
    let mut w = StageWriter::begin(cfg, "mask")?;
    for m in &masked {
        w.bytes(Path::new("files").join(&m.file), m.masked_text.as_bytes())?;
    }
    w.json("masked.json", &masked)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: masked.len() + 1,
        ..Default::default()
    })
}

pub fn load_masked(cfg: &LoadedConfig) -> Result<Vec<MaskedFile>, CliError> {
    read_json(cfg, "mask", "masked.json")
}

fn provider_for(
    spec: Option<&ProviderSpec>,
    cfg: &LoadedConfig,
    profile: &ModelProfile,
) -> Result<Box<dyn Provider>, CliError> {
    match spec {
        None => Err(CliError::validation(
            "no provider configured; set `provider` or pass --provider mock:<script>",
        )),
        Some(ProviderSpec::Mock { script }) => {
            let path = cfg.resolve(script);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::validation(format!("mock script {}: {e}", path.display()))
            })?;
            let p = ScriptedProvider::from_json(&text)
                .map_err(|e| CliError::validation(e.to_string()))?;
            Ok(Box::new(p))
        }
        Some(ProviderSpec::Http {
            endpoint,
            api_key_env,
            timeout_secs,
            max_concurrency,
            model_names,
        }) => {
            let config = HttpProviderConfig {
                endpoint: endpoint.clone(),
                model: model_names
                    .get(&profile.name)
                    .cloned()
                    .unwrap_or_else(|| profile.name.clone()),
                api_key_env: api_key_env.clone(),
                timeout_secs: *timeout_secs,
                max_concurrency: *max_concurrency,
            };
            Ok(Box::new(
                HttpProvider::new(config).map_err(|e| CliError::validation(e.to_string()))?,
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LedgerLine {
    config_digest: String,
    result: GenerationBatchResult,
}

fn read_checkpoint(path: &Path, digest: &str) -> BTreeMap<String, GenerationBatchResult> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return BTreeMap::new();
    };
    text.lines()
        .filter_map(|l| serde_json::from_str::<LedgerLine>(l).ok())
        .filter(|l| l.config_digest == digest && l.result.failed_ids.is_empty())
        .map(|l| (l.result.chunk.clone(), l.result))
        .collect()
}

fn oversize_result(req: &ChunkRequest, profile: &ModelProfile) -> GenerationBatchResult {
    GenerationBatchResult {
        chunk: req.key.clone(),
        model: profile.name.clone(),
        comments: BTreeMap::new(),
        retries: 0,
        processing_time: 0.0,
        input_tokens: 0,
        output_tokens: 0,
        cost: 0.0,
        failed_ids: req.ids.clone(),
        warnings: vec![format!(
            "chunk has {} tokens, over the budget of {}; not sent",
            req.token_count,
            profile.chunk_budget()
        )],
    }
}

fn gen_error(e: GenError) -> CliError {
    match e {
        GenError::Profile(m) => CliError::validation(m),
        other => CliError::stage(Stage::Generate, other),
    }
}

/// Generates every chunk of one model, appending each finished chunk to
/// the checkpoint so an interrupted run resumes where it stopped.
fn generate_model(
    cfg: &LoadedConfig,
    profile: &ModelProfile,
    provider: &dyn Provider,
    requests: &[ChunkRequest],
    checkpoint: &Path,
) -> Result<Vec<GenerationBatchResult>, CliError> {
    let mut done = read_checkpoint(checkpoint, &cfg.digest);
    let resumed = requests
        .iter()
        .filter(|r| done.contains_key(&r.key))
        .count();
    if resumed > 0 {
        tracing::info!(
            model = profile.name.as_str(),
            resumed,
            "reusing checkpointed chunks"
        );
    }
    if let Some(dir) = checkpoint.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::stage(Stage::Generate, e))?;
    }
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(checkpoint)
        .map_err(|e| CliError::stage(Stage::Generate, format!("{}: {e}", checkpoint.display())))?;
    let options = GenOptions {
        max_retries: cfg.config.max_retries,
        time_source: cfg.config.time_source,
        concurrency: cfg.config.concurrency,
    };
    let pending: Vec<&ChunkRequest> = requests
        .iter()
        .filter(|r| !done.contains_key(&r.key))
        .collect();
    let (oversize, sendable): (Vec<&ChunkRequest>, Vec<&ChunkRequest>) = pending
        .into_iter()
        .partition(|r| r.token_count > profile.chunk_budget());
    for r in oversize {
        done.insert(r.key.clone(), oversize_result(r, profile));
    }
    for batch in sendable.chunks(cfg.config.concurrency.max(1) * 2) {
        let owned: Vec<ChunkRequest> = batch.iter().map(|r| (*r).clone()).collect();
        for result in generate_all(&owned, profile, provider, &options) {
            let result = result.map_err(gen_error)?;
            let line = LedgerLine {
                config_digest: cfg.digest.clone(),
                result: result.clone(),
            };
            writeln!(
                log,
                "{}",
                serde_json::to_string(&line).expect("ledger line serializes")
            )
            .and_then(|_| log.sync_data())
            .map_err(|e| CliError::stage(Stage::Generate, e))?;
            done.insert(result.chunk.clone(), result);
        }
    }
    Ok(requests
        .iter()
        .map(|r| done.remove(&r.key).expect("every request has a result"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ModelSummary {
    pub model: String,
    #[serde(flatten)]
    pub totals: legacydoc_core::genclient::CostSummary,
    pub failed_chunks: Vec<String>,
}

pub fn generate(cfg: &LoadedConfig, opts: &Options) -> Result<StageOutcome, CliError> {
    require_stage(cfg, "chunk")?;
    let files = all_files(cfg)?;
    let masked = load_masked(cfg)?;
    let tok = tokenizer(cfg)?;
    let spec = opts.provider.as_ref().or(cfg.config.provider.as_ref());
    let mut w = StageWriter::begin(cfg, "generate")?;
    let mut outcome = StageOutcome::default();
    let mut failed_total = 0;
    for profile in &cfg.config.models {
        let provider = provider_for(spec, cfg, profile)?;
        let (_, requests) = requests_for(&files, &masked, tok.as_ref(), profile)?;
        let checkpoint = w.dir().join(&profile.name).join(LEDGER);
        let results = generate_model(cfg, profile, provider.as_ref(), &requests, &checkpoint)?;
        let mut ledger = String::new();
        for r in &results {
            let line = LedgerLine {
                config_digest: cfg.digest.clone(),
                result: r.clone(),
            };
            ledger.push_str(&serde_json::to_string(&line).expect("ledger line serializes"));
            ledger.push('\n');
            if !r.failed_ids.is_empty() {
                outcome.warnings.push(format!(
                    "{}: {} {} id(s) unfilled after {} retries",
                    profile.name,
                    r.chunk,
                    r.failed_ids.len(),
                    r.retries
                ));
            }
        }
        w.bytes(Path::new(&profile.name).join(LEDGER), ledger.as_bytes())?;
        let totals = summarize(&results, profile);
        failed_total += totals.failed;
        let summary = ModelSummary {
            model: profile.name.clone(),
            failed_chunks: results
                .iter()
                .filter(|r| !r.failed_ids.is_empty())
                .map(|r| r.chunk.clone())
                .collect(),
            totals: totals.clone(),
        };
        w.json(Path::new(&profile.name).join("summary.json"), &summary)?;
        tracing::info!(
            model = profile.name.as_str(),
            chunks = totals.chunks,
            retries = totals.retries,
            failed = totals.failed,
            cost = totals.cost,
            "generation finished"
        );
        outcome.costs.push((profile.name.clone(), totals));
        outcome.artifacts += 2;
    }
    if failed_total > 0 && !cfg.config.allow_failed {
        return Err(CliError::Exhausted(format!(
            "{failed_total} placeholder(s) still unfilled; rerun to retry them, or set allow_failed"
        )));
    }
    w.finish()?;
    Ok(outcome)
}

/// Generated comments and per-chunk accounting of one model.
pub(crate) struct Generated {
    pub results: Vec<GenerationBatchResult>,
}

impl Generated {
    /// Comment texts keyed by file path, then placeholder.
    pub fn by_file(&self) -> BTreeMap<String, BTreeMap<PlaceholderId, String>> {
        let mut out: BTreeMap<String, BTreeMap<PlaceholderId, String>> = BTreeMap::new();
        for r in &self.results {
            let file = chunk_file(&r.chunk);
            out.entry(file.to_string())
                .or_default()
                .extend(r.comments.clone());
        }
        out
    }

    /// The batch result covering each (file, placeholder).
    pub fn chunk_of(&self) -> BTreeMap<(String, PlaceholderId), &GenerationBatchResult> {
        let mut out = BTreeMap::new();
        for r in &self.results {
            let file = chunk_file(&r.chunk);
            for id in r.comments.keys().chain(&r.failed_ids) {
                out.insert((file.to_string(), id.clone()), r);
            }
        }
        out
    }
}

/// File part of a `path#k` chunk key.
pub(crate) fn chunk_file(key: &str) -> &str {
    key.rsplit_once('#').map_or(key, |(f, _)| f)
}

pub(crate) fn load_generated(cfg: &LoadedConfig, model: &str) -> Result<Generated, CliError> {
    require_stage(cfg, "generate")?;
    let path = cfg.stage_dir("generate").join(model).join(LEDGER);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::stage(Stage::Generate, format!("{}: {e}", path.display())))?;
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l: LedgerLine = serde_json::from_str(line).map_err(|e| {
            CliError::stage(
                Stage::Generate,
                format!("{} line {}: {e}", path.display(), i + 1),
            )
        })?;
        if l.config_digest != cfg.digest {
            return Err(CliError::validation(format!(
                "{} line {} carries config digest {}, not the current {}",
                path.display(),
                i + 1,
                l.config_digest,
                cfg.digest
            )));
        }
        results.push(l.result);
    }
    Ok(Generated { results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GuardEntry {
    file: String,
    verdict: DiffVerdict,
}

pub fn unmask(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let files = all_files(cfg)?;
    let masked = load_masked(cfg)?;
    let mut w = StageWriter::begin(cfg, "unmask")?;
    let mut outcome = StageOutcome::default();
    for profile in &cfg.config.models {
        let generated = load_generated(cfg, &profile.name)?.by_file();
        let empty = BTreeMap::new();
        let rebuilt: Result<Vec<(String, DiffVerdict)>, CliError> = files
            .par_iter()
            .zip(&masked)
            .map(|(f, m)| {
                let comments = generated.get(&f.path).unwrap_or(&empty);
                let text = unmask_file(m, comments, MissingPolicy::Marker)
                    .map_err(|e| CliError::stage(Stage::Unmask, format!("{}: {e}", f.path)))?;
                let verdict = diff_guard(f, &text);
                Ok((text, verdict))
            })
            .collect();
        let mut guard = Vec::new();
        for (f, (text, verdict)) in files.iter().zip(rebuilt?) {
            w.bytes(Path::new(&profile.name).join(&f.path), text.as_bytes())?;
            if let DiffVerdict::Mutated(lines) = &verdict {
                outcome.warnings.push(format!(
                    "{}: {} code changed on lines {lines:?}",
                    profile.name, f.path
                ));
            }
            guard.push(GuardEntry {
                file: f.path.clone(),
                verdict,
            });
        }
        w.json(Path::new(&profile.name).join("diff_guard.json"), &guard)?;
        outcome.artifacts += files.len() + 1;
    }
    w.finish()?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub model: String,
    pub chunks: usize,
    pub requests: usize,
    pub placeholders: usize,
    pub oversize_chunks: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Every attempt resending the full prompt and receiving the full
    /// output allowance.
    pub cost_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DryRunPlan {
    pub config_digest: String,
    pub output_dir: String,
    pub stages: Vec<(Stage, bool)>,
    pub provider: String,
    pub models: Vec<ModelEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// The execution plan and a provider cost ceiling, computed from local
/// files only.
pub fn dry_run(
    cfg: &LoadedConfig,
    requested: &[Stage],
    opts: &Options,
) -> Result<DryRunPlan, CliError> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let files: Vec<SourceFile> = if crate::artifact::is_complete(cfg, "ingest") {
        all_files(cfg)?
    } else {
        let offline = cfg.config.corpora.iter().all(|c| c.source.is_none());
        if offline {
            read_corpora(cfg)?
                .into_iter()
                .flat_map(|c| c.files)
                .collect()
        } else {
            notes.push(
                "corpora with a remote source are not fetched yet; estimates exclude them".into(),
            );
            let mut local = cfg.clone();
            local.config.corpora.retain(|c| c.source.is_none());
            read_corpora(&local)?
                .into_iter()
                .flat_map(|c| c.files)
                .collect()
        }
    };
    let masked = mask_all(cfg, &files);
    let tok = tokenizer(cfg)?;
    let mut models = Vec::new();
    for profile in &cfg.config.models {
        let (plans, requests) = requests_for(&files, &masked, tok.as_ref(), profile)?;
        let mut input = 0u64;
        let mut placeholders = 0u64;
        for r in &requests {
            let prompt = build_prompt(&r.text, &r.ids, r.language).map_err(gen_error)?;
            input += tok.count(&prompt) as u64;
            placeholders += r.ids.len() as u64;
        }
        let output = placeholders * ESTIMATED_OUTPUT_TOKENS_PER_ID;
        let attempts = f64::from(cfg.config.max_retries) + 1.0;
        models.push(ModelEstimate {
            model: profile.name.clone(),
            chunks: plans.iter().map(|p| p.chunks.len()).sum(),
            requests: requests.len(),
            placeholders: placeholders as usize,
            oversize_chunks: requests
                .iter()
                .filter(|r| r.token_count > profile.chunk_budget())
                .count(),
            input_tokens: input,
            output_tokens: output,
            cost_ceiling: attempts * compute_cost(input, output, profile),
        });
    }
    let provider = match opts.provider.as_ref().or(cfg.config.provider.as_ref()) {
        None => "none".to_string(),
        Some(ProviderSpec::Mock { script }) => format!("mock:{}", script.display()),
        Some(ProviderSpec::Http { endpoint, .. }) => format!("http:{endpoint}"),
    };
    Ok(DryRunPlan {
        config_digest: cfg.digest.clone(),
        output_dir: cfg.output_dir().display().to_string(),
        stages: super::plan(cfg, requested, opts.force),
        provider,
        models,
        notes,
    })
}
