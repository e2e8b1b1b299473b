//! Run configuration: JSON file, `--set` overrides, validation and digest.
//!
//! Relative paths resolve against the directory of the configuration file.
//! The digest covers the configuration as written, after overrides, so it
//! does not change when the tree is moved.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use legacydoc_core::chunker::TokenizerRegistry;
use legacydoc_core::corpus::{sha256_hex, CorpusSource, DecodePolicy, LanguageId, LanguageMap};
use legacydoc_core::docmetrics::{BleuConfig, ChrfConfig, HttpEmbedderConfig};
use legacydoc_core::genclient::{
    ModelProfile, TimeSource, DEFAULT_CONCURRENCY, DEFAULT_MAX_RETRIES,
};
use legacydoc_core::painpoints::PainPointConfig;
use legacydoc_core::review::DEFAULT_CONTEXT_RADIUS;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Dataset label; also the top directory of every file path.
    pub name: String,
    /// Local directory of source files.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Archive to fetch into the ingest stage directory instead of `path`.
    #[serde(default)]
    pub source: Option<CorpusSource>,
    /// Forces one language for every file; otherwise the extension decides.
    #[serde(default)]
    pub language: Option<LanguageId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    Mock {
        script: PathBuf,
    },
    /// OpenAI-compatible chat completions endpoint.
    Http {
        endpoint: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        max_concurrency: Option<usize>,
        /// Profile name to the model name sent to the endpoint.
        #[serde(default)]
        model_names: std::collections::BTreeMap<String, String>,
    },
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hash {
        #[serde(default)]
        seed: u64,
    },
    Http(HttpEmbedderConfig),
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hash { seed: 0 }
    }
}

fn yes() -> bool {
    true
}

fn rouge_default() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub similarity: bool,
    #[serde(default = "yes")]
    pub readability: bool,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub bleu: BleuConfig,
    #[serde(default)]
    pub chrf: ChrfConfig,
    /// ROUGE order reported in the quality table.
    #[serde(default = "rouge_default")]
    pub rouge_n: usize,
    #[serde(default)]
    pub painpoints: PainPointConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

fn overlap_default() -> f64 {
    1.0
}

fn radius_default() -> usize {
    DEFAULT_CONTEXT_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewConfig {
    /// Invitation file: reviewer ids and their opaque tokens.
    #[serde(default)]
    pub roster: Option<PathBuf>,
    #[serde(default = "overlap_default")]
    pub overlap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "radius_default")]
    pub context_radius: usize,
    #[serde(default = "yes")]
    pub include_ground_truth: bool,
    /// Ratings export (jsonl or csv) used by `correlate` instead of the
    /// live review log.
    #[serde(default)]
    pub ratings: Option<PathBuf>,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

fn default_models() -> Vec<ModelProfile> {
    ModelProfile::presets()
}

fn default_tokenizer() -> String {
    "heuristic".into()
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpora: Vec<CorpusConfig>,
    #[serde(default)]
    pub languages: LanguageMap,
    #[serde(default = "default_models")]
    pub models: Vec<ModelProfile>,
    #[serde(default)]
    pub provider: Option<ProviderSpec>,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default)]
    pub mask_seed: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub time_source: TimeSource,
    /// Continue past chunks whose ids stayed unfilled after every retry.
    #[serde(default)]
    pub allow_failed: bool,
    #[serde(default)]
    pub decode: DecodePolicy,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub review: ReviewConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A configuration with its digest and the directory its paths resolve in.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub digest: String,
    pub base_dir: PathBuf,
}

fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `path.to.field=value`. Numeric segments index arrays; the value
/// is parsed as JSON and taken as a string when that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::validation(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::validation(format!(
            "override key `{path}` has an empty segment"
        )));
    }
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    CliError::validation(format!("`{seg}` in `{path}` must index an array"))
                })?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    CliError::validation(format!("index {idx} in `{path}` is out of range ({len})"))
                })?
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut()
                    .expect("just set")
                    .entry(seg.to_string())
                    .or_insert(Value::Null)
            }
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            _ => {
                return Err(CliError::validation(format!(
                    "`{path}` descends into a scalar"
                )))
            }
        };
        if last {
            *node = parse_override_value(raw);
        }
    }
    Ok(())
}

impl RunConfig {
    /// Covers everything that shapes artifact content. The output location
    /// is excluded, so the same run in two directories carries one digest.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        sha256_hex(&serde_json::to_vec(&value).expect("value serializes"))
    }

    /// Reads `path` (or starts from defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, CliError> {
        let (mut value, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (value, base)
            }
            None => (Value::Object(Default::default()), PathBuf::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::validation(format!("config: {e}")))?;
        let base_dir = if base_dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base_dir
        };
        Ok(LoadedConfig {
            digest: config.digest(),
            config,
            base_dir,
        })
    }
}

fn safe_name(kind: &str, name: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{kind} name `{name}` must be non-empty and use only letters, digits, `-`, `_` and `.`"
        )))
    }
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_dir().join(stage)
    }

    fn must_exist(&self, what: &str, p: &Path) -> Result<(), CliError> {
        let full = self.resolve(p);
        if full.exists() {
            Ok(())
        } else {
            Err(CliError::validation(format!(
                "{what} {} does not exist",
                full.display()
            )))
        }
    }

    /// Checks every invariant that does not need stage outputs.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let mut names = BTreeSet::new();
        for corpus in &c.corpora {
            safe_name("corpus", &corpus.name)?;
            if !names.insert(&corpus.name) {
                return Err(CliError::validation(format!(
                    "corpus `{}` is listed twice",
                    corpus.name
                )));
            }
            match (&corpus.path, &corpus.source) {
                (None, None) => {
                    return Err(CliError::validation(format!(
                        "corpus `{}` needs a path or a source",
                        corpus.name
                    )))
                }
                (Some(p), None) => self.must_exist(&format!("corpus `{}` path", corpus.name), p)?,
                _ => {}
            }
        }
        if c.models.is_empty() {
            return Err(CliError::validation(
                "at least one model profile is required",
            ));
        }
        let mut models = BTreeSet::new();
        for m in &c.models {
            safe_name("model", &m.name)?;
            if !models.insert(&m.name) {
                return Err(CliError::validation(format!(
                    "model `{}` is listed twice",
                    m.name
                )));
            }
            m.validate()
                .map_err(|e| CliError::validation(e.to_string()))?;
            if m.context_window < 2 {
                return Err(CliError::validation(format!(
                    "{}: context_window must be at least 2",
                    m.name
                )));
            }
        }
        TokenizerRegistry::default()
            .get(&c.tokenizer)
            .map_err(|e| CliError::validation(e.to_string()))?;
        if c.concurrency == 0 {
            return Err(CliError::validation("concurrency must be at least 1"));
        }
        if let Some(ProviderSpec::Mock { script }) = &c.provider {
            self.must_exist("mock script", script)?;
        }
        if !(0.0..=1.0).contains(&c.review.overlap) {
            return Err(CliError::validation(format!(
                "review.overlap must be within [0, 1], got {}",
                c.review.overlap
            )));
        }
        if let Some(r) = &c.review.roster {
            self.must_exist("review roster", r)?;
        }
        if let Some(r) = &c.review.ratings {
            self.must_exist("ratings file", r)?;
        }
        if !(1..=4).contains(&c.metrics.rouge_n) {
            return Err(CliError::validation("metrics.rouge_n must be within 1-4"));
        }
        Ok(())
    }
}
