//! Deterministic provider driven by a JSON script, for offline runs.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Completion, ModelProfile, PromptRequest, Provider, ProviderError};
use crate::masking::PlaceholderId;

/// What the mock does on one call.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MockAction {
    /// Answer every requested id.
    #[default]
    Fill,
    /// Leave out the first `count` requested ids.
    Drop { count: usize },
    /// Leave out the given ids.
    Omit { ids: Vec<PlaceholderId> },
    /// Answer every id inside a fenced code block.
    Fenced,
    /// Fail as a transport error.
    Fail { message: String },
    /// Reply with literal text.
    Raw { text: String },
}

/// Which call counter indexes `calls`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockScope {
    /// One counter for the whole run. Forces sequential scheduling.
    #[default]
    Run,
    /// The attempt number within each chunk.
    Chunk,
}

fn default_latency() -> f64 {
    1.0
}

fn default_comment() -> String {
    "Generated comment for {id}.".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub scope: MockScope,
    #[serde(default)]
    pub calls: Vec<MockAction>,
    /// Action once `calls` is exhausted.
    #[serde(default)]
    pub then: MockAction,
    /// Ids the mock never answers.
    #[serde(default)]
    pub never: Vec<PlaceholderId>,
    #[serde(default = "default_latency")]
    pub latency_secs: f64,
    /// Fixed per-call token counts; otherwise ceil(bytes / 4) of the text.
    #[serde(default)]
    pub input_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
    /// Comment text template; `{id}` and `{language}` are substituted.
    #[serde(default = "default_comment")]
    pub comment: String,
    /// Per-id comment texts overriding the template.
    #[serde(default)]
    pub comments: BTreeMap<PlaceholderId, String>,
}

impl Default for MockScript {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

pub struct ScriptedProvider {
    script: MockScript,
    calls: Mutex<usize>,
    log: Mutex<Vec<PromptRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: MockScript) -> Self {
        ScriptedProvider {
            script,
            calls: Mutex::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text)
            .map(ScriptedProvider::new)
            .map_err(|e| ProviderError::Config(format!("mock script: {e}")))
    }

    /// Every request received, in arrival order.
    pub fn requests(&self) -> Vec<PromptRequest> {
        self.log.lock().expect("log lock").clone()
    }

    fn comment_for(&self, id: &PlaceholderId, request: &PromptRequest) -> String {
        self.script.comments.get(id).cloned().unwrap_or_else(|| {
            self.script
                .comment
                .replace("{id}", id.as_str())
                .replace("{language}", request.language.name())
        })
    }

    fn answer(&self, request: &PromptRequest, skip: &[PlaceholderId]) -> String {
        let map: serde_json::Map<String, serde_json::Value> = request
            .ids
            .iter()
            .filter(|id| !skip.contains(id) && !self.script.never.contains(id))
            .map(|id| (id.to_string(), self.comment_for(id, request).into()))
            .collect();
        serde_json::to_string(&map).expect("map serializes")
    }
}

fn heuristic(text: &str) -> u64 {
    text.len().div_ceil(4) as u64
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(
        &self,
        request: &PromptRequest,
        _profile: &ModelProfile,
    ) -> Result<Completion, ProviderError> {
        self.log.lock().expect("log lock").push(request.clone());
        let index = match self.script.scope {
            MockScope::Run => {
                let mut n = self.calls.lock().expect("call lock");
                *n += 1;
                *n - 1
            }
            MockScope::Chunk => request.attempt as usize,
        };
        let action = self.script.calls.get(index).unwrap_or(&self.script.then);
        let text = match action {
            MockAction::Fill => self.answer(request, &[]),
            MockAction::Drop { count } => {
                let skip: Vec<_> = request.ids.iter().take(*count).cloned().collect();
                self.answer(request, &skip)
            }
            MockAction::Omit { ids } => self.answer(request, ids),
            MockAction::Fenced => format!("```json\n{}\n```", self.answer(request, &[])),
            MockAction::Fail { message } => {
                return Err(ProviderError::Transport {
                    message: message.clone(),
                    latency_secs: self.script.latency_secs,
                })
            }
            MockAction::Raw { text } => text.clone(),
        };
        Ok(Completion {
            input_tokens: self
                .script
                .input_tokens
                .unwrap_or_else(|| heuristic(&request.text)),
            output_tokens: self
                .script
                .output_tokens
                .unwrap_or_else(|| heuristic(&text)),
            latency_secs: self.script.latency_secs,
            text,
        })
    }

    fn max_concurrency(&self) -> Option<usize> {
        match self.script.scope {
            MockScope::Run => Some(1),
            MockScope::Chunk => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageId;

    fn request(attempt: u32, ids: &[&str]) -> PromptRequest {
        PromptRequest {
            chunk: "c".into(),
            attempt,
            language: LanguageId::Alc,
            ids: ids.iter().map(|s| s.parse().unwrap()).collect(),
            text: "x".repeat(10),
        }
    }

    #[test]
    fn scripted_actions() {
        let p = ScriptedProvider::from_json(
            r#"{"scope": "chunk", "calls": [{"action": "fenced"}, {"action": "raw", "text": "nope"}],
                "comment": "{language} note {id}"}"#,
        )
        .unwrap();
        let profile = ModelProfile::new("m", 10);
        let first = p.complete(&request(0, &["a1a1a1"]), &profile).unwrap();
        assert_eq!(first.text, "```json\n{\"a1a1a1\":\"ALC note a1a1a1\"}\n```");
        assert_eq!(first.input_tokens, 3);
        assert_eq!(
            p.complete(&request(1, &["a1a1a1"]), &profile).unwrap().text,
            "nope"
        );
        assert_eq!(p.max_concurrency(), None);
    }

    #[test]
    fn run_scope_is_sequential() {
        let p = ScriptedProvider::new(MockScript::default());
        assert_eq!(p.max_concurrency(), Some(1));
        assert!(ScriptedProvider::from_json("{\"calls\": 3}").is_err());
    }
}
