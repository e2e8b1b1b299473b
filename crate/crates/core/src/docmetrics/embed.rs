//! Text embeddings for semantic similarity.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::MetricError;

pub const EMBEDDING_DIM: usize = 1536;

pub trait Embedder: Send + Sync {
    /// Identifies the embedder and its settings in cache keys.
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError>;
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Offline embedder: signed feature hashing of lower-cased character
/// trigrams (text padded with one space each side), unit-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: EMBEDDING_DIM,
            seed: 0,
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-trigram-{}-{}", self.dim, self.seed)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        let mut v = vec![0.0; self.dim];
        let grams: Vec<&[char]> = if padded.len() >= 3 {
            padded.windows(3).collect()
        } else {
            vec![&padded[..]]
        };
        for gram in grams {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(gram.iter().collect::<String>().as_bytes());
            let digest = h.finalize();
            let bucket =
                u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Opposite-signed collisions cancelled out; fall back to a fixed axis.
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

fn default_retries() -> u32 {
    5
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    /// Full URL of an OpenAI-compatible embeddings endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, MetricError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                MetricError::Embedding(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpEmbedder {
            config,
            api_key,
            agent,
        })
    }

    fn call(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({ "model": self.config.model, "input": text }))
            .map_err(|e| e.to_string())?;
        let body: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        body["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| "response has no embedding".to_string())
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http-{}", self.config.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let mut last = String::new();
        for _ in 0..=self.config.max_retries {
            match self.call(text) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(MetricError::Embedding(last))
    }
}

/// Content-addressed store of embeddings keyed by embedder id and text.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EmbeddingCache { dir: dir.into() }
    }

    fn path(&self, embedder: &str, text: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(embedder.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let key = hex::encode(h.finalize());
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, embedder: &str, text: &str) -> Option<Vec<f64>> {
        let bytes = std::fs::read(self.path(embedder, text)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, embedder: &str, text: &str, vector: &[f64]) -> std::io::Result<()> {
        let path = self.path(embedder, text);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(vector)?)?;
        std::fs::rename(tmp, path)
    }
}

pub struct CachedEmbedder<E> {
    pub inner: E,
    pub cache: EmbeddingCache,
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let id = self.inner.id();
        if let Some(v) = self.cache.get(&id, text) {
            return Ok(v);
        }
        let v = self.inner.embed(text)?;
        // A failed cache write only costs a recomputation later.
        let _ = self.cache.put(&id, text, &v);
        Ok(v)
    }
}
