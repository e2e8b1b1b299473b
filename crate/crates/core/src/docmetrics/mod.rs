//! Reference-based and readability scores for generated comments.

mod embed;
mod readability;

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    cosine_similarity, CachedEmbedder, Embedder, EmbeddingCache, HashEmbedder, HttpEmbedder,
    HttpEmbedderConfig, EMBEDDING_DIM,
};
pub use readability::{
    count_syllables, flesch, flesch_from_stats, gunning_fog, gunning_fog_from_stats, text_stats,
    TextStats,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("readability is undefined for text with no words")]
    NoWords,
    #[error("embedding failed: {0}")]
    Embedding(String),
}

/// A score with a flag for inputs where the metric is degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Score {
            value,
            degenerate: false,
        }
    }

    fn degenerate(value: f64) -> Self {
        Score {
            value,
            degenerate: true,
        }
    }
}

/// Lower-cased tokens: alphanumeric runs, and every other non-space
/// character on its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngram_counts<T: Hash + Eq>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 {
        for w in items.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, candidate n-grams, reference n-grams)`.
fn clipped<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let matches = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, c.values().sum(), r.values().sum())
}

/// Recall-oriented ROUGE-N with clipped counts.
pub fn rouge_n(output: &str, reference: &str, n: usize) -> Score {
    let (matches, _, total) = clipped(&tokenize(output), &tokenize(reference), n);
    if total == 0 {
        return Score::degenerate(0.0);
    }
    Score::ok(matches as f64 / total as f64)
}

pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    /// Replace zero precisions of orders above 1 by [`BLEU_EPSILON`].
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuDetail {
    /// `(matches, candidate n-grams)` for n = 1..4; `None` where the
    /// candidate has no n-grams of that order.
    pub precisions: Vec<Option<(usize, usize)>>,
    pub brevity: f64,
    pub value: f64,
    pub degenerate: bool,
}

/// BLEU with the linear brevity factor `min(1, |O|/|R|)` and uniform
/// weights over the orders the candidate is long enough to have.
pub fn bleu_detail(output: &str, reference: &str, config: BleuConfig) -> BleuDetail {
    let o = tokenize(output);
    let r = tokenize(reference);
    let precisions: Vec<Option<(usize, usize)>> = (1..=4)
        .map(|n| {
            let (m, total, _) = clipped(&o, &r, n);
            (total > 0).then_some((m, total))
        })
        .collect();
    if r.is_empty() || o.is_empty() {
        return BleuDetail {
            precisions,
            brevity: 0.0,
            value: 0.0,
            degenerate: true,
        };
    }
    let brevity = (o.len() as f64 / r.len() as f64).min(1.0);
    let orders: Vec<(usize, f64)> = precisions
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.map(|(m, t)| (k + 1, m as f64 / t as f64)))
        .collect();
    let weight = 1.0 / orders.len() as f64;
    let mut log_sum = 0.0;
    for &(n, p) in &orders {
        let p = if p == 0.0 && config.smoothing && n > 1 {
            BLEU_EPSILON
        } else {
            p
        };
        if p == 0.0 {
            return BleuDetail {
                precisions,
                brevity,
                value: 0.0,
                degenerate: false,
            };
        }
        log_sum += weight * p.ln();
    }
    BleuDetail {
        precisions,
        brevity,
        value: (brevity * log_sum.exp()).min(1.0),
        degenerate: false,
    }
}

pub fn bleu(output: &str, reference: &str) -> Score {
    let d = bleu_detail(output, reference, BleuConfig::default());
    Score {
        value: d.value,
        degenerate: d.degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub beta: f64,
    pub max_n: usize,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig {
            beta: 2.0,
            max_n: 6,
        }
    }
}

/// chrF over whitespace-free character n-grams. Precision and recall are
/// averaged over the orders both texts are long enough to have, then
/// combined as `(1+β²)PR / (β²P + R)`.
pub fn chrf(output: &str, reference: &str, config: ChrfConfig) -> Score {
    let o: Vec<char> = output.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if o.is_empty() && r.is_empty() {
        return Score::degenerate(1.0);
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut orders = 0;
    for n in 1..=config.max_n {
        let (m, hyp, refs) = clipped(&o, &r, n);
        if hyp == 0 || refs == 0 {
            continue;
        }
        precision += m as f64 / hyp as f64;
        recall += m as f64 / refs as f64;
        orders += 1;
    }
    if orders == 0 {
        return Score::degenerate(0.0);
    }
    let (p, r) = (precision / orders as f64, recall / orders as f64);
    let b2 = config.beta * config.beta;
    if p + r == 0.0 {
        return Score::ok(0.0);
    }
    Score::ok((1.0 + b2) * p * r / (b2 * p + r))
}

/// Every score for one generated comment against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub comment_id: String,
    pub source_model: String,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge3: f64,
    pub rouge4: f64,
    pub chrf: f64,
    pub similarity: Option<f64>,
    pub flesch: Option<f64>,
    pub fog: Option<f64>,
    /// Space-separated names of degenerate metrics.
    pub flags: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub bleu: BleuConfig,
    pub chrf: ChrfConfig,
}

pub fn score_pair(
    comment_id: &str,
    source_model: &str,
    output: &str,
    reference: &str,
    embedder: Option<&dyn Embedder>,
    config: &ScoreConfig,
) -> PairScore {
    let mut flags = Vec::new();
    let mut flag = |name: &str, s: Score| {
        if s.degenerate {
            flags.push(name.to_string());
        }
        s.value
    };
    let bleu = flag("bleu", bleu_detail(output, reference, config.bleu).into());
    let rouge: Vec<f64> = (1..=4)
        .map(|n| flag(&format!("rouge{n}"), rouge_n(output, reference, n)))
        .collect();
    let chrf = flag("chrf", chrf(output, reference, config.chrf));
    let similarity = embedder.and_then(|e| {
        let sim = e
            .embed(output)
            .and_then(|a| e.embed(reference).and_then(|b| cosine_similarity(&a, &b)));
        match sim {
            Ok(v) => Some(v),
            Err(_) => {
                flags.push("similarity".into());
                None
            }
        }
    });
    let flesch = flesch(output).ok();
    let fog = gunning_fog(output).ok();
    if flesch.is_none() {
        flags.push("readability".into());
    }
    PairScore {
        comment_id: comment_id.to_string(),
        source_model: source_model.to_string(),
        bleu,
        rouge1: rouge[0],
        rouge2: rouge[1],
        rouge3: rouge[2],
        rouge4: rouge[3],
        chrf,
        similarity,
        flesch,
        fog,
        flags: flags.join(" "),
    }
}

impl From<BleuDetail> for Score {
    fn from(d: BleuDetail) -> Score {
        Score {
            value: d.value,
            degenerate: d.degenerate,
        }
    }
}
