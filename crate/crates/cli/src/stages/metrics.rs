//! `complexity`, `painpoints` and `score`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use legacydoc_core::complexity::{self, ComplexityReport};
use legacydoc_core::corpus::{LanguageId, SourceFile};
use legacydoc_core::docmetrics::{
    score_pair, CachedEmbedder, Embedder, EmbeddingCache, HashEmbedder, HttpEmbedder, PairScore,
    ScoreConfig, EMBEDDING_DIM,
};
use legacydoc_core::painpoints::{scan_painpoints_with, PainPointRow, PainPointVector};
use legacydoc_core::review::comment_key;

use super::corpus::load_corpora;
use super::generation::{load_generated, load_masked};
use super::{Stage, StageOutcome};
use crate::artifact::{read_json, StageWriter};
use crate::config::EmbedderSpec;
use crate::{CliError, LoadedConfig};

fn files(cfg: &LoadedConfig) -> Result<Vec<SourceFile>, CliError> {
    Ok(load_corpora(cfg)?
        .into_iter()
        .flat_map(|c| c.files)
        .collect())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::stage("csv", e))?;
    }
    w.into_inner().map_err(|e| CliError::stage("csv", e))
}

pub fn complexity(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let reports: Vec<ComplexityReport> = files(cfg)?.par_iter().map(complexity::analyze).collect();
    let mut csv = Vec::new();
    complexity::write_csv(&reports, &mut csv).map_err(|e| CliError::stage(Stage::Complexity, e))?;
    let mut w = StageWriter::begin(cfg, "complexity")?;
    w.json("complexity.json", &reports)?;
    w.csv("complexity.csv", &csv)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: 2,
        ..Default::default()
    })
}

pub(crate) fn load_complexity(cfg: &LoadedConfig) -> Result<Vec<ComplexityReport>, CliError> {
    read_json(cfg, "complexity", "complexity.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FilePainPoints {
    pub file: String,
    pub vector: PainPointVector,
}

/// MUMPS files only; other languages have no detectors.
pub fn painpoints(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let all = files(cfg)?;
    let skipped = all
        .iter()
        .filter(|f| f.language != LanguageId::Mumps)
        .count();
    let found: Result<Vec<FilePainPoints>, CliError> = all
        .par_iter()
        .filter(|f| f.language == LanguageId::Mumps)
        .map(|f| {
            scan_painpoints_with(f, &cfg.config.metrics.painpoints)
                .map(|vector| FilePainPoints {
                    file: f.path.clone(),
                    vector,
                })
                .map_err(|e| CliError::stage(Stage::Painpoints, format!("{}: {e}", f.path)))
        })
        .collect();
    let found = found?;
    let rows: Vec<PainPointRow> = found
        .iter()
        .map(|p| PainPointRow::new(&p.file, &p.vector))
        .collect();
    let mut w = StageWriter::begin(cfg, "painpoints")?;
    w.json("painpoints.json", &found)?;
    w.csv("painpoints.csv", &csv_bytes(&rows)?)?;
    w.finish()?;
    let mut outcome = StageOutcome {
        artifacts: 2,
        ..Default::default()
    };
    if skipped > 0 {
        outcome.warnings.push(format!(
            "{skipped} non-MUMPS file(s) have no pain-point detectors"
        ));
    }
    Ok(outcome)
}

pub(crate) fn load_painpoints(cfg: &LoadedConfig) -> Result<Vec<FilePainPoints>, CliError> {
    read_json(cfg, "painpoints", "painpoints.json")
}

fn embedder(cfg: &LoadedConfig) -> Result<Option<Box<dyn Embedder>>, CliError> {
    if !cfg.config.metrics.similarity {
        return Ok(None);
    }
    let cache = EmbeddingCache::new(cfg.output_dir().join("cache").join("embeddings"));
    Ok(Some(match &cfg.config.metrics.embedder {
        EmbedderSpec::Hash { seed } => Box::new(HashEmbedder {
            dim: EMBEDDING_DIM,
            seed: *seed,
        }),
        EmbedderSpec::Http(config) => Box::new(CachedEmbedder {
            inner: HttpEmbedder::new(config.clone())
                .map_err(|e| CliError::validation(e.to_string()))?,
            cache,
        }),
    }))
}

/// Scores every generated comment against the comment it replaced.
pub fn score(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let masked = load_masked(cfg)?;
    let embedder = embedder(cfg)?;
    let config = ScoreConfig {
        bleu: cfg.config.metrics.bleu,
        chrf: cfg.config.metrics.chrf,
    };
    let mut scores = Vec::new();
    for profile in &cfg.config.models {
        let generated = load_generated(cfg, &profile.name)?.by_file();
        let pairs: Vec<(String, &str, &str)> = masked
            .iter()
            .flat_map(|m| {
                let comments = generated.get(&m.file);
                m.mapping.iter().filter_map(move |(id, record)| {
                    comments
                        .and_then(|c| c.get(id))
                        .map(|text| (comment_key(record), text.as_str(), record.text.trim()))
                })
            })
            .collect();
        let model_scores: Vec<PairScore> = pairs
            .par_iter()
            .map(|(key, output, reference)| {
                let mut s = score_pair(
                    key,
                    &profile.name,
                    output,
                    reference,
                    embedder.as_deref(),
                    &config,
                );
                if !cfg.config.metrics.readability {
                    s.flesch = None;
                    s.fog = None;
                }
                s
            })
            .collect();
        scores.extend(model_scores);
    }
    let degenerate = scores.iter().filter(|s| !s.flags.is_empty()).count();
    let mut w = StageWriter::begin(cfg, "score")?;
    w.json("scores.json", &scores)?;
    w.csv("scores.csv", &csv_bytes(&scores)?)?;
    w.finish()?;
    let mut outcome = StageOutcome {
        artifacts: 2,
        ..Default::default()
    };
    if degenerate > 0 {
        outcome.warnings.push(format!(
            "{degenerate} score row(s) have degenerate metrics; see the flags column"
        ));
    }
    Ok(outcome)
}

pub(crate) fn load_scores(cfg: &LoadedConfig) -> Result<Vec<PairScore>, CliError> {
    read_json(cfg, "score", "scores.json")
}
