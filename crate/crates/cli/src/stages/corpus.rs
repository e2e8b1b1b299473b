//! `ingest` and `stats`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use legacydoc_core::corpus::{
    corpus_stats, fetch_corpus, ingest_path, render_stats_table, sha256_hex, CorpusStats,
    LanguageId, SourceFile,
};

use super::StageOutcome;
use crate::artifact::{read_json, StageWriter};
use crate::config::CorpusConfig;
use crate::{CliError, LoadedConfig};

const STAGE: &str = "ingest";
const FETCH_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    /// Paths are `<corpus name>/<path inside the corpus>`.
    pub files: Vec<SourceFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileEntry {
    path: String,
    language: LanguageId,
    sha256: String,
    bytes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lossy_lines: Vec<usize>,
}

fn corpus_root(cfg: &LoadedConfig, corpus: &CorpusConfig) -> Result<PathBuf, CliError> {
    match (&corpus.source, &corpus.path) {
        (Some(source), _) => {
            let dest = cfg.stage_dir(STAGE).join("fetched").join(&corpus.name);
            let outcome = fetch_corpus(source, &dest, &cfg.config.languages)
                .map_err(|e| CliError::stage(STAGE, format!("corpus `{}`: {e}", corpus.name)))?;
            tracing::info!(
                corpus = corpus.name.as_str(),
                files = outcome.manifest.files.len(),
                fetched = outcome.fetched,
                "corpus materialised"
            );
            Ok(dest)
        }
        (None, Some(path)) => Ok(cfg.resolve(path)),
        (None, None) => Err(CliError::validation(format!(
            "corpus `{}` needs a path or a source",
            corpus.name
        ))),
    }
}

fn list_files(
    cfg: &LoadedConfig,
    corpus: &CorpusConfig,
    root: &Path,
) -> Result<Vec<(PathBuf, String)>, CliError> {
    let mut out = Vec::new();
    let walk = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .follow_links(true);
    for entry in walk {
        let entry = entry.map_err(|e| CliError::stage(STAGE, e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays under root");
        let hidden = rel
            .components()
            .any(|c| c.as_os_str().to_string_lossy().starts_with('.'));
        if hidden || (corpus.source.is_some() && rel == Path::new(FETCH_MANIFEST)) {
            continue;
        }
        if corpus.language.is_none() && cfg.config.languages.detect(rel).is_none() {
            continue;
        }
        let display = std::iter::once(corpus.name.clone())
            .chain(
                rel.components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned()),
            )
            .collect::<Vec<_>>()
            .join("/");
        out.push((entry.path().to_path_buf(), display));
    }
    Ok(out)
}

/// Reads every configured corpus from disk without writing anything.
pub(crate) fn read_corpora(cfg: &LoadedConfig) -> Result<Vec<Corpus>, CliError> {
    let mut corpora = Vec::new();
    for c in &cfg.config.corpora {
        let root = corpus_root(cfg, c)?;
        let listed = list_files(cfg, c, &root)?;
        let files: Result<Vec<SourceFile>, CliError> = listed
            .par_iter()
            .map(|(path, display)| {
                ingest_path(
                    path,
                    display,
                    c.language,
                    &cfg.config.languages,
                    cfg.config.decode,
                )
                .map_err(|e| CliError::stage(STAGE, e))
            })
            .collect();
        corpora.push(Corpus {
            name: c.name.clone(),
            files: files?,
        });
    }
    Ok(corpora)
}

pub fn ingest(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    if cfg.config.corpora.is_empty() {
        return Err(CliError::validation("no corpora configured"));
    }
    let corpora = read_corpora(cfg)?;
    let mut warnings = Vec::new();
    let mut manifest = Vec::new();
    for c in &corpora {
        if c.files.is_empty() {
            warnings.push(format!("corpus `{}` has no source files", c.name));
        }
        for f in &c.files {
            let text = f.render();
            let lossy = f.lossy_lines();
            if !lossy.is_empty() {
                warnings.push(format!("{}: lines {lossy:?} decoded lossily", f.path));
            }
            manifest.push(FileEntry {
                path: f.path.clone(),
                language: f.language,
                sha256: sha256_hex(text.as_bytes()),
                bytes: text.len(),
                lossy_lines: lossy,
            });
        }
    }
    let mut w = StageWriter::begin(cfg, STAGE)?;
    w.json("files.json", &corpora)?;
    w.json("manifest.json", &manifest)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: 2,
        warnings,
        ..Default::default()
    })
}

pub fn load_corpora(cfg: &LoadedConfig) -> Result<Vec<Corpus>, CliError> {
    read_json(cfg, STAGE, "files.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatsReport {
    corpora: BTreeMap<String, CorpusStats>,
    languages: BTreeMap<LanguageId, CorpusStats>,
}

pub fn stats(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let corpora = load_corpora(cfg)?;
    let mut by_lang: BTreeMap<LanguageId, Vec<SourceFile>> = BTreeMap::new();
    for f in corpora.iter().flat_map(|c| &c.files) {
        by_lang.entry(f.language).or_default().push(f.clone());
    }
    let report = StatsReport {
        corpora: corpora
            .iter()
            .map(|c| (c.name.clone(), corpus_stats(&c.files)))
            .collect(),
        languages: by_lang.iter().map(|(l, f)| (*l, corpus_stats(f))).collect(),
    };
    let rows: Vec<(String, CorpusStats)> = report
        .corpora
        .iter()
        .map(|(n, s)| (n.clone(), *s))
        .chain(
            report
                .languages
                .iter()
                .map(|(l, s)| (format!("all {l}"), *s)),
        )
        .collect();
    let mut w = StageWriter::begin(cfg, "stats")?;
    w.json("stats.json", &report)?;
    w.report("stats.txt", &render_stats_table(&rows), false)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: 2,
        ..Default::default()
    })
}
