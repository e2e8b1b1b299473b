//! Materialises a pinned corpus archive (tar, optionally gzip-compressed)
//! into a local directory and writes a manifest with per-file digests.
//!
//! Archives are extracted into a staging directory and moved into place
//! only after every check passed, so a failed fetch leaves no manifest.

use std::fs;
use std::io::Read;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ingest_file_with, DecodePolicy, LanguageId, LanguageMap};

const MANIFEST: &str = "manifest.json";
const MAX_ARCHIVE_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Pin {
    /// Expected SHA-256 of the archive bytes, hex encoded.
    Sha256(String),
    /// Commit identifier that must appear in the archive's top-level
    /// directory name (as in `repo-<commit>/`).
    Commit(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSource {
    /// `https://`, `http://`, `file://` URL or a plain filesystem path.
    pub url: String,
    /// Directory inside the archive to keep, e.g. `Packages/X/Routines`.
    #[serde(default)]
    pub subpath: String,
    pub pin: Pin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the destination directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub language: Option<LanguageId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lossy_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: CorpusSource,
    pub archive_sha256: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub manifest: Manifest,
    /// False when an existing, matching manifest made the fetch a no-op.
    pub fetched: bool,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("download of {url} failed: {message}")]
    Network { url: String, message: String },
    #[error("archive digest mismatch: expected {expected}, got {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("archive does not contain commit {0} in its top-level directory")]
    CommitMismatch(String),
    #[error("archive has no entries under `{0}`")]
    EmptySubpath(String),
    #[error("destination {0} exists and is not a fetched corpus")]
    DestinationInUse(PathBuf),
    #[error("bad archive: {0}")]
    Archive(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FetchError + '_ {
    move |source| FetchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_source(url: &str) -> Result<Vec<u8>, FetchError> {
    if url.starts_with("http://") || url.starts_with("https://") {
        let net = |e: ureq::Error| FetchError::Network {
            url: url.to_string(),
            message: e.to_string(),
        };
        let mut resp = ureq::get(url).call().map_err(net)?;
        return resp
            .body_mut()
            .with_config()
            .limit(MAX_ARCHIVE_BYTES)
            .read_to_vec()
            .map_err(net);
    }
    let path = PathBuf::from(url.strip_prefix("file://").unwrap_or(url));
    fs::read(&path).map_err(io_err(&path))
}

/// If the existing manifest matches `source` and every file still has its
/// recorded digest, returns it.
fn existing(dest: &Path, source: &CorpusSource) -> Option<Manifest> {
    let text = fs::read(dest.join(MANIFEST)).ok()?;
    let manifest: Manifest = serde_json::from_slice(&text).ok()?;
    if &manifest.source != source {
        return None;
    }
    let intact = manifest.files.iter().all(|e| {
        fs::read(dest.join(&e.path))
            .map(|b| sha256_hex(&b) == e.sha256)
            .unwrap_or(false)
    });
    intact.then_some(manifest)
}

fn normalized(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    Some(out)
}

/// Fetches `source` into `dest`.
pub fn fetch_corpus(
    source: &CorpusSource,
    dest: &Path,
    languages: &LanguageMap,
) -> Result<FetchOutcome, FetchError> {
    if let Some(manifest) = existing(dest, source) {
        return Ok(FetchOutcome {
            manifest,
            fetched: false,
        });
    }
    if dest.exists() {
        let empty = fs::read_dir(dest).map_err(io_err(dest))?.next().is_none();
        if !empty && !dest.join(MANIFEST).exists() {
            return Err(FetchError::DestinationInUse(dest.to_path_buf()));
        }
    }

    let archive = read_source(&source.url)?;
    let digest = sha256_hex(&archive);
    if let Pin::Sha256(expected) = &source.pin {
        if !expected.eq_ignore_ascii_case(&digest) {
            return Err(FetchError::DigestMismatch {
                expected: expected.clone(),
                actual: digest,
            });
        }
    }

    let decoded: Box<dyn Read> = if archive.starts_with(&[0x1f, 0x8b]) {
        Box::new(flate2::read::GzDecoder::new(archive.as_slice()))
    } else {
        Box::new(archive.as_slice())
    };
    let mut entries: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut tar = tar::Archive::new(decoded);
    for entry in tar
        .entries()
        .map_err(|e| FetchError::Archive(e.to_string()))?
    {
        let mut entry = entry.map_err(|e| FetchError::Archive(e.to_string()))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = entry
            .path()
            .map_err(|e| FetchError::Archive(e.to_string()))?;
        let Some(path) = normalized(&path) else {
            return Err(FetchError::Archive(format!(
                "unsafe entry path {}",
                path.display()
            )));
        };
        let mut data = Vec::new();
        entry
            .read_to_end(&mut data)
            .map_err(|e| FetchError::Archive(e.to_string()))?;
        entries.push((path, data));
    }

    // Strip a single shared top-level directory, as source-host archives use.
    let top = entries
        .first()
        .and_then(|(p, _)| p.components().next())
        .map(|c| c.as_os_str().to_owned());
    let shared_top = top.filter(|t| {
        entries.iter().all(|(p, _)| {
            p.components().count() > 1
                && p.components().next().map(|c| c.as_os_str()) == Some(t.as_os_str())
        })
    });
    if let Pin::Commit(commit) = &source.pin {
        let ok = shared_top
            .as_ref()
            .and_then(|t| t.to_str())
            .is_some_and(|t| t.contains(commit.as_str()));
        if !ok {
            return Err(FetchError::CommitMismatch(commit.clone()));
        }
    }
    let subpath = PathBuf::from(&source.subpath);
    let mut kept = Vec::new();
    for (path, data) in entries {
        let rel = match &shared_top {
            Some(t) => path.strip_prefix(t).map(Path::to_path_buf).unwrap_or(path),
            None => path,
        };
        if let Ok(inner) = rel.strip_prefix(&subpath) {
            kept.push((inner.to_path_buf(), data));
        }
    }
    if kept.is_empty() {
        return Err(FetchError::EmptySubpath(source.subpath.clone()));
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    let parent = dest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let staging = parent.join(format!(
        ".{}.staging-{}",
        dest.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("corpus"),
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let result = (|| {
        let mut files = Vec::new();
        for (rel, data) in &kept {
            let target = staging.join(rel);
            if let Some(dir) = target.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            fs::write(&target, data).map_err(io_err(&target))?;
            let rel_str = rel.to_string_lossy().replace('\\', "/");
            let language = languages.detect(rel);
            let lossy_lines = language
                .and_then(|l| ingest_file_with(&rel_str, l, data, DecodePolicy::Lenient).ok())
                .map(|f| f.lossy_lines())
                .unwrap_or_default();
            files.push(ManifestEntry {
                path: rel_str,
                sha256: sha256_hex(data),
                bytes: data.len() as u64,
                language,
                lossy_lines,
            });
        }
        let manifest = Manifest {
            source: source.clone(),
            archive_sha256: digest.clone(),
            files,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mpath = staging.join(MANIFEST);
        fs::write(&mpath, json).map_err(io_err(&mpath))?;
        if dest.exists() {
            fs::remove_dir_all(dest).map_err(io_err(dest))?;
        }
        fs::rename(&staging, dest).map_err(io_err(dest))?;
        Ok(manifest)
    })();
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result.map(|manifest| FetchOutcome {
        manifest,
        fetched: true,
    })
}
