//! Stage directories, digest-stamped artifacts and their manifests.
//!
//! JSON artifacts are wrapped in an [`Envelope`]; CSV artifacts carry a
//! leading `config_digest` column; Markdown and text reports end with a
//! digest line. Reconstructed source files cannot hold a digest without
//! changing their content and are covered by the stage manifest alone.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use legacydoc_core::corpus::sha256_hex;

use crate::{CliError, LoadedConfig};

pub const MANIFEST: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_digest: String,
    pub stage: String,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_digest: String,
    pub artifacts: Vec<ArtifactEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::stage("io", format!("{}: {e}", path.display()))
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let tmp = path.with_file_name(format!(
        ".{}.tmp",
        path.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("artifact")
    ));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn rel_str(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Adds a leading `config_digest` column to CSV text.
pub fn stamp_csv(csv_text: &[u8], digest: &str) -> Result<Vec<u8>, CliError> {
    let err = |e: csv::Error| CliError::stage("csv", e);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text);
    let mut out = csv::Writer::from_writer(Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(err)?;
        let first = if i == 0 { "config_digest" } else { digest };
        out.write_record(std::iter::once(first).chain(rec.iter()))
            .map_err(err)?;
    }
    out.into_inner().map_err(|e| CliError::stage("csv", e))
}

pub struct StageWriter {
    dir: PathBuf,
    stage: String,
    digest: String,
    entries: Vec<ArtifactEntry>,
}

impl StageWriter {
    /// Invalidates any previous completion of `stage` before writing.
    pub fn begin(cfg: &LoadedConfig, stage: &str) -> Result<Self, CliError> {
        let dir = cfg.stage_dir(stage);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let manifest = dir.join(MANIFEST);
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(io(&manifest))?;
        }
        Ok(StageWriter {
            dir,
            stage: stage.to_string(),
            digest: cfg.digest.clone(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn bytes(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), CliError> {
        let rel = rel.as_ref();
        write_atomic(&self.dir.join(rel), bytes)?;
        self.entries.push(ArtifactEntry {
            path: rel_str(rel),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: impl AsRef<Path>, data: &T) -> Result<(), CliError> {
        let env = Envelope {
            config_digest: self.digest.clone(),
            stage: self.stage.clone(),
            data,
        };
        let mut text =
            serde_json::to_vec_pretty(&env).map_err(|e| CliError::stage(&self.stage, e))?;
        text.push(b'\n');
        self.bytes(rel, &text)
    }

    pub fn csv(&mut self, rel: impl AsRef<Path>, csv_text: &[u8]) -> Result<(), CliError> {
        let stamped = stamp_csv(csv_text, &self.digest)?;
        self.bytes(rel, &stamped)
    }

    /// Text reports get a trailing digest line.
    pub fn report(
        &mut self,
        rel: impl AsRef<Path>,
        text: &str,
        markdown: bool,
    ) -> Result<(), CliError> {
        let footer = if markdown {
            format!("\n<!-- config_digest: {} -->\n", self.digest)
        } else {
            format!("\nconfig_digest: {}\n", self.digest)
        };
        self.bytes(rel, format!("{text}{footer}").as_bytes())
    }

    /// Marks the stage complete.
    pub fn finish(mut self) -> Result<StageManifest, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = StageManifest {
            stage: self.stage,
            config_digest: self.digest,
            artifacts: self.entries,
        };
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        text.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST), &text)?;
        Ok(manifest)
    }
}

pub fn read_manifest(cfg: &LoadedConfig, stage: &str) -> Result<Option<StageManifest>, CliError> {
    let path = cfg.stage_dir(stage).join(MANIFEST);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(&path)(e)),
    }
}

/// The manifest of a completed input stage from the current configuration.
pub fn require_stage(cfg: &LoadedConfig, stage: &str) -> Result<StageManifest, CliError> {
    let m = read_manifest(cfg, stage)?.ok_or_else(|| {
        CliError::validation(format!(
            "stage `{stage}` has not completed under {}; run it first",
            cfg.output_dir().display()
        ))
    })?;
    if m.config_digest != cfg.digest {
        return Err(CliError::validation(format!(
            "stage `{stage}` was produced by config digest {}, not the current {}",
            m.config_digest, cfg.digest
        )));
    }
    Ok(m)
}

/// True when the stage finished under this configuration and every
/// artifact still has its recorded digest.
pub fn is_complete(cfg: &LoadedConfig, stage: &str) -> bool {
    let Ok(Some(m)) = read_manifest(cfg, stage) else {
        return false;
    };
    let dir = cfg.stage_dir(stage);
    m.config_digest == cfg.digest
        && m.artifacts
            .iter()
            .all(|a| fs::read(dir.join(&a.path)).is_ok_and(|b| sha256_hex(&b) == a.sha256))
}

/// Reads an enveloped JSON artifact of a completed stage, rejecting
/// artifacts stamped with another digest.
pub fn read_json<T: DeserializeOwned>(
    cfg: &LoadedConfig,
    stage: &str,
    rel: &str,
) -> Result<T, CliError> {
    require_stage(cfg, stage)?;
    let path = cfg.stage_dir(stage).join(rel);
    let bytes = fs::read(&path).map_err(io(&path))?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))?;
    if env.config_digest != cfg.digest {
        return Err(CliError::validation(format!(
            "{} carries config digest {}, not the current {}",
            path.display(),
            env.config_digest,
            cfg.digest
        )));
    }
    Ok(env.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_stamp_prepends_a_column() {
        let out = stamp_csv(b"a,b\n1,\"x,y\"\n", "d1").unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "config_digest,a,b\nd1,1,\"x,y\"\n"
        );
    }
}
