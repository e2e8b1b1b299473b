//! Source ingestion: line classification, comment extraction and corpus
//! statistics for MUMPS and mainframe assembler files.
//!
//! LOC is the number of non-blank lines; comment-only lines count toward it.

mod fetch;
pub mod synth;

pub use fetch::{
    fetch_corpus, sha256_hex, CorpusSource, FetchError, FetchOutcome, Manifest, ManifestEntry, Pin,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{alc, mumps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LanguageId {
    #[serde(rename = "MUMPS")]
    Mumps,
    #[serde(rename = "ALC")]
    Alc,
}

impl LanguageId {
    pub fn name(self) -> &'static str {
        match self {
            LanguageId::Mumps => "MUMPS",
            LanguageId::Alc => "ALC",
        }
    }

    /// Human-readable language name used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            LanguageId::Mumps => "MUMPS",
            LanguageId::Alc => "IBM mainframe Assembly Language (ALC/HLASM)",
        }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LanguageId {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MUMPS" | "M" => Ok(LanguageId::Mumps),
            "ALC" | "HLASM" | "ASM" => Ok(LanguageId::Alc),
            _ => Err(IngestError::UnknownLanguage(s.to_string())),
        }
    }
}

/// File-extension to language map. Keys are lower-case, without the dot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageMap(pub BTreeMap<String, LanguageId>);

impl Default for LanguageMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("m".into(), LanguageId::Mumps);
        m.insert("asm".into(), LanguageId::Alc);
        m.insert("alc".into(), LanguageId::Alc);
        LanguageMap(m)
    }
}

impl LanguageMap {
    pub fn detect(&self, path: &Path) -> Option<LanguageId> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        self.0.get(&ext).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Code,
    FullComment,
    CodeWithInline,
    Blank,
}

/// Line terminator, kept so a file can be reproduced byte-for-byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eol {
    Lf,
    CrLf,
    None,
}

impl Eol {
    pub fn as_str(self) -> &'static str {
        match self {
            Eol::Lf => "\n",
            Eol::CrLf => "\r\n",
            Eol::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    /// 1-based line number.
    pub index: usize,
    pub raw: String,
    pub kind: LineKind,
    pub eol: Eol,
    /// The line was not valid UTF-8 and was decoded as Latin-1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lossy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentKind {
    Block,
    Inline,
}

/// One comment, located precisely enough to be masked and restored.
///
/// On line `anchor_line` the comment occupies bytes
/// `column .. column + marker.len() + text.len() + trailing.len()`.
/// `marker` is the delimiter plus any blanks before the body (`"; "`,
/// `"*"`, or empty for assembler remarks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub id: u32,
    pub kind: CommentKind,
    pub text: String,
    pub anchor_line: usize,
    pub file: String,
    pub column: usize,
    pub marker: String,
    pub trailing: String,
}

impl CommentRecord {
    pub fn span_end(&self) -> usize {
        self.column + self.marker.len() + self.text.len() + self.trailing.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub language: LanguageId,
    pub lines: Vec<SourceLine>,
    pub comments: Vec<CommentRecord>,
}

impl SourceFile {
    /// Reassembles the original text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&l.raw);
            out.push_str(l.eol.as_str());
        }
        out
    }

    pub fn loc(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| l.kind != LineKind::Blank)
            .count()
    }

    pub fn line(&self, index: usize) -> Option<&SourceLine> {
        index.checked_sub(1).and_then(|i| self.lines.get(i))
    }

    pub fn lossy_lines(&self) -> Vec<usize> {
        self.lines
            .iter()
            .filter(|l| l.lossy)
            .map(|l| l.index)
            .collect()
    }

    /// Text of lines `start..=end` (1-based) including terminators.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let mut out = String::new();
        for l in &self.lines[start - 1..end] {
            out.push_str(&l.raw);
            out.push_str(l.eol.as_str());
        }
        out
    }

    /// Code portion of a line with its comment span removed.
    pub fn code_of(&self, index: usize) -> &str {
        let raw = &self.lines[index - 1].raw;
        match self.comments.iter().find(|c| c.anchor_line == index) {
            Some(c) => &raw[..c.column],
            None => raw,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: String, offset: usize },
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("{path}: no language mapping for this file extension")]
    NoLanguage { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How to treat bytes that are not valid UTF-8.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodePolicy {
    /// Reject the file, naming the first bad byte offset.
    #[default]
    Strict,
    /// Decode offending lines as Latin-1 and flag them as lossy.
    Lenient,
}

/// Ingests a file with strict UTF-8 decoding.
pub fn ingest_file(
    path: &str,
    language: LanguageId,
    text: &[u8],
) -> Result<SourceFile, IngestError> {
    ingest_file_with(path, language, text, DecodePolicy::Strict)
}

pub fn ingest_file_with(
    path: &str,
    language: LanguageId,
    text: &[u8],
    policy: DecodePolicy,
) -> Result<SourceFile, IngestError> {
    let mut raws = Vec::new();
    let mut offset = 0;
    while offset < text.len() {
        let (line, eol, next) = match text[offset..].iter().position(|&b| b == b'\n') {
            Some(p) => {
                let end = offset + p;
                if end > offset && text[end - 1] == b'\r' {
                    (&text[offset..end - 1], Eol::CrLf, end + 1)
                } else {
                    (&text[offset..end], Eol::Lf, end + 1)
                }
            }
            None => (&text[offset..], Eol::None, text.len()),
        };
        let (raw, lossy) = match std::str::from_utf8(line) {
            Ok(s) => (s.to_string(), false),
            Err(e) => match policy {
                DecodePolicy::Strict => {
                    return Err(IngestError::Decode {
                        path: path.to_string(),
                        offset: offset + e.valid_up_to(),
                    })
                }
                DecodePolicy::Lenient => (line.iter().map(|&b| b as char).collect(), true),
            },
        };
        raws.push((raw, eol, lossy));
        offset = next;
    }

    let mut lines: Vec<SourceLine> = raws
        .into_iter()
        .enumerate()
        .map(|(i, (raw, eol, lossy))| SourceLine {
            index: i + 1,
            kind: if raw.trim().is_empty() {
                LineKind::Blank
            } else {
                LineKind::Code
            },
            raw,
            eol,
            lossy,
        })
        .collect();

    let comments = match language {
        LanguageId::Mumps => classify_mumps(path, &mut lines),
        LanguageId::Alc => classify_alc(path, &mut lines),
    };
    Ok(SourceFile {
        path: path.to_string(),
        language,
        lines,
        comments,
    })
}

/// Reads and ingests a file from disk, choosing the language from `map`
/// unless `language` is given.
pub fn ingest_path(
    path: &Path,
    display: &str,
    language: Option<LanguageId>,
    map: &LanguageMap,
    policy: DecodePolicy,
) -> Result<SourceFile, IngestError> {
    let language = match language.or_else(|| map.detect(path)) {
        Some(l) => l,
        None => {
            return Err(IngestError::NoLanguage {
                path: display.to_string(),
            })
        }
    };
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: display.to_string(),
        source,
    })?;
    ingest_file_with(display, language, &bytes, policy)
}

fn split_body(body: &str) -> (&str, &str, &str) {
    let text_start = body.len() - body.trim_start().len();
    let trimmed = body.trim();
    if trimmed.is_empty() {
        return (body, "", "");
    }
    let text_end = text_start + trimmed.len();
    (
        &body[..text_start],
        &body[text_start..text_end],
        &body[text_end..],
    )
}

fn make_record(
    path: &str,
    id: u32,
    kind: CommentKind,
    line: &SourceLine,
    column: usize,
    delimiter_len: usize,
    end: usize,
) -> CommentRecord {
    let delim = &line.raw[column..column + delimiter_len];
    let (lead, text, trailing) = split_body(&line.raw[column + delimiter_len..end]);
    CommentRecord {
        id,
        kind,
        text: text.to_string(),
        anchor_line: line.index,
        file: path.to_string(),
        column,
        marker: format!("{delim}{lead}"),
        trailing: trailing.to_string(),
    }
}

fn classify_mumps(path: &str, lines: &mut [SourceLine]) -> Vec<CommentRecord> {
    let mut out = Vec::new();
    for line in lines.iter_mut() {
        if line.kind == LineKind::Blank {
            continue;
        }
        let Some(pos) = mumps::comment_start(&line.raw) else {
            continue;
        };
        let kind = if mumps::is_block_prefix(&line.raw[..pos]) {
            line.kind = LineKind::FullComment;
            CommentKind::Block
        } else {
            line.kind = LineKind::CodeWithInline;
            CommentKind::Inline
        };
        out.push(make_record(
            path,
            out.len() as u32,
            kind,
            line,
            pos,
            1,
            line.raw.len(),
        ));
    }
    out
}

fn classify_alc(path: &str, lines: &mut [SourceLine]) -> Vec<CommentRecord> {
    let classified = alc::classify_all(lines.iter().map(|l| l.raw.as_str()));
    let mut out = Vec::new();
    for (line, c) in lines.iter_mut().zip(classified) {
        match c {
            alc::AlcLine::Blank => line.kind = LineKind::Blank,
            alc::AlcLine::Comment { marker_len } => {
                line.kind = LineKind::FullComment;
                let rec = make_record(
                    path,
                    out.len() as u32,
                    CommentKind::Block,
                    line,
                    0,
                    marker_len,
                    line.raw.len(),
                );
                out.push(rec);
            }
            alc::AlcLine::Statement(s) => {
                if s.remark.0 < s.remark.1 {
                    line.kind = LineKind::CodeWithInline;
                    let rec = make_record(
                        path,
                        out.len() as u32,
                        CommentKind::Inline,
                        line,
                        s.remark.0,
                        0,
                        s.remark.1,
                    );
                    out.push(rec);
                } else {
                    line.kind = LineKind::Code;
                }
            }
        }
    }
    out
}

/// Comments ordered by `(anchor_line, kind)`.
pub fn extract_comments(file: &SourceFile) -> Vec<CommentRecord> {
    let mut out = file.comments.clone();
    out.sort_by_key(|r| (r.anchor_line, r.kind));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub files: usize,
    pub loc: usize,
    pub comments: usize,
}

pub fn corpus_stats(files: &[SourceFile]) -> CorpusStats {
    files
        .iter()
        .fold(CorpusStats::default(), |acc, f| CorpusStats {
            files: acc.files + 1,
            loc: acc.loc + f.loc(),
            comments: acc.comments + f.comments.len(),
        })
}

/// Plain-text table with one row per labelled group.
pub fn render_stats_table(rows: &[(String, CorpusStats)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>8}  {:>9}\n",
        "dataset", "files", "loc", "comments"
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>8}  {:>9}\n",
            name, s.files, s.loc, s.comments
        ));
    }
    out
}
