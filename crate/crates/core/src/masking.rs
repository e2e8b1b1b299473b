//! Comment masking: every comment span is replaced by a placeholder token
//! carrying a per-file unique id, and generated text is written back into
//! the same spans.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CommentKind, CommentRecord, LanguageId, SourceFile};
use crate::lang::alc::STATEMENT_END;

pub const ID_LEN: usize = 6;
const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlaceholderId(String);

impl PlaceholderId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn is_valid(s: &str) -> bool {
        s.len() == ID_LEN
            && s.bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
    }
}

impl TryFrom<String> for PlaceholderId {
    type Error = MaskError;

    fn try_from(s: String) -> Result<Self, MaskError> {
        if PlaceholderId::is_valid(&s) {
            Ok(PlaceholderId(s))
        } else {
            Err(MaskError::InvalidId(s))
        }
    }
}

impl std::str::FromStr for PlaceholderId {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, MaskError> {
        PlaceholderId::try_from(s.to_string())
    }
}

impl From<PlaceholderId> for String {
    fn from(id: PlaceholderId) -> String {
        id.0
    }
}

impl fmt::Display for PlaceholderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error("placeholder {0} not found on line {1} of the masked text")]
    PlaceholderNotFound(String, usize),
    #[error("invalid placeholder id `{0}`")]
    InvalidId(String),
}

/// Candidate id stream. Candidates are filtered for validity and collisions.
pub trait IdSource {
    fn candidate(&mut self) -> String;
}

pub struct SeededIds(ChaCha8Rng);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        SeededIds(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl IdSource for SeededIds {
    fn candidate(&mut self) -> String {
        (0..ID_LEN)
            .map(|_| ALPHABET[self.0.random_range(0..ALPHABET.len())] as char)
            .collect()
    }
}

pub fn placeholder_token(kind: CommentKind, id: &PlaceholderId) -> String {
    match kind {
        CommentKind::Block => format!("<BLOCK_COMMENT {id}>"),
        CommentKind::Inline => format!("<INLINE_COMMENT {id}>"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedFile {
    pub file: String,
    pub language: LanguageId,
    pub masked_text: String,
    pub mapping: BTreeMap<PlaceholderId, CommentRecord>,
    pub seed: u64,
}

impl MaskedFile {
    /// Placeholders anchored in lines `start..=end`, in file order.
    pub fn ids_in_lines(&self, start: usize, end: usize) -> Vec<PlaceholderId> {
        let mut ids: Vec<_> = self
            .mapping
            .iter()
            .filter(|(_, r)| (start..=end).contains(&r.anchor_line))
            .map(|(id, r)| (r.anchor_line, r.id, id.clone()))
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, _, id)| id).collect()
    }

    /// Masked lines `start..=end` (1-based) including terminators.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        split_lines(&self.masked_text)
            .into_iter()
            .skip(start.saturating_sub(1))
            .take(end + 1 - start.max(1))
            .map(|(body, eol)| format!("{body}{eol}"))
            .collect()
    }

    pub fn sidecar(&self) -> MaskSidecar {
        MaskSidecar {
            file: self.file.clone(),
            language: self.language,
            seed: self.seed,
            mapping: self
                .mapping
                .iter()
                .map(|(id, r)| {
                    let entry = SidecarEntry {
                        kind: r.kind,
                        anchor_line: r.anchor_line,
                        text: r.text.clone(),
                        column: r.column,
                        marker: r.marker.clone(),
                        trailing: r.trailing.clone(),
                    };
                    (id.clone(), entry)
                })
                .collect(),
        }
    }

    pub fn from_sidecar(masked_text: String, sidecar: MaskSidecar) -> Self {
        let mut ordered: Vec<_> = sidecar.mapping.into_iter().collect();
        ordered.sort_by_key(|(_, e)| (e.anchor_line, e.kind));
        let mapping = ordered
            .into_iter()
            .enumerate()
            .map(|(k, (id, e))| {
                let record = CommentRecord {
                    id: k as u32,
                    kind: e.kind,
                    text: e.text,
                    anchor_line: e.anchor_line,
                    file: sidecar.file.clone(),
                    column: e.column,
                    marker: e.marker,
                    trailing: e.trailing,
                };
                (id, record)
            })
            .collect();
        MaskedFile {
            file: sidecar.file,
            language: sidecar.language,
            masked_text,
            mapping,
            seed: sidecar.seed,
        }
    }
}

/// Per-file JSON mapping persisted next to the masked text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub file: String,
    pub language: LanguageId,
    pub seed: u64,
    pub mapping: BTreeMap<PlaceholderId, SidecarEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub kind: CommentKind,
    pub anchor_line: usize,
    pub text: String,
    pub column: usize,
    pub marker: String,
    pub trailing: String,
}

fn split_lines(text: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        match rest.find('\n') {
            Some(p) => {
                let (body, eol) = if p > 0 && rest.as_bytes()[p - 1] == b'\r' {
                    (&rest[..p - 1], &rest[p - 1..=p])
                } else {
                    (&rest[..p], &rest[p..=p])
                };
                out.push((body, eol));
                rest = &rest[p + 1..];
            }
            None => {
                out.push((rest, ""));
                rest = "";
            }
        }
    }
    out
}

/// Every 6-byte window of `text` drawn from the id alphabet.
fn id_shaped_windows(text: &str) -> HashSet<[u8; ID_LEN]> {
    text.as_bytes()
        .windows(ID_LEN)
        .filter(|w| {
            w.iter()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        })
        .map(|w| w.try_into().expect("window has ID_LEN bytes"))
        .collect()
}

pub fn mask_comments(file: &SourceFile, seed: u64) -> MaskedFile {
    mask_comments_with(file, seed, &mut SeededIds::new(seed))
}

/// Masks with an explicit id source; `seed` is only recorded.
pub fn mask_comments_with(file: &SourceFile, seed: u64, ids: &mut dyn IdSource) -> MaskedFile {
    let forbidden = id_shaped_windows(&file.render());
    let mut used = HashSet::new();
    let mut mapping = BTreeMap::new();
    let mut by_line: BTreeMap<usize, (PlaceholderId, &CommentRecord)> = BTreeMap::new();
    for record in &file.comments {
        let id = loop {
            let c = ids.candidate();
            if !PlaceholderId::is_valid(&c) {
                continue;
            }
            let window: [u8; ID_LEN] = c.as_bytes().try_into().expect("validated length");
            if forbidden.contains(&window) || used.contains(&c) {
                continue;
            }
            used.insert(c.clone());
            break PlaceholderId(c);
        };
        by_line.insert(record.anchor_line, (id.clone(), record));
        mapping.insert(id, record.clone());
    }
    let mut masked_text = String::with_capacity(file.render().len());
    for line in &file.lines {
        match by_line.get(&line.index) {
            Some((id, r)) => {
                masked_text.push_str(&line.raw[..r.column]);
                masked_text.push_str(&placeholder_token(r.kind, id));
                masked_text.push_str(&line.raw[r.span_end()..]);
            }
            None => masked_text.push_str(&line.raw),
        }
        masked_text.push_str(line.eol.as_str());
    }
    MaskedFile {
        file: file.path.clone(),
        language: file.language,
        masked_text,
        mapping,
        seed,
    }
}

/// What to write for placeholders with no generated text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    GroundTruth,
    Marker,
}

pub const MISSING_MARKER: &str = "<MISSING>";

fn truncate_to(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Comment body for a replacement text. ALC bodies never reach the
/// continuation column, and keep their original width when a sequence
/// field follows.
fn fit_body(language: LanguageId, r: &CommentRecord, text: &str, has_suffix: bool) -> String {
    let text = text.replace("\r\n", " ").replace(['\n', '\r'], " ");
    let body = format!("{}{}{}", r.marker, text, r.trailing);
    if language != LanguageId::Alc {
        return body;
    }
    let width = r.span_end() - r.column;
    let max = if has_suffix {
        width
    } else {
        STATEMENT_END.saturating_sub(r.column).max(width)
    };
    let mut body = truncate_to(&body, max).to_string();
    if has_suffix {
        while body.len() < width {
            body.push(' ');
        }
    }
    body
}

pub fn unmask(
    masked: &MaskedFile,
    comments: &BTreeMap<PlaceholderId, String>,
    missing: MissingPolicy,
) -> Result<String, MaskError> {
    if let Some(id) = comments.keys().find(|id| !masked.mapping.contains_key(*id)) {
        return Err(MaskError::UnknownPlaceholder(id.to_string()));
    }
    let by_line: BTreeMap<usize, (&PlaceholderId, &CommentRecord)> = masked
        .mapping
        .iter()
        .map(|(id, r)| (r.anchor_line, (id, r)))
        .collect();
    let mut out = String::with_capacity(masked.masked_text.len());
    for (k, (body, eol)) in split_lines(&masked.masked_text).into_iter().enumerate() {
        let index = k + 1;
        match by_line.get(&index) {
            Some((id, r)) => {
                let token = placeholder_token(r.kind, id);
                let pos = body
                    .find(&token)
                    .ok_or_else(|| MaskError::PlaceholderNotFound(id.to_string(), index))?;
                let suffix = &body[pos + token.len()..];
                out.push_str(&body[..pos]);
                match (comments.get(*id), missing) {
                    (Some(text), _) => {
                        out.push_str(&fit_body(masked.language, r, text, !suffix.is_empty()))
                    }
                    (None, MissingPolicy::GroundTruth) => {
                        out.push_str(&r.marker);
                        out.push_str(&r.text);
                        out.push_str(&r.trailing);
                    }
                    (None, MissingPolicy::Marker) => out.push_str(&fit_body(
                        masked.language,
                        r,
                        MISSING_MARKER,
                        !suffix.is_empty(),
                    )),
                }
                out.push_str(suffix);
            }
            None => out.push_str(body),
        }
        out.push_str(eol);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "lines", rename_all = "snake_case")]
pub enum DiffVerdict {
    Clean,
    Mutated(Vec<usize>),
}

impl DiffVerdict {
    pub fn is_clean(&self) -> bool {
        matches!(self, DiffVerdict::Clean)
    }
}

/// Compares code outside comment spans. A commented line must keep its
/// code prefix, comment delimiter and any bytes after the span.
pub fn diff_guard(original: &SourceFile, reconstructed: &str) -> DiffVerdict {
    let recon = split_lines(reconstructed);
    let by_line: BTreeMap<usize, &CommentRecord> = original
        .comments
        .iter()
        .map(|c| (c.anchor_line, c))
        .collect();
    let mut mutated = Vec::new();
    let n = original.lines.len().max(recon.len());
    for k in 0..n {
        let index = k + 1;
        let ok = match (original.lines.get(k), recon.get(k)) {
            (Some(line), Some((body, eol))) => {
                *eol == line.eol.as_str()
                    && match by_line.get(&index) {
                        None => *body == line.raw,
                        Some(r) => {
                            let prefix = &line.raw[..r.column];
                            let suffix = &line.raw[r.span_end()..];
                            let delimiter = r.marker.trim_end();
                            body.len() >= prefix.len() + suffix.len()
                                && body.starts_with(prefix)
                                && body.ends_with(suffix)
                                && body[prefix.len()..].starts_with(delimiter)
                                && !(original.language == LanguageId::Alc
                                    && suffix.is_empty()
                                    && line.raw.len() <= STATEMENT_END
                                    && body.len() > STATEMENT_END)
                        }
                    }
            }
            _ => false,
        };
        if !ok {
            mutated.push(index);
        }
    }
    if mutated.is_empty() {
        DiffVerdict::Clean
    } else {
        DiffVerdict::Mutated(mutated)
    }
}

/// Ground-truth text for every placeholder.
pub fn ground_truth(masked: &MaskedFile) -> BTreeMap<PlaceholderId, String> {
    masked
        .mapping
        .iter()
        .map(|(id, r)| (id.clone(), r.text.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_file;

    fn mumps(text: &str) -> SourceFile {
        ingest_file("t.m", LanguageId::Mumps, text.as_bytes()).unwrap()
    }

    fn alc(text: &str) -> SourceFile {
        ingest_file("t.asm", LanguageId::Alc, text.as_bytes()).unwrap()
    }

    fn only_id(m: &MaskedFile) -> PlaceholderId {
        m.mapping.keys().next().unwrap().clone()
    }

    #[test]
    fn inline_comment_is_masked_at_its_column() {
        let f = mumps(" S X=1 ;init X\n");
        let m = mask_comments(&f, 7);
        let id = only_id(&m);
        assert_eq!(m.masked_text, format!(" S X=1 <INLINE_COMMENT {id}>\n"));
        assert_eq!(m.mapping[&id].text, "init X");
    }

    #[test]
    fn block_comment_keeps_leading_columns() {
        let f = mumps("EN ; entry\n ;; header\n . ; nested\n");
        let m = mask_comments(&f, 1);
        let lines: Vec<_> = m.masked_text.lines().collect();
        assert!(lines[0].starts_with("EN <INLINE_COMMENT "));
        assert!(lines[1].starts_with(" <BLOCK_COMMENT "));
        assert!(lines[2].starts_with(" . <BLOCK_COMMENT "));
        assert_eq!(m.mapping.len(), 3);
    }

    #[test]
    fn no_comments_means_identity() {
        let f = mumps(" S X=1\n Q\n");
        let m = mask_comments(&f, 3);
        assert_eq!(m.masked_text, f.render());
        assert!(m.mapping.is_empty());
    }

    #[test]
    fn masking_is_deterministic() {
        let f = mumps(" S X=1 ;a\n ;b\n");
        assert_eq!(mask_comments(&f, 11), mask_comments(&f, 11));
        assert_ne!(mask_comments(&f, 11).mapping, mask_comments(&f, 12).mapping);
    }

    #[test]
    fn roundtrip_with_ground_truth() {
        let text = "EN ;entry\r\n S X=1 ; set \"x\"  \r\n . ;\n W \"a;b\" ;tail";
        let f = mumps(text);
        let m = mask_comments(&f, 5);
        assert_eq!(
            unmask(&m, &ground_truth(&m), MissingPolicy::GroundTruth).unwrap(),
            text
        );
        assert_eq!(
            unmask(&m, &BTreeMap::new(), MissingPolicy::GroundTruth).unwrap(),
            text
        );
    }

    #[test]
    fn alc_roundtrip_keeps_sequence_field() {
        let mut stmt = format!("{:<40}{}", "         LA    R1,1", "LOAD ONE");
        stmt = format!("{stmt:<72}00010000");
        let text = format!("* HEADER\n{stmt}\n         BR    R14\n");
        let f = alc(&text);
        let m = mask_comments(&f, 9);
        assert!(m.masked_text.contains("00010000"));
        assert_eq!(
            unmask(&m, &ground_truth(&m), MissingPolicy::GroundTruth).unwrap(),
            text
        );

        let generated: BTreeMap<_, _> = m
            .mapping
            .keys()
            .map(|id| (id.clone(), "x".repeat(90)))
            .collect();
        let out = unmask(&m, &generated, MissingPolicy::GroundTruth).unwrap();
        assert!(diff_guard(&f, &out).is_clean(), "{out}");
        let line2 = out.lines().nth(1).unwrap();
        assert_eq!(line2.len(), stmt.len());
        assert!(line2.ends_with("00010000"));
    }

    #[test]
    fn generated_text_replaces_comment() {
        let f = mumps(" S X=1 ;init X\n");
        let m = mask_comments(&f, 7);
        let generated = BTreeMap::from([(only_id(&m), "sets X\nto one".to_string())]);
        let out = unmask(&m, &generated, MissingPolicy::GroundTruth).unwrap();
        assert_eq!(out, " S X=1 ;sets X to one\n");
        assert!(diff_guard(&f, &out).is_clean());
    }

    #[test]
    fn missing_marker_policy() {
        let f = mumps(" S X=1 ;init X\n");
        let m = mask_comments(&f, 7);
        let out = unmask(&m, &BTreeMap::new(), MissingPolicy::Marker).unwrap();
        assert_eq!(out, " S X=1 ;<MISSING>\n");
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let f = mumps(" S X=1 ;init X\n");
        let m = mask_comments(&f, 7);
        let bogus = BTreeMap::from([("zzzzzz".parse().unwrap(), "x".to_string())]);
        let err = unmask(&m, &bogus, MissingPolicy::GroundTruth).unwrap_err();
        assert_eq!(err.to_string(), "unknown placeholder zzzzzz");
    }

    #[test]
    fn diff_guard_flags_code_mutation() {
        let f = mumps(" S X=1 ;init X\n S Y=2\n W Y\n");
        let changed = " S X=2 ;init X\n S Y=2\n W Z\n";
        assert_eq!(diff_guard(&f, changed), DiffVerdict::Mutated(vec![1, 3]));
        assert!(diff_guard(&f, " S X=1 ;other words\n S Y=2\n W Y\n").is_clean());
        assert_eq!(
            diff_guard(&f, " S X=1 ;init X\n S Y=2\n"),
            DiffVerdict::Mutated(vec![3])
        );
        assert_eq!(
            diff_guard(&f, " S X=1 init X\n S Y=2\n W Y\n"),
            DiffVerdict::Mutated(vec![1])
        );
    }

    struct Scripted(Vec<&'static str>);

    impl IdSource for Scripted {
        fn candidate(&mut self) -> String {
            self.0.remove(0).to_string()
        }
    }

    #[test]
    fn colliding_candidates_are_regenerated() {
        let f = mumps(" S abcdef=1 ;one\n ;two\n");
        let mut ids = Scripted(vec!["abcdef", "BADID!", "q1q1q1", "q1q1q1", "r2r2r2"]);
        let m = mask_comments_with(&f, 0, &mut ids);
        let keys: Vec<_> = m.mapping.keys().map(|k| k.as_str().to_string()).collect();
        assert_eq!(keys, ["q1q1q1", "r2r2r2"]);
    }

    #[test]
    fn ids_are_unique_for_many_comments() {
        let text: String = (0..100_000).map(|i| format!(" ;c{i}\n")).collect();
        let f = mumps(&text);
        let m = mask_comments(&f, 42);
        assert_eq!(m.mapping.len(), 100_000);
        assert!(m
            .mapping
            .keys()
            .all(|id| PlaceholderId::is_valid(id.as_str())));
    }

    #[test]
    fn sidecar_roundtrip() {
        let f = mumps("EN ;entry\n S X=1 ;set\n");
        let m = mask_comments(&f, 2);
        let json = serde_json::to_string(&m.sidecar()).unwrap();
        let back =
            MaskedFile::from_sidecar(m.masked_text.clone(), serde_json::from_str(&json).unwrap());
        assert_eq!(back, m);
        assert_eq!(m.ids_in_lines(2, 2).len(), 1);
        assert_eq!(
            m.span_text(2, 2),
            m.masked_text.lines().nth(1).unwrap().to_string() + "\n"
        );
    }
}
