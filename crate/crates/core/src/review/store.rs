//! Append-only ratings log with last-write-wins replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Assignment, AssignmentStatus, Category, ReviewError, ReviewItem};
use crate::corpus::LanguageId;

pub type Scores = BTreeMap<Category, u8>;

const LOG_FILE: &str = "reviews.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub reviewer_id: String,
    pub item_id: String,
    pub scores: Scores,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    log_lines: usize,
    effective: Vec<ReviewRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub reviewer_id: String,
    pub assigned: usize,
    pub completed: usize,
}

type Key = (String, String);

/// Every submission is appended and synced before it becomes visible; the
/// effective rating of a (reviewer, item) pair is the latest one.
#[derive(Debug)]
pub struct ReviewStore {
    dir: Option<PathBuf>,
    log: Option<File>,
    assignments: BTreeSet<Key>,
    effective: BTreeMap<Key, ReviewRecord>,
    history: BTreeMap<Key, usize>,
    log_lines: usize,
}

fn key(reviewer: &str, item: &str) -> Key {
    (reviewer.to_string(), item.to_string())
}

impl ReviewStore {
    pub fn in_memory(assignments: &[Assignment]) -> Self {
        ReviewStore {
            dir: None,
            log: None,
            assignments: assignments
                .iter()
                .map(|a| key(&a.reviewer_id, &a.item_id))
                .collect(),
            effective: BTreeMap::new(),
            history: BTreeMap::new(),
            log_lines: 0,
        }
    }

    /// Opens or creates the log in `dir`, replaying it over the latest
    /// snapshot. A torn final line from an interrupted write is discarded.
    pub fn open(dir: impl AsRef<Path>, assignments: &[Assignment]) -> Result<Self, ReviewError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut store = ReviewStore::in_memory(assignments);
        let log_path = dir.join(LOG_FILE);
        let snapshot: Option<Snapshot> = std::fs::read(dir.join(SNAPSHOT_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());

        let mut lines = Vec::new();
        if log_path.exists() {
            let bytes = std::fs::read(&log_path)?;
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            if complete < bytes.len() {
                OpenOptions::new()
                    .write(true)
                    .open(&log_path)?
                    .set_len(complete as u64)?;
            }
            for line in BufReader::new(&bytes[..complete]).lines() {
                lines.push(line?);
            }
        }
        let mut start = 0;
        if let Some(s) = snapshot.filter(|s| s.log_lines <= lines.len()) {
            for r in s.effective {
                store.effective.insert(key(&r.reviewer_id, &r.item_id), r);
            }
            start = s.log_lines;
            // The snapshot holds no history; count it from the covered prefix.
            for (i, line) in lines[..start].iter().enumerate() {
                let r = parse_line(line, i + 1)?;
                *store
                    .history
                    .entry(key(&r.reviewer_id, &r.item_id))
                    .or_insert(0) += 1;
            }
        }
        for (i, line) in lines.iter().enumerate().skip(start) {
            let r = parse_line(line, i + 1)?;
            store.apply(r);
        }
        store.log_lines = lines.len();
        store.log = Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)?,
        );
        store.dir = Some(dir);
        Ok(store)
    }

    fn apply(&mut self, record: ReviewRecord) {
        let k = key(&record.reviewer_id, &record.item_id);
        *self.history.entry(k.clone()).or_insert(0) += 1;
        self.effective.insert(k, record);
    }

    pub fn validate(&self, record: &ReviewRecord) -> Result<(), ReviewError> {
        if !self
            .assignments
            .contains(&key(&record.reviewer_id, &record.item_id))
        {
            return Err(ReviewError::UnknownAssignment {
                reviewer: record.reviewer_id.clone(),
                item: record.item_id.clone(),
            });
        }
        for category in Category::ALL {
            match record.scores.get(&category) {
                None => return Err(ReviewError::MissingCategory(category)),
                Some(&rating) if !(1..=4).contains(&rating) => {
                    return Err(ReviewError::RatingRange { category, rating })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn submit(&mut self, record: ReviewRecord) -> Result<(), ReviewError> {
        self.validate(&record)?;
        if let Some(log) = &mut self.log {
            let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
            line.push(b'\n');
            log.write_all(&line)?;
            log.sync_data()?;
        }
        self.apply(record);
        self.log_lines += 1;
        if self.log_lines.is_multiple_of(SNAPSHOT_EVERY) {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the effective state atomically so reopening skips replay of
    /// the log prefix it covers.
    pub fn snapshot(&self) -> Result<(), ReviewError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let snap = Snapshot {
            log_lines: self.log_lines,
            effective: self.effective.values().cloned().collect(),
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(
            &tmp,
            serde_json::to_vec(&snap).map_err(std::io::Error::other)?,
        )?;
        std::fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    pub fn effective(&self) -> Vec<ReviewRecord> {
        self.effective.values().cloned().collect()
    }

    pub fn get(&self, reviewer: &str, item: &str) -> Option<&ReviewRecord> {
        self.effective.get(&key(reviewer, item))
    }

    /// Number of submissions for the pair, superseded ones included.
    pub fn history_len(&self, reviewer: &str, item: &str) -> usize {
        self.history.get(&key(reviewer, item)).copied().unwrap_or(0)
    }

    pub fn is_assigned(&self, reviewer: &str, item: &str) -> bool {
        self.assignments.contains(&key(reviewer, item))
    }

    pub fn status(&self, reviewer: &str, item: &str) -> AssignmentStatus {
        if self.effective.contains_key(&key(reviewer, item)) {
            AssignmentStatus::Done
        } else {
            AssignmentStatus::Pending
        }
    }

    pub fn progress(&self) -> Vec<Progress> {
        let mut out: BTreeMap<&str, Progress> = BTreeMap::new();
        for (reviewer, item) in &self.assignments {
            let p = out.entry(reviewer).or_insert_with(|| Progress {
                reviewer_id: reviewer.clone(),
                assigned: 0,
                completed: 0,
            });
            p.assigned += 1;
            if self.effective.contains_key(&key(reviewer, item)) {
                p.completed += 1;
            }
        }
        out.into_values().collect()
    }
}

fn parse_line(line: &str, number: usize) -> Result<ReviewRecord, ReviewError> {
    serde_json::from_str(line).map_err(|e| ReviewError::Corrupt {
        line: number,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

/// One effective rating joined with the hidden source of its item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub reviewer_id: String,
    pub item_id: String,
    pub comment_id: String,
    pub source: String,
    pub language: LanguageId,
    pub hallucination: u8,
    pub readability: u8,
    pub completeness: u8,
    pub usefulness: u8,
    pub submitted_at: DateTime<Utc>,
}

impl ExportRow {
    pub fn score(&self, category: Category) -> u8 {
        match category {
            Category::Hallucination => self.hallucination,
            Category::Readability => self.readability,
            Category::Completeness => self.completeness,
            Category::Usefulness => self.usefulness,
        }
    }
}

pub fn export_reviews(
    records: &[ReviewRecord],
    items: &[ReviewItem],
    format: ExportFormat,
) -> Result<String, ReviewError> {
    let by_id: BTreeMap<&str, &ReviewItem> =
        items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let item = by_id
            .get(r.item_id.as_str())
            .ok_or_else(|| ReviewError::UnknownItem(r.item_id.clone()))?;
        let s = |c: Category| {
            r.scores
                .get(&c)
                .copied()
                .ok_or(ReviewError::MissingCategory(c))
        };
        rows.push(ExportRow {
            reviewer_id: r.reviewer_id.clone(),
            item_id: r.item_id.clone(),
            comment_id: item.comment_id.clone(),
            source: item.source.clone(),
            language: item.language,
            hallucination: s(Category::Hallucination)?,
            readability: s(Category::Readability)?,
            completeness: s(Category::Completeness)?,
            usefulness: s(Category::Usefulness)?,
            submitted_at: r.submitted_at,
        });
    }
    rows.sort_by(|a, b| (&a.reviewer_id, &a.item_id).cmp(&(&b.reviewer_id, &b.item_id)));
    match format {
        ExportFormat::Jsonl => {
            let mut out = String::new();
            for row in &rows {
                out.push_str(
                    &serde_json::to_string(row).map_err(|e| ReviewError::Import(e.to_string()))?,
                );
                out.push('\n');
            }
            Ok(out)
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)
                    .map_err(|e| ReviewError::Import(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| ReviewError::Import(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| ReviewError::Import(e.to_string()))
        }
    }
}

pub fn import_reviews(text: &str, format: ExportFormat) -> Result<Vec<ExportRow>, ReviewError> {
    match format {
        ExportFormat::Jsonl => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| ReviewError::Import(format!("line {}: {e}", i + 1)))
            })
            .collect(),
        ExportFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map_err(|e| ReviewError::Import(e.to_string())))
            .collect(),
    }
}
