//! Blind human review: items, reviewer assignments and the ratings store.

mod rubric;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CommentRecord, LanguageId, SourceFile};

pub use rubric::{rubric, Category, RubricCategory, RubricLevel};
pub use store::{
    export_reviews, import_reviews, ExportFormat, ExportRow, Progress, ReviewRecord, ReviewStore,
    Scores,
};

pub const GROUND_TRUTH: &str = "ground_truth";
pub const DEFAULT_CONTEXT_RADIUS: usize = 8;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("overlap fraction must be within [0, 1], got {0}")]
    Overlap(f64),
    #[error("at least one reviewer is required")]
    NoReviewers,
    #[error("no assignment of item {item} to reviewer {reviewer}")]
    UnknownAssignment { reviewer: String, item: String },
    #[error("missing rating for {0}")]
    MissingCategory(Category),
    #[error("rating {rating} for {category} is outside 1-4")]
    RatingRange { category: Category, rating: u8 },
    #[error("unknown reviewer token")]
    UnknownReviewer,
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("review log: {0}")]
    Io(#[from] std::io::Error),
    #[error("review log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("import: {0}")]
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLine {
    pub line: usize,
    pub text: String,
    pub highlight: bool,
}

/// A comment to be graded. `source` is never sent to reviewers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    /// Key of the ground-truth comment position, shared by all sources.
    pub comment_id: String,
    pub file: String,
    pub language: LanguageId,
    pub anchor_line: usize,
    pub comment_text: String,
    pub code_context: Vec<ContextLine>,
    /// `ground_truth` or a model name.
    pub source: String,
}

/// What a reviewer sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindItem {
    pub item_id: String,
    pub language: LanguageId,
    pub anchor_line: usize,
    pub comment_text: String,
    pub code_context: Vec<ContextLine>,
}

impl ReviewItem {
    pub fn blind(&self) -> BlindItem {
        BlindItem {
            item_id: self.item_id.clone(),
            language: self.language,
            anchor_line: self.anchor_line,
            comment_text: self.comment_text.clone(),
            code_context: self.code_context.clone(),
        }
    }
}

/// Stable key of a comment position: `file:line`.
pub fn comment_key(record: &CommentRecord) -> String {
    format!("{}:{}", record.file, record.anchor_line)
}

/// Opaque id that does not reveal the source.
pub fn item_id(comment_id: &str, source: &str, salt: u64) -> String {
    let mut h = Sha256::new();
    h.update(salt.to_le_bytes());
    h.update(comment_id.as_bytes());
    h.update([0]);
    h.update(source.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Code lines around the anchor with every comment elided.
pub fn code_context(file: &SourceFile, anchor: usize, radius: usize) -> Vec<ContextLine> {
    let lo = anchor.saturating_sub(radius).max(1);
    let hi = (anchor + radius).min(file.lines.len());
    (lo..=hi)
        .map(|line| ContextLine {
            line,
            text: file.code_of(line).trim_end().to_string(),
            highlight: line == anchor,
        })
        .collect()
}

pub fn make_item(
    file: &SourceFile,
    record: &CommentRecord,
    comment_text: &str,
    source: &str,
    radius: usize,
    salt: u64,
) -> ReviewItem {
    let comment_id = comment_key(record);
    ReviewItem {
        item_id: item_id(&comment_id, source, salt),
        file: file.path.clone(),
        language: file.language,
        anchor_line: record.anchor_line,
        comment_text: comment_text.to_string(),
        code_context: code_context(file, record.anchor_line, radius),
        source: source.to_string(),
        comment_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    #[default]
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub reviewer_id: String,
    pub item_id: String,
    #[serde(default)]
    pub status: AssignmentStatus,
}

/// Number of items every reviewer sees.
pub fn overlap_pool_size(fraction: f64, items: usize) -> usize {
    // Guard against products such as 0.77 * 100 = 77.00000000000001.
    ((fraction * items as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Assigns an overlap pool to every reviewer and deals the rest out
/// round-robin per source, continuing the rotation across sources so each
/// reviewer's per-source and total counts stay within one of each other.
pub fn make_assignments(
    items: &[ReviewItem],
    reviewers: &[String],
    overlap_fraction: f64,
    seed: u64,
) -> Result<Vec<Assignment>, ReviewError> {
    if !(0.0..=1.0).contains(&overlap_fraction) {
        return Err(ReviewError::Overlap(overlap_fraction));
    }
    if reviewers.is_empty() {
        return Err(ReviewError::NoReviewers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_source: BTreeMap<&str, Vec<&ReviewItem>> = BTreeMap::new();
    for item in items {
        by_source.entry(&item.source).or_default().push(item);
    }
    for list in by_source.values_mut() {
        list.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        list.shuffle(&mut rng);
    }
    // Pool drawn across sources in turn, so it is balanced by source too.
    let pool_size = overlap_pool_size(overlap_fraction, items.len());
    let mut pool = Vec::with_capacity(pool_size);
    let mut cursors: BTreeMap<&str, usize> = by_source.keys().map(|&s| (s, 0)).collect();
    while pool.len() < pool_size {
        for (source, list) in &by_source {
            let c = cursors.get_mut(source).expect("cursor per source");
            if *c < list.len() && pool.len() < pool_size {
                pool.push(list[*c]);
                *c += 1;
            }
        }
    }
    let mut out = Vec::new();
    for item in &pool {
        for r in reviewers {
            out.push(Assignment {
                reviewer_id: r.clone(),
                item_id: item.item_id.clone(),
                status: AssignmentStatus::Pending,
            });
        }
    }
    let mut turn = 0;
    for (source, list) in &by_source {
        for item in &list[cursors[source]..] {
            out.push(Assignment {
                reviewer_id: reviewers[turn % reviewers.len()].clone(),
                item_id: item.item_id.clone(),
                status: AssignmentStatus::Pending,
            });
            turn += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reviewer {
    pub id: String,
    pub token: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub reviewers: Vec<Reviewer>,
}

impl Roster {
    pub fn by_token(&self, token: &str) -> Option<&Reviewer> {
        self.reviewers.iter().find(|r| r.token == token)
    }

    pub fn ids(&self) -> Vec<String> {
        self.reviewers.iter().map(|r| r.id.clone()).collect()
    }
}

/// Everything a review server needs, persisted as three JSON files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewBundle {
    pub items: Vec<ReviewItem>,
    pub assignments: Vec<Assignment>,
    pub roster: Roster,
}

const ITEMS_FILE: &str = "items.json";
const ASSIGNMENTS_FILE: &str = "assignments.json";
/// Holds the reviewer tokens; keep it private to the study coordinator.
pub const ROSTER_FILE: &str = "invitations.json";

impl ReviewBundle {
    pub fn save(&self, dir: &Path) -> Result<(), ReviewError> {
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, value: &dyn erased::Json| -> Result<(), ReviewError> {
            std::fs::write(dir.join(name), value.to_pretty()?)?;
            Ok(())
        };
        write(ITEMS_FILE, &self.items)?;
        write(ASSIGNMENTS_FILE, &self.assignments)?;
        write(ROSTER_FILE, &self.roster)
    }

    pub fn load(dir: &Path) -> Result<Self, ReviewError> {
        fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> Result<T, ReviewError> {
            let bytes = std::fs::read(&path)?;
            serde_json::from_slice(&bytes)
                .map_err(|e| ReviewError::Import(format!("{}: {e}", path.display())))
        }
        Ok(ReviewBundle {
            items: read(dir.join(ITEMS_FILE))?,
            assignments: read(dir.join(ASSIGNMENTS_FILE))?,
            roster: read(dir.join(ROSTER_FILE))?,
        })
    }
}

mod erased {
    use super::ReviewError;

    pub trait Json {
        fn to_pretty(&self) -> Result<String, ReviewError>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_pretty(&self) -> Result<String, ReviewError> {
            serde_json::to_string_pretty(self).map_err(|e| ReviewError::Import(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_file;
    use std::collections::BTreeSet;

    fn items(n: usize, sources: &[&str]) -> Vec<ReviewItem> {
        (0..n)
            .map(|i| {
                let source = sources[i % sources.len()];
                let comment_id = format!("f.m:{i}");
                ReviewItem {
                    item_id: item_id(&comment_id, source, 0),
                    comment_id,
                    file: "f.m".into(),
                    language: LanguageId::Mumps,
                    anchor_line: i + 1,
                    comment_text: format!("c{i}"),
                    code_context: Vec::new(),
                    source: source.to_string(),
                }
            })
            .collect()
    }

    fn reviewers(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn assignment_counts() {
        let its = items(10, &["a"]);
        assert_eq!(
            make_assignments(&its, &reviewers(2), 1.0, 1).unwrap().len(),
            20
        );
        let none = make_assignments(&its, &reviewers(2), 0.0, 1).unwrap();
        assert_eq!(none.len(), 10);
        assert_eq!(none.iter().filter(|a| a.reviewer_id == "r0").count(), 5);
        let its = items(100, &["gt", "m1", "m2", "m3", "m4"]);
        assert_eq!(
            make_assignments(&its, &reviewers(4), 0.77, 1)
                .unwrap()
                .len(),
            331
        );
        assert!(make_assignments(&its, &reviewers(4), 1.5, 1).is_err());
        assert!(make_assignments(&its, &[], 0.5, 1).is_err());
    }

    #[test]
    fn assignments_are_unique_balanced_and_seeded() {
        let its = items(53, &["gt", "m1", "m2", "m3", "m4"]);
        let a = make_assignments(&its, &reviewers(3), 0.3, 7).unwrap();
        assert_eq!(a, make_assignments(&its, &reviewers(3), 0.3, 7).unwrap());
        let pairs: BTreeSet<_> = a.iter().map(|x| (&x.reviewer_id, &x.item_id)).collect();
        assert_eq!(pairs.len(), a.len());
        let source: BTreeMap<_, _> = its
            .iter()
            .map(|i| (&i.item_id, i.source.as_str()))
            .collect();
        let shared = overlap_pool_size(0.3, 53);
        for s in ["gt", "m1", "m2", "m3", "m4"] {
            let counts: Vec<usize> = reviewers(3)
                .iter()
                .map(|r| {
                    a.iter()
                        .filter(|x| &x.reviewer_id == r && source[&x.item_id] == s)
                        .count()
                })
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{s}: {counts:?}");
        }
        let per_item = |id: &String| a.iter().filter(|x| &x.item_id == id).count();
        assert_eq!(
            its.iter().filter(|i| per_item(&i.item_id) == 3).count(),
            shared
        );
    }

    #[test]
    fn pool_size_rounds_up_exact_products() {
        assert_eq!(overlap_pool_size(0.77, 100), 77);
        assert_eq!(overlap_pool_size(0.771, 100), 78);
        assert_eq!(overlap_pool_size(0.0, 100), 0);
        assert_eq!(overlap_pool_size(1.0, 7), 7);
    }

    #[test]
    fn context_elides_comments_and_highlights_anchor() {
        let f = ingest_file("t.m", LanguageId::Mumps, b"EN ;entry\n S X=1 ;secret\n Q\n").unwrap();
        let item = make_item(&f, &f.comments[1], "sets X", "model_a", 8, 0);
        let texts: Vec<_> = item.code_context.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["EN", " S X=1", " Q"]);
        assert!(item.code_context[1].highlight);
        let json = serde_json::to_string(&item.blind()).unwrap();
        assert!(!json.contains("model_a") && !json.contains("secret"));
        assert_ne!(
            item.item_id,
            make_item(&f, &f.comments[1], "x", GROUND_TRUTH, 8, 0).item_id
        );
    }
}
