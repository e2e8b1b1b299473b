//! Subroutine-aligned chunking under a context-window budget.
//!
//! A file is first cut into one segment per subroutine. Chunks start as
//! single segments; the smallest chunk is then repeatedly merged with the
//! neighbour giving the smaller merged size, as long as the result fits
//! the budget (half the model's context window).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguageId, SourceFile};
use crate::lang::{alc, mumps};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error("context window must be at least 2 tokens, got {0}")]
    WindowTooSmall(usize),
}

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTokenizer;

impl Tokenizer for HeuristicTokenizer {
    fn id(&self) -> &str {
        "heuristic"
    }

    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

#[derive(Clone)]
pub struct TokenizerRegistry {
    tokenizers: BTreeMap<String, Arc<dyn Tokenizer>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut r = TokenizerRegistry {
            tokenizers: BTreeMap::new(),
        };
        r.register(Arc::new(HeuristicTokenizer));
        r
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, tokenizer: Arc<dyn Tokenizer>) {
        self.tokenizers
            .insert(tokenizer.id().to_string(), tokenizer);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Tokenizer>, ChunkError> {
        self.tokenizers
            .get(id)
            .cloned()
            .ok_or_else(|| ChunkError::UnknownTokenizer(id.to_string()))
    }
}

/// Counts tokens with one of the built-in tokenizers.
pub fn count_tokens(text: &str, tokenizer: &str) -> Result<usize, ChunkError> {
    Ok(TokenizerRegistry::default().get(tokenizer)?.count(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub context_window: usize,
    pub budget: usize,
}

impl TokenBudget {
    pub fn from_context_window(context_window: usize) -> Result<Self, ChunkError> {
        if context_window < 2 {
            return Err(ChunkError::WindowTooSmall(context_window));
        }
        Ok(TokenBudget {
            context_window,
            budget: context_window / 2,
        })
    }

    /// A budget given directly, for tests and size-only planning.
    pub fn exact(budget: usize) -> Self {
        TokenBudget {
            context_window: budget.saturating_mul(2),
            budget: budget.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub file: String,
    /// Inclusive 1-based line span.
    pub start: usize,
    pub end: usize,
    pub token_count: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub segments: Vec<Segment>,
    pub token_count: usize,
    #[serde(default)]
    pub oversize_split: bool,
}

impl Chunk {
    pub fn start(&self) -> usize {
        self.segments.first().map_or(0, |s| s.start)
    }

    pub fn end(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }
}

/// Line numbers (1-based) where a new subroutine begins.
fn entry_lines(file: &SourceFile) -> Vec<usize> {
    match file.language {
        LanguageId::Mumps => file
            .lines
            .iter()
            .filter(|l| mumps::label(&l.raw).is_some())
            .map(|l| l.index)
            .collect(),
        LanguageId::Alc => {
            let raws: Vec<&str> = file.lines.iter().map(|l| l.raw.as_str()).collect();
            let classified = alc::classify_all(raws.iter().copied());
            let mut out = Vec::new();
            let mut after_exit = false;
            for st in alc::statements(&raws, &classified) {
                let opcode = st.opcode.as_deref().unwrap_or("");
                if alc::is_section(opcode) || (st.label.is_some() && after_exit) {
                    out.push(st.first_line + 1);
                }
                after_exit = alc::is_unconditional_exit(opcode, &st.operands);
            }
            out
        }
    }
}

fn entry_label(file: &SourceFile, line: usize) -> Option<String> {
    let raw = &file.line(line)?.raw;
    match file.language {
        LanguageId::Mumps => mumps::label(raw).map(String::from),
        LanguageId::Alc => match alc::classify(raw, None) {
            alc::AlcLine::Statement(s) => s.label.or(s.opcode),
            _ => None,
        },
    }
}

/// Inclusive line spans of the subroutines, with a leading prologue span
/// when the first line is not an entry. Spans cover the file in order.
pub fn subroutine_spans(file: &SourceFile) -> Vec<(usize, usize)> {
    let n = file.lines.len();
    if n == 0 {
        return Vec::new();
    }
    let mut starts = entry_lines(file);
    starts.dedup();
    if starts.first() != Some(&1) {
        starts.insert(0, 1);
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &start)| (start, starts.get(k + 1).map_or(n, |next| next - 1)))
        .collect()
}

/// Text with line offsets, so spans slice without copying.
#[derive(Debug, Clone)]
pub struct LineIndex {
    text: String,
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(text: String) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(p, _)| p + 1));
        if starts.last() != Some(&text.len()) {
            starts.push(text.len());
        }
        LineIndex { text, starts }
    }

    pub fn line_count(&self) -> usize {
        self.starts.len() - 1
    }

    /// Lines `start..=end` (1-based) including terminators.
    pub fn span(&self, start: usize, end: usize) -> &str {
        &self.text[self.starts[start - 1]..self.starts[end]]
    }
}

/// One segment per subroutine span.
pub fn segment_subroutines(file: &SourceFile, tokenizer: &dyn Tokenizer) -> Vec<Segment> {
    segments_over(file, &LineIndex::new(file.render()), tokenizer)
}

fn segments_over(file: &SourceFile, text: &LineIndex, tokenizer: &dyn Tokenizer) -> Vec<Segment> {
    let spans = subroutine_spans(file);
    let mut out = Vec::with_capacity(spans.len());
    for (k, &(start, end)) in spans.iter().enumerate() {
        let label = entry_label(file, start).unwrap_or_else(|| {
            if start == 1 {
                "prologue".to_string()
            } else {
                format!("segment{k}")
            }
        });
        out.push(Segment {
            file: file.path.clone(),
            start,
            end,
            token_count: tokenizer.count(text.span(start, end)),
            label,
        });
    }
    out
}

/// Core merge loop over unit sizes. `fixed` units never merge. `merged`
/// returns the size of the run covering units `lo..=hi`. Returns inclusive
/// unit ranges with their sizes.
fn merge_runs(
    sizes: &[usize],
    fixed: &[bool],
    budget: usize,
    merged: impl Fn(usize, usize) -> usize,
) -> Vec<(usize, usize, usize)> {
    let mut runs: Vec<(usize, usize, usize)> =
        sizes.iter().enumerate().map(|(i, &s)| (i, i, s)).collect();
    let is_fixed = |r: &(usize, usize, usize)| r.0 == r.1 && fixed[r.0];
    loop {
        let mut order: Vec<usize> = (0..runs.len()).filter(|&i| !is_fixed(&runs[i])).collect();
        order.sort_by_key(|&i| (runs[i].2, i));
        let mut action = None;
        for &i in &order {
            let left = (i > 0 && !is_fixed(&runs[i - 1]))
                .then(|| (i - 1, merged(runs[i - 1].0, runs[i].1)));
            let right = (i + 1 < runs.len() && !is_fixed(&runs[i + 1]))
                .then(|| (i + 1, merged(runs[i].0, runs[i + 1].1)));
            let best = match (left, right) {
                (Some(l), Some(r)) => Some(if r.1 < l.1 { r } else { l }),
                (l, r) => l.or(r),
            };
            if let Some((j, size)) = best.filter(|b| b.1 <= budget) {
                action = Some((i.min(j), size));
                break;
            }
        }
        let Some((left, size)) = action else { break };
        let right = runs.remove(left + 1);
        runs[left] = (runs[left].0, right.1, size);
    }
    runs
}

/// Greedy merge over segment token counts, treating counts as additive.
/// A segment that alone exceeds the budget is left as its own flagged chunk;
/// use [`plan_chunks`] to split such segments at line boundaries.
pub fn greedy_merge(segments: &[Segment], budget: TokenBudget) -> Vec<Chunk> {
    let sizes: Vec<usize> = segments.iter().map(|s| s.token_count).collect();
    let fixed: Vec<bool> = sizes.iter().map(|&s| s > budget.budget).collect();
    let prefix: Vec<usize> = std::iter::once(0)
        .chain(sizes.iter().scan(0, |acc, s| {
            *acc += s;
            Some(*acc)
        }))
        .collect();
    merge_runs(&sizes, &fixed, budget.budget, |lo, hi| {
        prefix[hi + 1] - prefix[lo]
    })
    .into_iter()
    .map(|(lo, hi, size)| Chunk {
        segments: segments[lo..=hi].to_vec(),
        token_count: size,
        oversize_split: lo == hi && fixed[lo],
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub file: String,
    pub tokenizer: String,
    pub budget: TokenBudget,
    pub chunks: Vec<Chunk>,
}

fn split_oversize(
    text: &LineIndex,
    seg: &Segment,
    tokenizer: &dyn Tokenizer,
    budget: usize,
) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = seg.start;
    while start <= seg.end {
        let mut end = start;
        while end < seg.end && tokenizer.count(text.span(start, end + 1)) <= budget {
            end += 1;
        }
        out.push(Segment {
            file: seg.file.clone(),
            start,
            end,
            token_count: tokenizer.count(text.span(start, end)),
            label: format!("{}#{}", seg.label, out.len() + 1),
        });
        start = end + 1;
    }
    out
}

/// Plans the chunks of one file. Chunk token counts are recounted on the
/// concatenated text, so they are exact for any tokenizer.
pub fn plan_chunks(file: &SourceFile, tokenizer: &dyn Tokenizer, budget: TokenBudget) -> ChunkPlan {
    plan_chunks_over(file, &LineIndex::new(file.render()), tokenizer, budget)
}

/// Plans on `file`'s subroutine structure while counting tokens on `text`,
/// which must have the same lines, e.g. the masked form of the file.
pub fn plan_chunks_over(
    file: &SourceFile,
    text: &LineIndex,
    tokenizer: &dyn Tokenizer,
    budget: TokenBudget,
) -> ChunkPlan {
    assert_eq!(
        text.line_count(),
        file.lines.len(),
        "text must have the file's lines"
    );
    let mut units = Vec::new();
    let mut fixed = Vec::new();
    for seg in segments_over(file, text, tokenizer) {
        if seg.token_count > budget.budget {
            for piece in split_oversize(text, &seg, tokenizer, budget.budget) {
                units.push(piece);
                fixed.push(true);
            }
        } else {
            units.push(seg);
            fixed.push(false);
        }
    }
    let sizes: Vec<usize> = units.iter().map(|s| s.token_count).collect();
    let runs = merge_runs(&sizes, &fixed, budget.budget, |lo, hi| {
        tokenizer.count(text.span(units[lo].start, units[hi].end))
    });
    let chunks = runs
        .into_iter()
        .map(|(lo, hi, size)| Chunk {
            segments: units[lo..=hi].to_vec(),
            token_count: size,
            oversize_split: lo == hi && fixed[lo],
        })
        .collect();
    ChunkPlan {
        file: file.path.clone(),
        tokenizer: tokenizer.id().to_string(),
        budget,
        chunks,
    }
}
