//! Score scaling, inter-rater reliability and correlation analysis.

pub mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::corpus::LanguageId;
use crate::review::{Category, ExportRow};

pub const SIGNIFICANCE: f64 = 0.05;
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("rating {0} is outside 1-4")]
    Rating(u8),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("zero variance")]
    ZeroVariance,
    #[error("mean squares give a non-positive ICC denominator")]
    Degenerate,
    #[error("row has {got} cells, matrix has {expected} raters")]
    RowWidth { expected: usize, got: usize },
}

/// Affine map of the 1-4 rubric onto 0-10.
pub fn scale_to_10(rating: u8) -> Result<f64, StatsError> {
    if !(1..=4).contains(&rating) {
        return Err(StatsError::Rating(rating));
    }
    Ok((rating as f64 - 1.0) / 3.0 * 10.0)
}

/// Items by raters; `None` marks a rating that was never given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    pub raters: usize,
    pub rows: Vec<Vec<Option<u8>>>,
}

impl RatingsMatrix {
    pub fn new(raters: usize) -> Self {
        RatingsMatrix {
            raters,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<u8>>) -> Result<(), StatsError> {
        if row.len() != self.raters {
            return Err(StatsError::RowWidth {
                expected: self.raters,
                got: row.len(),
            });
        }
        if let Some(bad) = row.iter().flatten().find(|r| !(1..=4).contains(*r)) {
            return Err(StatsError::Rating(*bad));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_complete(rows: &[Vec<u8>]) -> Result<Self, StatsError> {
        let mut m = RatingsMatrix::new(rows.first().map_or(0, Vec::len));
        for r in rows {
            m.push(r.iter().map(|&x| Some(x)).collect())?;
        }
        Ok(m)
    }

    /// Rows rated by every rater.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.iter()
                    .map(|c| c.map(f64::from))
                    .collect::<Option<Vec<f64>>>()
            })
            .collect()
    }

    /// One row per item, one column per reviewer (sorted by id), for a
    /// single rubric category.
    pub fn from_reviews(rows: &[ExportRow], category: Category) -> Self {
        let reviewers: Vec<&str> = rows
            .iter()
            .map(|r| r.reviewer_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let column: BTreeMap<&str, usize> =
            reviewers.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut items: BTreeMap<&str, Vec<Option<u8>>> = BTreeMap::new();
        for r in rows {
            items
                .entry(&r.item_id)
                .or_insert_with(|| vec![None; reviewers.len()])[column[r.reviewer_id.as_str()]] =
                Some(r.score(category));
        }
        RatingsMatrix {
            raters: reviewers.len(),
            rows: items.into_values().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub value: f64,
    /// May be `-inf` for strongly negative estimates.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Complete-case items used.
    pub n: usize,
    pub k: usize,
}

/// Two-way ANOVA mean squares of an items-by-raters table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSquares {
    pub rows: f64,
    pub columns: f64,
    pub error: f64,
}

pub fn mean_squares(data: &[Vec<f64>]) -> MeanSquares {
    let n = data.len();
    let k = data[0].len();
    let (nf, kf) = (n as f64, k as f64);
    let grand = data.iter().flatten().sum::<f64>() / (nf * kf);
    let ss_rows: f64 = data
        .iter()
        .map(|r| (r.iter().sum::<f64>() / kf - grand).powi(2))
        .sum::<f64>()
        * kf;
    let ss_cols: f64 = (0..k)
        .map(|j| (data.iter().map(|r| r[j]).sum::<f64>() / nf - grand).powi(2))
        .sum::<f64>()
        * nf;
    let ss_total: f64 = data.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    // Rounding can leave a tiny negative residual for exact fits.
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    MeanSquares {
        rows: ss_rows / (nf - 1.0),
        columns: ss_cols / (kf - 1.0),
        error: ss_err / ((nf - 1.0) * (kf - 1.0)),
    }
}

/// ICC(2,k): two-way random effects, absolute agreement, mean of k raters,
/// on the complete-case rows. The 95% interval uses the F approximation
/// with Satterthwaite degrees of freedom for the single-rater ICC, then
/// the Spearman-Brown step-up to k raters.
pub fn icc_2k(matrix: &RatingsMatrix) -> Result<IccResult, StatsError> {
    let data = matrix.complete_rows();
    let (n, k) = (data.len(), matrix.raters);
    if k < 2 {
        return Err(StatsError::TooFew { needed: 2, got: k });
    }
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let ms = mean_squares(&data);
    if ms.rows == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let (nf, kf) = (n as f64, k as f64);
    let denominator = ms.rows + (ms.columns - ms.error) / nf;
    if denominator <= 1e-12 * (ms.rows + ms.columns + ms.error) {
        return Err(StatsError::Degenerate);
    }
    let value = (ms.rows - ms.error) / denominator;
    if ms.error == 0.0 && ms.columns == 0.0 {
        return Ok(IccResult {
            value,
            ci_low: value,
            ci_high: value,
            n,
            k,
        });
    }
    let single = (ms.rows - ms.error)
        / (ms.rows + (kf - 1.0) * ms.error + kf * (ms.columns - ms.error) / nf);
    let a = kf * single / (nf * (1.0 - single));
    let b = 1.0 + kf * single * (nf - 1.0) / (nf * (1.0 - single));
    let v = (a * ms.columns + b * ms.error).powi(2)
        / ((a * ms.columns).powi(2) / (kf - 1.0)
            + (b * ms.error).powi(2) / ((nf - 1.0) * (kf - 1.0)));
    let f_upper = FisherSnedecor::new(nf - 1.0, v)
        .map_err(|_| StatsError::NonFinite)?
        .inverse_cdf(0.975);
    let f_lower = FisherSnedecor::new(v, nf - 1.0)
        .map_err(|_| StatsError::NonFinite)?
        .inverse_cdf(0.975);
    let mix = kf * ms.columns + (kf * nf - kf - nf) * ms.error;
    let low1 = nf * (ms.rows - f_upper * ms.error) / (f_upper * mix + nf * ms.rows);
    let high1 = nf * (f_lower * ms.rows - ms.error) / (mix + nf * f_lower * ms.rows);
    // A single-rater bound at or below -1/(k-1) steps up to an interval
    // unbounded below. The margin absorbs rounding next to the pole.
    let step_up = |x: f64| {
        if x <= -1.0 / (kf - 1.0) + 1e-9 {
            f64::NEG_INFINITY
        } else {
            x * kf / (1.0 + x * (kf - 1.0))
        }
    };
    // Vanishing degrees of freedom push the F quantiles to infinity; the
    // interval is then as wide as the ICC range allows.
    let ci_low = if low1.is_nan() {
        f64::NEG_INFINITY
    } else {
        step_up(low1)
    };
    let ci_high = if high1.is_nan() { 1.0 } else { step_up(high1) };
    Ok(IccResult {
        value,
        ci_low,
        ci_high,
        n,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p: f64,
    pub n: usize,
    pub significant: bool,
}

/// Sample Pearson correlation with a two-sided t-test of r = 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let df = nf - 2.0;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::NonFinite)?;
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(CorrelationResult {
        r,
        p,
        n,
        significant: p < SIGNIFICANCE,
    })
}

/// Mean and 95% interval of one rubric category for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub dataset: LanguageId,
    pub source: String,
    pub category: Category,
    pub n: usize,
    pub mean: f64,
    /// `None` when the group has a single rating.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Per (dataset, source, category) means on the 0-10 scale with
/// `mean ± 1.96·SE` intervals.
pub fn summarize_scores(rows: &[ExportRow]) -> Result<Vec<ScoreSummary>, StatsError> {
    let mut groups: BTreeMap<(LanguageId, &str, Category), Vec<f64>> = BTreeMap::new();
    for r in rows {
        for c in Category::ALL {
            groups
                .entry((r.language, &r.source, c))
                .or_default()
                .push(scale_to_10(r.score(c))?);
        }
    }
    let mut out: Vec<ScoreSummary> = groups
        .into_iter()
        .map(|((dataset, source, category), v)| {
            let n = v.len();
            let nf = n as f64;
            let mean = v.iter().sum::<f64>() / nf;
            let half = (n > 1).then(|| {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                Z_95 * (var / nf).sqrt()
            });
            ScoreSummary {
                dataset,
                source: source.to_string(),
                category,
                n,
                mean,
                ci_low: half.map(|h| mean - h),
                ci_high: half.map(|h| mean + h),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.dataset, &a.source, a.category.index()).cmp(&(b.dataset, &b.source, b.category.index()))
    });
    Ok(out)
}

/// A generated comment: its ground-truth position and the model that
/// wrote it.
pub type CommentKey = (String, String);

/// Per comment, the mean across raters of the scaled score, in
/// [`Category::ALL`] order.
pub fn human_scores(rows: &[ExportRow]) -> Result<BTreeMap<CommentKey, [f64; 4]>, StatsError> {
    let mut acc: BTreeMap<CommentKey, ([f64; 4], usize)> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((r.comment_id.clone(), r.source.clone()))
            .or_insert(([0.0; 4], 0));
        for c in Category::ALL {
            e.0[c.index()] += scale_to_10(r.score(c))?;
        }
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, n))| (k, sum.map(|s| s / n as f64)))
        .collect())
}

/// One automated metric, valued per comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub values: BTreeMap<CommentKey, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Cell {
    Value(CorrelationResult),
    /// Fewer than three joined comments.
    Insufficient {
        n: usize,
    },
    /// A constant metric or score column.
    Undefined {
        n: usize,
    },
}

impl Cell {
    pub fn result(&self) -> Option<&CorrelationResult> {
        match self {
            Cell::Value(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    /// In [`Category::TABLE_ORDER`].
    pub cells: [Cell; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub dataset: String,
    pub rows: Vec<CorrelationRow>,
}

/// Correlates every metric with every rubric category over the comments
/// present in both. Joined pairs are taken in key order, so the result
/// does not depend on the order rows were supplied in.
pub fn correlate_all(
    dataset: &str,
    metrics: &[MetricColumn],
    scores: &BTreeMap<CommentKey, [f64; 4]>,
) -> CorrelationTable {
    let rows = metrics
        .iter()
        .map(|m| {
            let joined: Vec<(f64, &[f64; 4])> = m
                .values
                .iter()
                .filter_map(|(k, &v)| scores.get(k).map(|s| (v, s)))
                .collect();
            let x: Vec<f64> = joined.iter().map(|(v, _)| *v).collect();
            let cells = Category::TABLE_ORDER.map(|c| {
                let y: Vec<f64> = joined.iter().map(|(_, s)| s[c.index()]).collect();
                let n = x.len();
                match pearson(&x, &y) {
                    Ok(r) => Cell::Value(r),
                    Err(StatsError::TooFew { .. }) => Cell::Insufficient { n },
                    Err(_) => Cell::Undefined { n },
                }
            });
            CorrelationRow {
                metric: m.name.clone(),
                cells,
            }
        })
        .collect();
    CorrelationTable {
        dataset: dataset.to_string(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccRow {
    pub dataset: LanguageId,
    pub category: Category,
    pub result: Option<IccResult>,
    pub error: Option<String>,
}

/// ICC(2,k) per dataset and category over the items every reviewer rated.
pub fn icc_by_category(rows: &[ExportRow]) -> Vec<IccRow> {
    let datasets: BTreeSet<LanguageId> = rows.iter().map(|r| r.language).collect();
    let mut out = Vec::new();
    for d in datasets {
        let subset: Vec<ExportRow> = rows.iter().filter(|r| r.language == d).cloned().collect();
        for c in Category::TABLE_ORDER {
            let res = icc_2k(&RatingsMatrix::from_reviews(&subset, c));
            out.push(IccRow {
                dataset: d,
                category: c,
                error: res.as_ref().err().map(ToString::to_string),
                result: res.ok(),
            });
        }
    }
    out
}
