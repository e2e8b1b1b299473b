//! Correlation tables and score summaries as Markdown, plain text and CSV.

use std::io::Write;

use crate::painpoints::PainPoint;
use crate::review::Category;

use super::{Cell, CorrelationTable, IccRow, ScoreSummary};

pub const COST: &str = "Cost";
pub const CYCLOMATIC: &str = "Cyclomatic Complexity";
pub const DIFFICULTY: &str = "Difficulty";
pub const EFFORT: &str = "Effort";
pub const MAINTAINABILITY: &str = "Maintainability";
pub const PROCESSING_TIME: &str = "Processing Time";
pub const RETRIES: &str = "Retries";
pub const VOLUME: &str = "Volume";
pub const PAIN_POINT_LOC: &str = "Pain Point Lines of Code";

pub const BLEU: &str = "BLEU";
pub const FLESCH: &str = "Flesch";
pub const GUNNING_FOG: &str = "Gunning Fog";
pub const CHRF: &str = "CHRF";
pub const ROUGE: &str = "ROUGE";
pub const SIMILARITY: &str = "Similarity Score";

pub fn pain_point_metric(p: PainPoint) -> String {
    format!("Pain Point {}", p.label())
}

/// Complexity, cost and (optionally) pain-point rows, alphabetically.
pub fn complexity_metric_names(pain_points: bool) -> Vec<String> {
    let mut names: Vec<String> = [
        COST,
        CYCLOMATIC,
        DIFFICULTY,
        EFFORT,
        MAINTAINABILITY,
        PROCESSING_TIME,
        RETRIES,
        VOLUME,
    ]
    .map(String::from)
    .to_vec();
    if pain_points {
        names.extend(PainPoint::ALL.iter().map(|&p| pain_point_metric(p)));
        names.push(PAIN_POINT_LOC.to_string());
    }
    names.sort();
    names
}

pub fn quality_metric_names() -> Vec<String> {
    [BLEU, FLESCH, GUNNING_FOG, CHRF, ROUGE, SIMILARITY]
        .map(String::from)
        .to_vec()
}

fn cell_text(cell: &Cell, significant: impl Fn(&str) -> String) -> String {
    match cell {
        Cell::Value(r) => {
            let v = format!("{:.2}", r.r);
            if r.significant {
                significant(&v)
            } else {
                v
            }
        }
        Cell::Insufficient { n } => format!("insufficient (n={n})"),
        Cell::Undefined { .. } => "undefined".to_string(),
    }
}

fn headers() -> Vec<String> {
    let mut h = vec!["Dataset".to_string(), "Metric".to_string()];
    h.extend(Category::TABLE_ORDER.iter().map(|c| c.title().to_string()));
    h
}

fn table_rows(
    tables: &[CorrelationTable],
    significant: impl Fn(&str) -> String + Copy,
) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for t in tables {
        for (i, row) in t.rows.iter().enumerate() {
            let mut cells = vec![
                if i == 0 {
                    t.dataset.clone()
                } else {
                    String::new()
                },
                row.metric.clone(),
            ];
            cells.extend(row.cells.iter().map(|c| cell_text(c, significant)));
            out.push(cells);
        }
    }
    out
}

/// Significant cells are bold with a trailing asterisk.
pub fn render_markdown(tables: &[CorrelationTable]) -> String {
    let mut s = String::new();
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let h = headers();
    s.push_str(&line(&h));
    s.push_str(&format!("|{}\n", "---|".repeat(h.len())));
    for r in table_rows(tables, |v| format!("**{v}\\***")) {
        s.push_str(&line(&r));
    }
    s
}

/// Fixed-width columns; significant cells carry a trailing asterisk.
pub fn render_plain(tables: &[CorrelationTable]) -> String {
    let h = headers();
    let rows = table_rows(tables, |v| format!("{v}*"));
    let widths: Vec<usize> = (0..h.len())
        .map(|j| {
            rows.iter()
                .map(|r| r[j].len())
                .chain([h[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut s = fmt(&h);
    s.push_str(&format!(
        "{}\n",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    ));
    for r in &rows {
        s.push_str(&fmt(r));
    }
    s
}

/// Long format: one line per (dataset, metric, category).
pub fn write_correlations_csv<W: Write>(tables: &[CorrelationTable], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "dataset",
        "metric",
        "category",
        "r",
        "p",
        "n",
        "significant",
        "status",
    ])?;
    for t in tables {
        for row in &t.rows {
            for (c, cell) in Category::TABLE_ORDER.iter().zip(&row.cells) {
                let (r, p, n, sig, status) = match cell {
                    Cell::Value(v) => (
                        v.r.to_string(),
                        v.p.to_string(),
                        v.n,
                        v.significant.to_string(),
                        "ok",
                    ),
                    Cell::Insufficient { n } => (
                        String::new(),
                        String::new(),
                        *n,
                        String::new(),
                        "insufficient",
                    ),
                    Cell::Undefined { n } => {
                        (String::new(), String::new(), *n, String::new(), "undefined")
                    }
                };
                out.write_record([
                    &t.dataset,
                    &row.metric,
                    c.name(),
                    &r,
                    &p,
                    &n.to_string(),
                    &sig,
                    status,
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Means and intervals per (dataset, source, category); empty interval
/// cells for single-rating groups.
pub fn write_summary_csv<W: Write>(summaries: &[ScoreSummary], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "dataset", "source", "category", "n", "mean", "ci_low", "ci_high",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in summaries {
        out.write_record([
            s.dataset.name(),
            &s.source,
            s.category.name(),
            &s.n.to_string(),
            &s.mean.to_string(),
            &opt(s.ci_low),
            &opt(s.ci_high),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_icc_csv<W: Write>(rows: &[IccRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "dataset", "category", "icc", "ci_low", "ci_high", "n", "k", "error",
    ])?;
    for r in rows {
        let (v, lo, hi, n, k) = match &r.result {
            Some(x) => (
                x.value.to_string(),
                x.ci_low.to_string(),
                x.ci_high.to_string(),
                x.n.to_string(),
                x.k.to_string(),
            ),
            None => Default::default(),
        };
        out.write_record([
            r.dataset.name(),
            r.category.name(),
            &v,
            &lo,
            &hi,
            &n,
            &k,
            r.error.as_deref().unwrap_or(""),
        ])?;
    }
    out.flush()?;
    Ok(())
}
