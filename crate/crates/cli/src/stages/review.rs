//! `assign`, `correlate`, `report` and the review server entry point.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use legacydoc_core::corpus::{LanguageId, SourceFile};
use legacydoc_core::genclient::GenerationBatchResult;
use legacydoc_core::masking::PlaceholderId;
use legacydoc_core::painpoints::PainPoint;
use legacydoc_core::review::{
    comment_key, export_reviews, import_reviews, make_assignments, make_item, Category,
    ExportFormat, ExportRow, ReviewBundle, ReviewItem, ReviewStore, Roster, GROUND_TRUTH,
    ROSTER_FILE,
};
use legacydoc_core::stats::report::{
    complexity_metric_names, pain_point_metric, quality_metric_names, render_markdown,
    render_plain, write_correlations_csv, write_icc_csv, write_summary_csv, BLEU, CHRF, COST,
    CYCLOMATIC, DIFFICULTY, EFFORT, FLESCH, GUNNING_FOG, MAINTAINABILITY, PAIN_POINT_LOC,
    PROCESSING_TIME, RETRIES, ROUGE, SIMILARITY, VOLUME,
};
use legacydoc_core::stats::{
    correlate_all, human_scores, icc_by_category, summarize_scores, CommentKey, CorrelationTable,
    IccRow, MetricColumn, ScoreSummary,
};

use super::corpus::load_corpora;
use super::generation::{load_generated, load_masked, ModelSummary};
use super::metrics::{load_complexity, load_painpoints, load_scores};
use super::{Options, Stage, StageOutcome};
use crate::artifact::{read_json, require_stage, StageWriter};
use crate::{CliError, LoadedConfig};

const ITEMS_FILE: &str = "items.json";
const ASSIGNMENTS_FILE: &str = "assignments.json";
const REVIEW_LOG_DIR: &str = "reviews";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssignSummary {
    items: BTreeMap<String, usize>,
    reviewers: usize,
    assignments: usize,
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("bundle serializes");
    b.push(b'\n');
    b
}

/// Builds blinded review items for the ground truth and every model, and
/// deals them out to the roster.
pub fn assign(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let files: BTreeMap<String, SourceFile> = load_corpora(cfg)?
        .into_iter()
        .flat_map(|c| c.files)
        .map(|f| (f.path.clone(), f))
        .collect();
    let masked = load_masked(cfg)?;
    let review = &cfg.config.review;
    let mut items: Vec<ReviewItem> = Vec::new();
    let mut generated = Vec::new();
    for profile in &cfg.config.models {
        generated.push((
            profile.name.as_str(),
            load_generated(cfg, &profile.name)?.by_file(),
        ));
    }
    for m in &masked {
        let file = &files[&m.file];
        let mut records: Vec<(&PlaceholderId, _)> = m.mapping.iter().collect();
        records.sort_by_key(|(_, r)| r.anchor_line);
        for (id, record) in records {
            if review.include_ground_truth {
                items.push(make_item(
                    file,
                    record,
                    record.text.trim(),
                    GROUND_TRUTH,
                    review.context_radius,
                    review.seed,
                ));
            }
            for (model, comments) in &generated {
                if let Some(text) = comments.get(&m.file).and_then(|c| c.get(id)) {
                    items.push(make_item(
                        file,
                        record,
                        text,
                        model,
                        review.context_radius,
                        review.seed,
                    ));
                }
            }
        }
    }
    let mut outcome = StageOutcome::default();
    let roster: Roster = match &review.roster {
        Some(p) => {
            let path = cfg.resolve(p);
            let text = std::fs::read(&path)
                .map_err(|e| CliError::validation(format!("roster {}: {e}", path.display())))?;
            serde_json::from_slice(&text)
                .map_err(|e| CliError::validation(format!("roster {}: {e}", path.display())))?
        }
        None => {
            outcome
                .warnings
                .push("no review roster configured; items built without assignments".into());
            Roster::default()
        }
    };
    let assignments = if roster.reviewers.is_empty() {
        Vec::new()
    } else {
        make_assignments(&items, &roster.ids(), review.overlap, review.seed)
            .map_err(|e| CliError::validation(e.to_string()))?
    };
    let mut per_source: BTreeMap<String, usize> = BTreeMap::new();
    for i in &items {
        *per_source.entry(i.source.clone()).or_default() += 1;
    }
    let summary = AssignSummary {
        items: per_source,
        reviewers: roster.reviewers.len(),
        assignments: assignments.len(),
    };
    let mut w = StageWriter::begin(cfg, "assign")?;
    w.bytes(ITEMS_FILE, &pretty(&items))?;
    w.bytes(ASSIGNMENTS_FILE, &pretty(&assignments))?;
    w.bytes(ROSTER_FILE, &pretty(&roster))?;
    w.json("summary.json", &summary)?;
    w.finish()?;
    outcome.artifacts = 4;
    Ok(outcome)
}

fn load_bundle(cfg: &LoadedConfig) -> Result<ReviewBundle, CliError> {
    require_stage(cfg, "assign")?;
    ReviewBundle::load(&cfg.stage_dir("assign")).map_err(|e| CliError::stage(Stage::Assign, e))
}

fn ratings_format(path: &Path) -> ExportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => ExportFormat::Csv,
        _ => ExportFormat::Jsonl,
    }
}

/// Ratings from an export file when one is given, otherwise from the
/// review server's log.
fn load_ratings(
    cfg: &LoadedConfig,
    opts: &Options,
    bundle: &ReviewBundle,
) -> Result<Vec<ExportRow>, CliError> {
    let explicit = opts
        .ratings
        .clone()
        .or_else(|| cfg.config.review.ratings.as_ref().map(|p| cfg.resolve(p)));
    if let Some(path) = explicit {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::validation(format!("ratings {}: {e}", path.display())))?;
        return import_reviews(&text, ratings_format(&path))
            .map_err(|e| CliError::validation(e.to_string()));
    }
    let dir = cfg.output_dir().join(REVIEW_LOG_DIR);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let store = ReviewStore::open(&dir, &bundle.assignments)
        .map_err(|e| CliError::stage(Stage::Correlate, e))?;
    let text = export_reviews(&store.effective(), &bundle.items, ExportFormat::Jsonl)
        .map_err(|e| CliError::stage(Stage::Correlate, e))?;
    import_reviews(&text, ExportFormat::Jsonl).map_err(|e| CliError::stage(Stage::Correlate, e))
}

/// Metric values keyed by (comment, model), grouped by dataset.
#[derive(Default)]
struct Columns(BTreeMap<LanguageId, BTreeMap<String, BTreeMap<CommentKey, f64>>>);

impl Columns {
    fn put(&mut self, lang: LanguageId, metric: &str, key: &CommentKey, value: Option<f64>) {
        if let Some(v) = value.filter(|v| v.is_finite()) {
            self.0
                .entry(lang)
                .or_default()
                .entry(metric.to_string())
                .or_default()
                .insert(key.clone(), v);
        }
    }

    fn table(
        &self,
        lang: LanguageId,
        names: &[String],
        scores: &BTreeMap<CommentKey, [f64; 4]>,
    ) -> CorrelationTable {
        let empty = BTreeMap::new();
        let cols = self.0.get(&lang).unwrap_or(&empty);
        let metrics: Vec<MetricColumn> = names
            .iter()
            .map(|n| MetricColumn {
                name: n.clone(),
                values: cols.get(n).cloned().unwrap_or_default(),
            })
            .collect();
        correlate_all(lang.name(), &metrics, scores)
    }
}

fn rouge_of(s: &legacydoc_core::docmetrics::PairScore, n: usize) -> f64 {
    match n {
        1 => s.rouge1,
        2 => s.rouge2,
        3 => s.rouge3,
        _ => s.rouge4,
    }
}

/// Chunk-level accounting and file-level structure are shared by every
/// comment they cover.
fn metric_columns(cfg: &LoadedConfig) -> Result<Columns, CliError> {
    let masked = load_masked(cfg)?;
    let mut position: BTreeMap<String, (String, PlaceholderId, LanguageId)> = BTreeMap::new();
    for m in &masked {
        for (id, r) in &m.mapping {
            position.insert(comment_key(r), (m.file.clone(), id.clone(), m.language));
        }
    }
    let complexity: BTreeMap<String, _> = load_complexity(cfg)?
        .into_iter()
        .map(|r| (r.file.clone(), r))
        .collect();
    let pain: BTreeMap<String, _> = load_painpoints(cfg)?
        .into_iter()
        .map(|p| (p.file, p.vector))
        .collect();
    let scores = load_scores(cfg)?;
    let mut chunks: BTreeMap<String, BTreeMap<(String, PlaceholderId), GenerationBatchResult>> =
        BTreeMap::new();
    for profile in &cfg.config.models {
        let g = load_generated(cfg, &profile.name)?;
        let of: BTreeMap<_, _> = g
            .chunk_of()
            .into_iter()
            .map(|(k, r)| (k, r.clone()))
            .collect();
        chunks.insert(profile.name.clone(), of);
    }
    let rouge_n = cfg.config.metrics.rouge_n;
    let mut cols = Columns::default();
    for s in &scores {
        let Some((file, id, lang)) = position.get(&s.comment_id) else {
            continue;
        };
        let lang = *lang;
        let key: CommentKey = (s.comment_id.clone(), s.source_model.clone());
        if let Some(r) = chunks
            .get(&s.source_model)
            .and_then(|c| c.get(&(file.clone(), id.clone())))
        {
            cols.put(lang, COST, &key, Some(r.cost));
            cols.put(lang, PROCESSING_TIME, &key, Some(r.processing_time));
            cols.put(lang, RETRIES, &key, Some(f64::from(r.retries)));
        }
        if let Some(c) = complexity.get(file) {
            cols.put(
                lang,
                CYCLOMATIC,
                &key,
                Some(c.control_flow.cyclomatic as f64),
            );
            cols.put(lang, DIFFICULTY, &key, Some(c.halstead.difficulty));
            cols.put(lang, EFFORT, &key, Some(c.halstead.effort));
            cols.put(lang, MAINTAINABILITY, &key, Some(c.maintainability));
            cols.put(lang, VOLUME, &key, Some(c.halstead.volume));
        }
        if let Some(v) = pain.get(file) {
            for p in PainPoint::ALL {
                cols.put(
                    lang,
                    &pain_point_metric(p),
                    &key,
                    Some(v.normalized_value(p)),
                );
            }
            cols.put(lang, PAIN_POINT_LOC, &key, Some(v.loc as f64));
        }
        cols.put(lang, BLEU, &key, Some(s.bleu));
        cols.put(lang, CHRF, &key, Some(s.chrf));
        cols.put(lang, ROUGE, &key, Some(rouge_of(s, rouge_n)));
        cols.put(lang, SIMILARITY, &key, s.similarity);
        cols.put(lang, FLESCH, &key, s.flesch);
        cols.put(lang, GUNNING_FOG, &key, s.fog);
    }
    Ok(cols)
}

fn tables_csv(tables: &[CorrelationTable]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    write_correlations_csv(tables, &mut out).map_err(|e| CliError::stage(Stage::Correlate, e))?;
    Ok(out)
}

/// Correlates every automated metric with the mean human score of each
/// generated comment, per dataset.
pub fn correlate(cfg: &LoadedConfig, opts: &Options) -> Result<StageOutcome, CliError> {
    let bundle = load_bundle(cfg)?;
    let rows = load_ratings(cfg, opts, &bundle)?;
    let model_rows: Vec<ExportRow> = rows
        .iter()
        .filter(|r| r.source != GROUND_TRUTH)
        .cloned()
        .collect();
    let scores = human_scores(&model_rows).map_err(|e| CliError::validation(e.to_string()))?;
    let cols = metric_columns(cfg)?;
    let mut datasets: Vec<LanguageId> = load_masked(cfg)?.iter().map(|m| m.language).collect();
    datasets.sort();
    datasets.dedup();
    let complexity: Vec<CorrelationTable> = datasets
        .iter()
        .map(|&l| cols.table(l, &complexity_metric_names(l == LanguageId::Mumps), &scores))
        .collect();
    let quality: Vec<CorrelationTable> = datasets
        .iter()
        .map(|&l| cols.table(l, &quality_metric_names(), &scores))
        .collect();
    let icc = icc_by_category(&rows);
    let summary = summarize_scores(&rows).map_err(|e| CliError::validation(e.to_string()))?;

    let mut outcome = StageOutcome::default();
    if rows.is_empty() {
        outcome
            .warnings
            .push("no ratings found; correlation cells are insufficient".into());
    }
    let mut w = StageWriter::begin(cfg, "correlate")?;
    w.json("complexity_correlations.json", &complexity)?;
    w.csv("complexity_correlations.csv", &tables_csv(&complexity)?)?;
    w.json("quality_correlations.json", &quality)?;
    w.csv("quality_correlations.csv", &tables_csv(&quality)?)?;
    let mut buf = Vec::new();
    write_icc_csv(&icc, &mut buf).map_err(|e| CliError::stage(Stage::Correlate, e))?;
    w.json("icc.json", &icc)?;
    w.csv("icc.csv", &buf)?;
    let mut buf = Vec::new();
    write_summary_csv(&summary, &mut buf).map_err(|e| CliError::stage(Stage::Correlate, e))?;
    w.json("summary.json", &summary)?;
    w.csv("summary.csv", &buf)?;
    w.finish()?;
    outcome.artifacts = 8;
    Ok(outcome)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!(
        "| {} |\n|{}\n",
        header.join(" | "),
        "---|".repeat(header.len())
    );
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

fn plain_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            rows.iter()
                .map(|r| r[j].len())
                .chain([header[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut s = line(header.to_vec());
    for r in rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    s
}

struct Section {
    title: &'static str,
    markdown: String,
    plain: String,
}

fn tabular(title: &'static str, header: &[&str], rows: &[Vec<String>]) -> Section {
    Section {
        title,
        markdown: markdown_table(header, rows),
        plain: plain_table(header, rows),
    }
}

pub fn report(cfg: &LoadedConfig) -> Result<StageOutcome, CliError> {
    let complexity: Vec<CorrelationTable> =
        read_json(cfg, "correlate", "complexity_correlations.json")?;
    let quality: Vec<CorrelationTable> = read_json(cfg, "correlate", "quality_correlations.json")?;
    let icc: Vec<IccRow> = read_json(cfg, "correlate", "icc.json")?;
    let summary: Vec<ScoreSummary> = read_json(cfg, "correlate", "summary.json")?;
    require_stage(cfg, "stats")?;
    let stats = std::fs::read_to_string(cfg.stage_dir("stats").join("stats.txt"))
        .map_err(|e| CliError::stage(Stage::Report, e))?;
    let stats_body: String = stats
        .lines()
        .take_while(|l| !l.starts_with("config_digest:"))
        .collect::<Vec<_>>()
        .join("\n");

    let mut gen_rows = Vec::new();
    for profile in &cfg.config.models {
        let s: ModelSummary =
            read_json(cfg, "generate", &format!("{}/summary.json", profile.name))?;
        gen_rows.push(vec![
            s.model,
            s.totals.chunks.to_string(),
            s.totals.retries.to_string(),
            s.totals.failed.to_string(),
            s.totals.input_tokens.to_string(),
            s.totals.output_tokens.to_string(),
            format!("{:.2}", s.totals.processing_time),
            format!("{:.4}", s.totals.cost),
        ]);
    }
    let icc_rows: Vec<Vec<String>> = icc
        .iter()
        .map(|r| {
            vec![
                r.dataset.to_string(),
                r.category.title().to_string(),
                fmt_opt(r.result.map(|x| x.value)),
                r.result.map_or_else(
                    || r.error.clone().unwrap_or_default(),
                    |x| format!("[{:.2}, {:.2}]", x.ci_low, x.ci_high),
                ),
                r.result.map_or_else(String::new, |x| x.n.to_string()),
            ]
        })
        .collect();
    let summary_rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.dataset.to_string(),
                s.source.clone(),
                s.category.title().to_string(),
                s.n.to_string(),
                format!("{:.2}", s.mean),
                match (s.ci_low, s.ci_high) {
                    (Some(lo), Some(hi)) => format!("[{lo:.2}, {hi:.2}]"),
                    _ => "n/a".into(),
                },
            ]
        })
        .collect();
    let sections = [
        Section {
            title: "Corpus",
            markdown: format!("```\n{stats_body}\n```\n"),
            plain: format!("{stats_body}\n"),
        },
        tabular(
            "Generation",
            &[
                "Model",
                "Chunks",
                "Retries",
                "Failed",
                "Input tokens",
                "Output tokens",
                "Time (s)",
                "Cost",
            ],
            &gen_rows,
        ),
        Section {
            title: "Complexity and cost against human scores",
            markdown: render_markdown(&complexity),
            plain: render_plain(&complexity),
        },
        Section {
            title: "Comment metrics against human scores",
            markdown: render_markdown(&quality),
            plain: render_plain(&quality),
        },
        tabular(
            "Inter-rater agreement, ICC(2,k)",
            &["Dataset", "Category", "ICC", "95% CI", "Items"],
            &icc_rows,
        ),
        tabular(
            "Human scores (0-10)",
            &["Dataset", "Source", "Category", "Ratings", "Mean", "95% CI"],
            &summary_rows,
        ),
    ];
    let mut md = String::from("# Comment generation report\n");
    let mut txt = String::from("COMMENT GENERATION REPORT\n");
    for s in &sections {
        md.push_str(&format!("\n## {}\n\n{}", s.title, s.markdown));
        txt.push_str(&format!(
            "\n{}\n{}\n{}",
            s.title,
            "=".repeat(s.title.len()),
            s.plain
        ));
    }
    md.push_str("\nSignificant correlations (p < 0.05) are bold and starred.\n");
    txt.push_str(&format!(
        "\nSignificant correlations (p < 0.05) are starred. Categories: {}.\n",
        categories()
    ));
    let mut w = StageWriter::begin(cfg, "report")?;
    w.report("report.md", &md, true)?;
    w.report("report.txt", &txt, false)?;
    w.finish()?;
    Ok(StageOutcome {
        artifacts: 2,
        ..Default::default()
    })
}

fn categories() -> String {
    Category::TABLE_ORDER.map(|c| c.title()).join(", ")
}

#[derive(Debug, Clone)]
pub struct ServeArgs {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Serves the assignment bundle, logging ratings under
/// `<output_dir>/reviews`. Blocks until interrupted.
pub fn serve(cfg: &LoadedConfig, args: &ServeArgs) -> Result<(), CliError> {
    require_stage(cfg, "assign")?;
    let admin = std::env::var(legacydoc_review::ADMIN_TOKEN_ENV)
        .ok()
        .filter(|t| !t.is_empty());
    if admin.is_none() {
        tracing::warn!(
            "{} is not set; the export endpoint is disabled",
            legacydoc_review::ADMIN_TOKEN_ENV
        );
    }
    let state = legacydoc_review::ReviewState::open(
        &cfg.stage_dir("assign"),
        &cfg.output_dir().join(REVIEW_LOG_DIR),
        admin,
    )
    .map_err(|e| CliError::validation(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::stage("serve", e))?;
    let options = legacydoc_review::ServeOptions {
        addr: args.addr,
        static_dir: args.static_dir.clone(),
    };
    runtime
        .block_on(legacydoc_review::serve(Arc::new(state), options))
        .map_err(|e| CliError::stage("serve", e))
}
