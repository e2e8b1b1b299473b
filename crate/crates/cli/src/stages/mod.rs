//! The pipeline stages, their dependencies and the run loop.

mod corpus;
mod generation;
mod metrics;
mod review;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use legacydoc_core::genclient::CostSummary;

use crate::artifact::{is_complete, write_atomic};
use crate::config::ProviderSpec;
use crate::{CliError, LoadedConfig};

pub use corpus::{load_corpora, Corpus};
pub use generation::{dry_run, load_masked, DryRunPlan, ModelEstimate};
pub use review::{serve, ServeArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Stats,
    Chunk,
    Mask,
    Generate,
    Unmask,
    Complexity,
    Painpoints,
    Score,
    Assign,
    Correlate,
    Report,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 12] = [
        Stage::Ingest,
        Stage::Stats,
        Stage::Chunk,
        Stage::Mask,
        Stage::Generate,
        Stage::Unmask,
        Stage::Complexity,
        Stage::Painpoints,
        Stage::Score,
        Stage::Assign,
        Stage::Correlate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::Chunk => "chunk",
            Stage::Mask => "mask",
            Stage::Generate => "generate",
            Stage::Unmask => "unmask",
            Stage::Complexity => "complexity",
            Stage::Painpoints => "painpoints",
            Stage::Score => "score",
            Stage::Assign => "assign",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Stats | Stage::Chunk | Stage::Mask | Stage::Complexity | Stage::Painpoints => {
                &[Stage::Ingest]
            }
            Stage::Generate => &[Stage::Chunk, Stage::Mask],
            Stage::Unmask | Stage::Score | Stage::Assign => &[Stage::Generate],
            Stage::Correlate => &[
                Stage::Complexity,
                Stage::Painpoints,
                Stage::Score,
                Stage::Assign,
            ],
            Stage::Report => &[Stage::Stats, Stage::Correlate],
        }
    }

    /// Whether the stage calls the generation provider.
    pub fn calls_provider(self) -> bool {
        self == Stage::Generate
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::validation(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Replaces the configured provider, e.g. from `--provider mock:<file>`.
    pub provider: Option<ProviderSpec>,
    /// Re-run stages that already completed under this configuration.
    pub force: bool,
    /// Ratings export for `correlate`, overriding `review.ratings`.
    pub ratings: Option<PathBuf>,
}

/// What a stage reports back to the run ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub artifacts: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub costs: Vec<(String, CostSummary)>,
}

/// One line of `<output_dir>/run/ledger.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: Stage,
    pub config_digest: String,
    pub skipped: bool,
    pub elapsed_secs: f64,
    pub outcome: Option<StageOutcome>,
    pub error: Option<String>,
}

pub fn run_stage(
    cfg: &LoadedConfig,
    stage: Stage,
    opts: &Options,
) -> Result<StageOutcome, CliError> {
    match stage {
        Stage::Ingest => corpus::ingest(cfg),
        Stage::Stats => corpus::stats(cfg),
        Stage::Chunk => generation::chunk(cfg),
        Stage::Mask => generation::mask(cfg),
        Stage::Generate => generation::generate(cfg, opts),
        Stage::Unmask => generation::unmask(cfg),
        Stage::Complexity => metrics::complexity(cfg),
        Stage::Painpoints => metrics::painpoints(cfg),
        Stage::Score => metrics::score(cfg),
        Stage::Assign => review::assign(cfg),
        Stage::Correlate => review::correlate(cfg, opts),
        Stage::Report => review::report(cfg),
    }
}

fn wanted(cfg: &LoadedConfig, requested: &[Stage]) -> std::collections::BTreeSet<Stage> {
    let mut wanted = std::collections::BTreeSet::new();
    let mut stack: Vec<Stage> = requested.to_vec();
    while let Some(s) = stack.pop() {
        if wanted.insert(s) {
            for &d in s.dependencies() {
                if !is_complete(cfg, d.name()) {
                    stack.push(d);
                }
            }
        }
    }
    wanted
}

fn should_run(cfg: &LoadedConfig, stage: Stage, requested: &[Stage], force: bool) -> bool {
    !is_complete(cfg, stage.name()) || (force && requested.contains(&stage))
}

/// The requested stages plus every incomplete dependency, in execution
/// order, each with whether it would run now.
pub fn plan(cfg: &LoadedConfig, requested: &[Stage], force: bool) -> Vec<(Stage, bool)> {
    let wanted = wanted(cfg, requested);
    Stage::ALL
        .into_iter()
        .filter(|s| wanted.contains(s))
        .map(|s| (s, should_run(cfg, s, requested, force)))
        .collect()
}

/// Removes the completion marker of every stage downstream of `stage`, so
/// they rerun on the new output.
fn invalidate_dependents(cfg: &LoadedConfig, stage: Stage) -> Result<(), CliError> {
    let mut stale = std::collections::BTreeSet::from([stage]);
    for s in Stage::ALL {
        if s.dependencies().iter().any(|d| stale.contains(d)) {
            stale.insert(s);
        }
    }
    stale.remove(&stage);
    for s in stale {
        let path = cfg.stage_dir(s.name()).join(crate::artifact::MANIFEST);
        if path.exists() {
            std::fs::remove_file(&path)
                .map_err(|e| CliError::stage(s, format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

fn append_ledger(cfg: &LoadedConfig, entry: &LedgerEntry) -> Result<(), CliError> {
    use std::io::Write;
    let path = cfg.stage_dir("run").join("ledger.jsonl");
    if !path.exists() {
        write_atomic(&path, b"")?;
    }
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| CliError::stage("run", format!("{}: {e}", path.display())))?;
    let line = serde_json::to_string(entry).expect("ledger entry serializes");
    writeln!(f, "{line}").map_err(|e| CliError::stage("run", e))
}

/// Runs `requested` with their incomplete dependencies. Completed stages are
/// skipped unless `opts.force`; the first failure halts the run, leaving
/// every earlier stage reusable.
pub fn run_pipeline(
    cfg: &LoadedConfig,
    requested: &[Stage],
    opts: &Options,
) -> Result<Vec<LedgerEntry>, CliError> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for stage in Stage::ALL {
        // Re-evaluated per stage: an earlier stage may have invalidated it.
        if !wanted(cfg, requested).contains(&stage) {
            continue;
        }
        let run = should_run(cfg, stage, requested, opts.force);
        let started = Instant::now();
        let (outcome, error) = if run {
            tracing::info!(stage = stage.name(), "stage started");
            match run_stage(cfg, stage, opts) {
                Ok(o) => {
                    invalidate_dependents(cfg, stage)?;
                    (Some(o), None)
                }
                Err(e) => (None, Some(e)),
            }
        } else {
            tracing::info!(stage = stage.name(), "stage already complete, skipped");
            (None, None)
        };
        let entry = LedgerEntry {
            stage,
            config_digest: cfg.digest.clone(),
            skipped: !run,
            elapsed_secs: started.elapsed().as_secs_f64(),
            outcome,
            error: error.as_ref().map(ToString::to_string),
        };
        append_ledger(cfg, &entry)?;
        if let Some(o) = &entry.outcome {
            for w in &o.warnings {
                tracing::warn!(stage = stage.name(), "{w}");
            }
            tracing::info!(
                stage = stage.name(),
                artifacts = o.artifacts,
                elapsed = entry.elapsed_secs,
                "stage finished"
            );
        }
        entries.push(entry);
        if let Some(e) = error {
            tracing::error!(stage = stage.name(), error = %e, "stage failed");
            return Err(e);
        }
    }
    Ok(entries)
}
