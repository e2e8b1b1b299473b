use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use legacydoc_cli::stages::{self, ServeArgs};
use legacydoc_cli::{CliError, LoadedConfig, Options, RunConfig, Stage};

#[derive(Parser)]
#[command(
    name = "legacydoc",
    version,
    about = "Comment generation and evaluation for MUMPS and ALC code"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set max_retries=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory, replacing `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Generation provider, `mock:<script.json>`.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Log filter, e.g. `info` or `legacydoc_cli=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Read the corpora and record what was found.
    Ingest,
    /// Corpus statistics.
    Stats,
    /// Plan the chunks sent to each model.
    Chunk,
    /// Replace every comment with a placeholder.
    Mask,
    /// Ask each model for the masked comments.
    Generate {
        /// Print the plan and a cost ceiling without calling the provider.
        #[arg(long)]
        dry_run: bool,
    },
    /// Put generated comments back into the source.
    Unmask,
    /// Cyclomatic complexity, Halstead measures and maintainability per file.
    Complexity,
    /// MUMPS-specific readability hazards per file.
    Painpoints,
    /// Reference-based and readability scores per generated comment.
    Score,
    /// Build blinded review items and deal them to reviewers.
    Assign,
    /// Run the review server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of the review interface's static files.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Correlate metrics with human ratings.
    Correlate {
        /// Ratings export (`.jsonl` or `.csv`) to use instead of the review log.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Render the final tables.
    Report,
    /// Run stages with their dependencies.
    Run {
        /// Comma-separated stages; all when omitted.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        #[arg(long)]
        dry_run: bool,
        /// Rerun requested stages that already completed.
        #[arg(long)]
        force: bool,
    },
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .or_else(|_| tracing_subscriber::EnvFilter::try_new(filter))
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn absolute(p: &std::path::Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))
}

fn load(global: &Global) -> Result<LoadedConfig, CliError> {
    let mut overrides = global.overrides.clone();
    if let Some(out) = &global.out {
        overrides.push(format!(
            "output_dir={}",
            serde_json::Value::from(absolute(out)?.display().to_string())
        ));
    }
    if let Some(p) = &global.provider {
        let script = p.strip_prefix("mock:").ok_or_else(|| {
            CliError::validation(format!("provider `{p}` is not of the form mock:<script>"))
        })?;
        let spec =
            serde_json::json!({"kind": "mock", "script": absolute(std::path::Path::new(script))?});
        overrides.push(format!("provider={spec}"));
    }
    RunConfig::load(global.config.as_deref(), &overrides)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = load(&cli.global)?;
    let mut opts = Options::default();
    let single = |stage: Stage, opts: &Options| -> Result<(), CliError> {
        let entries = stages::run_pipeline(&cfg, &[stage], opts)?;
        print_json(&entries);
        Ok(())
    };
    match cli.command {
        Command::Ingest => single(Stage::Ingest, &opts),
        Command::Stats => single(Stage::Stats, &opts),
        Command::Chunk => single(Stage::Chunk, &opts),
        Command::Mask => single(Stage::Mask, &opts),
        Command::Generate { dry_run: true } => {
            print_json(&stages::dry_run(&cfg, &[Stage::Generate], &opts)?);
            Ok(())
        }
        Command::Generate { dry_run: false } => single(Stage::Generate, &opts),
        Command::Unmask => single(Stage::Unmask, &opts),
        Command::Complexity => single(Stage::Complexity, &opts),
        Command::Painpoints => single(Stage::Painpoints, &opts),
        Command::Score => single(Stage::Score, &opts),
        Command::Assign => single(Stage::Assign, &opts),
        Command::Serve { addr, static_dir } => {
            cfg.validate()?;
            stages::serve(&cfg, &ServeArgs { addr, static_dir })
        }
        Command::Correlate { ratings } => {
            opts.ratings = ratings.map(|r| absolute(&r)).transpose()?;
            // Ratings arrive from outside the pipeline, so always recompute.
            opts.force = true;
            single(Stage::Correlate, &opts)
        }
        Command::Report => single(Stage::Report, &opts),
        Command::Run {
            stages: names,
            dry_run,
            force,
        } => {
            let requested: Vec<Stage> = if names.is_empty() {
                Stage::ALL.to_vec()
            } else {
                names
                    .iter()
                    .map(|s| s.trim().parse())
                    .collect::<Result<_, _>>()?
            };
            opts.force = force;
            if dry_run {
                print_json(&stages::dry_run(&cfg, &requested, &opts)?);
                return Ok(());
            }
            let entries = stages::run_pipeline(&cfg, &requested, &opts)?;
            print_json(&entries);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global.log_level);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(code = e.exit_code(), "{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
