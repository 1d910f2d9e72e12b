//! Command-line stages. Each stage reads and writes files in the output
//! directory so that human ratings can replace simulated ones between
//! `audit` and `analyze`.
//!
//! | file            | written by | content                                   |
//! |-----------------|------------|-------------------------------------------|
//! | `config.toml`   | every stage| effective configuration                   |
//! | `catalog.tsv`   | generate   | synthetic catalog                         |
//! | `audit.tsv`     | audit      | one step record per line                  |
//! | `sample.tsv`    | analyze    | annotation sample (walk, step, video)     |
//! | `ratings.csv`   | analyze    | simulated ratings (unless imported)       |
//! | `report.txt`    | analyze    | human-readable report                     |
//! | `report.jsonl`  | analyze    | machine-readable report                   |
//! | `boxplot.tsv`   | analyze    | per-step five-number summaries            |
//!
//! Exit status: 0 on success, [`EXIT_VALIDATION`] when configuration or
//! input files are invalid, [`EXIT_RUNTIME`] when a stage fails while running.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::annotation::{load_ratings, simulate_ratings, write_ratings, AnnotationError, RatingRecord};
use crate::auditor::{run_audit, select_for_annotation, AnnotationSample, AuditLogError, AuditRun};
use crate::catalog::{generate_catalog, Catalog, CatalogError};
use crate::config::{ConfigError, RunConfig};
use crate::platform::PlatformSim;
use crate::provenance::Provenance;
use crate::report::{build_report, parse_jsonl, render_boxplot_tsv, render_jsonl, render_text, ReportError, ReportHeader};
use crate::rng::RandomStream;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const CATALOG_FILE: &str = "catalog.tsv";
pub const AUDIT_FILE: &str = "audit.tsv";
pub const SAMPLE_FILE: &str = "sample.tsv";
pub const RATINGS_FILE: &str = "ratings.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSONL_FILE: &str = "report.jsonl";
pub const BOXPLOT_FILE: &str = "boxplot.tsv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "walkaudit", version, about = "Random-walk audits of a simulated recommender")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of random walks (overrides `audit.n_walks`).
    #[arg(long, global = true)]
    pub walks: Option<usize>,
    /// Worker threads for the audit; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic catalog.
    Generate,
    /// Run the random walks against the simulated platform.
    Audit,
    /// Select the annotation sample, obtain ratings and write the report.
    Analyze,
    /// Render a machine-readable report (or fixture) as text on stdout.
    Report {
        /// Defaults to `report.jsonl` in the output directory.
        input: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid input {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input { .. } => EXIT_VALIDATION,
            CliError::Runtime(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn input_err(path: &Path, message: impl ToString) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Effective configuration: file (or defaults), then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    if let Some(w) = cli.walks {
        config.audit.n_walks = w;
    }
    if let Some(o) = &cli.out {
        config.output_dir = o.clone();
    }
    if cli.threads == Some(0) {
        return Err(ConfigError::Invalid {
            key: "--threads".into(),
            reason: "must be at least 1".into(),
        }
        .into());
    }
    config.validate()?;
    Ok(config)
}

pub fn provenance(config: &RunConfig) -> Provenance {
    Provenance::new(config.config_hash(), config.master_seed)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(io_err(path))
}

fn prepare_out(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let echo = format!(
        "{}\n{}",
        provenance(config).header_line("config"),
        config.to_toml()
    );
    write_file(&dir.join(CONFIG_ECHO_FILE), &echo)?;
    Ok(dir)
}

pub fn cmd_generate(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_out(config)?;
    let catalog = generate_catalog(&config.catalog, config.master_seed).map_err(|e| match e {
        CatalogError::InvalidConfig { key, reason } => ConfigError::Invalid { key, reason }.into(),
        other => CliError::Runtime(other.to_string()),
    })?;
    let path = dir.join(CATALOG_FILE);
    let prov = provenance(config).with("n_videos", catalog.videos().len());
    let mut out = create(&path)?;
    catalog.write_to(&mut out, &prov).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(path)
}

pub fn load_catalog(path: &Path) -> Result<(Catalog, Provenance), CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Catalog::read_from(BufReader::new(file)).map_err(|e| match e {
        CatalogError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => input_err(path, other),
    })
}

pub fn load_audit(path: &Path) -> Result<(AuditRun, Provenance), CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    AuditRun::read_from(BufReader::new(file)).map_err(|e| match e {
        AuditLogError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => input_err(path, other),
    })
}

pub fn cmd_audit(config: &RunConfig, threads: Option<usize>) -> Result<PathBuf, CliError> {
    let dir = prepare_out(config)?;
    let (catalog, catalog_prov) = load_catalog(&dir.join(CATALOG_FILE))?;
    let topics: Vec<_> = catalog.topics().iter().map(|t| t.id).collect();
    // Walks see the platform as it was before any deletions.
    let sim = PlatformSim::new(catalog.as_of_walk_time(), config.policy.clone())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let audit = run_audit(
        &sim,
        &topics,
        config.audit.n_walks,
        config.master_seed,
        &config.audit.walk,
        threads,
    )
    .map_err(|e| CliError::Runtime(format!("audit aborted: {e}")))?;
    let path = dir.join(AUDIT_FILE);
    let prov = provenance(config).with("catalog_hash", &catalog_prov.config_hash);
    let mut out = create(&path)?;
    audit.write_to(&mut out, &prov).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(path)
}

fn write_sample(sample: &AnnotationSample, prov: &Provenance, path: &Path) -> Result<(), CliError> {
    let mut text = prov.header_line("sample");
    text.push_str("\n#walk_id\ttopic\tstep_index\tvideo_id\tdeleted\n");
    for s in &sample.slots {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.walk_id, s.topic.0, s.step_index, s.video_id, s.deleted as u8
        ));
    }
    write_file(path, &text)
}

/// Every imported rating must point at a step that exists in the audit.
fn check_ratings(audit: &AuditRun, ratings: &[RatingRecord], path: &Path) -> Result<(), CliError> {
    for (i, r) in ratings.iter().enumerate() {
        let step = audit.walk(r.walk_id).and_then(|w| w.step(r.step_index));
        match step {
            Some(s) if s.video_id == r.video_id => {}
            Some(s) => {
                return Err(input_err(
                    path,
                    format!(
                        "record {}: walk {} step {} is video {}, not {}",
                        i + 1,
                        r.walk_id,
                        r.step_index,
                        s.video_id,
                        r.video_id
                    ),
                ))
            }
            None => {
                return Err(input_err(
                    path,
                    format!(
                        "record {}: walk {} step {} is not in the audit log",
                        i + 1,
                        r.walk_id,
                        r.step_index
                    ),
                ))
            }
        }
    }
    Ok(())
}

fn annotation_err(path: &Path, e: AnnotationError) -> CliError {
    match e {
        AnnotationError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => input_err(path, other),
    }
}

pub fn cmd_analyze(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_out(config)?;
    let (audit, _) = load_audit(&dir.join(AUDIT_FILE))?;
    let prov = provenance(config);

    let ratings = match &config.annotation.ratings_path {
        Some(path) => {
            let ratings = load_ratings(path).map_err(|e| annotation_err(path, e))?;
            check_ratings(&audit, &ratings, path)?;
            ratings
        }
        None => {
            let (catalog, _) = load_catalog(&dir.join(CATALOG_FILE))?;
            let mut stream = RandomStream::derive(config.master_seed, "annotation-sample", 0, 0);
            let sample = select_for_annotation(&audit, &config.annotation.design, &catalog, &mut stream)
                .map_err(|e| CliError::Runtime(format!("annotation sample: {e}")))?;
            write_sample(&sample, &prov, &dir.join(SAMPLE_FILE))?;
            let mut stream = RandomStream::derive(config.master_seed, "ratings", 0, 0);
            let ratings = simulate_ratings(&sample, &catalog, &config.annotation.raters, &mut stream)
                .map_err(|e| CliError::Runtime(format!("simulated ratings: {e}")))?;
            let path = dir.join(RATINGS_FILE);
            let mut out = create(&path)?;
            write_ratings(&ratings, &mut out, Some(&prov)).map_err(|e| annotation_err(&path, e))?;
            out.flush().map_err(io_err(&path))?;
            ratings
        }
    };

    let header = ReportHeader {
        tool_version: prov.tool_version.clone(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        alpha_level: config.alpha_level,
        source: "audit".into(),
    };
    let report = build_report(&audit, Some(&ratings), header)
        .map_err(|e| CliError::Runtime(format!("report: {e}")))?;
    write_file(&dir.join(REPORT_TEXT_FILE), &render_text(&report))?;
    write_file(&dir.join(REPORT_JSONL_FILE), &render_jsonl(&report))?;
    let boxplot = format!(
        "{}\n{}",
        prov.header_line("boxplot"),
        render_boxplot_tsv(&report.boxplot_series)
    );
    write_file(&dir.join(BOXPLOT_FILE), &boxplot)?;
    Ok(dir.join(REPORT_TEXT_FILE))
}

/// Parse a machine-readable report and render it as text.
pub fn cmd_report(input: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(input).map_err(io_err(input))?;
    let report = parse_jsonl(&text).map_err(|e: ReportError| input_err(input, e))?;
    Ok(render_text(&report))
}

/// Run a parsed command line; returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Report { input } => {
            let input = match input {
                Some(p) => p.clone(),
                None => resolve_config(cli)?.output_dir.join(REPORT_JSONL_FILE),
            };
            cmd_report(&input)
        }
        command => {
            let config = resolve_config(cli)?;
            let written = match command {
                Command::Generate => cmd_generate(&config)?,
                Command::Audit => cmd_audit(&config, cli.threads)?,
                Command::Analyze => cmd_analyze(&config)?,
                Command::Report { .. } => unreachable!(),
            };
            Ok(format!("wrote {}\n", written.display()))
        }
    }
}
