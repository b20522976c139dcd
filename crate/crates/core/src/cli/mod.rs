//! Command-line front end: `run`, `report` and `ablate-entropy`.

mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{ExperimentConfig, ManifestSource, Overrides, Suite, SuiteSource, SCHEMA_VERSION, SEED_ENV};

use crate::metrics::{self, mixture_summary, LossCurve, MetricsError, RunSummary, ScoreTable};
use crate::trainer::{BudgetedRunRecord, Method, TrainError};
use svg::{line_chart, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} cells failed")]
    CellsFailed { failed: usize, total: usize },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "adaptmix",
    version,
    about = "Token-budgeted training with meta-learned task mixtures"
)]
pub struct Cli {
    /// Concurrent grid cells (default: one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Tokens between logged curve points.
    #[arg(long, global = true)]
    pub log_interval_tokens: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (budget, method, seed) cell of an experiment config.
    Run { config: PathBuf },
    /// Summaries and figures for a directory of run records.
    Report {
        dir: PathBuf,
        /// Method × benchmark score table for win rates.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = metrics::DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Adaptive runs over a list of entropy weights at one budget and seed.
    AblateEntropy { config: PathBuf },
}

#[derive(Clone, Debug, Default)]
pub struct GlobalOptions {
    pub workers: Option<usize>,
    pub log_interval_tokens: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Parses arguments, executes, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let opts = GlobalOptions {
        workers: cli.workers,
        log_interval_tokens: cli.log_interval_tokens,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config, &opts).map(|o| {
            println!("wrote {} run records and {}", o.records.len(), o.summary.display());
        }),
        Command::Report { dir, scores, top_k } => cmd_report(&dir, scores.as_deref(), top_k, &opts).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::AblateEntropy { config } => cmd_ablate_entropy(&config, &opts).map(|o| {
            println!("wrote {}", o.csv.display());
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn load_config(path: &Path, opts: &GlobalOptions) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(n) = opts.log_interval_tokens {
        cfg.overrides.log_interval_tokens = Some(n);
    }
    let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn write_record(record: &BudgetedRunRecord, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, record.to_jsonl()).map_err(io_err(path))
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    metrics::write_rows_csv(rows, f)?;
    Ok(())
}

fn write_text(text: &str, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// One row of `<out>/summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub suite: String,
    pub method: Method,
    pub budget_fraction: Option<f64>,
    pub seed: u64,
    pub total_tokens: usize,
    pub final_mean_val_loss: f64,
    pub auc: f64,
    pub tokens_to_match: Option<usize>,
    pub mid_budget_loss: Option<f64>,
    pub final_n_eff: f64,
    pub final_entropy: f64,
}

impl From<&RunSummary> for GridRow {
    fn from(r: &RunSummary) -> Self {
        Self {
            suite: r.suite.clone(),
            method: r.method,
            budget_fraction: r.budget_fraction,
            seed: r.seed,
            total_tokens: r.total_tokens,
            final_mean_val_loss: r.final_mean_val_loss,
            auc: r.auc,
            tokens_to_match: r.tokens_to_match,
            mid_budget_loss: r.mid_budget_loss,
            final_n_eff: r.final_n_eff,
            final_entropy: r.final_entropy,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<PathBuf>,
    pub summary: PathBuf,
}

pub fn record_path(out: &Path, suite: &str, fraction: f64, method: Method, seed: u64) -> PathBuf {
    out.join(sanitize(suite))
        .join(format!("{fraction}"))
        .join(format!("{method}-seed{seed}.runlog"))
}

/// Runs the full grid. Failed cells are reported and the rest continue; the
/// result is an error if any cell failed.
pub fn cmd_run(config_path: &Path, opts: &GlobalOptions) -> Result<RunOutcome, CliError> {
    let (cfg, out) = load_config(config_path, opts)?;
    let suite = Suite::build(&cfg)?;
    let mut cells = Vec::new();
    for &fraction in &cfg.budget_fractions {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                cells.push((fraction, method, seed));
            }
        }
    }
    let results: Vec<Result<(PathBuf, BudgetedRunRecord), CliError>> = pool(opts.workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(fraction, method, seed)| {
                let budget = suite.budget(fraction);
                let rc = cfg.run_config(method, budget, seed, suite.name());
                log::info!("start {method} seed {seed} budget {budget}");
                let mut record = suite.run(&rc)?;
                record.header.budget_fraction = Some(fraction);
                let path = record_path(&out, suite.name(), fraction, method, seed);
                write_record(&record, &path)?;
                log::info!("done {} ({} tokens)", path.display(), record.total_tokens());
                Ok((path, record))
            })
            .collect()
    });

    let mut paths = Vec::new();
    let mut records = Vec::new();
    let mut failed = 0;
    for ((fraction, method, seed), r) in cells.iter().zip(results) {
        match r {
            Ok((p, rec)) => {
                paths.push(p);
                records.push(rec);
            }
            Err(e) => {
                failed += 1;
                eprintln!("cell {method} fraction {fraction} seed {seed} failed: {e}");
            }
        }
    }
    let (summaries, _) = metrics::summarize(&records)?;
    let mut rows: Vec<GridRow> = summaries.iter().map(GridRow::from).collect();
    rows.sort_by(|a, b| {
        a.budget_fraction
            .partial_cmp(&b.budget_fraction)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.method.cmp(&b.method))
            .then(a.seed.cmp(&b.seed))
    });
    let summary = out.join("summary.csv");
    write_csv(&rows, &summary)?;
    if failed > 0 {
        return Err(CliError::CellsFailed {
            failed,
            total: cells.len(),
        });
    }
    Ok(RunOutcome {
        records: paths,
        summary,
    })
}

fn find_records(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            find_records(&path, acc)?;
        } else if path.extension().is_some_and(|e| e == "runlog") {
            acc.push(path);
        }
    }
    Ok(())
}

fn budget_label(r: &BudgetedRunRecord) -> String {
    match r.header.budget_fraction {
        Some(f) => format!("{f}"),
        None => format!("{}tok", r.header.config.budget_tokens),
    }
}

/// Writes per-suite summaries and figures; returns the files written.
pub fn cmd_report(
    dir: &Path,
    scores: Option<&Path>,
    top_k: usize,
    opts: &GlobalOptions,
) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    find_records(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .runlog files under {}", dir.display())));
    }
    let records = paths
        .iter()
        .map(|p| BudgetedRunRecord::read_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut by_suite: BTreeMap<String, Vec<BudgetedRunRecord>> = BTreeMap::new();
    for r in records {
        by_suite.entry(r.header.suite.clone()).or_default().push(r);
    }
    if by_suite.len() > 1 {
        eprintln!(
            "records span {} suites ({}); reporting each suite separately",
            by_suite.len(),
            by_suite.keys().cloned().collect::<Vec<_>>().join(", ")
        );
    }
    let root = opts.out.clone().unwrap_or_else(|| dir.to_path_buf()).join("report");
    let mut written = Vec::new();
    for (suite, records) in &by_suite {
        let sdir = root.join(sanitize(suite));
        let (rows, matches) = metrics::summarize(records)?;
        let p = sdir.join("metrics_summary.csv");
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(io_err(d))?;
        }
        metrics::write_summary_csv(&rows, fs::File::create(&p).map_err(io_err(&p))?)?;
        written.push(p);
        let p = sdir.join("tokens_to_match.csv");
        write_csv(&matches, &p)?;
        written.push(p);

        let mut by_budget: BTreeMap<(usize, String), Vec<&BudgetedRunRecord>> = BTreeMap::new();
        for r in records {
            by_budget
                .entry((r.header.config.budget_tokens, budget_label(r)))
                .or_default()
                .push(r);
        }
        for ((budget, label), members) in &by_budget {
            let series = members
                .iter()
                .map(|r| {
                    Ok(Series {
                        label: r.header.run_id.clone(),
                        points: LossCurve::from_record(r)?.points().to_vec(),
                    })
                })
                .collect::<Result<Vec<_>, MetricsError>>()?;
            let svg = line_chart(
                &format!("{suite}: mean validation loss, budget {budget} tokens"),
                "training tokens",
                "mean validation loss",
                &series,
            );
            let p = sdir.join(format!("loss-{}.svg", sanitize(label)));
            write_text(&svg, &p)?;
            written.push(p);
            for r in members.iter().filter(|r| r.header.config.method == Method::Adapt) {
                let m = mixture_summary(r, top_k)?;
                let series: Vec<Series> = m
                    .top
                    .iter()
                    .map(|t| Series {
                        label: t.task_id.clone(),
                        points: m.tokens.iter().zip(&t.p).map(|(&x, &y)| (x as f64, y)).collect(),
                    })
                    .collect();
                let svg = line_chart(
                    &format!(
                        "{}: top-{} task weights (N_eff {:.2})",
                        r.header.run_id,
                        m.top.len(),
                        m.final_n_eff
                    ),
                    "training tokens",
                    "mixture weight p",
                    &series,
                );
                let p = sdir.join(format!(
                    "mixture-{}-{}.svg",
                    sanitize(label),
                    sanitize(&r.header.run_id)
                ));
                write_text(&svg, &p)?;
                written.push(p);
            }
        }
    }
    if let Some(scores) = scores {
        let table = ScoreTable::from_csv(fs::File::open(scores).map_err(io_err(scores))?)?;
        let p = root.join("win_rates.csv");
        write_csv(&metrics::win_rate_rows(&table), &p)?;
        written.push(p);
    }
    Ok(written)
}

/// One row of the entropy-ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub n_eff: f64,
    /// Consumed train tokens as a percentage of the suite's train tokens.
    pub tokens_used_pct: f64,
    pub entropy: f64,
    pub final_mean_val_loss: f64,
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub records: Vec<PathBuf>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Adaptive runs at the first budget fraction and first seed, one per λ.
pub fn cmd_ablate_entropy(config_path: &Path, opts: &GlobalOptions) -> Result<AblationOutcome, CliError> {
    let (cfg, out) = load_config(config_path, opts)?;
    if cfg.entropy_weights.is_empty() {
        return Err(CliError::Config {
            pointer: "/entropy_weights".into(),
            message: "at least one entropy weight is required".into(),
        });
    }
    let suite = Suite::build(&cfg)?;
    let fraction = cfg.budget_fractions[0];
    let seed = cfg.seeds[0];
    let budget = suite.budget(fraction);
    let dir = out.join(sanitize(suite.name())).join("ablate-entropy");
    let results: Vec<Result<BudgetedRunRecord, CliError>> = pool(opts.workers)?.install(|| {
        cfg.entropy_weights
            .par_iter()
            .map(|&lambda| {
                let mut rc = cfg.run_config(Method::Adapt, budget, seed, suite.name());
                rc.meta.entropy_weight = lambda;
                let mut r = suite.run(&rc)?;
                r.header.budget_fraction = Some(fraction);
                r.header.run_id = format!("adapt-lambda{lambda}-seed{seed}");
                Ok(r)
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let total = suite.total_train_tokens() as f64;
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    let mut series = Vec::new();
    for (i, (r, &lambda)) in records.iter().zip(&cfg.entropy_weights).enumerate() {
        let p = dir.join(format!("lambda{i}-{lambda}.runlog"));
        write_record(r, &p)?;
        paths.push(p);
        let m = mixture_summary(r, 1)?;
        rows.push(AblationRow {
            lambda,
            n_eff: m.final_n_eff,
            tokens_used_pct: 100.0 * r.total_tokens() as f64 / total,
            entropy: m.final_entropy,
            final_mean_val_loss: r.last_point().mean_val_loss,
        });
        series.push(Series {
            label: format!("λ = {lambda}"),
            points: LossCurve::from_record(r)?.points().to_vec(),
        });
    }
    let csv = dir.join("entropy_ablation.csv");
    write_csv(&rows, &csv)?;
    let svg = dir.join("validation_loss.svg");
    write_text(
        &line_chart(
            &format!("{}: entropy weight ablation", suite.name()),
            "training tokens",
            "mean validation loss",
            &series,
        ),
        &svg,
    )?;
    Ok(AblationOutcome {
        rows,
        records: paths,
        csv,
        svg,
    })
}
