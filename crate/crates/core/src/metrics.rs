//! Post-hoc analysis of run records: loss-curve efficiency measures, mixture
//! diagnostics and a win-rate comparator over score tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::mixture::{entropy, n_eff};
use crate::trainer::{BudgetedRunRecord, Method};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("zero denominator in AUC ratio")]
    ZeroDenominator,
    #[error("curve ends at {last} tokens, before half the budget ({half})")]
    CurveTooShort { last: f64, half: f64 },
    #[error("invalid score table: {0}")]
    InvalidTable(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("record has no mixture snapshots")]
    NoSnapshots,
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for MetricsError {
    fn from(e: csv::Error) -> Self {
        MetricsError::Csv(e.to_string())
    }
}

/// `(tokens, loss)` pairs with strictly increasing tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    points: Vec<(f64, f64)>,
}

impl LossCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        if points.len() < 2 {
            return Err(MetricsError::InvalidCurve(format!(
                "{} points, need at least 2",
                points.len()
            )));
        }
        if points.iter().any(|(t, l)| !t.is_finite() || !l.is_finite()) {
            return Err(MetricsError::InvalidCurve("non-finite entry".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(MetricsError::InvalidCurve(format!(
                "tokens not strictly increasing at {} -> {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { points })
    }

    /// Mean validation loss against tokens.
    pub fn from_record(record: &BudgetedRunRecord) -> Result<Self, MetricsError> {
        Self::new(
            record
                .points
                .iter()
                .map(|p| (p.tokens as f64, p.mean_val_loss))
                .collect(),
        )
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Trapezoidal area divided by the token span.
pub fn auc(curve: &LossCurve) -> f64 {
    let p = &curve.points;
    let area: f64 = p.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    area / (p[p.len() - 1].0 - p[0].0)
}

/// `auc(sft) / auc(aft)`; above 1 means the adaptive run is more efficient.
pub fn auc_ratio(sft: &LossCurve, aft: &LossCurve) -> Result<f64, MetricsError> {
    let denom = auc(aft);
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(auc(sft) / denom)
}

/// First logged tokens value whose loss is at or below `threshold`.
pub fn tokens_to_match(aft: &LossCurve, threshold: f64) -> Option<f64> {
    aft.points.iter().find(|(_, l)| *l <= threshold).map(|(t, _)| *t)
}

pub fn best_loss(curve: &LossCurve) -> f64 {
    curve.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
}

/// Loss at the last logged point with tokens ≤ B/2.
pub fn mid_budget_loss(curve: &LossCurve, budget: f64) -> Result<f64, MetricsError> {
    let half = budget / 2.0;
    let last = curve.points[curve.points.len() - 1].0;
    if last < half {
        return Err(MetricsError::CurveTooShort { last, half });
    }
    curve
        .points
        .iter()
        .rev()
        .find(|(t, _)| *t <= half)
        .map(|p| p.1)
        .ok_or_else(|| MetricsError::InvalidCurve(format!("no point at or before {half} tokens")))
}

/// Method × benchmark scores, higher is better.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    methods: Vec<String>,
    benchmarks: Vec<String>,
    scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(methods: Vec<String>, benchmarks: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        if methods.is_empty() || benchmarks.is_empty() {
            return Err(MetricsError::InvalidTable(
                "need at least one method and one benchmark".into(),
            ));
        }
        if scores.len() != methods.len() || scores.iter().any(|r| r.len() != benchmarks.len()) {
            return Err(MetricsError::InvalidTable("table is not rectangular".into()));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(MetricsError::InvalidTable("missing or non-finite score".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = methods.iter().find(|m| !seen.insert(*m)) {
            return Err(MetricsError::InvalidTable(format!("duplicate method {dup:?}")));
        }
        Ok(Self {
            methods,
            benchmarks,
            scores,
        })
    }

    /// CSV with a `method` column followed by one column per benchmark.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(MetricsError::InvalidTable(
                "need a method column and at least one benchmark".into(),
            ));
        }
        let benchmarks = headers.iter().skip(1).map(str::to_string).collect();
        let (mut methods, mut scores) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            methods.push(rec[0].to_string());
            let values = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| MetricsError::InvalidTable(format!("row {}: bad score {s:?}", row + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            scores.push(values);
        }
        Self::new(methods, benchmarks, scores)
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn benchmarks(&self) -> &[String] {
        &self.benchmarks
    }

    fn row(&self, method: &str) -> Result<&[f64], MetricsError> {
        self.methods
            .iter()
            .position(|m| m == method)
            .map(|i| self.scores[i].as_slice())
            .ok_or_else(|| MetricsError::UnknownMethod(method.to_string()))
    }
}

/// Fraction of benchmarks where `a` matches or exceeds `b`.
pub fn win_rate(table: &ScoreTable, a: &str, b: &str) -> Result<f64, MetricsError> {
    let (ra, rb) = (table.row(a)?, table.row(b)?);
    Ok(ra.iter().zip(rb).filter(|(x, y)| x >= y).count() as f64 / ra.len() as f64)
}

/// Fraction of benchmarks where `a` strictly exceeds `b`.
pub fn win_rate_strict(table: &ScoreTable, a: &str, b: &str) -> Result<f64, MetricsError> {
    let (ra, rb) = (table.row(a)?, table.row(b)?);
    Ok(ra.iter().zip(rb).filter(|(x, y)| x > y).count() as f64 / ra.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WinRateRow {
    pub method_a: String,
    pub method_b: String,
    pub benchmarks: usize,
    pub win_rate: f64,
    pub win_rate_strict: f64,
}

/// Every ordered pair of distinct methods.
pub fn win_rate_rows(table: &ScoreTable) -> Vec<WinRateRow> {
    let mut rows = Vec::new();
    for a in &table.methods {
        for b in table.methods.iter().filter(|b| *b != a) {
            rows.push(WinRateRow {
                method_a: a.clone(),
                method_b: b.clone(),
                benchmarks: table.benchmarks.len(),
                win_rate: win_rate(table, a, b).expect("known methods"),
                win_rate_strict: win_rate_strict(table, a, b).expect("known methods"),
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskTrajectory {
    pub task: usize,
    pub task_id: String,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSummary {
    pub final_n_eff: f64,
    pub final_entropy: f64,
    pub tokens: Vec<usize>,
    /// Highest final-p tasks first.
    pub top: Vec<TaskTrajectory>,
}

pub const DEFAULT_TOP_K: usize = 10;

/// Final `N_eff` and `H`, recomputed from the last snapshot, plus the
/// trajectories of the `k` tasks with the highest final weight.
pub fn mixture_summary(record: &BudgetedRunRecord, k: usize) -> Result<MixtureSummary, MetricsError> {
    let last = record.points.last().ok_or(MetricsError::NoSnapshots)?;
    let mut order: Vec<usize> = (0..last.p.len()).collect();
    // stable: ties keep task order
    order.sort_by(|&a, &b| last.p[b].total_cmp(&last.p[a]));
    let top = order
        .into_iter()
        .take(k)
        .map(|i| TaskTrajectory {
            task: i,
            task_id: record
                .header
                .task_ids
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("task{i}")),
            p: record.points.iter().map(|pt| pt.p[i]).collect(),
        })
        .collect();
    Ok(MixtureSummary {
        final_n_eff: n_eff(&last.p),
        final_entropy: entropy(&last.p),
        tokens: record.points.iter().map(|pt| pt.tokens).collect(),
        top,
    })
}

/// One row of the analysis summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub suite: String,
    pub method: Method,
    pub budget: usize,
    pub budget_fraction: Option<f64>,
    pub seed: u64,
    pub total_tokens: usize,
    pub final_mean_val_loss: f64,
    pub auc: f64,
    /// `auc(best SFT) / auc(this run)`, best meaning lowest AUC.
    pub auc_ratio_vs_best_sft: Option<f64>,
    /// Against the best loss of either baseline; adaptive runs only.
    pub tokens_to_match: Option<usize>,
    pub mid_budget_loss: Option<f64>,
    pub final_n_eff: f64,
    pub final_entropy: f64,
}

/// One bar of the tokens-to-match chart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchRow {
    pub suite: String,
    pub budget: usize,
    pub seed: u64,
    pub run_id: String,
    /// `best_sft`, `sft_uniform` or `sft_proportional`.
    pub threshold_source: String,
    pub threshold: f64,
    pub tokens_to_match: Option<usize>,
    pub fraction_of_budget: Option<f64>,
}

type GroupKey = (String, usize, u64);

fn group(records: &[BudgetedRunRecord]) -> BTreeMap<GroupKey, Vec<&BudgetedRunRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&BudgetedRunRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.header.suite.clone(),
            r.header.config.budget_tokens,
            r.header.config.seed,
        );
        groups.entry(key).or_default().push(r);
    }
    groups
}

/// Summaries for every record; comparisons only within the same
/// (suite, budget, seed) group.
pub fn summarize(records: &[BudgetedRunRecord]) -> Result<(Vec<RunSummary>, Vec<MatchRow>), MetricsError> {
    let mut rows = Vec::new();
    let mut matches = Vec::new();
    for ((suite, budget, seed), members) in group(records) {
        let curves = members
            .iter()
            .map(|r| LossCurve::from_record(r))
            .collect::<Result<Vec<_>, _>>()?;
        let sft: Vec<(Method, &LossCurve)> = members
            .iter()
            .zip(&curves)
            .filter(|(r, _)| r.header.config.method.is_sft())
            .map(|(r, c)| (r.header.config.method, c))
            .collect();
        let best_sft_auc = sft
            .iter()
            .map(|(_, c)| auc(c))
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.min(a))));
        let best_sft_loss = sft
            .iter()
            .map(|(_, c)| best_loss(c))
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.min(a))));

        for (r, curve) in members.iter().zip(&curves) {
            let method = r.header.config.method;
            let last = r.last_point();
            let a = auc(curve);
            let ttm = match (method, best_sft_loss) {
                (Method::Adapt, Some(th)) => tokens_to_match(curve, th).map(|t| t as usize),
                _ => None,
            };
            if method == Method::Adapt {
                let mut sources: Vec<(String, f64)> = best_sft_loss
                    .map(|th| ("best_sft".to_string(), th))
                    .into_iter()
                    .collect();
                sources.extend(sft.iter().map(|(m, c)| (m.to_string(), best_loss(c))));
                for (source, threshold) in sources {
                    let t = tokens_to_match(curve, threshold).map(|t| t as usize);
                    matches.push(MatchRow {
                        suite: suite.clone(),
                        budget,
                        seed,
                        run_id: r.header.run_id.clone(),
                        threshold_source: source,
                        threshold,
                        tokens_to_match: t,
                        fraction_of_budget: t.map(|t| t as f64 / budget as f64),
                    });
                }
            }
            rows.push(RunSummary {
                run_id: r.header.run_id.clone(),
                suite: suite.clone(),
                method,
                budget,
                budget_fraction: r.header.budget_fraction,
                seed,
                total_tokens: r.header.total_tokens,
                final_mean_val_loss: last.mean_val_loss,
                auc: a,
                auc_ratio_vs_best_sft: best_sft_auc.filter(|_| a != 0.0).map(|b| b / a),
                tokens_to_match: ttm,
                mid_budget_loss: mid_budget_loss(curve, budget as f64).ok(),
                final_n_eff: n_eff(&last.p),
                final_entropy: entropy(&last.p),
            });
        }
    }
    Ok((rows, matches))
}

/// Columns: run_id, method, budget, auc, auc_ratio_vs_best_sft,
/// tokens_to_match, mid_budget_loss, final_n_eff, final_entropy.
pub fn write_summary_csv<W: Write>(rows: &[RunSummary], out: W) -> Result<(), MetricsError> {
    #[derive(Serialize)]
    struct Row {
        run_id: String,
        method: Method,
        budget: usize,
        auc: f64,
        auc_ratio_vs_best_sft: Option<f64>,
        tokens_to_match: Option<usize>,
        mid_budget_loss: Option<f64>,
        final_n_eff: f64,
        final_entropy: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(Row {
            run_id: format!("{}/{}", r.suite, r.run_id),
            method: r.method,
            budget: r.budget,
            auc: r.auc,
            auc_ratio_vs_best_sft: r.auc_ratio_vs_best_sft,
            tokens_to_match: r.tokens_to_match,
            mid_budget_loss: r.mid_budget_loss,
            final_n_eff: r.final_n_eff,
            final_entropy: r.final_entropy,
        })?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_rows_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(())
}
