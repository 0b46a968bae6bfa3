//! Plain-text reports over one or more run records.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ledger::{format_ratio_pct, render_grid, LedgerError, TokenTable};
use crate::pipeline::RunRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("run `{run}` and baseline `{baseline}` do not cover the same tasks of `{benchmark}`")]
    BenchmarkMismatch {
        run: String,
        baseline: String,
        benchmark: String,
    },
    #[error("no `{baseline}` run for benchmark `{benchmark}`")]
    MissingBaseline { baseline: String, benchmark: String },
    #[error("run `{run}` on `{benchmark}` has no pass@{k} score")]
    MissingScore { run: String, benchmark: String, k: u64 },
    #[error("no `{method}` run for benchmark `{benchmark}`")]
    MissingCell { method: String, benchmark: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn task_ids(r: &RunRecord) -> BTreeSet<&str> {
    r.tasks.iter().map(|t| t.task_id.as_str()).collect()
}

/// Benchmarks in order of first appearance.
fn benchmarks(runs: &[RunRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in runs {
        if !out.contains(&r.benchmark) {
            out.push(r.benchmark.clone());
        }
    }
    out
}

fn methods(runs: &[RunRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in runs {
        if !out.contains(&r.settings.name) {
            out.push(r.settings.name.clone());
        }
    }
    out
}

fn find<'a>(runs: &'a [RunRecord], method: &str, benchmark: &str) -> Option<&'a RunRecord> {
    runs.iter()
        .find(|r| r.settings.name == method && r.benchmark == benchmark)
}

/// `(x - b) / b` as a signed percentage with two decimals.
pub fn relative_delta(x: f64, b: f64) -> String {
    if b == 0.0 {
        return "n/a".to_string();
    }
    let d = (x - b) / b * 100.0;
    // Avoid printing -0.00%.
    let d = if d.abs() < 0.005 { 0.0 } else { d };
    format!("{}{d:.2}%", if d >= 0.0 { "+" } else { "" })
}

/// Pass@k table: methods as rows, benchmarks as columns, each cell the score
/// in percent with its relative change against `baseline` in parentheses.
pub fn pass_table(runs: &[RunRecord], k: u64, baseline: Option<&str>) -> Result<String, ReportError> {
    let benches = benchmarks(runs);
    let mut header = vec![format!("pass@{k}")];
    header.extend(benches.iter().cloned());
    let mut rows = Vec::new();
    for method in methods(runs) {
        let mut row = vec![method.clone()];
        for bench in &benches {
            let Some(run) = find(runs, &method, bench) else {
                row.push("-".into());
                continue;
            };
            let score = run.score(k).ok_or_else(|| ReportError::MissingScore {
                run: method.clone(),
                benchmark: bench.clone(),
                k,
            })?;
            let mut cell = format!("{:.2}", score.mean * 100.0);
            if let Some(base_name) = baseline.filter(|b| *b != method) {
                let base = find(runs, base_name, bench).ok_or_else(|| ReportError::MissingBaseline {
                    baseline: base_name.to_string(),
                    benchmark: bench.clone(),
                })?;
                if task_ids(base) != task_ids(run) {
                    return Err(ReportError::BenchmarkMismatch {
                        run: method.clone(),
                        baseline: base_name.to_string(),
                        benchmark: bench.clone(),
                    });
                }
                let b = base.score(k).ok_or_else(|| ReportError::MissingScore {
                    run: base_name.to_string(),
                    benchmark: bench.clone(),
                    k,
                })?;
                cell.push_str(&format!(" ({})", relative_delta(score.mean, b.mean)));
            } else if baseline == Some(method.as_str()) {
                cell.push_str(&format!(" ({})", relative_delta(score.mean, score.mean)));
            }
            row.push(cell);
        }
        rows.push(row);
    }
    Ok(render_grid(&header, &rows))
}

/// Token table: every run other than `routed` is a baseline row; the routed
/// run's routing tokens form the `RT` row and its totals include them.
pub fn token_table(runs: &[RunRecord], routed: &str) -> Result<TokenTable, ReportError> {
    let benches = benchmarks(runs);
    let mut table = TokenTable::new(benches.clone());
    let column = |method: &str, f: &dyn Fn(&RunRecord) -> u64| -> Result<Vec<u64>, ReportError> {
        benches
            .iter()
            .map(|b| {
                find(runs, method, b).map(f).ok_or_else(|| ReportError::MissingCell {
                    method: method.to_string(),
                    benchmark: b.clone(),
                })
            })
            .collect()
    };
    for method in methods(runs) {
        if method == routed {
            continue;
        }
        table.baselines.push((method.clone(), column(&method, &|r| r.totals.total)?));
    }
    if methods(runs).iter().any(|m| m == routed) {
        table.routing = Some(column(routed, &|r| r.totals.routing_total)?);
        table.routed = Some((routed.to_string(), column(routed, &|r| r.totals.total)?));
    }
    Ok(table)
}

/// One line per routed run: `name on bench: 275 Simple / 152 Complex (64.40% / 35.60%)`.
pub fn routing_distribution(runs: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in runs {
        if let Some(s) = &r.routing {
            out.push_str(&format!("{} on {}: {}\n", r.settings.name, r.benchmark, s.distribution()));
        }
    }
    out
}

/// The full report: pass table (when scores exist), token table and
/// routing distribution.
pub fn render(runs: &[RunRecord], k: u64, baseline: Option<&str>, routed: Option<&str>) -> Result<String, ReportError> {
    let mut out = String::new();
    if runs.iter().any(|r| !r.scores.is_empty()) {
        out.push_str(&pass_table(runs, k, baseline)?);
        out.push('\n');
    }
    let routed = routed.or_else(|| runs.iter().find(|r| r.routing.is_some()).map(|r| r.settings.name.as_str()));
    out.push_str(&token_table(runs, routed.unwrap_or(""))?.render()?);
    let dist = routing_distribution(runs);
    if !dist.is_empty() {
        out.push('\n');
        out.push_str(&dist);
    }
    for r in runs.iter().filter(|r| r.failures > 0) {
        out.push_str(&format!(
            "\n{} on {}: {} of {} tasks failed ({})\n",
            r.settings.name,
            r.benchmark,
            r.failures,
            r.tasks.len(),
            format_ratio_pct(r.failures as i64, r.tasks.len() as i64)
        ));
    }
    Ok(out)
}
