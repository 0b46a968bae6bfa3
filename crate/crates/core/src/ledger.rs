//! Token accounting.
//!
//! Per task, input cost is every prompt sent to the generator and output cost
//! is every completion received back:
//!
//! * direct: one few-shot prompt in, `n` programs out;
//! * ICoT: one stage-1 prompt plus `n` stage-2 prompts in, `n` traces plus
//!   `n` programs out.
//!
//! Classifier tokens never enter a task's `c_in`/`c_out`; they are kept in a
//! separate routing bucket and added to run totals. Everything is integer
//! arithmetic; percentages are rounded only when formatted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::router::Strategy;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transcript for task `{task_id}` does not match a {strategy} route: {reason}")]
    ShapeMismatch {
        task_id: String,
        strategy: Strategy,
        reason: String,
    },
    #[error("baseline total must be positive")]
    NonPositiveBaseline,
    #[error("no entries to average")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    RoutingPrompt,
    RoutingReply,
    DirectPrompt,
    DirectCode,
    IcotStage1Prompt,
    IcotTrace,
    IcotStage2Prompt,
    IcotCode,
}

impl Stage {
    pub fn is_routing(self) -> bool {
        matches!(self, Stage::RoutingPrompt | Stage::RoutingReply)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub stage: Stage,
    pub tokens: u64,
    pub task_id: String,
    pub call_ordinal: u32,
}

impl TokenRecord {
    pub fn new(stage: Stage, tokens: u64, task_id: &str, call_ordinal: u32) -> Self {
        Self {
            stage,
            tokens,
            task_id: task_id.to_string(),
            call_ordinal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCost {
    pub task_id: String,
    /// `None` for routing-only tasks.
    pub route: Option<Strategy>,
    pub c_in: u64,
    pub c_out: u64,
    /// `c_in + c_out`; routing tokens are not included.
    pub total: u64,
    pub routing_tokens: u64,
}

impl TaskCost {
    pub fn routing_only(task_id: &str, transcript: &[TokenRecord]) -> Self {
        Self {
            task_id: task_id.to_string(),
            route: None,
            c_in: 0,
            c_out: 0,
            total: 0,
            routing_tokens: routing_sum(transcript),
        }
    }
}

fn routing_sum(transcript: &[TokenRecord]) -> u64 {
    transcript
        .iter()
        .filter(|r| r.stage.is_routing())
        .map(|r| r.tokens)
        .sum()
}

/// Computes a task's cost from its transcript, checking that the transcript
/// has exactly the shape the route implies.
pub fn task_cost(
    task_id: &str,
    transcript: &[TokenRecord],
    route: Strategy,
) -> Result<TaskCost, LedgerError> {
    let mismatch = |reason: String| LedgerError::ShapeMismatch {
        task_id: task_id.to_string(),
        strategy: route,
        reason,
    };
    let gen: Vec<&TokenRecord> = transcript.iter().filter(|r| !r.stage.is_routing()).collect();
    let count = |s: Stage| gen.iter().filter(|r| r.stage == s).count();
    let sum = |s: Stage| -> u64 { gen.iter().filter(|r| r.stage == s).map(|r| r.tokens).sum() };

    let (c_in, c_out) = match route {
        Strategy::Direct => {
            let prompts = count(Stage::DirectPrompt);
            let codes = count(Stage::DirectCode);
            if prompts != 1 {
                return Err(mismatch(format!("expected 1 direct prompt, found {prompts}")));
            }
            if codes == 0 {
                return Err(mismatch("no direct code records".into()));
            }
            if prompts + codes != gen.len() {
                return Err(mismatch("ICoT records in a direct transcript".into()));
            }
            (sum(Stage::DirectPrompt), sum(Stage::DirectCode))
        }
        Strategy::Icot => {
            let stage1 = count(Stage::IcotStage1Prompt);
            let traces = count(Stage::IcotTrace);
            let stage2 = count(Stage::IcotStage2Prompt);
            let codes = count(Stage::IcotCode);
            if stage1 != 1 {
                return Err(mismatch(format!("expected 1 stage-1 prompt, found {stage1}")));
            }
            if traces == 0 || traces != stage2 || traces != codes {
                return Err(mismatch(format!(
                    "expected equal non-zero counts of traces, stage-2 prompts and codes; \
                     found {traces}, {stage2}, {codes}"
                )));
            }
            if 1 + traces * 3 != gen.len() {
                return Err(mismatch("direct records in an ICoT transcript".into()));
            }
            (
                sum(Stage::IcotStage1Prompt) + sum(Stage::IcotStage2Prompt),
                sum(Stage::IcotTrace) + sum(Stage::IcotCode),
            )
        }
    };

    Ok(TaskCost {
        task_id: task_id.to_string(),
        route: Some(route),
        c_in,
        c_out,
        total: c_in + c_out,
        routing_tokens: routing_sum(transcript),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub c_in: u64,
    pub c_out: u64,
    pub routing_total: u64,
    /// Inference plus routing tokens.
    pub total: u64,
}

impl std::ops::Add for RunTotals {
    type Output = RunTotals;

    fn add(self, rhs: RunTotals) -> RunTotals {
        RunTotals {
            c_in: self.c_in + rhs.c_in,
            c_out: self.c_out + rhs.c_out,
            routing_total: self.routing_total + rhs.routing_total,
            total: self.total + rhs.total,
        }
    }
}

pub fn run_totals<'a>(costs: impl IntoIterator<Item = &'a TaskCost>) -> RunTotals {
    costs
        .into_iter()
        .map(|c| RunTotals {
            c_in: c.c_in,
            c_out: c.c_out,
            routing_total: c.routing_tokens,
            total: c.total + c.routing_tokens,
        })
        .fold(RunTotals::default(), |a, b| a + b)
}

/// Token savings of a routed run against a baseline.
///
/// For an average over several benchmarks the fields hold sums and
/// `entries` holds the count, so `mean_abs` and `pct` stay exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub benchmark: String,
    pub baseline_name: String,
    pub baseline_total: u64,
    pub routed_total: u64,
    pub reduction_abs: i64,
    pub entries: u32,
}

impl ReductionReport {
    /// Reduction as a fraction of the baseline.
    pub fn pct(&self) -> f64 {
        self.reduction_abs as f64 / self.baseline_total as f64
    }

    pub fn mean_abs(&self) -> f64 {
        self.reduction_abs as f64 / self.entries as f64
    }

    /// Mean absolute reduction rounded half away from zero.
    pub fn mean_abs_rounded(&self) -> i64 {
        round_div(self.reduction_abs as i128, self.entries as i128) as i64
    }

    /// Percentage in hundredths of a percent, rounded half away from zero.
    pub fn pct_hundredths(&self) -> i64 {
        round_div(self.reduction_abs as i128 * 10_000, self.baseline_total as i128) as i64
    }

    /// `881,666 (21.04%)`
    pub fn display(&self) -> String {
        format!(
            "{} ({})",
            format_thousands(self.mean_abs_rounded()),
            format_hundredths(self.pct_hundredths())
        )
    }
}

pub fn reduction(
    benchmark: &str,
    baseline_name: &str,
    baseline_total: u64,
    routed_total: u64,
) -> Result<ReductionReport, LedgerError> {
    if baseline_total == 0 {
        return Err(LedgerError::NonPositiveBaseline);
    }
    Ok(ReductionReport {
        benchmark: benchmark.to_string(),
        baseline_name: baseline_name.to_string(),
        baseline_total,
        routed_total,
        reduction_abs: baseline_total as i64 - routed_total as i64,
        entries: 1,
    })
}

/// Averages per-benchmark reductions: mean absolute reduction over mean
/// baseline total.
pub fn average_reduction(per_benchmark: &[ReductionReport]) -> Result<ReductionReport, LedgerError> {
    let first = per_benchmark.first().ok_or(LedgerError::Empty)?;
    Ok(ReductionReport {
        benchmark: "Avg".to_string(),
        baseline_name: first.baseline_name.clone(),
        baseline_total: per_benchmark.iter().map(|r| r.baseline_total).sum(),
        routed_total: per_benchmark.iter().map(|r| r.routed_total).sum(),
        reduction_abs: per_benchmark.iter().map(|r| r.reduction_abs).sum(),
        entries: per_benchmark.iter().map(|r| r.entries).sum(),
    })
}

/// Integer division rounding half away from zero.
pub(crate) fn round_div(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    if num >= 0 {
        (2 * num + den) / (2 * den)
    } else {
        -((2 * -num + den) / (2 * den))
    }
}

pub fn format_thousands(value: i64) -> String {
    let digits = value.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if value < 0 {
        format!("-{out}")
    } else {
        out
    }
}

/// `2104` -> `21.04%`
pub fn format_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    let a = h.unsigned_abs();
    format!("{sign}{}.{:02}%", a / 100, a % 100)
}

/// Percentage of `num / den` with two decimals, rounded exactly.
pub fn format_ratio_pct(num: i64, den: i64) -> String {
    if den == 0 {
        return "n/a".to_string();
    }
    format_hundredths(round_div(num as i128 * 10_000, den as i128) as i64)
}

/// A token-usage table: methods as rows, benchmarks as columns, an `Avg`
/// column, a routing-overhead row, and reduction rows of the routed method
/// against every baseline.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    pub benchmarks: Vec<String>,
    pub routing: Option<Vec<u64>>,
    pub baselines: Vec<(String, Vec<u64>)>,
    pub routed: Option<(String, Vec<u64>)>,
}

impl TokenTable {
    pub fn new(benchmarks: Vec<String>) -> Self {
        Self {
            benchmarks,
            ..Default::default()
        }
    }

    /// Reductions of the routed method against `baseline`, one per
    /// benchmark followed by the average.
    pub fn reductions(&self, baseline: &str) -> Result<Vec<ReductionReport>, LedgerError> {
        let Some((_, routed)) = &self.routed else {
            return Ok(Vec::new());
        };
        let Some((name, base)) = self.baselines.iter().find(|(n, _)| n == baseline) else {
            return Ok(Vec::new());
        };
        let mut out = self
            .benchmarks
            .iter()
            .zip(base.iter().zip(routed))
            .map(|(b, (&bt, &rt))| reduction(b, name, bt, rt))
            .collect::<Result<Vec<_>, _>>()?;
        let avg = average_reduction(&out)?;
        out.push(avg);
        Ok(out)
    }

    pub fn render(&self) -> Result<String, LedgerError> {
        let mut header = vec!["MT".to_string()];
        header.extend(self.benchmarks.iter().cloned());
        header.push("Avg".to_string());
        let mut rows: Vec<Vec<String>> = Vec::new();

        let totals_row = |name: &str, values: &[u64]| {
            let mut row = vec![name.to_string()];
            row.extend(values.iter().map(|&v| format_thousands(v as i64)));
            let sum: u64 = values.iter().sum();
            let avg = if values.is_empty() {
                0
            } else {
                round_div(sum as i128, values.len() as i128) as i64
            };
            row.push(format_thousands(avg));
            row
        };

        if let Some(rt) = &self.routing {
            rows.push(totals_row("RT", rt));
        }
        for (name, values) in &self.baselines {
            rows.push(totals_row(name, values));
        }
        if let Some((name, values)) = &self.routed {
            rows.push(totals_row(name, values));
        }
        for (baseline, _) in &self.baselines {
            let reds = self.reductions(baseline)?;
            if reds.is_empty() {
                continue;
            }
            let mut abs_row = vec![format!("vs {baseline}")];
            let mut pct_row = vec![String::new()];
            for r in &reds {
                abs_row.push(format_thousands(r.mean_abs_rounded()));
                pct_row.push(format!("({})", format_hundredths(r.pct_hundredths())));
            }
            rows.push(abs_row);
            rows.push(pct_row);
        }
        Ok(render_grid(&header, &rows))
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut s = String::new();
        for (i, w) in widths.iter().enumerate() {
            let cell = cells.get(i).map(String::as_str).unwrap_or("");
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header);
    for row in rows {
        line(row);
    }
    out
}
