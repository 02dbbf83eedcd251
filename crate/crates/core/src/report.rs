//! Side-by-side comparison of pruning results.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::dominates;

/// Bias and perplexity reported by one method. Extra fields in result files are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub bias: f64,
    pub ppl: f64,
}

impl MethodResult {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let r: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if !r.bias.is_finite() || !r.ppl.is_finite() {
            return Err(Error::validation(format!(
                "{}: non-finite metrics",
                path.display()
            )));
        }
        Ok(r)
    }
}

/// `(before - after) / before`: positive when `after` is lower.
pub fn relative_improvement(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        if after == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (before - after) / before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub bias: f64,
    pub ppl: f64,
    /// Relative to the reference (first) result.
    pub bias_improvement: f64,
    pub ppl_improvement: f64,
    /// Methods this one beats on bias and on perplexity, and loses to.
    pub bias_wins: usize,
    pub bias_losses: usize,
    pub ppl_wins: usize,
    pub ppl_losses: usize,
    pub dominated_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compares every result against the first one and against each other.
pub fn compare(results: &[MethodResult]) -> Result<Comparison> {
    if results.len() < 2 {
        return Err(Error::config("comparison needs at least two results"));
    }
    let reference = &results[0];
    let rows = results
        .iter()
        .map(|r| {
            let others = results.iter().filter(|o| !std::ptr::eq(*o, r));
            let mut row = ComparisonRow {
                method: r.method.clone(),
                bias: r.bias,
                ppl: r.ppl,
                bias_improvement: relative_improvement(reference.bias, r.bias),
                ppl_improvement: relative_improvement(reference.ppl, r.ppl),
                bias_wins: 0,
                bias_losses: 0,
                ppl_wins: 0,
                ppl_losses: 0,
                dominated_by: Vec::new(),
            };
            for o in others {
                row.bias_wins += usize::from(r.bias < o.bias);
                row.bias_losses += usize::from(r.bias > o.bias);
                row.ppl_wins += usize::from(r.ppl < o.ppl);
                row.ppl_losses += usize::from(r.ppl > o.ppl);
                if dominates((o.bias, o.ppl), (r.bias, r.ppl)) {
                    row.dominated_by.push(o.method.clone());
                }
            }
            row
        })
        .collect();
    Ok(Comparison {
        reference: reference.method.clone(),
        rows,
    })
}

/// Plain-text table with three decimals.
pub fn render(cmp: &Comparison) -> String {
    let width = cmp
        .rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>9}  {:>8}  {:>9}  {:>7}  {:>7}  dominated by",
        "method", "bias", "bias gain", "ppl", "ppl gain", "bias w/l", "ppl w/l"
    );
    for r in &cmp.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>8.1}%  {:>8.3}  {:>8.1}%  {:>8}  {:>7}  {}",
            r.method,
            r.bias,
            100.0 * r.bias_improvement,
            r.ppl,
            100.0 * r.ppl_improvement,
            format!("{}/{}", r.bias_wins, r.bias_losses),
            format!("{}/{}", r.ppl_wins, r.ppl_losses),
            if r.dominated_by.is_empty() {
                "-".to_string()
            } else {
                r.dominated_by.join(", ")
            }
        );
    }
    let _ = writeln!(out, "gains are relative to {}", cmp.reference);
    out
}
