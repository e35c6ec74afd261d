//! Run traces and their JSONL / CSV encodings.
//!
//! JSONL layout: one `{"type":"outer",...}` object per outer iteration
//! followed by a single `{"type":"summary",...}` object. CSV layout:
//! `outer_iter,objective_bits,user_power_mw_0..,bit_evals,elapsed_ms`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    LineSearch,
    Inequality,
    Equalization,
}

/// State right after one variable update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub index: u64,
    pub outer: usize,
    pub kind: UpdateKind,
    pub user: usize,
    /// Tone of the updated variable; `None` for whole-spectrum passes.
    pub tone: Option<usize>,
    pub objective: f64,
    pub user_totals: Vec<f64>,
}

/// State at the end of an outer iteration (iteration 0 is the initial point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub user_totals: Vec<f64>,
    pub bit_evals: u64,
    pub updates: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxOuter,
    UpdateBudget,
    /// Dual search hit its iteration cap before matching the budgets.
    DualNotConverged,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub stop_reason: StopReason,
    pub outer_iterations: usize,
    pub updates: u64,
    pub bit_evals: u64,
    pub objective: f64,
    pub user_totals: Vec<f64>,
    /// Objective drops caused by equalization, as (outer iteration, drop).
    pub equalization_drops: Vec<(usize, f64)>,
    /// Free-form diagnostics (mask clipping shortfalls, dual non-convergence).
    pub notes: Vec<String>,
    /// Final spectra `[K][N]` in mW.
    pub final_spectra_mw: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub updates: Vec<UpdateRecord>,
    pub outers: Vec<OuterRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Outer(OuterRecord),
    Summary(RunSummary),
}

impl RunTrace {
    pub fn final_objective(&self) -> f64 {
        self.summary.objective
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.outers.iter().map(|o| o.objective).collect()
    }

    /// First outer iteration whose objective reaches `fraction` of the final one.
    pub fn iterations_to_fraction(&self, fraction: f64) -> Option<usize> {
        self.first_outer_reaching(fraction).map(|o| o.iteration)
    }

    /// Bit evaluations spent up to the first outer iteration reaching `fraction` of the final objective.
    pub fn bit_evals_to_fraction(&self, fraction: f64) -> Option<u64> {
        self.first_outer_reaching(fraction).map(|o| o.bit_evals)
    }

    fn first_outer_reaching(&self, fraction: f64) -> Option<&OuterRecord> {
        let target = fraction * self.summary.objective;
        self.outers.iter().find(|o| o.objective >= target)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        for o in &self.outers {
            serde_json::to_writer(&mut w, &Line::Outer(o.clone()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &Line::Summary(self.summary.clone()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Reads the JSONL form back. Per-update records are not part of the file.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<RunTrace, TraceError> {
        let mut outers = Vec::new();
        let mut summary = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Outer(o) => outers.push(o),
                Line::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| TraceError::Malformed("missing summary record".into()))?;
        Ok(RunTrace { updates: Vec::new(), outers, summary })
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let users = self.summary.user_totals.len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["outer_iter".to_string(), "objective_bits".to_string()];
        header.extend((0..users).map(|n| format!("user_power_mw_{n}")));
        header.push("bit_evals".into());
        header.push("elapsed_ms".into());
        out.write_record(&header)?;
        for o in &self.outers {
            let mut row = vec![o.iteration.to_string(), o.objective.to_string()];
            row.extend(o.user_totals.iter().map(f64::to_string));
            row.push(o.bit_evals.to_string());
            row.push(o.elapsed_ms.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses the CSV trace form back into outer records.
pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Vec<OuterRecord>, TraceError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let users = headers.len().checked_sub(4).ok_or_else(|| TraceError::Malformed("too few columns".into()))?;
    let parse_f = |s: &str| s.parse::<f64>().map_err(|e| TraceError::Malformed(e.to_string()));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let iteration = rec[0].parse::<usize>().map_err(|e| TraceError::Malformed(e.to_string()))?;
        let objective = parse_f(&rec[1])?;
        let user_totals = (0..users).map(|n| parse_f(&rec[2 + n])).collect::<Result<Vec<_>, _>>()?;
        let bit_evals = rec[2 + users].parse::<u64>().map_err(|e| TraceError::Malformed(e.to_string()))?;
        let elapsed_ms = parse_f(&rec[3 + users])?;
        out.push(OuterRecord { iteration, objective, user_totals, bit_evals, updates: 0, elapsed_ms });
    }
    Ok(out)
}
