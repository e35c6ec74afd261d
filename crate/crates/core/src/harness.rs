//! Experiment orchestration: seeded repetitions, convergence and complexity
//! metrics, anytime probes, persistence and plot data.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, IsbConfig};
use crate::dov::{DovError, DovKind, DovTransform};
use crate::ipdb::{self, SolverConfig, SolverError};
use crate::model::{self, BitEvalCounter, ModelError, Scenario, TransmitSpectra};
use crate::scalar::mw_to_dbm_hz;
use crate::scenarios::{self, ScenarioError};
use crate::trace::{OuterRecord, RunSummary, RunTrace, StopReason, TraceError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RTDSM_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dov(#[from] DovError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioRef {
    /// A generated scenario, optionally cut to fewer tones.
    Named { name: String, num_tones: Option<usize> },
    /// A scenario JSON file.
    File { path: PathBuf },
}

impl ScenarioRef {
    pub fn named(name: &str) -> Self {
        ScenarioRef::Named { name: name.to_string(), num_tones: None }
    }

    pub fn resolve(&self) -> Result<Scenario<f64>, HarnessError> {
        match self {
            ScenarioRef::Named { name, num_tones: None } => Ok(scenarios::gen_named(name)?),
            ScenarioRef::Named { name, num_tones: Some(k) } => Ok(scenarios::gen_named_reduced(name, *k)?),
            ScenarioRef::File { path } => Ok(Scenario::from_json(&fs::read_to_string(path)?)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum AlgorithmSpec {
    Ipdb { transform: DovKind, config: SolverConfig },
    Isb { config: IsbConfig },
    Oracle { quanta: usize },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Ipdb { .. } => "ipdb",
            AlgorithmSpec::Isb { .. } => "isb",
            AlgorithmSpec::Oracle { .. } => "oracle",
        }
    }

    fn is_deterministic(&self) -> bool {
        !matches!(self, AlgorithmSpec::Ipdb { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub label: String,
    pub scenario: ScenarioRef,
    pub algorithm: AlgorithmSpec,
    /// Seeded repetitions; repetition `r` offsets the solver and transform seeds by `r`.
    pub repetitions: usize,
    /// Where traces and the report are written, if anywhere.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(label: &str, scenario: ScenarioRef, algorithm: AlgorithmSpec) -> Self {
        ExperimentSpec { label: label.to_string(), scenario, algorithm, repetitions: 15, output_dir: None }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::Invalid("repetitions must be at least 1".into()));
        }
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return Err(HarnessError::Invalid(format!("label '{}' is not usable as a file stem", self.label)));
        }
        Ok(())
    }

    /// Repetitions actually executed: deterministic algorithms run once.
    pub fn effective_repetitions(&self) -> usize {
        if self.algorithm.is_deterministic() {
            1
        } else {
            self.repetitions
        }
    }

    /// Seeded configuration of repetition `r`.
    pub fn repetition(&self, r: usize) -> AlgorithmSpec {
        match &self.algorithm {
            AlgorithmSpec::Ipdb { transform, config } => AlgorithmSpec::Ipdb {
                transform: match *transform {
                    DovKind::TwoToneRand { seed } => DovKind::TwoToneRand { seed: seed.wrapping_add(r as u64) },
                    other => other,
                },
                config: SolverConfig { seed: config.seed.wrapping_add(r as u64), ..config.clone() },
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub repetition: usize,
    pub trace: RunTrace,
}

/// Runs one algorithm once on a resolved scenario.
pub fn run_single(scenario: &Scenario<f64>, algorithm: &AlgorithmSpec) -> Result<(TransmitSpectra<f64>, RunTrace), HarnessError> {
    match algorithm {
        AlgorithmSpec::Ipdb { transform, config } => {
            let coeffs = transform.coefficients(scenario.num_tones())?;
            let tr = DovTransform::uniform(coeffs, scenario.num_users())?;
            Ok(ipdb::run(scenario, &tr, config)?)
        }
        AlgorithmSpec::Isb { config } => Ok(baselines::isb_run(scenario, config)?),
        AlgorithmSpec::Oracle { quanta } => {
            let r = baselines::oracle_search(scenario, *quanta)?;
            let objective = r.objective;
            let bit_evals = r.evaluations * (scenario.num_users() * scenario.num_tones()) as u64;
            let totals: Vec<f64> = r.spectra.user_totals();
            let outer = OuterRecord {
                iteration: 1,
                objective,
                user_totals: totals.clone(),
                bit_evals,
                updates: r.evaluations,
                elapsed_ms: 0.0,
            };
            let summary = RunSummary {
                algorithm: "oracle".into(),
                stop_reason: StopReason::Exhaustive,
                outer_iterations: 1,
                updates: r.evaluations,
                bit_evals,
                objective,
                user_totals: totals,
                equalization_drops: Vec::new(),
                notes: Vec::new(),
                final_spectra_mw: r.spectra.tone_rows(),
            };
            let trace = RunTrace { updates: Vec::new(), outers: vec![outer], summary };
            Ok((r.spectra, trace))
        }
    }
}

/// Aggregates of one configuration over its repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub label: String,
    pub algorithm: String,
    pub runs: usize,
    pub mean_objective_bits: f64,
    pub mean_objective_bps: f64,
    /// Mean outer iterations to reach 99% / 99.9% of each run's own final objective.
    pub mean_iters_99: f64,
    pub mean_iters_999: f64,
    pub mean_bit_evals_99: f64,
    pub mean_bit_evals_999: f64,
    pub mean_bit_evals_total: f64,
    /// Bit evaluations to 99% / 99.9% relative to the reference configuration.
    pub relative_complexity_99: Option<f64>,
    pub relative_complexity_999: Option<f64>,
    /// Repetitions that failed, with their errors.
    pub failures: Vec<(usize, String)>,
}

impl ConfigReport {
    /// Pure function of the traces.
    pub fn from_traces(label: &str, algorithm: &str, symbol_rate: f64, traces: &[&RunTrace], failures: Vec<(usize, String)>) -> Self {
        let n = traces.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunTrace) -> f64| traces.iter().map(|t| f(t)).sum::<f64>() / n;
        let iters = |t: &RunTrace, x: f64| t.iterations_to_fraction(x).unwrap_or(t.summary.outer_iterations) as f64;
        let evals = |t: &RunTrace, x: f64| t.bit_evals_to_fraction(x).unwrap_or(t.summary.bit_evals) as f64;
        let mean_objective_bits = mean(&|t| t.summary.objective);
        ConfigReport {
            label: label.to_string(),
            algorithm: algorithm.to_string(),
            runs: traces.len(),
            mean_objective_bits,
            mean_objective_bps: mean_objective_bits * symbol_rate,
            mean_iters_99: mean(&|t| iters(t, 0.99)),
            mean_iters_999: mean(&|t| iters(t, 0.999)),
            mean_bit_evals_99: mean(&|t| evals(t, 0.99)),
            mean_bit_evals_999: mean(&|t| evals(t, 0.999)),
            mean_bit_evals_total: mean(&|t| t.summary.bit_evals as f64),
            relative_complexity_99: None,
            relative_complexity_999: None,
            failures,
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunResult>,
    pub report: ConfigReport,
}

/// Runs all repetitions (in parallel) and aggregates them in repetition order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let scenario = spec.scenario.resolve()?;
    let reps = spec.effective_repetitions();
    let outcomes: Vec<Result<RunTrace, HarnessError>> = (0..reps)
        .into_par_iter()
        .map(|r| run_single(&scenario, &spec.repetition(r)).map(|(_, t)| t))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(trace) => runs.push(RunResult { repetition: r, trace }),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if runs.is_empty() {
        let (_, msg) = failures.into_iter().next().expect("at least one repetition");
        return Err(HarnessError::Invalid(format!("every repetition failed: {msg}")));
    }
    let traces: Vec<&RunTrace> = runs.iter().map(|r| &r.trace).collect();
    let report = ConfigReport::from_traces(&spec.label, spec.algorithm.name(), scenario.symbol_rate(), &traces, failures);
    let result = ExperimentResult { spec: spec.clone(), runs, report };
    if let Some(dir) = &spec.output_dir {
        persist(&result, dir)?;
    }
    Ok(result)
}

/// Writes `<label>.spec.json`, `<label>.report.json` and one
/// `<label>.run<r>.jsonl` / `.csv` trace pair per repetition.
pub fn persist(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let label = &result.spec.label;
    fs::write(dir.join(format!("{label}.spec.json")), serde_json::to_string_pretty(&result.spec)?)?;
    fs::write(dir.join(format!("{label}.report.json")), serde_json::to_string_pretty(&result.report)?)?;
    for run in &result.runs {
        let stem = format!("{label}.run{:02}", run.repetition);
        run.trace.write_jsonl(fs::File::create(dir.join(format!("{stem}.jsonl")))?)?;
        run.trace.write_csv(fs::File::create(dir.join(format!("{stem}.csv")))?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Label of the configuration complexities are normalized to.
    pub reference: String,
    pub entries: Vec<ConfigReport>,
}

impl ComparisonReport {
    /// Fills in relative complexities against `reference`; pure function of the reports.
    pub fn new(reports: Vec<ConfigReport>, reference: &str) -> Result<Self, HarnessError> {
        let base = reports
            .iter()
            .find(|r| r.label == reference)
            .ok_or_else(|| HarnessError::Invalid(format!("reference '{reference}' is not among the configurations")))?;
        let (b99, b999) = (base.mean_bit_evals_99, base.mean_bit_evals_999);
        let ratio = |x: f64, b: f64| if b > 0.0 { Some(x / b) } else { None };
        let entries = reports
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.label == reference {
                    r.relative_complexity_99 = Some(1.0);
                    r.relative_complexity_999 = Some(1.0);
                } else {
                    r.relative_complexity_99 = ratio(r.mean_bit_evals_99, b99);
                    r.relative_complexity_999 = ratio(r.mean_bit_evals_999, b999);
                }
                r
            })
            .collect();
        Ok(ComparisonReport { reference: reference.to_string(), entries })
    }

    pub fn entry(&self, label: &str) -> Option<&ConfigReport> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "label",
            "algorithm",
            "runs",
            "mean_objective_bits",
            "mean_objective_bps",
            "mean_iters_99",
            "mean_iters_999",
            "mean_bit_evals_99",
            "mean_bit_evals_999",
            "relative_complexity_99",
            "relative_complexity_999",
        ])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for e in &self.entries {
            out.write_record([
                e.label.clone(),
                e.algorithm.clone(),
                e.runs.to_string(),
                e.mean_objective_bits.to_string(),
                e.mean_objective_bps.to_string(),
                e.mean_iters_99.to_string(),
                e.mean_iters_999.to_string(),
                e.mean_bit_evals_99.to_string(),
                e.mean_bit_evals_999.to_string(),
                opt(e.relative_complexity_99),
                opt(e.relative_complexity_999),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs every experiment and compares them against `reference`.
pub fn compare(specs: &[ExperimentSpec], reference: &str) -> Result<(ComparisonReport, Vec<ExperimentResult>), HarnessError> {
    let results = specs.iter().map(run_experiment).collect::<Result<Vec<_>, _>>()?;
    let report = ComparisonReport::new(results.iter().map(|r| r.report.clone()).collect(), reference)?;
    Ok((report, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnytimeRow {
    pub budget: u64,
    pub updates: u64,
    pub feasible: bool,
    pub violations: usize,
    pub objective_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnytimeTable {
    pub rows: Vec<AnytimeRow>,
}

impl AnytimeTable {
    pub fn all_feasible(&self) -> bool {
        self.rows.iter().all(|r| r.feasible)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<Result<Vec<AnytimeRow>, _>>()?;
        Ok(AnytimeTable { rows })
    }
}

/// Stops the first repetition's IPDB run after each budget and checks feasibility.
pub fn anytime_report(spec: &ExperimentSpec, budgets: &[u64]) -> Result<AnytimeTable, HarnessError> {
    spec.validate()?;
    let AlgorithmSpec::Ipdb { transform, config } = spec.repetition(0) else {
        return Err(HarnessError::Unsupported(format!(
            "anytime probes need an ipdb experiment; {} iterates are not feasible before convergence",
            spec.algorithm.name()
        )));
    };
    let scenario = spec.scenario.resolve()?;
    let tr = DovTransform::uniform(transform.coefficients(scenario.num_tones())?, scenario.num_users())?;
    let probes = ipdb::stop_anytime_probe(&scenario, &tr, &config, budgets)?;
    let rows = probes
        .into_iter()
        .map(|p| AnytimeRow {
            budget: p.budget,
            updates: p.updates,
            feasible: p.report.is_empty(),
            violations: p.report.len(),
            objective_bits: p.objective,
        })
        .collect();
    Ok(AnytimeTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ObjectiveEvolution,
    PowerEvolution,
    Spectra,
    BitLoading,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::ObjectiveEvolution, PlotKind::PowerEvolution, PlotKind::Spectra, PlotKind::BitLoading];

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::ObjectiveEvolution => "objective-evolution",
            PlotKind::PowerEvolution => "power-evolution",
            PlotKind::Spectra => "spectra",
            PlotKind::BitLoading => "bit-loading",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Unsupported(format!("unknown plot kind '{s}'")))
    }
}

/// Writes one plot table as CSV.
///
/// * `objective-evolution`: `outer_iter,objective_bits,objective_bps,bit_evals`
/// * `power-evolution`: `step,outer_iter,user{n}_mw..` per recorded update
///   (per outer iteration when updates were not recorded)
/// * `spectra`: `tone,user{n}_dbm_hz..,user{n}_mw..` of the final spectra
/// * `bit-loading`: `tone,user{n}_bits..` of the final spectra
pub fn emit_plot_data<W: Write>(trace: &RunTrace, scenario: &Scenario<f64>, kind: PlotKind, w: W) -> Result<(), HarnessError> {
    let users = trace.summary.user_totals.len();
    let mut out = csv::Writer::from_writer(w);
    let per_user = |prefix: &str, suffix: &str| (0..users).map(move |n| format!("{prefix}{n}{suffix}")).collect::<Vec<_>>();
    match kind {
        PlotKind::ObjectiveEvolution => {
            out.write_record(["outer_iter", "objective_bits", "objective_bps", "bit_evals"])?;
            for o in &trace.outers {
                out.write_record([
                    o.iteration.to_string(),
                    o.objective.to_string(),
                    (o.objective * scenario.symbol_rate()).to_string(),
                    o.bit_evals.to_string(),
                ])?;
            }
        }
        PlotKind::PowerEvolution => {
            let mut header = vec!["step".to_string(), "outer_iter".to_string()];
            header.extend(per_user("user", "_mw"));
            out.write_record(&header)?;
            if trace.updates.is_empty() {
                for o in &trace.outers {
                    let mut row = vec![o.updates.to_string(), o.iteration.to_string()];
                    row.extend(o.user_totals.iter().map(f64::to_string));
                    out.write_record(&row)?;
                }
            } else {
                for u in &trace.updates {
                    let mut row = vec![u.index.to_string(), u.outer.to_string()];
                    row.extend(u.user_totals.iter().map(f64::to_string));
                    out.write_record(&row)?;
                }
            }
        }
        PlotKind::Spectra => {
            let mut header = vec!["tone".to_string()];
            header.extend(per_user("user", "_dbm_hz"));
            header.extend(per_user("user", "_mw"));
            out.write_record(&header)?;
            let df = scenario.tone_spacing();
            for (k, row) in trace.summary.final_spectra_mw.iter().enumerate() {
                let mut rec = vec![k.to_string()];
                rec.extend(row.iter().map(|p| mw_to_dbm_hz(*p, df).to_string()));
                rec.extend(row.iter().map(f64::to_string));
                out.write_record(&rec)?;
            }
        }
        PlotKind::BitLoading => {
            let mut header = vec!["tone".to_string()];
            header.extend(per_user("user", "_bits"));
            out.write_record(&header)?;
            let mut counter = BitEvalCounter::new();
            for (k, row) in trace.summary.final_spectra_mw.iter().enumerate() {
                let mut rec = vec![k.to_string()];
                for n in 0..users {
                    rec.push(model::bit_rate(scenario, row, n, k, &mut counter)?.to_string());
                }
                out.write_record(&rec)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the mW columns of a `spectra` plot table back as `[K][N]`.
pub fn read_spectra_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.ends_with("_mw")).map(|(i, _)| i).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|&i| rec[i].parse::<f64>().map_err(|e| HarnessError::Invalid(format!("spectra column {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Output directory from [`OUT_DIR_ENV`], falling back to `default`.
pub fn default_output_dir(default: &Path) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| default.to_path_buf())
}
