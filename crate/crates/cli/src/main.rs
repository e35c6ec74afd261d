use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rtdsm::baselines::IsbConfig;
use rtdsm::harness::{self, AlgorithmSpec, ComparisonReport, ExperimentSpec, PlotKind, ScenarioRef};
use rtdsm::ipdb::{Equalization, InequalitySetting, InitPower, SolverConfig, ToneOrder};
use rtdsm::procedures::InequalityParams;
use rtdsm::scenarios::NAMED_SCENARIOS;
use rtdsm::trace::RunTrace;
use rtdsm::{DovKind, Scenario};

const FALLBACK_OUT_DIR: &str = "rtdsm-out";

#[derive(Parser)]
#[command(name = "rtdsm", version, about = "Real-time dynamic spectrum management experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Run one experiment and write its traces and report.
    Run(RunArgs),
    /// Run several experiment spec files and compare them against a reference.
    Compare(CompareArgs),
    /// Stop an IPDB run after each update budget and check feasibility.
    Anytime(AnytimeArgs),
    /// Turn a JSONL trace into a plot table.
    Plotdata(PlotArgs),
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Write a named scenario as JSON.
    Gen {
        /// One of the built-in scenario names.
        name: String,
        /// Keep only this many tones.
        #[arg(long)]
        tones: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print a short summary of a named scenario or scenario file.
    Show {
        scenario: String,
        #[arg(long)]
        tones: Option<usize>,
    },
    /// List built-in scenario names.
    List,
}

#[derive(Args, Clone)]
struct ScenarioArg {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long, default_value = "near-far-adsl")]
    scenario: String,
    /// Keep only this many tones of a built-in scenario.
    #[arg(long)]
    tones: Option<usize>,
}

impl ScenarioArg {
    fn to_ref(&self) -> Result<ScenarioRef> {
        scenario_ref(&self.scenario, self.tones)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Ipdb,
    Isb,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ToneOrderArg {
    To1,
    To2,
    To3,
    To4,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Ep,
    Rp,
    Transform,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// DoV transform: two-tone, three-tone, two-tone-rand, three-tone-2.
    #[arg(long, default_value = "two-tone-rand")]
    transform: String,
    /// Seed of the random transform.
    #[arg(long, default_value_t = 0)]
    transform_seed: u64,
    #[arg(long, value_enum, default_value = "to1")]
    tone_order: ToneOrderArg,
    #[arg(long, value_enum, default_value = "ep")]
    init: InitArg,
    /// Line-search grid step in dB.
    #[arg(long, default_value_t = 1.0)]
    delta_db: f64,
    /// Line-search repetitions per tone visit.
    #[arg(long, default_value_t = 1)]
    inner: usize,
    /// `off` or `every:M`.
    #[arg(long, default_value = "off")]
    eq: String,
    /// Enable the power-reducing step (inequality scenarios only).
    #[arg(long)]
    inequality: bool,
    #[arg(long, default_value_t = 1.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    /// Stop after this many power updates.
    #[arg(long)]
    budget_updates: Option<u64>,
    /// Relative objective change below which a run counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig {
            tone_order: match self.tone_order {
                ToneOrderArg::To1 => ToneOrder::To1,
                ToneOrderArg::To2 => ToneOrder::To2,
                ToneOrderArg::To3 => ToneOrder::To3,
                ToneOrderArg::To4 => ToneOrder::To4,
            },
            init_power: match self.init {
                InitArg::Ep => InitPower::Ep,
                InitArg::Rp => InitPower::Rp,
                InitArg::Transform => InitPower::Transform,
            },
            granularity_db: self.delta_db,
            inner_iters: self.inner,
            equalization: parse_eq(&self.eq)?,
            inequality: if self.inequality {
                InequalitySetting::On(InequalityParams { alpha: self.alpha, beta: self.beta })
            } else {
                InequalitySetting::Off
            },
            max_outer: self.max_outer,
            update_budget: self.budget_updates,
            seed: self.seed,
            convergence_tol: self.tol,
            ..SolverConfig::default()
        })
    }

    fn transform(&self) -> Result<DovKind> {
        DovKind::parse(&self.transform, self.transform_seed).map_err(Into::into)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "ipdb")]
    algo: Algorithm,
    #[command(flatten)]
    solver: SolverArgs,
    /// ISB power grid step in dB.
    #[arg(long, default_value_t = 0.5)]
    isb_delta_db: f64,
    /// Oracle quanta per user.
    #[arg(long, default_value_t = 8)]
    quanta: usize,
    #[arg(long, default_value_t = 15)]
    reps: usize,
    /// File stem for everything written.
    #[arg(long)]
    label: Option<String>,
    /// Output directory; defaults to $RTDSM_OUT_DIR, then ./rtdsm-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the experiment spec as JSON and exit without running.
    #[arg(long)]
    emit_spec: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment spec JSON files (as written by `run --emit-spec`).
    #[arg(required = true)]
    specs: Vec<PathBuf>,
    /// Label whose complexity the others are divided by.
    #[arg(long)]
    reference: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnytimeArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Comma-separated update budgets.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
    budgets: Vec<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// JSONL trace written by `run`.
    trace: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArg,
    /// objective-evolution, power-evolution, spectra or bit-loading.
    #[arg(long)]
    kind: PlotKind,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn scenario_ref(name: &str, tones: Option<usize>) -> Result<ScenarioRef> {
    if NAMED_SCENARIOS.contains(&name) {
        return Ok(ScenarioRef::Named { name: name.to_string(), num_tones: tones });
    }
    let path = PathBuf::from(name);
    if !path.is_file() {
        bail!("'{name}' is neither a built-in scenario ({}) nor a file", NAMED_SCENARIOS.join(", "));
    }
    if tones.is_some() {
        bail!("--tones only applies to built-in scenarios");
    }
    Ok(ScenarioRef::File { path })
}

fn parse_eq(text: &str) -> Result<Equalization> {
    if text == "off" {
        return Ok(Equalization::Off);
    }
    let m = text
        .strip_prefix("every:")
        .and_then(|m| m.parse::<usize>().ok())
        .with_context(|| format!("--eq expects 'off' or 'every:M', got '{text}'"))?;
    Ok(Equalization::EveryMOuter { m })
}

/// Writes to `path`, or stdout when there is none.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| harness::default_output_dir(Path::new(FALLBACK_OUT_DIR)))
}

fn show(scenario: &Scenario) -> Result<()> {
    let mut w = io::stdout().lock();
    let n = scenario.num_users();
    writeln!(w, "users         {n}")?;
    writeln!(w, "tones         {}", scenario.num_tones())?;
    writeln!(w, "tone spacing  {} Hz", scenario.tone_spacing())?;
    writeln!(w, "symbol rate   {} Hz", scenario.symbol_rate())?;
    writeln!(w, "constraints   {:?}", scenario.constraint_mode())?;
    for u in 0..n {
        writeln!(
            w,
            "user {u:<3} weight {:.3}  budget {:.2} dBm",
            scenario.weight(u),
            10.0 * scenario.budget(u).log10()
        )?;
    }
    Ok(())
}

fn cmd_scenario(cmd: ScenarioCommand) -> Result<()> {
    match cmd {
        ScenarioCommand::Gen { name, tones, output } => {
            let scenario = scenario_ref(&name, tones)?.resolve()?;
            let mut w = sink(output.as_deref())?;
            writeln!(w, "{}", scenario.to_json())?;
        }
        ScenarioCommand::Show { scenario, tones } => show(&scenario_ref(&scenario, tones)?.resolve()?)?,
        ScenarioCommand::List => {
            let mut w = io::stdout().lock();
            for name in NAMED_SCENARIOS {
                writeln!(w, "{name}")?;
            }
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let algorithm = match args.algo {
        Algorithm::Ipdb => AlgorithmSpec::Ipdb { transform: args.solver.transform()?, config: args.solver.config()? },
        Algorithm::Isb => AlgorithmSpec::Isb { config: IsbConfig { granularity_db: args.isb_delta_db, ..IsbConfig::default() } },
        Algorithm::Oracle => AlgorithmSpec::Oracle { quanta: args.quanta },
    };
    let label = args.label.unwrap_or_else(|| algorithm.name().to_string());
    let mut spec = ExperimentSpec::new(&label, args.scenario.to_ref()?, algorithm);
    spec.repetitions = args.reps;
    spec.output_dir = Some(out_dir(args.out));
    spec.validate()?;
    let text = if args.emit_spec {
        serde_json::to_string_pretty(&spec)?
    } else {
        serde_json::to_string_pretty(&harness::run_experiment(&spec)?.report)?
    };
    writeln!(io::stdout().lock(), "{text}")?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let dir = out_dir(args.out);
    let specs = args
        .specs
        .iter()
        .map(|p| -> Result<ExperimentSpec> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut spec: ExperimentSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            spec.output_dir = Some(dir.clone());
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let (report, _) = harness::compare(&specs, &args.reference)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("comparison.json"), report.to_json()?)?;
    report.write_csv(fs::File::create(dir.join("comparison.csv"))?)?;
    print_comparison(&report)
}

fn print_comparison(report: &ComparisonReport) -> Result<()> {
    let mut w = io::stdout().lock();
    writeln!(w, "{:<20} {:>14} {:>10} {:>14}", "label", "mean Mbps", "iters 99%", "rel. cost 99%")?;
    for e in &report.entries {
        let rel = e.relative_complexity_99.map_or("-".to_string(), |r| format!("{r:.4}"));
        writeln!(w, "{:<20} {:>14.4} {:>10.2} {:>14}", e.label, e.mean_objective_bps / 1e6, e.mean_iters_99, rel)?;
    }
    Ok(())
}

fn cmd_anytime(args: AnytimeArgs) -> Result<()> {
    let algorithm = AlgorithmSpec::Ipdb { transform: args.solver.transform()?, config: args.solver.config()? };
    let spec = ExperimentSpec::new("anytime", args.scenario.to_ref()?, algorithm);
    let table = harness::anytime_report(&spec, &args.budgets)?;
    table.write_csv(sink(args.output.as_deref())?)?;
    if !table.all_feasible() {
        bail!("an anytime probe returned an infeasible point");
    }
    Ok(())
}

fn cmd_plotdata(args: PlotArgs) -> Result<()> {
    let file = fs::File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = RunTrace::read_jsonl(BufReader::new(file))?;
    let scenario = args.scenario.to_ref()?.resolve()?;
    harness::emit_plot_data(&trace, &scenario, args.kind, sink(args.output.as_deref())?)?;
    Ok(())
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
            || e.downcast_ref::<harness::HarnessError>().is_some_and(|h| matches!(h, harness::HarnessError::Io(io) if io.kind() == io::ErrorKind::BrokenPipe))
    })
}

fn main() -> Result<()> {
    let outcome = match Cli::parse().command {
        Command::Scenario(cmd) => cmd_scenario(cmd),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Anytime(args) => cmd_anytime(args),
        Command::Plotdata(args) => cmd_plotdata(args),
    };
    match outcome {
        // a downstream reader such as `head` closed the pipe
        Err(e) if broken_pipe(&e) => Ok(()),
        other => other,
    }
}
