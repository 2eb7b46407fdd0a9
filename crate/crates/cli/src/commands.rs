use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rescon_core::dynamics::GainDesign;
use rescon_core::sim::calibrate::{
    self, Calibration, DEFAULT_CALIBRATION_RUNS, DEFAULT_DELTA_FACTOR, DEFAULT_THRESHOLD_FACTOR,
};
use rescon_core::sim::{run_scenario, GainsSpec, Scenario, Summary, Thresholds};
use serde::{Deserialize, Serialize};

use crate::output;
use crate::presets::{self, PRESETS};
use crate::reproduce::{self, Suite, SuiteOptions};
use crate::scenario_file::{ScenarioFile, ThresholdsFile};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "rescon", version, about = "Resilient consensus simulator: run, calibrate, sweep and reproduce")]
pub struct Cli {
    /// Output root (default: ./rescon-out).
    #[arg(long, global = true, env = "RESCON_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its trace, summary and plot data.
    Run(RunArgs),
    /// Calibrate detector thresholds on attack-free runs.
    Calibrate(CalibrateArgs),
    /// Run the bundled presets and check the acceptance criteria.
    Reproduce(ReproduceArgs),
    /// Run one scenario over many seeds and coupling gains in parallel.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Source {
    /// Scenario file (JSON).
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Bundled preset instead of a file (fig2, fig3, fig4, fig6, fig7, fig9).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum)]
    pub mitigate: Option<Switch>,
    /// Thresholds file written by `calibrate`; takes precedence over the scenario's own.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Attack-free runs used when the scenario carries no thresholds.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_RUNS)]
    pub calibration_runs: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_FACTOR)]
    pub factor: f64,
    /// Also render states.svg, kl.svg and trust.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_FACTOR)]
    pub factor: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA_FACTOR)]
    pub delta_factor: f64,
    /// Where to write the thresholds (default: <out-dir>/<name>/thresholds.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, default_value = "paper")]
    pub suite: String,
    /// Print the bundled presets and exit.
    #[arg(long)]
    pub list: bool,
    /// Comma-separated criterion ids (default: all).
    #[arg(long)]
    pub criteria: Option<String>,
    /// Override the coupling gain c in every preset.
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum)]
    pub mitigate: Option<Switch>,
    /// Number of seeds, starting at the scenario seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Comma-separated coupling gains (default: the scenario's own).
    #[arg(long, value_delimiter = ',')]
    pub coupling: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_RUNS)]
    pub calibration_runs: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_FACTOR)]
    pub factor: f64,
}

/// Contents of thresholds.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub scenario: String,
    pub runs: usize,
    pub factor: f64,
    pub delta_factor: f64,
    pub max_imp: Vec<f64>,
    pub max_nonimp: Vec<f64>,
    pub thresholds: ThresholdsFile,
}

impl CalibrationFile {
    fn new(name: &str, c: &Calibration) -> Self {
        Self {
            scenario: name.to_string(),
            runs: c.runs,
            factor: c.factor,
            delta_factor: c.delta_factor,
            max_imp: c.max_imp.clone(),
            max_nonimp: c.max_nonimp.clone(),
            thresholds: ThresholdsFile::from(&c.thresholds),
        }
    }
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from("rescon-out"))
}

fn load(source: &Source, overrides: Option<&Overrides>) -> Result<Scenario, CliError> {
    let mut s = match (&source.scenario, &source.preset) {
        (_, Some(name)) => presets::find(name)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                CliError::Input(format!("unknown preset {name:?} (available: {})", names.join(", ")))
            })?
            .scenario()?,
        (Some(path), None) => ScenarioFile::load(path)?.to_scenario()?,
        (None, None) => return Err(CliError::Input("no scenario given".into())),
    };
    if let Some(o) = overrides {
        if let Some(seed) = o.seed {
            s.seed = seed;
        }
        if let Some(dt) = o.dt {
            s.dt = dt;
        }
        if let Some(t) = o.t_end {
            s.t_end = t;
        }
        s.validate()?;
    }
    Ok(s)
}

/// Thresholds from the attack-free twin of `s` (same seed base and horizon).
fn calibrate_for(s: &Scenario, runs: usize, factor: f64) -> Result<Calibration, CliError> {
    log::info!("{}: calibrating thresholds on {runs} attack-free runs", s.name);
    Ok(calibrate::calibrate_thresholds(&s.attack_free(), runs, factor)?)
}

pub fn cmd_run(cli_out: &Option<PathBuf>, args: &RunArgs) -> Result<PathBuf, CliError> {
    let mut s = load(&args.source, Some(&args.overrides))?;
    if let Some(m) = args.mitigate {
        s.mitigation = m == Switch::On;
    }
    if let Some(path) = &args.thresholds {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let file: CalibrationFile =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        s.detector.thresholds = Some(Thresholds::from(&file.thresholds));
    }
    if s.detector.thresholds.is_none() {
        s.detector.thresholds = Some(calibrate_for(&s, args.calibration_runs, args.factor)?.thresholds);
    }
    s.validate()?;
    let trace = run_scenario(&s)?;
    let summary = Summary::new(&s, &trace);
    let dir = out_root(cli_out).join(&s.name);
    output::write_run(&dir, &trace, &summary, args.svg)?;
    println!(
        "{}: {} records, diverged = {}, intact tail disagreement = {}",
        s.name,
        summary.records,
        summary.diverged,
        summary.consensus.intact_agents_tail.map_or("n/a".into(), |v| format!("{v:.3e}"))
    );
    println!("artifacts in {}", dir.display());
    Ok(dir)
}

pub fn cmd_calibrate(cli_out: &Option<PathBuf>, args: &CalibrateArgs) -> Result<PathBuf, CliError> {
    let s = load(&args.source, Some(&args.overrides))?;
    let c = calibrate::calibrate_with(&s, args.runs, args.factor, args.delta_factor)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => out_root(cli_out).join(&s.name).join("thresholds.json"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::create_dir(parent)?;
    }
    output::write_json(&path, &CalibrationFile::new(&s.name, &c))?;
    for i in 0..s.n() {
        println!(
            "agent {i}: gamma_imp = {:.4e}, gamma_nonimp = {:.4e}, delta = {:.4e}",
            c.thresholds.gamma_imp[i], c.thresholds.gamma_nonimp[i], c.thresholds.delta[i]
        );
    }
    println!("thresholds written to {}", path.display());
    Ok(path)
}

pub fn cmd_reproduce(cli_out: &Option<PathBuf>, args: &ReproduceArgs) -> Result<(), CliError> {
    if args.list {
        for p in &PRESETS {
            println!("{:<6} {}", p.name, p.description);
        }
        return Ok(());
    }
    if args.suite != "paper" {
        return Err(CliError::Input(format!("unknown suite {:?} (available: paper)", args.suite)));
    }
    let ids = match &args.criteria {
        Some(spec) => reproduce::parse_criteria(spec)?,
        None => reproduce::CRITERIA.to_vec(),
    };
    let suite = Suite::new(SuiteOptions { seed: args.seed, coupling: args.coupling });
    let report = suite.run_all(&ids, |r| println!("{r}"));
    let dir = out_root(cli_out).join("reproduce");
    output::create_dir(&dir)?;
    output::write_json(&dir.join("report.json"), &report)?;
    let text: String = report.criteria.iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(dir.join("report.txt"), text)?;
    println!(
        "{} of {} criteria passed in {:.1} s; report in {}",
        report.criteria.iter().filter(|c| c.passed).count(),
        report.criteria.len(),
        report.seconds,
        dir.display()
    );
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
        Err(CliError::Acceptance(format!("criteria failed: {}", failed.join(", "))))
    }
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    seed: u64,
    coupling: f64,
    diverged: bool,
    divergence_time: Option<f64>,
    all_agents_tail: Option<f64>,
    intact_agents_tail: Option<f64>,
    first_detection: Option<f64>,
}

pub fn cmd_sweep(cli_out: &Option<PathBuf>, args: &SweepArgs) -> Result<PathBuf, CliError> {
    let mut s = load(&args.source, None)?;
    if let Some(m) = args.mitigate {
        s.mitigation = m == Switch::On;
    }
    if args.seeds == 0 {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    if s.detector.thresholds.is_none() {
        s.detector.thresholds = Some(calibrate_for(&s, args.calibration_runs, args.factor)?.thresholds);
    }
    let k = s.resolve_gains()?.k;
    let couplings = if args.coupling.is_empty() { vec![s.resolve_gains()?.c] } else { args.coupling.clone() };
    let jobs: Vec<Scenario> = couplings
        .iter()
        .flat_map(|&c| {
            let base = &s;
            let k = &k;
            (0..args.seeds).map(move |r| {
                let mut run = base.clone();
                run.seed = base.seed.wrapping_add(r);
                run.gains = GainsSpec::Explicit(GainDesign { k: k.clone(), c });
                run
            })
        })
        .collect();
    for j in &jobs {
        j.validate()?;
    }
    let rows: Vec<Result<SweepRow, CliError>> = jobs
        .par_iter()
        .map(|run| {
            let trace = run_scenario(run)?;
            let summary = Summary::new(run, &trace);
            let first_detection = summary.detection.iter().filter_map(|d| d.latency_either).min_by(f64::total_cmp);
            Ok(SweepRow {
                seed: run.seed,
                coupling: run.resolve_gains()?.c,
                diverged: summary.diverged,
                divergence_time: summary.divergence_time,
                all_agents_tail: summary.consensus.all_agents_tail,
                intact_agents_tail: summary.consensus.intact_agents_tail,
                first_detection,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let dir = out_root(cli_out).join(format!("{}-sweep", s.name));
    output::create_dir(&dir)?;
    let path = dir.join("sweep.csv");
    write_sweep(&path, &rows)?;
    let diverged = rows.iter().filter(|r| r.diverged).count();
    println!("{}: {} runs, {diverged} diverged; results in {}", s.name, rows.len(), path.display());
    Ok(path)
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(&cli.out_dir, a).map(|_| ()),
        Command::Calibrate(a) => cmd_calibrate(&cli.out_dir, a).map(|_| ()),
        Command::Reproduce(a) => cmd_reproduce(&cli.out_dir, a),
        Command::Sweep(a) => cmd_sweep(&cli.out_dir, a).map(|_| ()),
    }
}
