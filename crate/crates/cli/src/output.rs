//! Run artifacts: the full trace, a JSON summary and plot-ready CSV slices.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rescon_core::sim::{Summary, Trace};
use serde::Serialize;

use crate::svg::{self, Series};
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STATES_FILE: &str = "states.csv";
pub const KL_FILE: &str = "kl.csv";
pub const TRUST_FILE: &str = "trust.csv";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Writes a CSV with a time column followed by `columns`, one row per trace step.
fn write_columns(path: &Path, trace: &Trace, columns: &[Column<'_>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let header = std::iter::once("t".to_string()).chain(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(header).map_err(|e| io_err(path, e))?;
    let mut row: Vec<String> = Vec::with_capacity(columns.len() + 1);
    for k in 0..trace.len() {
        row.clear();
        row.push(trace.t[k].to_string());
        row.extend(columns.iter().map(|(_, f)| f(k).to_string()));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

type Column<'a> = (String, Box<dyn Fn(usize) -> f64 + 'a>);

fn state_columns(trace: &Trace) -> Vec<Column<'_>> {
    let mut cols: Vec<Column<'_>> = Vec::new();
    for i in 0..trace.n {
        for c in 0..trace.n_x {
            cols.push((format!("x{i}_{c}"), Box::new(move |k| trace.x(k, i)[c])));
        }
    }
    cols
}

fn kl_columns(trace: &Trace) -> Vec<Column<'_>> {
    let mut cols: Vec<Column<'_>> = Vec::new();
    for i in 0..trace.n {
        cols.push((format!("kl_imp{i}"), Box::new(move |k| trace.kl_imp(k, i))));
    }
    for i in 0..trace.n {
        cols.push((format!("kl_nonimp{i}"), Box::new(move |k| trace.kl_nonimp(k, i))));
    }
    cols
}

fn trust_columns(trace: &Trace) -> Vec<Column<'_>> {
    let mut cols: Vec<Column<'_>> = Vec::new();
    for i in 0..trace.n {
        cols.push((format!("xi{i}"), Box::new(move |k| trace.xi(k, i))));
    }
    for &(j, i) in &trace.edges {
        cols.push((format!("omega{i}_{j}"), Box::new(move |k| trace.omega(k, j, i).unwrap_or(f64::NAN))));
    }
    cols
}

fn chart(title: &str, y_label: &str, trace: &Trace, cols: &[Column<'_>], map: impl Fn(f64) -> f64) -> String {
    let series: Vec<Series> = cols
        .iter()
        .map(|(name, f)| Series { label: name.clone(), values: (0..trace.len()).map(|k| map(f(k))).collect() })
        .collect();
    svg::line_chart(title, y_label, &trace.t, &series)
}

/// Writes every run artifact into `dir` and returns the paths written.
pub fn write_run(dir: &Path, trace: &Trace, summary: &Summary, with_svg: bool) -> Result<Vec<PathBuf>, CliError> {
    create_dir(dir)?;
    let mut written = Vec::new();

    let path = dir.join(TRACE_FILE);
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    trace.write_csv(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    written.push(path);

    let path = dir.join(SUMMARY_FILE);
    write_json(&path, summary)?;
    written.push(path);

    let states = state_columns(trace);
    let kl = kl_columns(trace);
    let trust = trust_columns(trace);
    for (name, cols) in [(STATES_FILE, &states), (KL_FILE, &kl), (TRUST_FILE, &trust)] {
        let path = dir.join(name);
        write_columns(&path, trace, cols)?;
        written.push(path);
    }

    if with_svg {
        let first_component: Vec<Column<'_>> =
            states.into_iter().enumerate().filter(|(k, _)| k % trace.n_x == 0).map(|(_, c)| c).collect();
        let charts = [
            (
                "states.svg",
                chart(&format!("{}: first state component", summary.scenario), "x", trace, &first_component, |v| v),
            ),
            (
                "kl.svg",
                chart(&format!("{}: windowed divergence averages", summary.scenario), "log10 KL", trace, &kl, |v| {
                    v.max(1e-12).log10()
                }),
            ),
            (
                "trust.svg",
                chart(&format!("{}: self-belief and trust", summary.scenario), "weight", trace, &trust, |v| v),
            ),
        ];
        for (name, body) in charts {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
