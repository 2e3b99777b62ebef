//! JSON configuration files and CSV run logs.
//!
//! Floating-point values are written in shortest round-trip form, so reading
//! a log back reproduces the in-memory numbers bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{run_paths, ExperimentMeta, ExperimentSpec, RunMeta, RunRecord, Summary};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::inference::Hyperparams;
use crate::scenario::{AgentState, ScenarioConfig};

/// Column names of the per-step run log.
pub const RUN_CSV_HEADER: [&str; 14] = [
    "time",
    "truth_x",
    "truth_y",
    "truth_vx",
    "truth_vy",
    "est_x",
    "est_y",
    "est_vx",
    "est_vy",
    "ospa",
    "n_declared",
    "n_pmvas",
    "n_robust",
    "agent_reset",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRow {
    time: usize,
    truth_x: f64,
    truth_y: f64,
    truth_vx: f64,
    truth_vy: f64,
    est_x: f64,
    est_y: f64,
    est_vx: f64,
    est_vy: f64,
    ospa: f64,
    n_declared: usize,
    n_pmvas: usize,
    n_robust: usize,
    agent_reset: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapRow {
    time: usize,
    label: u64,
    x: f64,
    y: f64,
    existence: f64,
}

/// Per-step series recovered from a run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub truth: Vec<AgentState>,
    pub estimates: Vec<AgentState>,
    pub ospa: Vec<f64>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_hyperparams(path: &Path) -> Result<Hyperparams> {
    let hp: Hyperparams = read_json(path)?;
    hp.validate()?;
    Ok(hp)
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_run(dir: &Path, rec: &RunRecord) -> Result<()> {
    let (csv_path, map_path, meta_path) = run_paths(dir, rec.run_id);
    let rows = (0..rec.truth.len()).map(|n| RunRow {
        time: n,
        truth_x: rec.truth[n].position.x,
        truth_y: rec.truth[n].position.y,
        truth_vx: rec.truth[n].velocity.x,
        truth_vy: rec.truth[n].velocity.y,
        est_x: rec.estimates[n].position.x,
        est_y: rec.estimates[n].position.y,
        est_vx: rec.estimates[n].velocity.x,
        est_vy: rec.estimates[n].velocity.y,
        ospa: rec.ospa[n],
        n_declared: rec.declared[n].len(),
        n_pmvas: rec.num_pmvas[n],
        n_robust: rec.robust_pmvas[n],
        agent_reset: u8::from(rec.agent_reset[n]),
    });
    write_rows(&csv_path, rows)?;
    // Header only when nothing was ever declared.
    let map_rows: Vec<MapRow> = rec
        .declared
        .iter()
        .enumerate()
        .flat_map(|(n, ds)| {
            ds.iter().map(move |d| MapRow {
                time: n,
                label: d.label,
                x: d.position.x,
                y: d.position.y,
                existence: d.existence,
            })
        })
        .collect();
    if map_rows.is_empty() {
        let mut w = csv::Writer::from_path(&map_path).map_err(csv_error(&map_path))?;
        w.write_record(["time", "label", "x", "y", "existence"])
            .map_err(csv_error(&map_path))?;
        w.flush().map_err(|e| Error::io(&map_path, e))?;
    } else {
        write_rows(&map_path, map_rows)?;
    }
    let d = rec.diagnostics;
    write_json(
        &meta_path,
        &RunMeta {
            run_id: rec.run_id,
            seed: rec.seed,
            sampler_mode: rec.sampler_mode,
            converged: rec.converged,
            diverged: rec.diverged(),
            agent_resets: d.agent_resets,
            agent_resamples: d.agent_resamples,
            robust_proposals: d.robust_proposals,
            degenerate_components: d.degenerate_components,
            births: d.births,
            wall_time_s: rec.wall_time_s,
        },
    )
}

pub(crate) fn write_experiment(
    dir: &Path,
    spec: &ExperimentSpec,
    runs: &[RunRecord],
    summary: &Summary,
) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write_json(&dir.join("scenario.json"), &spec.scenario)?;
    write_json(&dir.join("hyper.json"), &spec.hyper)?;
    write_json(
        &dir.join("experiment.json"),
        &ExperimentMeta {
            n_runs: spec.n_runs,
            base_seed: spec.base_seed,
            sampler_mode: spec.hyper.sampler_mode,
            num_particles: spec.hyper.num_particles,
            n_steps: spec.scenario.n_steps,
            ospa: spec.ospa,
            convergence_threshold: spec.convergence_threshold,
            convergence_criterion: spec.convergence_criterion,
            true_mvas: spec.scenario.true_mvas(),
        },
    )?;
    for rec in runs {
        write_run(dir, rec)?;
    }
    write_json(&dir.join("summary.json"), summary)
}

pub fn read_run_csv(path: &Path) -> Result<RunSeries> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let mut out = RunSeries {
        truth: Vec::new(),
        estimates: Vec::new(),
        ospa: Vec::new(),
    };
    for row in r.deserialize::<RunRow>() {
        let row = row.map_err(csv_error(path))?;
        out.truth.push(AgentState::new(
            Point2::new(row.truth_x, row.truth_y),
            Point2::new(row.truth_vx, row.truth_vy),
        ));
        out.estimates.push(AgentState::new(
            Point2::new(row.est_x, row.est_y),
            Point2::new(row.est_vx, row.est_vy),
        ));
        out.ospa.push(row.ospa);
    }
    Ok(out)
}

/// Run logs below `dir/runs`, ordered by file name (and hence run index).
fn run_csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let runs_dir = dir.join("runs");
    let entries = fs::read_dir(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&runs_dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("run_") && name.ends_with(".csv") && !name.ends_with("_map.csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn summarize_dir(dir: &Path) -> Result<Summary> {
    let files = run_csv_files(dir)?;
    if files.is_empty() {
        return Err(Error::config(format!(
            "no run logs below {}",
            dir.display()
        )));
    }
    let meta: ExperimentMeta = read_json(&dir.join("experiment.json"))?;
    let mut ospa_runs = Vec::with_capacity(files.len());
    let mut est = Vec::with_capacity(files.len());
    let mut truth = Vec::with_capacity(files.len());
    for f in &files {
        let s = read_run_csv(f)?;
        ospa_runs.push(s.ospa);
        est.push(s.estimates);
        truth.push(s.truth);
    }
    Summary::from_series(
        meta.sampler_mode,
        meta.n_steps,
        &ospa_runs,
        &est,
        &truth,
        meta.convergence_threshold,
        meta.convergence_criterion,
    )
}
