//! Seeded Monte Carlo execution, persistence of per-run logs, and summary
//! statistics.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/scenario.json      scenario as run
//! <out>/hyper.json         effective hyperparameters (mode and particle count applied)
//! <out>/experiment.json    run count, seeds, evaluation parameters
//! <out>/summary.json       MOSPA, RMSE, divergence fraction
//! <out>/runs/run_NNNN.csv      per-step trajectory and map statistics
//! <out>/runs/run_NNNN_map.csv  per-step declared MVAs
//! <out>/runs/run_NNNN.json     run flags, counters and wall time
//! ```

mod io;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::inference::{
    DeclaredMva, FilterConfig, FilterDiagnostics, Hyperparams, MvaSlamFilter, SamplerMode,
};
use crate::metrics::{
    agent_rmse, is_converged_states, mospa, ospa, ConvergenceCriterion, OspaParams,
};
use crate::rng::{substream, Stream};
use crate::scenario::{
    generate_measurements, generate_trajectory_with, AgentState, ScenarioConfig,
};

pub use io::{load_hyperparams, load_scenario, read_run_csv, write_json, RUN_CSV_HEADER};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Everything that determines an experiment's persisted numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub hyper: Hyperparams,
    pub n_runs: usize,
    pub base_seed: u64,
    pub ospa: OspaParams,
    /// Error bound of a converged run.
    pub convergence_threshold: f64,
    pub convergence_criterion: ConvergenceCriterion,
}

impl ExperimentSpec {
    pub fn new(
        scenario: ScenarioConfig,
        hyper: Hyperparams,
        n_runs: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            scenario,
            hyper,
            n_runs,
            base_seed,
            ospa: OspaParams::default(),
            convergence_threshold: 0.5,
            convergence_criterion: ConvergenceCriterion::Position,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.hyper.validate()?;
        self.ospa.validate()?;
        if self.n_runs == 0 {
            return Err(Error::config("n_runs must be positive"));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::config("convergence_threshold must be positive"));
        }
        Ok(())
    }

    pub fn run_seed(&self, run_id: usize) -> u64 {
        self.base_seed.wrapping_add(run_id as u64)
    }
}

/// Experiment-level metadata persisted next to the runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub n_runs: usize,
    pub base_seed: u64,
    pub sampler_mode: SamplerMode,
    pub num_particles: usize,
    pub n_steps: usize,
    pub ospa: OspaParams,
    pub convergence_threshold: f64,
    #[serde(default)]
    pub convergence_criterion: ConvergenceCriterion,
    pub true_mvas: Vec<Point2>,
}

/// One filter run against one simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub sampler_mode: SamplerMode,
    pub truth: Vec<AgentState>,
    pub estimates: Vec<AgentState>,
    pub declared: Vec<Vec<DeclaredMva>>,
    pub true_mvas: Vec<Point2>,
    pub ospa: Vec<f64>,
    pub num_pmvas: Vec<usize>,
    pub robust_pmvas: Vec<usize>,
    pub agent_reset: Vec<bool>,
    pub converged: bool,
    pub diagnostics: FilterDiagnostics,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        !self.converged
    }

    pub fn truth_positions(&self) -> Vec<Point2> {
        self.truth.iter().map(|s| s.position).collect()
    }

    pub fn estimate_positions(&self) -> Vec<Point2> {
        self.estimates.iter().map(|s| s.position).collect()
    }
}

/// Flags and counters of a run that are not part of the per-step CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: usize,
    pub seed: u64,
    pub sampler_mode: SamplerMode,
    pub converged: bool,
    pub diverged: bool,
    pub agent_resets: usize,
    pub agent_resamples: usize,
    pub robust_proposals: usize,
    pub degenerate_components: usize,
    pub births: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub n_runs: usize,
    pub sampler_mode: SamplerMode,
    pub n_steps: usize,
    /// Per-step mean OSPA of the declared map over all runs.
    pub mospa: Vec<f64>,
    /// Per-step agent position RMSE over converged runs (empty if none).
    pub rmse: Vec<f64>,
    pub converged_runs: usize,
    pub diverged_fraction: f64,
    /// Mean of `mospa` over the final quarter of the steps.
    pub mospa_final_quarter: f64,
    /// Mean of `rmse` over the final quarter of the steps (`None` if no run converged).
    pub rmse_final_quarter: Option<f64>,
}

impl Summary {
    pub fn from_series(
        sampler_mode: SamplerMode,
        n_steps: usize,
        ospa_runs: &[Vec<f64>],
        estimates: &[Vec<AgentState>],
        truth: &[Vec<AgentState>],
        threshold: f64,
        criterion: ConvergenceCriterion,
    ) -> Result<Self> {
        if ospa_runs.is_empty() {
            return Err(Error::config("no runs to summarize"));
        }
        let converged: Vec<bool> = estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| is_converged_states(e, t, threshold, criterion))
            .collect();
        let mospa = mospa(ospa_runs)?;
        let positions = |runs: &[Vec<AgentState>]| -> Vec<Vec<Point2>> {
            runs.iter()
                .map(|r| r.iter().map(|s| s.position).collect())
                .collect()
        };
        let rmse = agent_rmse(&positions(estimates), &positions(truth), &converged)?;
        let converged_runs = converged.iter().filter(|&&c| c).count();
        let n_runs = ospa_runs.len();
        Ok(Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            n_runs,
            sampler_mode,
            n_steps,
            mospa_final_quarter: final_quarter_mean(&mospa),
            rmse_final_quarter: (!rmse.is_empty()).then(|| final_quarter_mean(&rmse)),
            mospa,
            rmse,
            converged_runs,
            diverged_fraction: (n_runs - converged_runs) as f64 / n_runs as f64,
        })
    }
}

/// First index of the final quarter of `n` steps.
pub fn final_quarter_start(n: usize) -> usize {
    n - n.div_ceil(4)
}

/// Mean over the final quarter (at least one element) of a series.
pub fn final_quarter_mean(series: &[f64]) -> f64 {
    window_mean(series, final_quarter_start(series.len()), series.len())
}

/// Mean of `series[start..end]`, clamped to the series length.
pub fn window_mean(series: &[f64], start: usize, end: usize) -> f64 {
    let end = end.min(series.len());
    if start >= end {
        return f64::NAN;
    }
    series[start..end].iter().sum::<f64>() / (end - start) as f64
}

/// Simulates the world of `seed` and runs the filter on it.
pub fn run_single(spec: &ExperimentSpec, run_id: usize) -> Result<RunRecord> {
    let started = Instant::now();
    let seed = spec.run_seed(run_id);
    let scenario = &spec.scenario;
    let truth = generate_trajectory_with(scenario, &mut substream(seed, Stream::Trajectory))?;
    let mut meas_rng = substream(seed, Stream::Measurements);
    let config = FilterConfig::from_scenario(scenario, spec.hyper.clone());
    let mut filter = MvaSlamFilter::new(config, &truth[0], seed)?;
    let true_mvas = scenario.true_mvas();

    let n_steps = truth.len();
    let mut rec = RunRecord {
        run_id,
        seed,
        sampler_mode: spec.hyper.sampler_mode,
        truth: truth.clone(),
        estimates: Vec::with_capacity(n_steps),
        declared: Vec::with_capacity(n_steps),
        true_mvas: true_mvas.clone(),
        ospa: Vec::with_capacity(n_steps),
        num_pmvas: Vec::with_capacity(n_steps),
        robust_pmvas: Vec::with_capacity(n_steps),
        agent_reset: Vec::with_capacity(n_steps),
        converged: false,
        diagnostics: FilterDiagnostics::default(),
        wall_time_s: 0.0,
    };
    for (n, state) in truth.iter().enumerate() {
        let batches = generate_measurements(scenario, state, n, &mut meas_rng);
        let out = filter.step(n, &batches)?;
        let positions: Vec<Point2> = out.declared.iter().map(|d| d.position).collect();
        rec.ospa.push(ospa(&positions, &true_mvas, &spec.ospa));
        rec.estimates.push(out.agent);
        rec.declared.push(out.declared);
        rec.num_pmvas.push(out.num_pmvas);
        rec.robust_pmvas.push(out.robust_pmvas);
        rec.agent_reset.push(out.agent_reset);
    }
    rec.converged = is_converged_states(
        &rec.estimates,
        &rec.truth,
        spec.convergence_threshold,
        spec.convergence_criterion,
    );
    rec.diagnostics = filter.diagnostics();
    rec.wall_time_s = started.elapsed().as_secs_f64();
    Ok(rec)
}

/// Runs of an experiment with their summary.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
}

/// Executes all runs on the rayon pool (results ordered by run index),
/// summarizes them, and writes the output directory when `out` is given.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentOutput> {
    spec.validate()?;
    let runs: Vec<RunRecord> = (0..spec.n_runs)
        .into_par_iter()
        .map(|r| run_single(spec, r))
        .collect::<Result<_>>()?;
    let summary = summarize_runs(spec, &runs)?;
    if let Some(dir) = out {
        io::write_experiment(dir, spec, &runs, &summary)?;
    }
    Ok(ExperimentOutput { summary, runs })
}

pub fn summarize_runs(spec: &ExperimentSpec, runs: &[RunRecord]) -> Result<Summary> {
    let ospa_runs: Vec<Vec<f64>> = runs.iter().map(|r| r.ospa.clone()).collect();
    let est: Vec<Vec<AgentState>> = runs.iter().map(|r| r.estimates.clone()).collect();
    let truth: Vec<Vec<AgentState>> = runs.iter().map(|r| r.truth.clone()).collect();
    Summary::from_series(
        spec.hyper.sampler_mode,
        spec.scenario.n_steps,
        &ospa_runs,
        &est,
        &truth,
        spec.convergence_threshold,
        spec.convergence_criterion,
    )
}

/// Recomputes the summary from the persisted runs of `dir` and rewrites
/// `summary.json`.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let summary = io::summarize_dir(dir)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Paths of the per-run files of `run_id` below `dir`.
pub fn run_paths(dir: &Path, run_id: usize) -> (PathBuf, PathBuf, PathBuf) {
    let runs = dir.join("runs");
    (
        runs.join(format!("run_{run_id:04}.csv")),
        runs.join(format!("run_{run_id:04}_map.csv")),
        runs.join(format!("run_{run_id:04}.json")),
    )
}
