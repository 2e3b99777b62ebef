use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvaslam::harness::{self, load_hyperparams, load_scenario, write_json, ExperimentSpec};
use mvaslam::inference::{Hyperparams, SamplerMode};
use mvaslam::metrics::ConvergenceCriterion;
use mvaslam::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "mvaslam",
    version,
    about = "Multipath RF SLAM Monte Carlo harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded Monte Carlo filter runs and write logs plus a summary.
    Simulate {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Hyperparameter JSON file.
        #[arg(long)]
        hyper: PathBuf,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        /// Run r uses seed `seed + r`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the sampler mode of the hyperparameter file.
        #[arg(long)]
        mode: Option<SamplerMode>,
        /// Overrides the particle count of the hyperparameter file.
        #[arg(long)]
        particles: Option<usize>,
        /// Count velocity errors (m/s) in the convergence test as well.
        #[arg(long)]
        full_state_convergence: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute summary.json from the run logs of an output directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write the built-in default scenario and hyperparameters as JSON.
    Defaults {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> mvaslam::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            hyper,
            runs,
            seed,
            mode,
            particles,
            full_state_convergence,
            out,
        } => {
            let scenario = load_scenario(&config)?;
            let mut hp = load_hyperparams(&hyper)?;
            if let Some(mode) = mode {
                hp.sampler_mode = mode;
            }
            if let Some(i) = particles {
                hp.num_particles = i;
            }
            let mut spec = ExperimentSpec::new(scenario, hp, runs, seed);
            if full_state_convergence {
                spec.convergence_criterion = ConvergenceCriterion::FullState;
            }
            let result = harness::run_experiment(&spec, Some(&out))?;
            let s = &result.summary;
            println!(
                "{} runs ({}): diverged {:.3}, MOSPA final quarter {:.3} m, RMSE final quarter {}",
                s.n_runs,
                s.sampler_mode,
                s.diverged_fraction,
                s.mospa_final_quarter,
                s.rmse_final_quarter
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3} m")),
            );
            println!("wrote {}", out.display());
        }
        Command::Summarize { input } => {
            let s = harness::summarize(&input)?;
            println!(
                "{} runs ({}): diverged {:.3}, MOSPA final quarter {:.3} m",
                s.n_runs, s.sampler_mode, s.diverged_fraction, s.mospa_final_quarter
            );
        }
        Command::Defaults { out_dir } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| mvaslam::Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            write_json(
                &out_dir.join("scenario_default.json"),
                &ScenarioConfig::default(),
            )?;
            write_json(&out_dir.join("hyper_default.json"), &Hyperparams::default())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
