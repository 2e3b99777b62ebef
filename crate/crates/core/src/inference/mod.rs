//! Particle-based MVA SLAM: agent and PMVA beliefs, bootstrap and robust
//! mixture proposals, association-weighted measurement updates, PMVA birth,
//! detection and pruning, and MMSE estimates.

mod belief;
mod filter;
mod likelihood;
pub mod resample;
mod sampling;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub use belief::{
    estimate_agent, estimate_mva, predict_agent, predict_pmva, AgentBelief, PmvaBelief,
};
pub use filter::{
    birth_pmvas, detect_and_prune, AnchorUpdate, BirthCandidates, DeclaredMva, FilterConfig,
    FilterDiagnostics, MvaSlamFilter, StepOutput,
};
pub use likelihood::range_likelihood;
pub use sampling::{
    draw_bootstrap, draw_measurement_component, draw_robust_mixture, mixture_component_size,
    JointSamples, MeasurementComponent,
};
pub use schedule::{initial_trigger, schedule_robust};

pub const HYPER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Predicted beliefs as proposal at every step.
    #[default]
    Bootstrap,
    /// Periodic mixture proposals built from each anchor's best measurement.
    Robust,
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMode::Bootstrap => "bootstrap",
            SamplerMode::Robust => "robust",
        })
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(SamplerMode::Bootstrap),
            "robust" => Ok(SamplerMode::Robust),
            other => Err(Error::config(format!("unknown sampler mode {other:?}"))),
        }
    }
}

/// Axis-aligned square area of interest for new MVAs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRegion {
    pub center: Point2,
    pub half_width: f64,
}

impl PriorRegion {
    pub fn area(&self) -> f64 {
        4.0 * self.half_width * self.half_width
    }

    /// Uniform density on the region.
    pub fn density(&self) -> f64 {
        1.0 / self.area()
    }

    pub fn contains(&self, p: Point2) -> bool {
        (p.x - self.center.x).abs() <= self.half_width
            && (p.y - self.center.y).abs() <= self.half_width
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let h = self.half_width;
        Point2::new(
            self.center.x + rng.random_range(-h..h),
            self.center.y + rng.random_range(-h..h),
        )
    }
}

/// Filter hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub schema_version: u32,
    /// Particle count `I` for the agent and every PMVA.
    pub num_particles: usize,
    /// Per-component sample count of the mixture proposal. `None` picks the
    /// smallest `I'` with `I' (|J| + 1) >= I`; larger values enlarge the pool
    /// from which `I` samples are selected.
    #[serde(default)]
    pub i_prime: Option<usize>,
    pub p_survival: f64,
    pub p_detect: f64,
    /// Existence threshold for declaring a PMVA.
    pub p_declare: f64,
    /// Existence threshold below which a PMVA is removed.
    pub p_prune: f64,
    /// Expected number of new features per step.
    pub mu_birth: f64,
    /// Expected number of clutter measurements per anchor and step.
    pub mu_clutter: f64,
    /// Clutter ranges are modelled as uniform on `[0, clutter_range_max]`.
    pub clutter_range_max: f64,
    pub sigma_range: f64,
    /// Driving acceleration standard deviation of the agent motion model.
    pub sigma_drive: f64,
    /// Regularization noise added to PMVA particles at every prediction.
    pub sigma_reg: f64,
    /// Half width of the square area of interest for new MVAs (m).
    pub prior_half_width: f64,
    /// Center of that square; defaults to the floor-plan center.
    #[serde(default)]
    pub prior_center: Option<Point2>,
    /// Minimum gap between robust proposals.
    pub n1: usize,
    /// Maximum gap between robust proposals.
    pub n2: usize,
    /// Robust proposals stop once a PMVA has existed this many steps.
    pub n_max: usize,
    pub sampler_mode: SamplerMode,
    /// Whether the direct agent-anchor path is part of the measurement model.
    #[serde(default = "default_true")]
    pub model_los: bool,
    /// Half width of the uniform initial position spread (m).
    pub init_position_spread: f64,
    /// Half width of the uniform initial velocity spread (m/s).
    pub init_velocity_spread: f64,
    /// Agent particles are resampled when ESS drops below this fraction of `I`.
    #[serde(default = "default_ess_fraction")]
    pub resample_ess_fraction: f64,
}

fn default_true() -> bool {
    true
}

fn default_ess_fraction() -> f64 {
    0.5
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            schema_version: HYPER_SCHEMA_VERSION,
            num_particles: 5000,
            i_prime: None,
            p_survival: 0.999,
            p_detect: 0.95,
            p_declare: 0.5,
            p_prune: 1e-3,
            mu_birth: 0.01,
            mu_clutter: 1.0,
            clutter_range_max: 30.0,
            sigma_range: 0.1,
            sigma_drive: 0.0032,
            sigma_reg: 1e-5,
            prior_half_width: 15.0,
            prior_center: None,
            n1: 5,
            n2: 10,
            n_max: 120,
            sampler_mode: SamplerMode::Bootstrap,
            model_los: true,
            init_position_spread: 0.1,
            init_velocity_spread: 0.01,
            resample_ess_fraction: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != HYPER_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported hyperparameter schema_version {} (expected {HYPER_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.num_particles == 0 {
            return Err(Error::config("num_particles must be at least 1"));
        }
        if !(0.0 < self.p_prune && self.p_prune < self.p_declare && self.p_declare < 1.0) {
            return Err(Error::config("need 0 < p_prune < p_declare < 1"));
        }
        if !(self.n1 <= self.n2 && self.n2 <= self.n_max) {
            return Err(Error::config("need n1 <= n2 <= n_max"));
        }
        for (name, p) in [("p_survival", self.p_survival), ("p_detect", self.p_detect)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.sigma_range > 0.0) || !(self.clutter_range_max > 0.0) {
            return Err(Error::config(
                "sigma_range and clutter_range_max must be positive",
            ));
        }
        if !(self.sigma_drive >= 0.0) || !(self.sigma_reg >= 0.0) {
            return Err(Error::config("noise levels must be nonnegative"));
        }
        if !(self.mu_birth >= 0.0) || !(self.mu_clutter >= 0.0) {
            return Err(Error::config("mu_birth and mu_clutter must be nonnegative"));
        }
        if !(self.prior_half_width > 0.0) {
            return Err(Error::config("prior_half_width must be positive"));
        }
        if !(0.0..=1.0).contains(&self.resample_ess_fraction) {
            return Err(Error::config("resample_ess_fraction outside [0, 1]"));
        }
        Ok(())
    }

    /// Clutter intensity `mu_fa * f_fa(z)` for a measured range.
    pub fn clutter_intensity(&self, z: f64) -> f64 {
        if (0.0..=self.clutter_range_max).contains(&z) {
            self.mu_clutter / self.clutter_range_max
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_thresholds() {
        let hp = Hyperparams {
            p_prune: 0.6,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparams {
            n1: 11,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "robust".parse::<SamplerMode>().unwrap(),
            SamplerMode::Robust
        );
        assert_eq!(SamplerMode::Bootstrap.to_string(), "bootstrap");
        assert!("other".parse::<SamplerMode>().is_err());
    }

    #[test]
    fn clutter_density_is_uniform() {
        let hp = Hyperparams::default();
        assert!((hp.clutter_intensity(10.0) - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(hp.clutter_intensity(-0.1), 0.0);
        assert_eq!(hp.clutter_intensity(30.5), 0.0);
    }
}
