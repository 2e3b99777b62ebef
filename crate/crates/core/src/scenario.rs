//! Synthetic world: agent trajectories and per-anchor range measurements with
//! Gaussian noise, missed detections and Poisson clutter.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{expected_range, mva_from_surface, va_from_mva, Point2, Surface};
use crate::rng::{substream, Stream};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Agent position (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Point2,
    pub velocity: Point2,
}

impl AgentState {
    pub const fn new(position: Point2, velocity: Point2) -> Self {
        Self { position, velocity }
    }
}

/// One step of the near constant-velocity model `x_n = A x_{n-1} + B w_n`
/// with `A = [I, dt I; 0, I]` and `B = [dt^2/2 I; dt I]`.
#[inline]
pub fn propagate_cv(state: &AgentState, dt: f64, drive: Point2) -> AgentState {
    AgentState {
        position: state.position + state.velocity * dt + drive * (0.5 * dt * dt),
        velocity: state.velocity + drive * dt,
    }
}

/// How the true agent trajectory is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Stochastic CV model driven by `sigma_drive`, starting from `start`.
    ConstantVelocity { start: AgentState },
    /// Deterministic traversal of a polyline at `speed` (m/s), starting at
    /// rest and accelerating linearly over `ramp_steps` steps. With `closed`
    /// the polyline loops back to its first point.
    Waypoints {
        points: Vec<Point2>,
        speed: f64,
        #[serde(default)]
        ramp_steps: usize,
        #[serde(default)]
        closed: bool,
    },
}

/// Simulated world and sensor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Physical anchor positions.
    pub anchors: Vec<Point2>,
    pub surfaces: Vec<Surface>,
    pub trajectory: TrajectorySpec,
    pub n_steps: usize,
    /// Range noise standard deviation (m).
    pub sigma_range: f64,
    /// Detection probability of each surface path.
    pub p_detect: f64,
    /// Detection probability of the direct path; defaults to `p_detect`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_detect_los: Option<f64>,
    /// Mean number of clutter ranges per anchor and step.
    pub mu_clutter: f64,
    /// Clutter ranges are uniform on `[0, clutter_range_max]`.
    pub clutter_range_max: f64,
    #[serde(default = "default_true")]
    pub include_los: bool,
    pub dt: f64,
    /// Driving acceleration standard deviation (m/s^2) for the CV mode.
    pub sigma_drive: f64,
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    pub rng_seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_max_speed() -> f64 {
    10.0
}

impl Default for ScenarioConfig {
    /// Rectangular room with the origin inside, two PAs at (-0.5, 6) and
    /// (-0.5, 1.3), and a slow smooth loop for the agent.
    fn default() -> Self {
        let walls = [
            (Point2::new(1.0, 0.0), 4.0),
            (Point2::new(-1.0, 0.0), 4.0),
            (Point2::new(0.0, 1.0), 8.0),
            (Point2::new(0.0, -1.0), 2.5),
        ];
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            anchors: vec![Point2::new(-0.5, 6.0), Point2::new(-0.5, 1.3)],
            surfaces: walls
                .iter()
                .map(|&(normal, offset)| Surface { normal, offset })
                .collect(),
            trajectory: TrajectorySpec::Waypoints {
                points: default_loop(),
                speed: 0.05,
                ramp_steps: 20,
                closed: true,
            },
            n_steps: 200,
            sigma_range: 0.1,
            p_detect: 0.95,
            p_detect_los: None,
            mu_clutter: 1.0,
            clutter_range_max: 30.0,
            include_los: true,
            dt: 1.0,
            sigma_drive: 0.0032,
            max_speed: 10.0,
            rng_seed: 0,
        }
    }
}

/// A smooth elliptical loop, sampled densely enough that the heading change
/// between consecutive segments stays small. It starts at (3.5, 4), off the
/// line x = -0.5 through both PAs: a start on that line is mirror-symmetric
/// with respect to the anchors, and the direct paths alone cannot tell the
/// two sides apart.
fn default_loop() -> Vec<Point2> {
    let (cx, cy, rx, ry) = (1.5, 4.0, 2.0, 2.5);
    let n = 48;
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Point2::new(cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported scenario schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.anchors.is_empty() {
            return Err(Error::config("at least one anchor is required"));
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        for p in [Some(self.p_detect), self.p_detect_los]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!(
                    "detection probability {p} outside [0, 1]"
                )));
            }
        }
        if !(self.sigma_range > 0.0) {
            return Err(Error::config("sigma_range must be positive"));
        }
        if !(self.mu_clutter >= 0.0) {
            return Err(Error::config("mu_clutter must be nonnegative"));
        }
        if !(self.clutter_range_max > 0.0) {
            return Err(Error::config("clutter_range_max must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.sigma_drive >= 0.0) {
            return Err(Error::config("sigma_drive must be nonnegative"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps must be positive"));
        }
        match &self.trajectory {
            TrajectorySpec::Waypoints { points, speed, .. } => {
                if points.is_empty() {
                    return Err(Error::config("waypoint list is empty"));
                }
                if !(*speed >= 0.0) || *speed > self.max_speed {
                    return Err(Error::config(format!(
                        "waypoint speed {speed} out of range"
                    )));
                }
            }
            TrajectorySpec::ConstantVelocity { start } => {
                if start.velocity.norm() > self.max_speed {
                    return Err(Error::config("initial speed exceeds max_speed"));
                }
            }
        }
        Ok(())
    }

    /// True MVA positions, one per surface.
    pub fn true_mvas(&self) -> Vec<Point2> {
        self.surfaces.iter().map(mva_from_surface).collect()
    }

    pub fn p_detect_los(&self) -> f64 {
        self.p_detect_los.unwrap_or(self.p_detect)
    }

    /// Center of the bounding box of the surfaces (falls back to the anchors'
    /// bounding box when the surfaces do not close a region along an axis).
    pub fn floor_plan_center(&self) -> Point2 {
        let axis = |dir: Point2, fallback: &dyn Fn(&Point2) -> f64| {
            let hi = self
                .surfaces
                .iter()
                .filter(|s| s.normal.dot(dir) > 1.0 - 1e-9)
                .map(|s| s.offset)
                .fold(f64::NAN, f64::min);
            let lo = self
                .surfaces
                .iter()
                .filter(|s| s.normal.dot(dir) < -1.0 + 1e-9)
                .map(|s| -s.offset)
                .fold(f64::NAN, f64::max);
            if hi.is_finite() && lo.is_finite() {
                0.5 * (hi + lo)
            } else {
                let vals: Vec<f64> = self.anchors.iter().map(fallback).collect();
                0.5 * (vals.iter().cloned().fold(f64::INFINITY, f64::min)
                    + vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }
        };
        Point2::new(
            axis(Point2::new(1.0, 0.0), &|p| p.x),
            axis(Point2::new(0.0, 1.0), &|p| p.y),
        )
    }
}

/// Where a simulated range came from. Kept for diagnostics only; the filter
/// never sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementOrigin {
    LineOfSight,
    Surface(usize),
    Clutter,
}

/// Unordered range measurements of one anchor at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub anchor_index: usize,
    pub time_index: usize,
    pub ranges: Vec<f64>,
    /// Ground-truth origin of each entry of `ranges`.
    pub origins: Vec<MeasurementOrigin>,
    /// Per-measurement noise standard deviations; `None` means the filter's
    /// nominal value applies to every entry.
    pub range_sigmas: Option<Vec<f64>>,
}

impl MeasurementBatch {
    pub fn empty(anchor_index: usize, time_index: usize) -> Self {
        Self {
            anchor_index,
            time_index,
            ranges: Vec::new(),
            origins: Vec::new(),
            range_sigmas: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Noise standard deviation of measurement `m`.
    pub fn sigma(&self, m: usize, nominal: f64) -> f64 {
        self.range_sigmas.as_ref().map_or(nominal, |s| s[m])
    }
}

/// Trajectory seeded from `config.rng_seed`.
pub fn generate_trajectory(config: &ScenarioConfig) -> Result<Vec<AgentState>> {
    let mut rng = substream(config.rng_seed, Stream::Trajectory);
    generate_trajectory_with(config, &mut rng)
}

pub fn generate_trajectory_with<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<AgentState>> {
    match &config.trajectory {
        TrajectorySpec::ConstantVelocity { start } => {
            let mut states = Vec::with_capacity(config.n_steps);
            let mut state = *start;
            states.push(state);
            while states.len() < config.n_steps {
                let drive = Point2::new(
                    config.sigma_drive * rng.sample::<f64, _>(StandardNormal),
                    config.sigma_drive * rng.sample::<f64, _>(StandardNormal),
                );
                state = propagate_cv(&state, config.dt, drive);
                let speed = state.velocity.norm();
                if speed > config.max_speed {
                    state.velocity = state.velocity * (config.max_speed / speed);
                }
                states.push(state);
            }
            Ok(states)
        }
        TrajectorySpec::Waypoints {
            points,
            speed,
            ramp_steps,
            closed,
        } => {
            if points.is_empty() {
                return Err(Error::config("waypoint list is empty"));
            }
            let path = Polyline::new(points, *closed);
            let mut positions = Vec::with_capacity(config.n_steps);
            let mut s = 0.0;
            for n in 0..config.n_steps {
                positions.push(path.at(s));
                let ramp = if *ramp_steps == 0 {
                    1.0
                } else {
                    ((n + 1) as f64 / *ramp_steps as f64).min(1.0)
                };
                s += speed * ramp * config.dt;
            }
            let mut states = Vec::with_capacity(config.n_steps);
            for (n, &p) in positions.iter().enumerate() {
                let velocity = if n == 0 {
                    Point2::ORIGIN
                } else {
                    (p - positions[n - 1]) * (1.0 / config.dt)
                };
                states.push(AgentState::new(p, velocity));
            }
            Ok(states)
        }
    }
}

/// Arc-length parameterized polyline.
struct Polyline {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
    closed: bool,
}

impl Polyline {
    fn new(points: &[Point2], closed: bool) -> Self {
        let mut pts = points.to_vec();
        if closed && pts.len() > 1 {
            pts.push(pts[0]);
        }
        let mut cumulative = vec![0.0];
        for w in pts.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + w[0].distance(w[1]));
        }
        Self {
            points: pts,
            cumulative,
            closed,
        }
    }

    fn at(&self, s: f64) -> Point2 {
        let total = *self.cumulative.last().unwrap();
        if total <= 0.0 {
            return self.points[0];
        }
        let s = if self.closed {
            s.rem_euclid(total)
        } else {
            s.min(total)
        };
        let seg = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        if len <= 0.0 {
            return self.points[seg];
        }
        let t = (s - self.cumulative[seg]) / len;
        self.points[seg] + (self.points[seg + 1] - self.points[seg]) * t
    }
}

/// One batch per anchor for the agent at time `n`.
pub fn generate_measurements<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    agent: &AgentState,
    n: usize,
    rng: &mut R,
) -> Vec<MeasurementBatch> {
    let noise = Normal::new(0.0, config.sigma_range.max(0.0)).expect("finite sigma");
    let mvas = config.true_mvas();
    config
        .anchors
        .iter()
        .enumerate()
        .map(|(j, &pa)| {
            let mut entries: Vec<(f64, MeasurementOrigin)> = Vec::new();
            if config.include_los && rng.random::<f64>() < config.p_detect_los() {
                let r = expected_range(agent.position, pa) + noise.sample(rng);
                entries.push((r, MeasurementOrigin::LineOfSight));
            }
            for (k, &mva) in mvas.iter().enumerate() {
                if rng.random::<f64>() < config.p_detect {
                    let va = va_from_mva(mva, pa).expect("validated surface");
                    let r = expected_range(agent.position, va) + noise.sample(rng);
                    entries.push((r, MeasurementOrigin::Surface(k)));
                }
            }
            if config.mu_clutter > 0.0 {
                let count = Poisson::new(config.mu_clutter)
                    .expect("positive clutter mean")
                    .sample(rng) as usize;
                for _ in 0..count {
                    let r = rng.random::<f64>() * config.clutter_range_max;
                    entries.push((r, MeasurementOrigin::Clutter));
                }
            }
            entries.shuffle(rng);
            let (ranges, origins) = entries.into_iter().unzip();
            MeasurementBatch {
                anchor_index: j,
                time_index: n,
                ranges,
                origins,
                range_sigmas: None,
            }
        })
        .collect()
}

/// Full measurement stream (indexed by time, then anchor) for a trajectory.
pub fn generate_measurement_stream<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    trajectory: &[AgentState],
    rng: &mut R,
) -> Vec<Vec<MeasurementBatch>> {
    trajectory
        .iter()
        .enumerate()
        .map(|(n, state)| generate_measurements(config, state, n, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn cv_config(start: AgentState, sigma_drive: f64, n_steps: usize) -> ScenarioConfig {
        ScenarioConfig {
            trajectory: TrajectorySpec::ConstantVelocity { start },
            sigma_drive,
            n_steps,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn propagate_examples() {
        let s = AgentState::new(Point2::ORIGIN, Point2::new(1.0, 0.0));
        let out = propagate_cv(&s, 1.0, Point2::ORIGIN);
        assert_eq!(
            out,
            AgentState::new(Point2::new(1.0, 0.0), Point2::new(1.0, 0.0))
        );

        let rest = AgentState::default();
        assert_eq!(propagate_cv(&rest, 1.0, Point2::ORIGIN), rest);

        let out = propagate_cv(&rest, 1.0, Point2::new(0.2, 0.0));
        assert!((out.position.x - 0.1).abs() < 1e-15 && out.position.y == 0.0);
        assert!((out.velocity.x - 0.2).abs() < 1e-15 && out.velocity.y == 0.0);
    }

    #[test]
    fn noiseless_cv_trajectory_is_linear() {
        let start = AgentState::new(Point2::ORIGIN, Point2::new(0.1, 0.0));
        let traj = generate_trajectory(&cv_config(start, 0.0, 5)).unwrap();
        assert_eq!(traj.len(), 5);
        for (n, s) in traj.iter().enumerate() {
            assert!((s.position.x - 0.1 * n as f64).abs() < 1e-12);
            assert_eq!(s.position.y, 0.0);
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let start = AgentState::new(Point2::new(1.0, 2.0), Point2::ORIGIN);
        let mut cfg = cv_config(start, 0.0032, 100);
        cfg.rng_seed = 99;
        assert_eq!(
            generate_trajectory(&cfg).unwrap(),
            generate_trajectory(&cfg).unwrap()
        );
        let wp = ScenarioConfig::default();
        assert_eq!(
            generate_trajectory(&wp).unwrap(),
            generate_trajectory(&wp).unwrap()
        );
    }

    #[test]
    fn drive_increment_variance_matches_sigma() {
        let sigma = 0.0032;
        let start = AgentState::default();
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for trial in 5000..6000u64 {
            let mut cfg = cv_config(start, sigma, 100);
            cfg.rng_seed = trial;
            let traj = generate_trajectory(&cfg).unwrap();
            for w in traj.windows(2) {
                let d = (w[1].velocity - w[0].velocity) * (1.0 / cfg.dt);
                sum_sq += d.x * d.x + d.y * d.y;
                count += 2;
            }
        }
        // Zero-mean drive: the second moment is the variance estimator.
        let var = sum_sq / count as f64;
        let se = sigma * sigma * (2.0 / count as f64).sqrt();
        assert!((var - sigma * sigma).abs() < 3.0 * se, "var {var}, se {se}");
    }

    #[test]
    fn empty_waypoints_rejected() {
        let cfg = ScenarioConfig {
            trajectory: TrajectorySpec::Waypoints {
                points: vec![],
                speed: 0.1,
                ramp_steps: 0,
                closed: false,
            },
            ..ScenarioConfig::default()
        };
        assert!(matches!(generate_trajectory(&cfg), Err(Error::Config(_))));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn waypoint_trajectory_follows_polyline() {
        let cfg = ScenarioConfig {
            trajectory: TrajectorySpec::Waypoints {
                points: vec![Point2::ORIGIN, Point2::new(1.0, 0.0), Point2::new(1.0, 1.0)],
                speed: 0.25,
                ramp_steps: 0,
                closed: false,
            },
            n_steps: 10,
            ..ScenarioConfig::default()
        };
        let traj = generate_trajectory(&cfg).unwrap();
        assert_eq!(traj[0].velocity, Point2::ORIGIN);
        assert!((traj[4].position - Point2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((traj[6].position - Point2::new(1.0, 0.5)).norm() < 1e-12);
        assert!((traj[9].position - Point2::new(1.0, 1.0)).norm() < 1e-12);
        assert!((traj[2].velocity - Point2::new(0.25, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.true_mvas().len(), 4);
        let traj = generate_trajectory(&cfg).unwrap();
        // Agent stays inside the room.
        for s in &traj {
            for surf in &cfg.surfaces {
                assert!(surf.signed_distance(s.position) < 0.0);
            }
        }
    }

    fn single_surface_config() -> ScenarioConfig {
        ScenarioConfig {
            surfaces: vec![Surface {
                normal: Point2::new(0.0, 1.0),
                offset: 4.0,
            }],
            anchors: vec![Point2::new(-0.5, 6.0)],
            include_los: false,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn noiseless_single_detection() {
        let mut cfg = single_surface_config();
        cfg.p_detect = 1.0;
        cfg.mu_clutter = 0.0;
        cfg.sigma_range = 1e-300;
        let agent = AgentState::new(Point2::new(1.0, 1.0), Point2::ORIGIN);
        let mut rng = substream(1, Stream::Measurements);
        let batches = generate_measurements(&cfg, &agent, 3, &mut rng);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].time_index, 3);
        assert_eq!(batches[0].ranges.len(), 1);
        let expected = expected_range(agent.position, Point2::new(-0.5, 2.0));
        assert!((batches[0].ranges[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn no_detection_no_clutter_is_empty() {
        let mut cfg = single_surface_config();
        cfg.p_detect = 0.0;
        cfg.mu_clutter = 0.0;
        cfg.include_los = true;
        let mut rng = substream(1, Stream::Measurements);
        let batches = generate_measurements(&cfg, &AgentState::default(), 0, &mut rng);
        assert!(batches.iter().all(|b| b.is_empty()));
    }

    #[test]
    fn detection_and_clutter_rates() {
        let mut cfg = single_surface_config();
        cfg.p_detect = 0.95;
        cfg.mu_clutter = 1.0;
        let agent = AgentState::new(Point2::new(1.0, 1.0), Point2::ORIGIN);
        let mut rng = substream(5, Stream::Measurements);
        let steps = 10_000;
        let (mut det, mut clutter) = (0usize, 0usize);
        for n in 0..steps {
            let b = &generate_measurements(&cfg, &agent, n, &mut rng)[0];
            det += b
                .origins
                .iter()
                .filter(|o| matches!(o, MeasurementOrigin::Surface(_)))
                .count();
            clutter += b
                .origins
                .iter()
                .filter(|o| **o == MeasurementOrigin::Clutter)
                .count();
            for (r, o) in b.ranges.iter().zip(&b.origins) {
                if *o == MeasurementOrigin::Clutter {
                    assert!((0.0..=cfg.clutter_range_max).contains(r));
                }
            }
        }
        let mean_det = det as f64 / steps as f64;
        let se_det = (0.95 * 0.05 / steps as f64).sqrt();
        assert!((mean_det - 0.95).abs() < 3.0 * se_det, "{mean_det}");
        let mean_clutter = clutter as f64 / steps as f64;
        let se_clutter = (1.0 / steps as f64).sqrt();
        assert!(
            (mean_clutter - 1.0).abs() < 3.0 * se_clutter,
            "{mean_clutter}"
        );
    }

    #[test]
    fn measurement_stream_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let traj = generate_trajectory(&cfg).unwrap();
        let a = generate_measurement_stream(&cfg, &traj, &mut substream(3, Stream::Measurements));
        let b = generate_measurement_stream(&cfg, &traj, &mut substream(3, Stream::Measurements));
        assert_eq!(a, b);
    }
}
