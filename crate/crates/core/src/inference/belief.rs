use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scenario::{propagate_cv, AgentState};

/// Weighted particle representation of the agent state; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBelief {
    pub particles: Vec<AgentState>,
    pub weights: Vec<f64>,
}

impl AgentBelief {
    /// Equally weighted belief from a particle set.
    pub fn from_particles(particles: Vec<AgentState>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyBelief);
        }
        let w = 1.0 / particles.len() as f64;
        let weights = vec![w; particles.len()];
        Ok(Self { particles, weights })
    }

    /// Particles drawn uniformly from the box `center +- [pos, pos, vel, vel]`.
    pub fn uniform_box<R: Rng + ?Sized>(
        center: &AgentState,
        position_spread: f64,
        velocity_spread: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sym = |h: f64| {
            if h > 0.0 {
                rng.random_range(-h..h)
            } else {
                0.0
            }
        };
        let particles = (0..count)
            .map(|_| {
                AgentState::new(
                    center.position + Point2::new(sym(position_spread), sym(position_spread)),
                    center.velocity + Point2::new(sym(velocity_spread), sym(velocity_spread)),
                )
            })
            .collect();
        Self::from_particles(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// A potential MVA: particles over the MVA position whose weights sum to the
/// existence probability. The remaining mass `1 - sum(w)` is the
/// nonexistence hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PmvaBelief {
    pub particles: Vec<Point2>,
    pub weights: Vec<f64>,
    pub label: u64,
    pub birth_time: usize,
    pub next_robust_trigger: Option<usize>,
    /// Range of the most likely associated measurement per anchor at the last
    /// processed step (`None`: missed detection was most likely).
    pub best_ranges: Vec<Option<f64>>,
}

impl PmvaBelief {
    /// Equally weighted particles carrying total mass `existence`.
    pub fn new(particles: Vec<Point2>, existence: f64, label: u64, birth_time: usize) -> Self {
        let w = if particles.is_empty() {
            0.0
        } else {
            existence / particles.len() as f64
        };
        let weights = vec![w; particles.len()];
        Self {
            particles,
            weights,
            label,
            birth_time,
            next_robust_trigger: None,
            best_ranges: Vec::new(),
        }
    }

    /// Sum of particle weights, approximating the existence probability.
    pub fn existence(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Propagates each agent particle through the CV model with independent
/// driving noise. Weights are untouched.
pub fn predict_agent<R: Rng + ?Sized>(
    belief: &AgentBelief,
    dt: f64,
    sigma_drive: f64,
    rng: &mut R,
) -> AgentBelief {
    let particles = belief
        .particles
        .iter()
        .map(|s| {
            let drive = if sigma_drive > 0.0 {
                Point2::new(
                    sigma_drive * rng.sample::<f64, _>(StandardNormal),
                    sigma_drive * rng.sample::<f64, _>(StandardNormal),
                )
            } else {
                Point2::ORIGIN
            };
            propagate_cv(s, dt, drive)
        })
        .collect();
    AgentBelief {
        particles,
        weights: belief.weights.clone(),
    }
}

/// Survival scaling of the PMVA weights plus Gaussian regularization jitter.
pub fn predict_pmva<R: Rng + ?Sized>(
    belief: &PmvaBelief,
    p_survival: f64,
    sigma_reg: f64,
    rng: &mut R,
) -> PmvaBelief {
    let mut out = belief.clone();
    out.weights.iter_mut().for_each(|w| *w *= p_survival);
    if sigma_reg > 0.0 {
        for p in out.particles.iter_mut() {
            p.x += sigma_reg * rng.sample::<f64, _>(StandardNormal);
            p.y += sigma_reg * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Weighted mean of the agent particles.
pub fn estimate_agent(belief: &AgentBelief) -> AgentState {
    let total: f64 = belief.weights.iter().sum();
    let mut pos = Point2::ORIGIN;
    let mut vel = Point2::ORIGIN;
    for (s, &w) in belief.particles.iter().zip(&belief.weights) {
        pos += s.position * w;
        vel += s.velocity * w;
    }
    AgentState::new(pos * (1.0 / total), vel * (1.0 / total))
}

/// Existence-conditioned weighted mean of the MVA particles.
pub fn estimate_mva(belief: &PmvaBelief) -> Result<Point2> {
    let total: f64 = belief.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyBelief);
    }
    let mut acc = Point2::ORIGIN;
    for (p, &w) in belief.particles.iter().zip(&belief.weights) {
        acc += *p * w;
    }
    Ok(acc * (1.0 / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noiseless_prediction() {
        let b = AgentBelief::from_particles(vec![AgentState::new(
            Point2::ORIGIN,
            Point2::new(1.0, 0.0),
        )])
        .unwrap();
        let out = predict_agent(&b, 1.0, 0.0, &mut rng(0));
        assert_eq!(out.particles[0].position, Point2::new(1.0, 0.0));
        assert_eq!(out.particles[0].velocity, Point2::new(1.0, 0.0));
        assert_eq!(out.weights, vec![1.0]);
    }

    #[test]
    fn prediction_keeps_weights() {
        let mut b =
            AgentBelief::uniform_box(&AgentState::default(), 1.0, 0.1, 10, &mut rng(1)).unwrap();
        b.weights = (1..=10).map(|i| i as f64 / 55.0).collect();
        let out = predict_agent(&b, 1.0, 0.3, &mut rng(2));
        assert_eq!(out.weights, b.weights);
    }

    #[test]
    fn position_covariance_matches_cv_recursion() {
        let (dt, sigma, steps, count) = (1.0, 0.05, 50, 1000);
        let mut b = AgentBelief::from_particles(vec![AgentState::default(); count]).unwrap();
        let mut r = rng(3);
        for _ in 0..steps {
            b = predict_agent(&b, dt, sigma, &mut r);
        }
        // Closed-form recursion P <- A P A' + Q for one axis, P0 = 0.
        let q = sigma * sigma;
        let (q11, q12, q22) = (q * dt.powi(4) / 4.0, q * dt.powi(3) / 2.0, q * dt * dt);
        let (mut p11, mut p12, mut p22) = (0.0, 0.0, 0.0);
        for _ in 0..steps {
            let n11 = p11 + 2.0 * dt * p12 + dt * dt * p22 + q11;
            let n12 = p12 + dt * p22 + q12;
            let n22 = p22 + q22;
            (p11, p12, p22) = (n11, n12, n22);
        }
        let mean_x = b.particles.iter().map(|s| s.position.x).sum::<f64>() / count as f64;
        let mean_y = b.particles.iter().map(|s| s.position.y).sum::<f64>() / count as f64;
        let var = b
            .particles
            .iter()
            .map(|s| (s.position.x - mean_x).powi(2) + (s.position.y - mean_y).powi(2))
            .sum::<f64>()
            / (2 * (count - 1)) as f64;
        assert!((var / p11 - 1.0).abs() < 0.10, "{var} vs {p11}");
    }

    #[test]
    fn survival_scaling_and_jitter() {
        let b = PmvaBelief::new(vec![Point2::new(1.0, 2.0); 4], 0.8, 0, 0);
        let out = predict_pmva(&b, 0.999, 0.0, &mut rng(4));
        assert!((out.existence() - 0.7992).abs() < 1e-12);
        assert_eq!(out.particles, b.particles);

        let n = 100_000;
        let b = PmvaBelief::new(vec![Point2::ORIGIN; n], 1.0, 0, 0);
        let out = predict_pmva(&b, 1.0, 1e-5, &mut rng(5));
        let var = out
            .particles
            .iter()
            .map(|p| p.x * p.x + p.y * p.y)
            .sum::<f64>()
            / (2 * n) as f64;
        assert!((var.sqrt() / 1e-5 - 1.0).abs() < 0.05);
    }

    #[test]
    fn agent_estimate_examples() {
        let b = AgentBelief::from_particles(vec![
            AgentState::new(Point2::ORIGIN, Point2::ORIGIN),
            AgentState::new(Point2::new(2.0, 0.0), Point2::ORIGIN),
        ])
        .unwrap();
        assert_eq!(estimate_agent(&b).position, Point2::new(1.0, 0.0));

        let single = AgentState::new(Point2::new(3.0, -1.0), Point2::new(0.1, 0.2));
        let b = AgentBelief::from_particles(vec![single]).unwrap();
        assert_eq!(estimate_agent(&b), single);
    }

    #[test]
    fn estimates_converge_clt() {
        let n = 100_000;
        let sigma = 2.0;
        let truth = Point2::new(1.5, -0.5);
        let mut r = rng(6);
        let mut draw = || {
            truth
                + Point2::new(
                    sigma * r.sample::<f64, _>(StandardNormal),
                    sigma * r.sample::<f64, _>(StandardNormal),
                )
        };
        let agent = AgentBelief::from_particles(
            (0..n)
                .map(|_| AgentState::new(draw(), Point2::ORIGIN))
                .collect(),
        )
        .unwrap();
        let est = estimate_agent(&agent).position;
        let tol = 3.0 * sigma / (n as f64).sqrt();
        assert!((est.x - truth.x).abs() < tol && (est.y - truth.y).abs() < tol);

        let mva = PmvaBelief::new((0..n).map(|_| draw()).collect(), 0.4, 0, 0);
        let est = estimate_mva(&mva).unwrap();
        assert!((est.x - truth.x).abs() < tol && (est.y - truth.y).abs() < tol);
    }

    #[test]
    fn mva_estimate_examples() {
        let mut b = PmvaBelief::new(vec![Point2::ORIGIN, Point2::new(2.0, 0.0)], 0.6, 0, 0);
        assert_eq!(estimate_mva(&b).unwrap(), Point2::new(1.0, 0.0));
        let single = PmvaBelief::new(vec![Point2::new(4.0, 4.0)], 0.1, 0, 0);
        assert_eq!(estimate_mva(&single).unwrap(), Point2::new(4.0, 4.0));
        b.weights = vec![0.0, 0.0];
        assert!(matches!(estimate_mva(&b), Err(Error::EmptyBelief)));
    }
}
