//! Joint agent/MVA proposal draws.

use rand::seq::SliceRandom;
use rand::Rng;

use super::belief::{AgentBelief, PmvaBelief};
use super::likelihood::range_likelihood;
use super::resample::{is_uniform, systematic_indices};
use super::PriorRegion;
use crate::error::{Error, Result};
use crate::geometry::{va_from_mva_unchecked, Point2};

/// Pairs `(agent particle index, MVA position)`. All pairs carry equal weight.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointSamples {
    pub agent: Vec<usize>,
    pub mva: Vec<Point2>,
}

impl JointSamples {
    pub fn len(&self) -> usize {
        self.mva.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mva.is_empty()
    }

    fn with_capacity(n: usize) -> Self {
        Self {
            agent: Vec::with_capacity(n),
            mva: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, agent: usize, mva: Point2) {
        self.agent.push(agent);
        self.mva.push(mva);
    }
}

/// Output of one measurement-driven mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementComponent {
    pub samples: JointSamples,
    /// All importance weights were zero; the samples are the unweighted
    /// uniform-prior candidates.
    pub degenerate: bool,
}

/// Agent particle indices distributed according to the agent weights. Equal
/// weights give the identity map (cycled if `count` exceeds the particle
/// count), so bootstrap pairs line up with agent particles without extra
/// randomness.
pub(crate) fn agent_indices<R: Rng + ?Sized>(
    agent: &AgentBelief,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if is_uniform(&agent.weights) {
        return Ok((0..count).map(|i| i % agent.len()).collect());
    }
    systematic_indices(&agent.weights, count, rng).ok_or(Error::EmptyBelief)
}

/// Product-form proposal from the predicted agent and PMVA beliefs. MVA
/// positions are resampled proportionally to the PMVA weights (so the
/// nonexistence mass never contributes) and randomly permuted before pairing.
pub fn draw_bootstrap<R: Rng + ?Sized>(
    agent: &AgentBelief,
    pmva: &PmvaBelief,
    count: usize,
    rng: &mut R,
) -> Result<JointSamples> {
    let agent_idx = agent_indices(agent, count, rng)?;
    let mut mva_idx = systematic_indices(&pmva.weights, count, rng).ok_or(Error::EmptyBelief)?;
    mva_idx.shuffle(rng);
    Ok(JointSamples {
        agent: agent_idx,
        mva: mva_idx.into_iter().map(|i| pmva.particles[i]).collect(),
    })
}

/// Measurement-driven component: `count` candidates from the predicted agent
/// belief times a uniform MVA prior, importance weighted by the range
/// likelihood of `z_best` via anchor `pa` and resampled to equal weights.
pub fn draw_measurement_component<R: Rng + ?Sized>(
    agent: &AgentBelief,
    z_best: f64,
    pa: Point2,
    sigma: f64,
    prior: &PriorRegion,
    count: usize,
    rng: &mut R,
) -> Result<MeasurementComponent> {
    let mut agent_idx = systematic_indices(&agent.weights, count, rng).ok_or(Error::EmptyBelief)?;
    agent_idx.shuffle(rng);
    let candidates: Vec<Point2> = (0..count).map(|_| prior.sample(rng)).collect();
    // The uniform prior density cancels after normalization.
    let weights: Vec<f64> = agent_idx
        .iter()
        .zip(&candidates)
        .map(|(&a, &p)| {
            let va = va_from_mva_unchecked(p, pa);
            let d = agent.particles[a].position.distance(va);
            if d.is_finite() {
                range_likelihood(z_best, d, sigma)
            } else {
                0.0
            }
        })
        .collect();
    let mut samples = JointSamples::with_capacity(count);
    match systematic_indices(&weights, count, rng) {
        Some(mut idx) => {
            idx.shuffle(rng);
            for i in idx {
                samples.push(agent_idx[i], candidates[i]);
            }
            Ok(MeasurementComponent {
                samples,
                degenerate: false,
            })
        }
        None => {
            for (a, p) in agent_idx.into_iter().zip(candidates) {
                samples.push(a, p);
            }
            Ok(MeasurementComponent {
                samples,
                degenerate: true,
            })
        }
    }
}

/// Per-component sample count `I'`: the smallest value with
/// `I' * (components + 1) >= count`, raised to `i_prime` if that is larger.
pub fn mixture_component_size(count: usize, components: usize, i_prime: Option<usize>) -> usize {
    count.div_ceil(components + 1).max(i_prime.unwrap_or(0))
}

/// Mixture of the bootstrap proposal and one measurement component per
/// anchor with a best measurement. `count` samples are selected uniformly
/// without replacement from the pooled `I' (|J| + 1)` draws. With no best
/// measurement this is exactly [`draw_bootstrap`], including its random
/// number consumption.
///
/// Returns the samples and the number of degenerate components.
#[allow(clippy::too_many_arguments)]
pub fn draw_robust_mixture<R: Rng + ?Sized>(
    agent: &AgentBelief,
    pmva: &PmvaBelief,
    anchors: &[Point2],
    best: &[Option<f64>],
    sigma: f64,
    prior: &PriorRegion,
    count: usize,
    i_prime: Option<usize>,
    rng: &mut R,
) -> Result<(JointSamples, usize)> {
    let components: Vec<(Point2, f64)> = anchors
        .iter()
        .zip(best)
        .filter_map(|(&pa, z)| z.map(|z| (pa, z)))
        .collect();
    if components.is_empty() {
        return Ok((draw_bootstrap(agent, pmva, count, rng)?, 0));
    }
    let per = mixture_component_size(count, components.len(), i_prime);
    let boot = draw_bootstrap(agent, pmva, per, rng)?;
    let mut pool: Vec<(usize, Point2)> = boot.agent.into_iter().zip(boot.mva).collect();
    let mut degenerate = 0;
    for (pa, z) in components {
        let c = draw_measurement_component(agent, z, pa, sigma, prior, per, rng)?;
        degenerate += usize::from(c.degenerate);
        pool.extend(c.samples.agent.into_iter().zip(c.samples.mva));
    }
    let (chosen, _) = pool.partial_shuffle(rng, count);
    let mut out = JointSamples::with_capacity(count);
    for &(a, p) in chosen.iter() {
        out.push(a, p);
    }
    Ok((out, degenerate))
}
