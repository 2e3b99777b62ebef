//! Sequential per-anchor measurement update of the agent and PMVA beliefs.
//!
//! Every anchor batch is processed as one association problem over the
//! features `[LOS (optional), PMVA_1, ..., PMVA_K]`. Integrated likelihoods
//! are Monte Carlo averages over joint samples, marginals come from
//! [`crate::association::solve`], and both the PMVA reweighting and the agent
//! factor are written in terms of those marginals. With `P0` the missed
//! probability, `P_m` the association probabilities, `r` the predicted
//! existence and `L_m` the integrated likelihoods:
//!
//! * PMVA sample weight: `(1/I) [ r (1 - p_d) P0 / (1 - r p_d) + sum_m P_m l_m(i) / L_m ]`,
//!   whose total is the posterior existence.
//! * Agent factor: `P0 + sum_m P_m l_m(x_i) / L_m`, which has unit mean under
//!   the agent weights and stays finite without clutter.

use rand::Rng;

use super::belief::{estimate_agent, estimate_mva, predict_agent, predict_pmva};
use super::belief::{AgentBelief, PmvaBelief};
use super::likelihood::range_likelihood;
use super::resample::{effective_sample_size, systematic_indices};
use super::sampling::{agent_indices, draw_bootstrap, draw_robust_mixture, JointSamples};
use super::schedule::{initial_trigger, schedule_robust};
use super::{Hyperparams, PriorRegion, SamplerMode};
use crate::association::{best_measurement, solve, AssociationMarginals, AssociationProblem};
use crate::error::{Error, Result};
use crate::geometry::{va_from_mva_unchecked, Point2};
use crate::rng::{substream, SimRng, Stream};
use crate::scenario::{AgentState, MeasurementBatch, ScenarioConfig};

/// Static inputs of a filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub anchors: Vec<Point2>,
    pub hp: Hyperparams,
    pub prior: PriorRegion,
    pub dt: f64,
}

impl FilterConfig {
    /// Anchors and sampling period from the scenario; the prior region is
    /// centered on `hp.prior_center` or else on the floor plan.
    pub fn from_scenario(scenario: &ScenarioConfig, hp: Hyperparams) -> Self {
        let center = hp
            .prior_center
            .unwrap_or_else(|| scenario.floor_plan_center());
        Self {
            anchors: scenario.anchors.clone(),
            prior: PriorRegion {
                center,
                half_width: hp.prior_half_width,
            },
            hp,
            dt: scenario.dt,
        }
    }
}

/// A PMVA reported in the map estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredMva {
    pub label: u64,
    pub position: Point2,
    pub existence: f64,
}

/// Per-anchor result of [`MvaSlamFilter::update_anchor`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorUpdate {
    pub anchor_index: usize,
    /// Feature order: LOS first when modelled, then PMVAs in belief order.
    pub marginals: AssociationMarginals,
    pub births: usize,
    pub robust_pmvas: usize,
    pub agent_reset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub time: usize,
    pub agent: AgentState,
    pub declared: Vec<DeclaredMva>,
    pub num_pmvas: usize,
    pub robust_pmvas: usize,
    pub births: usize,
    pub agent_reset: bool,
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterDiagnostics {
    /// Steps at which all agent weights vanished and were reset to uniform.
    pub agent_resets: usize,
    pub agent_resamples: usize,
    /// PMVA updates that used the mixture proposal.
    pub robust_proposals: usize,
    /// Measurement components whose importance weights were all zero.
    pub degenerate_components: usize,
    pub births: usize,
}

/// Importance-sampled new-feature hypothesis for one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthCandidates {
    pub range: f64,
    /// Candidate MVA positions drawn uniformly over the prior region.
    pub mva: Vec<Point2>,
    /// Range likelihood of each candidate paired with a predicted agent particle.
    pub likelihoods: Vec<f64>,
    /// New-feature intensity `mu_birth * mean(likelihoods)`.
    pub intensity: f64,
}

impl BirthCandidates {
    #[allow(clippy::too_many_arguments)]
    pub fn draw<R: Rng + ?Sized>(
        agent: &AgentBelief,
        z: f64,
        pa: Point2,
        sigma: f64,
        prior: &PriorRegion,
        mu_birth: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let agent_idx = agent_indices(agent, count, rng)?;
        let mva: Vec<Point2> = (0..count).map(|_| prior.sample(rng)).collect();
        let likelihoods: Vec<f64> = agent_idx
            .iter()
            .zip(&mva)
            .map(|(&a, &p)| {
                let d = agent.particles[a]
                    .position
                    .distance(va_from_mva_unchecked(p, pa));
                if d.is_finite() {
                    range_likelihood(z, d, sigma)
                } else {
                    0.0
                }
            })
            .collect();
        let mean = likelihoods.iter().sum::<f64>() / count as f64;
        Ok(Self {
            range: z,
            mva,
            likelihoods,
            intensity: mu_birth * mean,
        })
    }
}

/// New PMVAs for measurements that are more likely unassigned than assigned
/// to any feature. Existence is the new-feature share of the free intensity
/// times the unassigned probability; particles are the candidates resampled
/// by likelihood.
#[allow(clippy::too_many_arguments)]
pub fn birth_pmvas<R: Rng + ?Sized>(
    candidates: &[BirthCandidates],
    marginals: &AssociationMarginals,
    batch: &MeasurementBatch,
    num_anchors: usize,
    hp: &Hyperparams,
    time: usize,
    next_label: &mut u64,
    rng: &mut R,
    schedule_rng: &mut R,
) -> Vec<PmvaBelief> {
    let mut out = Vec::new();
    for (m, cand) in candidates.iter().enumerate() {
        let unassigned = marginals.unassigned[m];
        if !(unassigned > marginals.max_assignment(m)) {
            continue;
        }
        let clutter = hp.clutter_intensity(batch.ranges[m]);
        let free = cand.intensity + clutter;
        if !(free > 0.0) {
            continue;
        }
        let existence = cand.intensity / free * unassigned;
        if !(existence > 0.0) {
            continue;
        }
        let Some(idx) = systematic_indices(&cand.likelihoods, hp.num_particles, rng) else {
            continue;
        };
        let particles = idx.into_iter().map(|i| cand.mva[i]).collect();
        let mut pmva = PmvaBelief::new(particles, existence, *next_label, time);
        *next_label += 1;
        pmva.best_ranges = vec![None; num_anchors];
        pmva.best_ranges[batch.anchor_index] = Some(cand.range);
        pmva.next_robust_trigger = Some(initial_trigger(time, hp, schedule_rng));
        out.push(pmva);
    }
    out
}

/// Splits PMVAs into the declared map (`existence > p_declare`) and the
/// survivors (`existence >= p_prune`).
pub fn detect_and_prune(
    pmvas: Vec<PmvaBelief>,
    hp: &Hyperparams,
) -> (Vec<DeclaredMva>, Vec<PmvaBelief>) {
    let survivors: Vec<PmvaBelief> = pmvas
        .into_iter()
        .filter(|p| p.existence() >= hp.p_prune)
        .collect();
    let declared = survivors
        .iter()
        .filter_map(|p| {
            let existence = p.existence();
            if existence <= hp.p_declare {
                return None;
            }
            estimate_mva(p).ok().map(|position| DeclaredMva {
                label: p.label,
                position,
                existence,
            })
        })
        .collect();
    (declared, survivors)
}

/// Joint samples of one PMVA for one anchor update with the sample
/// likelihoods used on each side.
struct FeatureTerms {
    samples: JointSamples,
    /// `M x I`, PMVA side: pair `(x_{a_i}, p_i)`.
    pmva_lik: Vec<f64>,
    /// `M x I`, agent side: pair `(x_i, p'_i)` with `p'` drawn from the
    /// predicted PMVA belief independently of the agent.
    agent_lik: Vec<f64>,
    integrated: Vec<f64>,
    agent_integrated: Vec<f64>,
}

pub struct MvaSlamFilter {
    config: FilterConfig,
    agent: AgentBelief,
    pmvas: Vec<PmvaBelief>,
    next_label: u64,
    rng: SimRng,
    schedule_rng: SimRng,
    diagnostics: FilterDiagnostics,
    last_time: Option<usize>,
}

impl MvaSlamFilter {
    /// Starts from a uniform box around `initial` drawn from the filter stream
    /// of `seed`.
    pub fn new(config: FilterConfig, initial: &AgentState, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Stream::Filter);
        let agent = AgentBelief::uniform_box(
            initial,
            config.hp.init_position_spread,
            config.hp.init_velocity_spread,
            config.hp.num_particles,
            &mut rng,
        )?;
        Self::from_parts(config, agent, rng, substream(seed, Stream::Schedule))
    }

    /// Starts from an explicit agent belief with `num_particles` particles.
    pub fn with_belief(config: FilterConfig, agent: AgentBelief, seed: u64) -> Result<Self> {
        Self::from_parts(
            config,
            agent,
            substream(seed, Stream::Filter),
            substream(seed, Stream::Schedule),
        )
    }

    fn from_parts(
        config: FilterConfig,
        agent: AgentBelief,
        rng: SimRng,
        schedule_rng: SimRng,
    ) -> Result<Self> {
        config.hp.validate()?;
        if agent.len() != config.hp.num_particles {
            return Err(Error::config(format!(
                "agent belief has {} particles, expected {}",
                agent.len(),
                config.hp.num_particles
            )));
        }
        if config.anchors.is_empty() {
            return Err(Error::config("at least one anchor is required"));
        }
        Ok(Self {
            config,
            agent,
            pmvas: Vec::new(),
            next_label: 0,
            rng,
            schedule_rng,
            diagnostics: FilterDiagnostics::default(),
            last_time: None,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn agent(&self) -> &AgentBelief {
        &self.agent
    }

    pub fn pmvas(&self) -> &[PmvaBelief] {
        &self.pmvas
    }

    /// Replaces the PMVA set, e.g. to start from a known map.
    pub fn set_pmvas(&mut self, pmvas: Vec<PmvaBelief>) {
        self.next_label = pmvas.iter().map(|p| p.label + 1).max().unwrap_or(0);
        self.pmvas = pmvas;
    }

    pub fn diagnostics(&self) -> FilterDiagnostics {
        self.diagnostics
    }

    /// Prediction (skipped at the first step), sequential anchor updates,
    /// then detection and pruning.
    pub fn step(&mut self, time: usize, batches: &[MeasurementBatch]) -> Result<StepOutput> {
        if self.last_time.is_some() {
            self.predict();
        }
        self.last_time = Some(time);

        let mut robust: Vec<bool> = match self.config.hp.sampler_mode {
            SamplerMode::Bootstrap => vec![false; self.pmvas.len()],
            SamplerMode::Robust => {
                let hp = &self.config.hp;
                let rng = &mut self.schedule_rng;
                self.pmvas
                    .iter_mut()
                    .map(|p| schedule_robust(p, time, hp, rng))
                    .collect()
            }
        };

        let (mut births, mut robust_pmvas, mut agent_reset) = (0, 0, false);
        for batch in batches {
            let upd = self.update_anchor(batch, time, &robust)?;
            births += upd.births;
            robust_pmvas += upd.robust_pmvas;
            agent_reset |= upd.agent_reset;
            // Mixture proposals are used at the first anchor of a step only.
            robust.clear();
        }

        let (declared, survivors) =
            detect_and_prune(std::mem::take(&mut self.pmvas), &self.config.hp);
        self.pmvas = survivors;
        Ok(StepOutput {
            time,
            agent: estimate_agent(&self.agent),
            declared,
            num_pmvas: self.pmvas.len(),
            robust_pmvas,
            births,
            agent_reset,
        })
    }

    fn predict(&mut self) {
        let hp = &self.config.hp;
        self.agent = predict_agent(&self.agent, self.config.dt, hp.sigma_drive, &mut self.rng);
        for p in self.pmvas.iter_mut() {
            *p = predict_pmva(p, hp.p_survival, hp.sigma_reg, &mut self.rng);
        }
    }

    /// Processes one anchor's batch. `robust[k]` selects the mixture proposal
    /// for PMVA `k`; missing entries mean bootstrap.
    pub fn update_anchor(
        &mut self,
        batch: &MeasurementBatch,
        time: usize,
        robust: &[bool],
    ) -> Result<AnchorUpdate> {
        let j = batch.anchor_index;
        let pa =
            *self.config.anchors.get(j).ok_or_else(|| {
                Error::config(format!("measurement batch for unknown anchor {j}"))
            })?;
        let hp = self.config.hp.clone();
        let count = hp.num_particles;
        let num_m = batch.len();
        let sigmas: Vec<f64> = (0..num_m).map(|m| batch.sigma(m, hp.sigma_range)).collect();

        // Line of sight: a feature with existence one at the known anchor.
        let los = if hp.model_los {
            let mut lik = vec![0.0; num_m * count];
            let mut integrated = vec![0.0; num_m];
            for (i, s) in self.agent.particles.iter().enumerate() {
                let d = s.position.distance(pa);
                for m in 0..num_m {
                    let l = range_likelihood(batch.ranges[m], d, sigmas[m]);
                    lik[m * count + i] = l;
                    integrated[m] += self.agent.weights[i] * l;
                }
            }
            Some((lik, integrated))
        } else {
            None
        };

        let mut robust_pmvas = 0;
        let mut terms = Vec::with_capacity(self.pmvas.len());
        for k in 0..self.pmvas.len() {
            let use_robust = robust.get(k).copied().unwrap_or(false);
            let pmva = &self.pmvas[k];
            let (samples, agent_side_mva) = if use_robust {
                let (samples, degenerate) = draw_robust_mixture(
                    &self.agent,
                    pmva,
                    &self.config.anchors,
                    &pmva.best_ranges,
                    hp.sigma_range,
                    &self.config.prior,
                    count,
                    hp.i_prime,
                    &mut self.rng,
                )?;
                self.diagnostics.degenerate_components += degenerate;
                let nonempty = pmva.best_ranges.iter().any(Option::is_some);
                if nonempty {
                    robust_pmvas += 1;
                    let boot = draw_bootstrap(&self.agent, pmva, count, &mut self.rng)?;
                    (samples, Some(boot.mva))
                } else {
                    (samples, None)
                }
            } else {
                (
                    draw_bootstrap(&self.agent, pmva, count, &mut self.rng)?,
                    None,
                )
            };
            terms.push(self.feature_terms(samples, agent_side_mva, batch, pa, &sigmas));
        }
        self.diagnostics.robust_proposals += robust_pmvas;

        let candidates: Vec<BirthCandidates> = if hp.mu_birth > 0.0 {
            (0..num_m)
                .map(|m| {
                    BirthCandidates::draw(
                        &self.agent,
                        batch.ranges[m],
                        pa,
                        sigmas[m],
                        &self.config.prior,
                        hp.mu_birth,
                        count,
                        &mut self.rng,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let offset = usize::from(los.is_some());
        let mut existence = Vec::with_capacity(self.pmvas.len() + offset);
        let mut likelihoods = Vec::with_capacity(self.pmvas.len() + offset);
        if let Some((_, integrated)) = &los {
            existence.push(1.0);
            likelihoods.push(integrated.clone());
        }
        for (p, t) in self.pmvas.iter().zip(&terms) {
            existence.push(p.existence().clamp(0.0, 1.0));
            likelihoods.push(t.integrated.clone());
        }
        let problem = AssociationProblem {
            existence,
            likelihoods,
            p_detect: hp.p_detect,
            clutter_intensity: batch
                .ranges
                .iter()
                .map(|&z| hp.clutter_intensity(z))
                .collect(),
            birth_intensity: (0..num_m)
                .map(|m| candidates.get(m).map_or(0.0, |c| c.intensity))
                .collect(),
        };
        let marginals = solve(&problem);

        // Agent factors use the pre-update agent weights and PMVA existences.
        let mut factor = vec![1.0; count];
        if let Some((lik, integrated)) = &los {
            accumulate_agent_factor(&mut factor, &marginals, 0, lik, integrated);
        }
        for (k, t) in terms.iter().enumerate() {
            accumulate_agent_factor(
                &mut factor,
                &marginals,
                k + offset,
                &t.agent_lik,
                &t.agent_integrated,
            );
        }

        for (k, t) in terms.into_iter().enumerate() {
            let row = k + offset;
            let r = problem.existence[row];
            self.update_pmva(k, t, &marginals, row, r, j, batch)?;
        }

        let agent_reset = self.reweight_agent(&factor);

        let births = birth_pmvas(
            &candidates,
            &marginals,
            batch,
            self.config.anchors.len(),
            &hp,
            time,
            &mut self.next_label,
            &mut self.rng,
            &mut self.schedule_rng,
        );
        let num_births = births.len();
        self.diagnostics.births += num_births;
        self.pmvas.extend(births);

        Ok(AnchorUpdate {
            anchor_index: j,
            marginals,
            births: num_births,
            robust_pmvas,
            agent_reset,
        })
    }

    fn feature_terms(
        &self,
        samples: JointSamples,
        agent_side_mva: Option<Vec<Point2>>,
        batch: &MeasurementBatch,
        pa: Point2,
        sigmas: &[f64],
    ) -> FeatureTerms {
        let count = samples.len();
        let num_m = batch.len();
        let agent = &self.agent;
        let ranges = |agent_idx: &dyn Fn(usize) -> usize, mva: &[Point2]| -> Vec<f64> {
            let mut lik = vec![0.0; num_m * count];
            for (i, p) in mva.iter().enumerate() {
                let va = va_from_mva_unchecked(*p, pa);
                let d = agent.particles[agent_idx(i)].position.distance(va);
                if !d.is_finite() {
                    continue;
                }
                for m in 0..num_m {
                    lik[m * count + i] = range_likelihood(batch.ranges[m], d, sigmas[m]);
                }
            }
            lik
        };
        let pmva_lik = ranges(&|i| samples.agent[i], &samples.mva);
        let identity =
            agent_side_mva.is_none() && samples.agent.iter().enumerate().all(|(i, &a)| a == i);
        let agent_lik = if identity {
            pmva_lik.clone()
        } else {
            ranges(&|i| i, agent_side_mva.as_deref().unwrap_or(&samples.mva))
        };
        let integrated = (0..num_m)
            .map(|m| pmva_lik[m * count..(m + 1) * count].iter().sum::<f64>() / count as f64)
            .collect();
        let agent_integrated = (0..num_m)
            .map(|m| {
                agent_lik[m * count..(m + 1) * count]
                    .iter()
                    .zip(&agent.weights)
                    .map(|(l, w)| l * w)
                    .sum::<f64>()
            })
            .collect();
        FeatureTerms {
            samples,
            pmva_lik,
            agent_lik,
            integrated,
            agent_integrated,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update_pmva(
        &mut self,
        k: usize,
        t: FeatureTerms,
        marginals: &AssociationMarginals,
        row: usize,
        r: f64,
        anchor: usize,
        batch: &MeasurementBatch,
    ) -> Result<()> {
        let p_d = self.config.hp.p_detect;
        let count = t.samples.len();
        let p0 = marginals.missed(row);
        // P0 vanishes whenever r p_d = 1.
        let missed_term = if p0 > 0.0 {
            r * (1.0 - p_d) * p0 / (1.0 - r * p_d)
        } else {
            0.0
        };
        let mut w = vec![missed_term / count as f64; count];
        for m in 0..batch.len() {
            let pm = marginals.assoc(row, m);
            let lm = t.integrated[m];
            if pm > 0.0 && lm > 0.0 {
                let scale = pm / (lm * count as f64);
                for (wi, l) in w.iter_mut().zip(&t.pmva_lik[m * count..(m + 1) * count]) {
                    *wi += scale * l;
                }
            }
        }
        let total: f64 = w.iter().sum();
        let pmva = &mut self.pmvas[k];
        match systematic_indices(&w, count, &mut self.rng) {
            Some(idx) => {
                pmva.particles = idx.into_iter().map(|i| t.samples.mva[i]).collect();
                pmva.weights = vec![total.min(1.0) / count as f64; count];
            }
            None => {
                pmva.particles = t.samples.mva;
                pmva.weights = vec![0.0; count];
            }
        }
        if pmva.best_ranges.len() != self.config.anchors.len() {
            pmva.best_ranges.resize(self.config.anchors.len(), None);
        }
        pmva.best_ranges[anchor] = match best_measurement(marginals, row) {
            0 => None,
            m => Some(batch.ranges[m - 1]),
        };
        Ok(())
    }

    /// Multiplies the agent weights by `factor`, normalizes, and resamples
    /// below the ESS threshold. Returns whether the weights had to be reset.
    fn reweight_agent(&mut self, factor: &[f64]) -> bool {
        let hp = &self.config.hp;
        let count = self.agent.len();
        for (w, f) in self.agent.weights.iter_mut().zip(factor) {
            *w *= f;
        }
        let total: f64 = self.agent.weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            self.agent.weights = vec![1.0 / count as f64; count];
            self.diagnostics.agent_resets += 1;
            return true;
        }
        self.agent.weights.iter_mut().for_each(|w| *w /= total);
        if effective_sample_size(&self.agent.weights) < hp.resample_ess_fraction * count as f64 {
            if let Some(idx) = systematic_indices(&self.agent.weights, count, &mut self.rng) {
                self.agent.particles = idx.into_iter().map(|i| self.agent.particles[i]).collect();
                self.agent.weights = vec![1.0 / count as f64; count];
                self.diagnostics.agent_resamples += 1;
            }
        }
        false
    }
}

/// Multiplies `factor[i]` by `P0 + sum_m P_m lik[m][i] / L_m` for feature `row`.
fn accumulate_agent_factor(
    factor: &mut [f64],
    marginals: &AssociationMarginals,
    row: usize,
    lik: &[f64],
    integrated: &[f64],
) {
    let count = factor.len();
    let mut eta = vec![marginals.missed(row); count];
    for (m, &lm) in integrated.iter().enumerate() {
        let pm = marginals.assoc(row, m);
        if pm > 0.0 && lm > 0.0 {
            let scale = pm / lm;
            for (e, l) in eta.iter_mut().zip(&lik[m * count..(m + 1) * count]) {
                *e += scale * l;
            }
        }
    }
    for (f, e) in factor.iter_mut().zip(eta) {
        *f *= e;
    }
}
