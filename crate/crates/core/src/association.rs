//! Marginal measurement-to-feature association probabilities.
//!
//! For one anchor and time step, each feature `k` (existence `r_k`) either
//! generates exactly one of the `M` measurements with probability `p_d`, or
//! none. Measurements not generated by any feature are clutter or the first
//! detection of a new feature, with intensity `clutter_m + birth_m`. An
//! association event has weight
//!
//! ```text
//!   prod_{k -> m} r_k p_d L_km  *  prod_{k missed} (1 - r_k p_d)  *  prod_{m free} (clutter_m + birth_m)
//! ```
//!
//! Two solvers are provided: exhaustive enumeration of all feasible events
//! (exact, small problems only) and iterative bipartite message passing.

use crate::error::{Error, Result};

/// Enumeration guard on the number of features.
pub const MAX_ENUM_FEATURES: usize = 6;
/// Enumeration guard on the number of measurements.
pub const MAX_ENUM_MEASUREMENTS: usize = 8;
/// Problems with `K * M` at or below this size are solved exactly by
/// [`marginals_bp`].
pub const AUTO_ENUM_SIZE: usize = 24;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Smallest free-measurement intensity used by the iterative solver.
const MIN_INTENSITY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    /// Predicted existence probability per feature.
    pub existence: Vec<f64>,
    /// `likelihoods[k][m]`: integrated likelihood of measurement `m` under feature `k`.
    pub likelihoods: Vec<Vec<f64>>,
    pub p_detect: f64,
    /// Clutter intensity `mu_fa * f_fa(z_m)` per measurement.
    pub clutter_intensity: Vec<f64>,
    /// New-feature intensity per measurement.
    pub birth_intensity: Vec<f64>,
}

impl AssociationProblem {
    pub fn num_features(&self) -> usize {
        self.existence.len()
    }

    pub fn num_measurements(&self) -> usize {
        self.clutter_intensity.len()
    }

    /// Weight of feature `k` generating measurement `m` (0-based).
    #[inline]
    fn detect_weight(&self, k: usize, m: usize) -> f64 {
        self.existence[k] * self.p_detect * self.likelihoods[k][m]
    }

    /// Weight of feature `k` generating nothing (missed or nonexistent).
    #[inline]
    fn miss_weight(&self, k: usize) -> f64 {
        1.0 - self.existence[k] * self.p_detect
    }

    #[inline]
    fn free_weight(&self, m: usize) -> f64 {
        self.clutter_intensity[m] + self.birth_intensity[m]
    }

    fn check_shape(&self) {
        let m = self.num_measurements();
        assert_eq!(self.birth_intensity.len(), m, "birth intensity length");
        assert_eq!(
            self.likelihoods.len(),
            self.num_features(),
            "likelihood rows"
        );
        for row in &self.likelihoods {
            assert_eq!(row.len(), m, "likelihood row length");
        }
    }
}

/// Association probabilities.
///
/// Feature rows have `M + 1` entries: index 0 is the missed-detection (or
/// nonexistence) probability and index `m >= 1` the probability that the
/// feature generated measurement `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMarginals {
    num_measurements: usize,
    features: Vec<f64>,
    /// Probability that each measurement is clutter or a new feature.
    pub unassigned: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl AssociationMarginals {
    fn new(num_features: usize, num_measurements: usize) -> Self {
        Self {
            num_measurements,
            features: vec![0.0; num_features * (num_measurements + 1)],
            unassigned: vec![0.0; num_measurements],
            converged: true,
            iterations: 0,
        }
    }

    pub fn num_features(&self) -> usize {
        self.features.len() / (self.num_measurements + 1)
    }

    pub fn num_measurements(&self) -> usize {
        self.num_measurements
    }

    /// Row of feature `k`: `[missed, m = 1, ..., m = M]`.
    pub fn feature_row(&self, k: usize) -> &[f64] {
        let w = self.num_measurements + 1;
        &self.features[k * w..(k + 1) * w]
    }

    fn feature_row_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.num_measurements + 1;
        &mut self.features[k * w..(k + 1) * w]
    }

    pub fn missed(&self, k: usize) -> f64 {
        self.feature_row(k)[0]
    }

    /// Probability that feature `k` generated measurement `m` (0-based).
    pub fn assoc(&self, k: usize, m: usize) -> f64 {
        self.feature_row(k)[m + 1]
    }

    /// Largest probability that any feature generated measurement `m`.
    pub fn max_assignment(&self, m: usize) -> f64 {
        (0..self.num_features())
            .map(|k| self.assoc(k, m))
            .fold(0.0, f64::max)
    }
}

/// Exact marginals by summing over every feasible association event.
pub fn marginals_enumerate(p: &AssociationProblem) -> Result<AssociationMarginals> {
    p.check_shape();
    let (k_count, m_count) = (p.num_features(), p.num_measurements());
    if k_count > MAX_ENUM_FEATURES || m_count > MAX_ENUM_MEASUREMENTS {
        return Err(Error::SizeLimit {
            features: k_count,
            measurements: m_count,
            max_features: MAX_ENUM_FEATURES,
            max_measurements: MAX_ENUM_MEASUREMENTS,
        });
    }

    struct Walk<'a> {
        p: &'a AssociationProblem,
        // assignment[k] = 0 for missed, m + 1 otherwise
        assignment: Vec<usize>,
        used: Vec<bool>,
        out: AssociationMarginals,
        total: f64,
    }

    impl Walk<'_> {
        fn visit(&mut self, k: usize, weight: f64) {
            if weight == 0.0 {
                return;
            }
            if k == self.p.num_features() {
                let mut w = weight;
                for (m, &used) in self.used.iter().enumerate() {
                    if !used {
                        w *= self.p.free_weight(m);
                    }
                }
                if w == 0.0 {
                    return;
                }
                self.total += w;
                for (kk, &a) in self.assignment.iter().enumerate() {
                    self.out.feature_row_mut(kk)[a] += w;
                }
                for (m, &used) in self.used.iter().enumerate() {
                    if !used {
                        self.out.unassigned[m] += w;
                    }
                }
                return;
            }
            self.assignment[k] = 0;
            self.visit(k + 1, weight * self.p.miss_weight(k));
            for m in 0..self.p.num_measurements() {
                if !self.used[m] {
                    self.used[m] = true;
                    self.assignment[k] = m + 1;
                    self.visit(k + 1, weight * self.p.detect_weight(k, m));
                    self.used[m] = false;
                }
            }
        }
    }

    let mut walk = Walk {
        p,
        assignment: vec![0; k_count],
        used: vec![false; m_count],
        out: AssociationMarginals::new(k_count, m_count),
        total: 0.0,
    };
    walk.visit(0, 1.0);
    let Walk { mut out, total, .. } = walk;
    if total > 0.0 && total.is_finite() {
        out.features.iter_mut().for_each(|v| *v /= total);
        out.unassigned.iter_mut().for_each(|v| *v /= total);
    } else {
        // No feasible event with positive weight: every feature is missed and
        // every measurement is free.
        for k in 0..k_count {
            out.feature_row_mut(k)[0] = 1.0;
        }
        out.unassigned.iter_mut().for_each(|v| *v = 1.0);
    }
    Ok(out)
}

/// Association marginals with the default solver settings.
pub fn solve(p: &AssociationProblem) -> AssociationMarginals {
    marginals_bp(p, DEFAULT_MAX_ITERS, DEFAULT_TOL)
}

/// Marginals via message passing; problems small enough for exact
/// enumeration (`K * M <= AUTO_ENUM_SIZE` within the enumeration guards) are
/// enumerated instead.
pub fn marginals_bp(p: &AssociationProblem, max_iters: usize, tol: f64) -> AssociationMarginals {
    let (k, m) = (p.num_features(), p.num_measurements());
    if k * m <= AUTO_ENUM_SIZE && k <= MAX_ENUM_FEATURES && m <= MAX_ENUM_MEASUREMENTS {
        if let Ok(out) = marginals_enumerate(p) {
            return out;
        }
    }
    marginals_loopy(p, max_iters, tol)
}

/// Iterative bipartite message passing between feature and measurement
/// association variables, without the small-problem shortcut.
///
/// Exact on loop-free instances (one feature or one measurement); an
/// approximation otherwise.
pub fn marginals_loopy(p: &AssociationProblem, max_iters: usize, tol: f64) -> AssociationMarginals {
    p.check_shape();
    let (k_count, m_count) = (p.num_features(), p.num_measurements());
    let mut out = AssociationMarginals::new(k_count, m_count);
    if m_count == 0 {
        for k in 0..k_count {
            out.feature_row_mut(k)[0] = 1.0;
        }
        return out;
    }

    // Messages are kept in a form scaled by the free-measurement intensity so
    // that zero clutter stays finite:
    //   to_meas[k][m] = detect(k, m) / (miss(k) + sum_{m' != m} detect(k, m') * to_feat[m'][k])
    //   to_feat[m][k] = 1 / (free(m) + sum_{k' != k} to_meas[k'][m])
    let free: Vec<f64> = (0..m_count)
        .map(|m| p.free_weight(m).max(MIN_INTENSITY))
        .collect();
    let detect: Vec<f64> = (0..k_count)
        .flat_map(|k| (0..m_count).map(move |m| (k, m)))
        .map(|(k, m)| p.detect_weight(k, m))
        .collect();
    let mut to_feat: Vec<f64> = (0..m_count)
        .flat_map(|m| std::iter::repeat_n(1.0 / free[m], k_count))
        .collect();
    let mut to_meas = vec![0.0; k_count * m_count];

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        // Leave-one-out sums are formed explicitly: subtracting the own term
        // from a total cancels catastrophically when one term dominates.
        for k in 0..k_count {
            let row = &detect[k * m_count..(k + 1) * m_count];
            let miss = p.miss_weight(k);
            for m in 0..m_count {
                to_meas[k * m_count + m] = if row[m] == 0.0 {
                    0.0
                } else {
                    let others: f64 = (0..m_count)
                        .filter(|&m2| m2 != m)
                        .map(|m2| row[m2] * to_feat[m2 * k_count + k])
                        .sum();
                    row[m] / (miss + others).max(MIN_INTENSITY)
                };
            }
        }
        let mut delta: f64 = 0.0;
        for m in 0..m_count {
            for k in 0..k_count {
                let others: f64 = (0..k_count)
                    .filter(|&k2| k2 != k)
                    .map(|k2| to_meas[k2 * m_count + m])
                    .sum();
                let new = 1.0 / (free[m] + others);
                let old = to_feat[m * k_count + k];
                // Relative change keeps the criterion independent of intensity units.
                delta = delta.max((new - old).abs() / new);
                to_feat[m * k_count + k] = new;
            }
        }
        if delta < tol {
            converged = true;
            break;
        }
    }

    for k in 0..k_count {
        let miss = p.miss_weight(k);
        let mut z = miss;
        for m in 0..m_count {
            z += detect[k * m_count + m] * to_feat[m * k_count + k];
        }
        let row = out.feature_row_mut(k);
        if z > 0.0 && z.is_finite() {
            row[0] = miss / z;
            for m in 0..m_count {
                row[m + 1] = detect[k * m_count + m] * to_feat[m * k_count + k] / z;
            }
        } else {
            row[0] = 1.0;
        }
    }
    for m in 0..m_count {
        let total: f64 = (0..k_count).map(|k| to_meas[k * m_count + m]).sum();
        out.unassigned[m] = free[m] / (free[m] + total);
    }
    out.converged = converged;
    out.iterations = iterations;
    out
}

/// 1-based index of the measurement most likely generated by feature `k`, or
/// 0 when a missed detection is more likely than any association. Ties go to
/// the lowest index.
pub fn best_measurement(marginals: &AssociationMarginals, k: usize) -> usize {
    let row = marginals.feature_row(k);
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (m, &prob) in row.iter().enumerate().skip(1) {
        if prob > best_p {
            best = m;
            best_p = prob;
        }
    }
    if best == 0 || row[0] > best_p {
        0
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(
        existence: Vec<f64>,
        likelihoods: Vec<Vec<f64>>,
        p_detect: f64,
        clutter: Vec<f64>,
        birth: Vec<f64>,
    ) -> AssociationProblem {
        AssociationProblem {
            existence,
            likelihoods,
            p_detect,
            clutter_intensity: clutter,
            birth_intensity: birth,
        }
    }

    fn random_problem(rng: &mut impl Rng, k: usize, m: usize) -> AssociationProblem {
        problem(
            (0..k).map(|_| rng.random_range(0.0..1.0)).collect(),
            (0..k)
                .map(|_| (0..m).map(|_| rng.random_range(0.0..5.0)).collect())
                .collect(),
            rng.random_range(0.05..1.0),
            (0..m).map(|_| rng.random_range(0.01..1.0)).collect(),
            (0..m).map(|_| rng.random_range(0.0..0.2)).collect(),
        )
    }

    fn max_diff(a: &AssociationMarginals, b: &AssociationMarginals) -> f64 {
        let mut d: f64 = 0.0;
        for k in 0..a.num_features() {
            for (x, y) in a.feature_row(k).iter().zip(b.feature_row(k)) {
                d = d.max((x - y).abs());
            }
        }
        for (x, y) in a.unassigned.iter().zip(&b.unassigned) {
            d = d.max((x - y).abs());
        }
        d
    }

    #[test]
    fn symmetric_single_hypothesis() {
        let p = problem(vec![1.0], vec![vec![0.3]], 0.5, vec![0.3], vec![0.0]);
        let e = marginals_enumerate(&p).unwrap();
        assert!((e.assoc(0, 0) - 0.5).abs() < 1e-15);
        assert!((e.missed(0) - 0.5).abs() < 1e-15);
        assert!((e.unassigned[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_measurements_means_missed() {
        let p = problem(vec![1.0], vec![vec![]], 0.9, vec![], vec![]);
        let e = marginals_enumerate(&p).unwrap();
        assert_eq!(e.missed(0), 1.0);
        assert_eq!(marginals_loopy(&p, 100, 1e-9).missed(0), 1.0);
    }

    #[test]
    fn size_guard() {
        let p = problem(vec![0.5; 7], vec![vec![1.0]; 7], 0.9, vec![1.0], vec![0.0]);
        assert!(matches!(
            marginals_enumerate(&p),
            Err(Error::SizeLimit { .. })
        ));
        let p = problem(
            vec![0.5],
            vec![vec![1.0; 9]],
            0.9,
            vec![1.0; 9],
            vec![0.0; 9],
        );
        assert!(matches!(
            marginals_enumerate(&p),
            Err(Error::SizeLimit { .. })
        ));
    }

    /// Independent brute force for exactly two features and three
    /// measurements, written as explicit nested loops.
    fn brute_force_2x3(p: &AssociationProblem) -> ([[f64; 4]; 2], [f64; 3]) {
        let mut feat = [[0.0; 4]; 2];
        let mut free = [0.0; 3];
        let mut total = 0.0;
        for a0 in 0..4usize {
            for a1 in 0..4usize {
                if a0 != 0 && a0 == a1 {
                    continue;
                }
                let f = |k: usize, a: usize| {
                    let r = p.existence[k];
                    if a == 0 {
                        r * (1.0 - p.p_detect) + (1.0 - r)
                    } else {
                        r * p.p_detect * p.likelihoods[k][a - 1]
                    }
                };
                let mut w = f(0, a0) * f(1, a1);
                for m in 1..=3 {
                    if a0 != m && a1 != m {
                        w *= p.clutter_intensity[m - 1] + p.birth_intensity[m - 1];
                    }
                }
                total += w;
                feat[0][a0] += w;
                feat[1][a1] += w;
                for m in 1..=3 {
                    if a0 != m && a1 != m {
                        free[m - 1] += w;
                    }
                }
            }
        }
        for row in feat.iter_mut() {
            row.iter_mut().for_each(|v| *v /= total);
        }
        free.iter_mut().for_each(|v| *v /= total);
        (feat, free)
    }

    #[test]
    fn enumeration_matches_independent_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_problem(&mut rng, 2, 3);
            let e = marginals_enumerate(&p).unwrap();
            let (feat, free) = brute_force_2x3(&p);
            for k in 0..2 {
                for (a, b) in e.feature_row(k).iter().zip(feat[k]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            for m in 0..3 {
                assert!((e.unassigned[m] - free[m]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bp_dispatches_small_problems_to_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let k = rng.random_range(1..=3);
            let m = rng.random_range(0..=4);
            let p = random_problem(&mut rng, k, m);
            let d = max_diff(
                &marginals_bp(&p, 100, 1e-6),
                &marginals_enumerate(&p).unwrap(),
            );
            assert!(d < 1e-6, "{d}");
        }
    }

    #[test]
    fn loopy_is_close_on_loopy_instances() {
        // Not exact, but the approximation should stay in the right ballpark.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let p = random_problem(&mut rng, 3, 4);
            let loopy = marginals_loopy(&p, 1000, 1e-12);
            assert!(loopy.converged);
            worst = worst.max(max_diff(&loopy, &marginals_enumerate(&p).unwrap()));
        }
        assert!(worst < 0.15, "{worst}");
    }

    #[test]
    fn zero_likelihoods_give_certain_miss() {
        let p = problem(
            vec![1.0, 1.0],
            vec![vec![0.0; 3], vec![0.0; 3]],
            0.9,
            vec![0.1; 3],
            vec![0.0; 3],
        );
        for out in [
            marginals_enumerate(&p).unwrap(),
            marginals_loopy(&p, 100, 1e-6),
        ] {
            assert_eq!(out.missed(0), 1.0);
            assert_eq!(out.missed(1), 1.0);
            assert!(out.unassigned.iter().all(|&u| (u - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_clutter_single_feature() {
        let p = problem(vec![1.0], vec![vec![2.0]], 1.0, vec![0.0], vec![0.0]);
        assert_eq!(marginals_enumerate(&p).unwrap().assoc(0, 0), 1.0);
        let l = marginals_loopy(&p, 100, 1e-9);
        assert!((l.assoc(0, 0) - 1.0).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn loopy_handles_large_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_problem(&mut rng, 12, 10);
        let out = solve(&p);
        assert!(out.converged);
        for k in 0..12 {
            let s: f64 = out.feature_row(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    fn marginals_from(row: &[f64]) -> AssociationMarginals {
        let mut out = AssociationMarginals::new(1, row.len() - 1);
        out.feature_row_mut(0).copy_from_slice(row);
        out
    }

    #[test]
    fn best_measurement_examples() {
        assert_eq!(best_measurement(&marginals_from(&[0.3, 0.7]), 0), 1);
        assert_eq!(best_measurement(&marginals_from(&[0.6, 0.2, 0.2]), 0), 0);
        assert_eq!(best_measurement(&marginals_from(&[0.2, 0.4, 0.4]), 0), 1);
        assert_eq!(best_measurement(&marginals_from(&[1.0]), 0), 0);
        assert_eq!(best_measurement(&marginals_from(&[0.1, 0.2, 0.7]), 0), 2);
    }

    fn arb_problem(max_k: usize, max_m: usize) -> impl Strategy<Value = AssociationProblem> {
        (1..=max_k, 0..=max_m).prop_flat_map(|(k, m)| {
            (
                proptest::collection::vec(0.0f64..=1.0, k),
                proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, m), k),
                0.01f64..=1.0,
                proptest::collection::vec(0.001f64..2.0, m),
                proptest::collection::vec(0.0f64..0.5, m),
            )
                .prop_map(|(e, l, pd, c, b)| problem(e, l, pd, c, b))
        })
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(p in arb_problem(4, 5)) {
            for out in [marginals_enumerate(&p).unwrap(), marginals_loopy(&p, 200, 1e-10)] {
                for k in 0..p.num_features() {
                    let row = out.feature_row(k);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(row.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
                }
                prop_assert!(out.unassigned.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            }
        }

        #[test]
        fn loopy_exact_on_trees(p in prop_oneof![arb_problem(1, 6), arb_problem(5, 1)]) {
            let d = max_diff(&marginals_loopy(&p, 500, 1e-14), &marginals_enumerate(&p).unwrap());
            prop_assert!(d < 1e-9, "{}", d);
        }

        #[test]
        fn label_invariance(p in arb_problem(3, 4), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let m = p.num_measurements();
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut q = p.clone();
            for (new, &old) in perm.iter().enumerate() {
                q.clutter_intensity[new] = p.clutter_intensity[old];
                q.birth_intensity[new] = p.birth_intensity[old];
                for k in 0..p.num_features() {
                    q.likelihoods[k][new] = p.likelihoods[k][old];
                }
            }
            let a = marginals_enumerate(&p).unwrap();
            let b = marginals_enumerate(&q).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for k in 0..p.num_features() {
                    prop_assert!((a.assoc(k, old) - b.assoc(k, new)).abs() < 1e-12);
                }
                prop_assert!((a.unassigned[old] - b.unassigned[new]).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_invariance(p in arb_problem(3, 4), scale in 1e-3f64..1e3) {
            let mut q = p.clone();
            q.likelihoods.iter_mut().flatten().for_each(|v| *v *= scale);
            q.clutter_intensity.iter_mut().for_each(|v| *v *= scale);
            q.birth_intensity.iter_mut().for_each(|v| *v *= scale);
            let d = max_diff(&marginals_enumerate(&p).unwrap(), &marginals_enumerate(&q).unwrap());
            prop_assert!(d < 1e-9);
            let d = max_diff(&marginals_loopy(&p, 500, 1e-13), &marginals_loopy(&q, 500, 1e-13));
            prop_assert!(d < 1e-9);
        }
    }
}
