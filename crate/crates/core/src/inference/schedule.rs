//! Randomized trigger times for robust proposals.

use rand::Rng;

use super::belief::PmvaBelief;
use super::Hyperparams;

/// Next trigger drawn uniformly from `{from + n1, ..., from + n2}`.
pub fn initial_trigger<R: Rng + ?Sized>(from: usize, hp: &Hyperparams, rng: &mut R) -> usize {
    from + rng.random_range(hp.n1..=hp.n2)
}

/// Whether the PMVA uses the robust proposal at time `n`. A trigger fires
/// only at the stored time and only while the PMVA is at most `n_max` steps
/// old; firing draws the following trigger.
pub fn schedule_robust<R: Rng + ?Sized>(
    pmva: &mut PmvaBelief,
    n: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> bool {
    if n.saturating_sub(pmva.birth_time) > hp.n_max || pmva.next_robust_trigger != Some(n) {
        return false;
    }
    pmva.next_robust_trigger = Some(initial_trigger(n, hp, rng));
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn pmva(birth: usize, trigger: Option<usize>) -> PmvaBelief {
        let mut b = PmvaBelief::new(vec![Point2::new(1.0, 1.0)], 0.5, 0, birth);
        b.next_robust_trigger = trigger;
        b
    }

    #[test]
    fn never_after_n_max() {
        let hp = Hyperparams::default();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut b = pmva(0, Some(121));
        for n in 121..400 {
            assert!(!schedule_robust(&mut b, n, &hp, &mut r));
            b.next_robust_trigger = Some(n + 1);
        }
    }

    #[test]
    fn fires_only_on_stored_time() {
        let hp = Hyperparams::default();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut b = pmva(0, Some(10));
        assert!(!schedule_robust(&mut b, 9, &hp, &mut r));
        assert!(schedule_robust(&mut b, 10, &hp, &mut r));
        let next = b.next_robust_trigger.unwrap();
        assert!((15..=20).contains(&next));
        assert!(!schedule_robust(&mut b, 10, &hp, &mut r));
        // Boundary: age exactly n_max still fires.
        let mut b = pmva(0, Some(120));
        assert!(schedule_robust(&mut b, 120, &hp, &mut r));
    }

    #[test]
    fn next_trigger_is_uniform() {
        let hp = Hyperparams::default();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0.0f64; 6];
        let draws = 10_000;
        for _ in 0..draws {
            let mut b = pmva(0, Some(10));
            assert!(schedule_robust(&mut b, 10, &hp, &mut r));
            counts[b.next_robust_trigger.unwrap() - 15] += 1.0;
        }
        let e = draws as f64 / 6.0;
        let stat: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        assert!(
            stat < ChiSquared::new(5.0).unwrap().inverse_cdf(0.99),
            "chi2 {stat}"
        );
    }

    #[test]
    fn first_trigger_from_birth() {
        let hp = Hyperparams::default();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = initial_trigger(37, &hp, &mut r);
            assert!((42..=47).contains(&t));
        }
    }
}
