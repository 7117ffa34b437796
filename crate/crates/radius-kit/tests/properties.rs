use nalgebra::DVector;
use proptest::prelude::*;

use radius_kit::model::NormP;
use radius_kit::sampling::{sample_lp_ball, RngStream};
use radius_kit::violation::isotonic_nonincreasing;
use radius_kit::volume::clopper_pearson;

proptest! {
    #[test]
    fn isotonic_fit_is_nonincreasing_and_mean_preserving(
        v in proptest::collection::vec(0.0..1.0f64, 1..40)
    ) {
        let fit = isotonic_nonincreasing(&v);
        prop_assert_eq!(fit.len(), v.len());
        for w in fit.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        // PAVA redistributes within blocks; the total is conserved
        let sum_v: f64 = v.iter().sum();
        let sum_f: f64 = fit.iter().sum();
        prop_assert!((sum_v - sum_f).abs() <= 1e-9 * (1.0 + sum_v.abs()));
        // already-sorted input is a fixed point
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let refit = isotonic_nonincreasing(&sorted);
        for (a, b) in refit.iter().zip(&sorted) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn binomial_interval_brackets_the_point_estimate(
        hits in 0u64..500, extra in 0u64..500, delta in 0.001..0.5f64
    ) {
        let total = hits + extra + 1;
        let (lo, hi) = clopper_pearson(hits, total, delta);
        let p_hat = hits as f64 / total as f64;
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!((0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p_hat + 1e-12 && p_hat <= hi + 1e-12);
        // a higher confidence level can only widen the interval
        let (lo2, hi2) = clopper_pearson(hits, total, delta / 2.0);
        prop_assert!(lo2 <= lo + 1e-12 && hi2 >= hi - 1e-12);
    }

    #[test]
    fn ball_samples_stay_inside_the_ball(
        seed in 0u64..1000, dim in 1usize..5, radius in 0.1..10.0f64, p_idx in 0usize..3
    ) {
        let p = [NormP::One, NormP::Two, NormP::Inf][p_idx];
        let center = DVector::from_fn(dim, |i, _| i as f64 - 1.0);
        let pts = sample_lp_ball(&center, radius, p, RngStream::new(seed, 0), 64);
        prop_assert_eq!(pts.len(), 64);
        for z in &pts {
            prop_assert!(p.norm(&(z - &center)) <= radius * (1.0 + 1e-12));
        }
    }
}
