//! Randomized invariants of the equilibrium oracle. The closed-form identity
//! between the maximized game value and Jensen-Shannon divergence must hold
//! to 1e-12 on arbitrary distribution pairs; the remaining checks pin
//! symmetry, ranges and the exact behavior at equal distributions.

use cbalance_core::oracle::{
    h_of_g, jsd, jsd_identity_residual, kl, optimal_discriminator, DiscreteDist,
};
use proptest::prelude::*;

const LN4: f64 = 1.3862943611198906;

/// Distribution from positive weights; support size 1..=16.
fn arb_dist() -> impl Strategy<Value = DiscreteDist> {
    prop::collection::vec(1e-6..1.0f64, 1..=16)
        .prop_map(|w| DiscreteDist::from_weights(&w).unwrap())
}

/// Pair over a shared support size, allowing zero-mass points on either side.
fn arb_pair() -> impl Strategy<Value = (DiscreteDist, DiscreteDist)> {
    (1usize..=16)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(0.0..1.0f64, k),
                prop::collection::vec(0.0..1.0f64, k),
            )
        })
        .prop_filter_map("weights must not vanish", |(a, b)| {
            let p = DiscreteDist::from_weights(&a).ok()?;
            let q = DiscreteDist::from_weights(&b).ok()?;
            Some((p, q))
        })
}

/// Dyadic distribution: probabilities are multiples of 1/2^10, so the float
/// values sum to exactly 1 and equality checks can run at the 1e-15 level.
fn arb_dyadic_dist() -> impl Strategy<Value = DiscreteDist> {
    prop::collection::vec(1u32..64, 2..=16).prop_map(|counts| {
        let total: u32 = counts.iter().sum();
        // Scale up to the next power of two by padding the first component.
        let pow2 = total.next_power_of_two();
        let mut counts = counts;
        counts[0] += pow2 - total;
        DiscreteDist::new(counts.iter().map(|&c| c as f64 / pow2 as f64).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn identity_residual_below_1e12((p, q) in arb_pair()) {
        prop_assert!(jsd_identity_residual(&p, &q).unwrap() < 1e-12);
    }

    #[test]
    fn jsd_is_exactly_symmetric((p, q) in arb_pair()) {
        prop_assert_eq!(jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
    }

    #[test]
    fn jsd_stays_in_range((p, q) in arb_pair()) {
        let v = jsd(&p, &q).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= 2.0f64.ln() + 1e-15);
    }

    #[test]
    fn kl_nonnegative((p, q) in arb_pair()) {
        // Infinity on absolute-continuity failure also satisfies the bound.
        let v = kl(&p, &q).unwrap();
        prop_assert!(v >= -1e-12);
    }

    #[test]
    fn discriminator_ratio_in_unit_interval((p, q) in arb_pair()) {
        let d = optimal_discriminator(&p, &q).unwrap();
        prop_assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn discriminator_half_characterizes_equality((p, q) in arb_pair()) {
        // Forward direction: equal distributions give exactly 0.5 everywhere
        // (zero-mass points by convention, the rest by exact division).
        let d_eq = optimal_discriminator(&p, &p).unwrap();
        prop_assert!(d_eq.iter().all(|&v| v == 0.5));

        // Reverse direction: a ratio pinned to 0.5 within 1e-12 forces the
        // point masses together, |pd - pg| = 2 |D - 1/2| (pd + pg).
        let d = optimal_discriminator(&p, &q).unwrap();
        if d.iter().all(|&v| (v - 0.5).abs() < 1e-12) {
            for (&a, &b) in p.probs().iter().zip(q.probs()) {
                prop_assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn h_bounded_below_by_minus_log_four((p, q) in arb_pair()) {
        prop_assert!(h_of_g(&p, &q).unwrap() >= -LN4 - 1e-12);
    }

    #[test]
    fn h_at_equality_hits_minus_log_four(p in arb_dyadic_dist()) {
        let v = h_of_g(&p, &p).unwrap();
        prop_assert!((v + LN4).abs() < 1e-15, "h(p,p) = {}", v);
    }

    #[test]
    fn jsd_zero_iff_equal(p in arb_dist()) {
        prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
    }
}
