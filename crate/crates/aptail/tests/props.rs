//! Cross-cutting property tests: identities that must hold for every
//! valid input, checked against independent recomputation.

use aptail::clusters::{plain_moment_filtered, SeedFilter};
use aptail::concentration::ProbInput;
use aptail::index::{
    build_index, closed_form_count, exact_moments, intersection_profile, interval_ap_count,
    link_counts, psi, ModelParams, SubsetState,
};
use aptail::numeric::falling;
use aptail::oracle::{ap_count_in, MaskWorld};
use aptail::rates::{poisson_rate, Regime};
use aptail::sampling::{Estimate, TiltSpec};
use aptail::variational::{beta, min_seed, psi_star, PsiStarMode, SeedQuery};
use proptest::prelude::*;
use std::sync::Arc;

fn params(n: u32, k: u32, p: f64) -> ModelParams {
    exact_moments(Arc::new(build_index(n, k).unwrap()), p).unwrap()
}

fn members_from_mask(mask: u64) -> Vec<u32> {
    MaskWorld::members_of(mask)
}

proptest! {
    #[test]
    fn degree_identities(n in 3u32..=60, k in 3u32..=6) {
        let index = build_index(n, k).unwrap();
        let total: u128 = (1..=n).map(|i| index.degree(i) as u128).sum();
        prop_assert_eq!(total, k as u128 * index.count() as u128);
        for i in 1..=n {
            prop_assert_eq!(index.degree(i), index.degree(n + 1 - i));
        }
    }

    #[test]
    fn interval_counts_match_closed_form(k in 3u32..=6, m in 1u64..=200) {
        prop_assert_eq!(interval_ap_count(k, m), closed_form_count(m, k));
    }

    #[test]
    fn profile_weighted_sum_equals_degree_sum(
        n in 3u32..=30,
        k in 3u32..=5,
        bits in any::<u64>(),
    ) {
        let index = build_index(n, k).unwrap();
        let members = members_from_mask(bits & ((1u64 << n) - 1));
        let profile = intersection_profile(&index, &members).unwrap();
        let weighted: u128 = profile
            .iter()
            .enumerate()
            .map(|(idx, &c)| (idx as u128 + 1) * c as u128)
            .sum();
        let degree_sum: u128 = members.iter().map(|&i| index.degree(i) as u128).sum();
        prop_assert_eq!(weighted, degree_sum);
    }

    #[test]
    fn subset_state_tracks_brute_recount(
        n in 3u32..=20,
        ops in proptest::collection::vec((1u32..=20, any::<bool>()), 0..40),
    ) {
        let index = build_index(n, 3).unwrap();
        let mut state = SubsetState::new(n);
        let mut set = std::collections::BTreeSet::new();
        for (raw, add) in ops {
            let i = (raw - 1) % n + 1;
            if add {
                state.insert(&index, i);
                set.insert(i);
            } else {
                state.remove(&index, i);
                set.remove(&i);
            }
            prop_assert_eq!(state.len() as usize, set.len());
            prop_assert_eq!(state.ap_count(), ap_count_in(n, 3, |x| set.contains(&x)));
        }
    }

    #[test]
    fn link_counts_match_oracle(n in 3u32..=14, bits in any::<u64>()) {
        let index = build_index(n, 3).unwrap();
        let world = MaskWorld::new(n, 3).unwrap();
        let mask = bits & ((1u64 << n) - 1);
        let state = SubsetState::from_members(&index, &members_from_mask(mask)).unwrap();
        prop_assert_eq!(link_counts(&index, &state), world.link_counts(mask));
    }

    #[test]
    fn psi_superadditive_and_monotone(
        n in 6u32..=30,
        p in 0.05f64..0.95,
        bits in any::<u64>(),
        split in any::<u64>(),
    ) {
        let pm = params(n, 3, p);
        let pool = members_from_mask(bits & ((1u64 << n) - 1));
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (j, &e) in pool.iter().enumerate() {
            if split >> (j % 64) & 1 == 1 {
                u.push(e);
            } else {
                v.push(e);
            }
        }
        let whole = psi(&pm, &pool).unwrap();
        let left = psi(&pm, &u).unwrap();
        let right = psi(&pm, &v).unwrap();
        prop_assert!(whole - left - right >= -1e-12, "superadditivity: {} < {} + {}", whole, left, right);
        prop_assert!(whole - left.max(right) >= -1e-12, "monotonicity: {} < max({}, {})", whole, left, right);
    }

    // psi(U) >= A_k(U) (1 - p^k), so any set whose progression count
    // reaches t / (1 - p^k) is a t-seed; the minimum seed can only be
    // smaller.
    #[test]
    fn min_seed_at_most_scaled_counting_minimum(
        n in 4u32..=10,
        p in 0.1f64..0.9,
        t_step in 1u32..=6,
    ) {
        let pm = params(n, 3, p);
        let t = 0.3 * t_step as f64;
        let seed = min_seed(&pm, &SeedQuery::new(t)).unwrap();
        let scaled = t / (1.0 - p.powi(3));
        let star = psi_star(&pm.index, scaled, PsiStarMode::Exact).unwrap();
        if let Some(b) = star.size {
            prop_assert!(seed.size.is_some());
            prop_assert!(seed.size.unwrap() <= b);
        }
    }

    #[test]
    fn poisson_rate_nonnegative_and_convex(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mid = 0.5 * (lo + hi);
        let r_lo = poisson_rate(lo).unwrap();
        let r_hi = poisson_rate(hi).unwrap();
        let r_mid = poisson_rate(mid).unwrap();
        prop_assert!(r_lo >= 0.0);
        prop_assert!(r_mid <= 0.5 * (r_lo + r_hi) + 1e-9);
    }

    #[test]
    fn beta_bounded_and_monotone(x in 1e-9f64..=1.0, y in 1e-9f64..=1.0) {
        let bx = beta(x).unwrap();
        prop_assert!(bx > 0.0 && bx <= 0.25);
        if x <= y {
            prop_assert!(bx <= beta(y).unwrap());
        }
    }

    #[test]
    fn falling_factorial_recurrence(x in -50.0f64..50.0, t in 0u32..8) {
        let lhs = falling(x, t + 1);
        let rhs = falling(x, t) * (x - t as f64);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    // Merging two estimates is the same as pooling their raw sums.
    // Indicator-style sums (sum_sq == sum) keep the pair valid.
    #[test]
    fn estimate_merge_pools_sums(
        f1 in 0.0f64..=1.0,
        f2 in 0.0f64..=1.0,
        n1 in 1u64..10_000,
        n2 in 1u64..10_000,
    ) {
        let s1 = (f1 * n1 as f64).floor();
        let s2 = (f2 * n2 as f64).floor();
        let a = Estimate::from_sums(s1, s1, n1, 1);
        let b = Estimate::from_sums(s2, s2, n2, 2);
        let merged = a.merge(&b);
        let pooled = Estimate::from_sums(s1 + s2, s1 + s2, n1 + n2, 1);
        prop_assert_eq!(merged.n, pooled.n);
        prop_assert!((merged.value - pooled.value).abs() <= 1e-12 * pooled.value.abs().max(1.0));
        prop_assert!((merged.stderr - pooled.stderr).abs() <= 1e-12 * pooled.stderr.abs().max(1.0));
    }

    #[test]
    fn regime_round_trips(idx in 0usize..6) {
        let r = [
            Regime::BelowRange,
            Regime::Clt,
            Regime::Gaussian,
            Regime::Poisson,
            Regime::Localised,
            Regime::Boundary,
        ][idx];
        let back: Regime = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back, r);
        let parsed: Regime = r.to_string().parse().unwrap();
        prop_assert_eq!(parsed, r);
    }

    #[test]
    fn tagged_types_survive_serde(
        probs in proptest::collection::vec(0.0f64..=1.0, 1..6),
        u in 0u64..5,
        uf in 0.0f64..3.0,
        max_size in 1u32..9,
        c in 0.1f64..2.0,
        value in 0.0f64..1.0,
        stderr in 0.0f64..0.1,
    ) {
        fn round_trip<T: serde::Serialize + serde::de::DeserializeOwned>(v: &T) -> bool {
            let before = serde_json::to_value(v).unwrap();
            let back: T = serde_json::from_value(before.clone()).unwrap();
            serde_json::to_value(&back).unwrap() == before
        }
        let checks = [
            round_trip(&TiltSpec::Product { probs, p_bounded: true }),
            round_trip(&TiltSpec::Sprinkle { u }),
            round_trip(&SeedFilter::Family { u: uf, c }),
            round_trip(&SeedFilter::Cap { u: uf, max_size }),
            round_trip(&ProbInput::Exact { value }),
            round_trip(&ProbInput::Mc { value, stderr }),
        ];
        for (i, ok) in checks.iter().enumerate() {
            prop_assert!(*ok, "round trip {} changed the value", i);
        }
    }

    // Raising the seed level or shrinking the size budget weakens the
    // filter event's complement: the filtered moment can only grow.
    #[test]
    fn filtered_moments_monotone(
        p in 0.1f64..0.6,
        u1 in 0.0f64..2.0,
        u2 in 0.0f64..2.0,
        m in 1u32..=3,
    ) {
        let pm = params(10, 3, p);
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let budget = 3 * m;
        let at = |u: f64, max_size: u32| {
            plain_moment_filtered(&pm, m, Some(&SeedFilter::Cap { u, max_size })).unwrap()
        };
        let f_lo = at(lo, budget);
        let f_hi = at(hi, budget);
        prop_assert!(f_lo <= f_hi + 1e-12, "u-monotonicity: {} > {}", f_lo, f_hi);
        let f_tight = at(lo, 1);
        prop_assert!(f_lo <= f_tight + 1e-12, "budget-monotonicity: {} > {}", f_lo, f_tight);
        let unfiltered = plain_moment_filtered(&pm, m, None).unwrap();
        prop_assert!(f_hi <= unfiltered + 1e-12, "filter must only remove mass");
    }
}
