//! Closed forms against independent references: path enumeration, chain
//! powers, joint counter enumeration and a grid scan of the fixed point.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use dsrc_backoff::allocator::{allocation_pmf, build_transition_matrix, mixed_allocation_pmf, MacParams};
use dsrc_backoff::collision::{p_hn, p_sync};
use dsrc_backoff::experiment::oracle::{enumerate_backoff, enumerate_p_hn, enumerate_p_sync};
use dsrc_backoff::risk::{Allocation, AllocationMix, DivisionRule, RiskModelParams};
use dsrc_backoff::solver::{
    expected_backoff_slots, pb_given_tau, solve_fixed_point, tau_for_branch, tau_given_pb, TauModel,
};

fn default_mix() -> AllocationMix {
    AllocationMix::from_risk(&RiskModelParams::default(), DivisionRule::HighRiskDecreasing)
}

#[test]
fn tau_matches_chain_absorption() {
    // stepping the chain slot by slot for L - l slots is a second route to tau
    for (cw, l, big_l) in [(15, 8, 750), (31, 8, 200), (4, 2, 10), (7, 3, 12)] {
        let mac = MacParams::new(cw, l, big_l, 0.5).unwrap();
        for p_b in [0.0, 0.05, 0.3, 0.8, 0.97] {
            for branch in [Allocation::Flat, Allocation::Decreasing] {
                let alloc = allocation_pmf(branch, &mac);
                let chain = build_transition_matrix(&alloc, p_b, &mac).unwrap();
                let (reached, expired, pending) = chain.absorption_within(&alloc, mac.backoff_horizon());
                let tau = tau_for_branch(p_b, branch, &mac, TauModel::Truncated).unwrap();
                assert_abs_diff_eq!(reached, tau, epsilon = 1e-10);
                assert_abs_diff_eq!(reached + expired + pending, 1.0, epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn hn_and_sync_worked_example() {
    // CW = 4, l = 2, one carrier-sense neighbour, tau = 1/2
    let mac = MacParams::new(4, 2, 10, 0.5).unwrap();
    let flat = allocation_pmf(Allocation::Flat, &mac);
    assert_abs_diff_eq!(p_sync(1, 4, 0.5), enumerate_p_sync(1, 4, 0.5), epsilon = 1e-15);
    assert_abs_diff_eq!(p_sync(2, 4, 0.5), 0.0625, epsilon = 1e-15);
    // tagged at c: non-overlapping hidden counters number 2, 1, 1, 2
    let per_node_miss = |s: f64| 0.5 + 0.5 * s / 4.0;
    let by_hand = 1.0
        - [2.0, 1.0, 1.0, 2.0]
            .iter()
            .map(|&s| 0.25 * per_node_miss(s).powi(3))
            .sum::<f64>();
    assert_abs_diff_eq!(p_hn(1, 4, 0.5, 2, &flat), by_hand, epsilon = 1e-14);
    assert_abs_diff_eq!(enumerate_p_hn(1, 4, 0.5, 2, &flat), by_hand, epsilon = 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backoff_closed_forms_match_enumeration(
        cw in 1u32..=5,
        l in 1u32..=3,
        extra in 0u32..=6,
        p_b in 0.0f64..=1.0,
        r in 0.2f64..0.8,
        w in 0.0f64..=1.0,
    ) {
        let mac = MacParams::new(cw, l, cw + l + extra, r).unwrap();
        let mix = AllocationMix::new(w, 1.0 - w).unwrap();
        let alloc = mixed_allocation_pmf(&mix, &mac);
        let (tau_o, nbo_o) = enumerate_backoff(&alloc, p_b, &mac);
        let tau = tau_given_pb(p_b, &mix, &mac, TauModel::Truncated).unwrap().tau;
        let nbo = expected_backoff_slots(&mix, p_b, &mac, TauModel::Truncated).unwrap();
        prop_assert!((tau - tau_o).abs() <= 1e-10, "tau {} vs {}", tau, tau_o);
        prop_assert!((nbo - nbo_o).abs() <= 1e-10, "E[N_bo] {} vs {}", nbo, nbo_o);
    }

    #[test]
    fn collision_closed_forms_match_enumeration(
        cw in 1u32..=4,
        l in 1u32..=3,
        n in 0u32..=2,
        tau in 0.0f64..=1.0,
        w in 0.0f64..=1.0,
    ) {
        let mac = MacParams::new(cw, l, cw + l, 0.5).unwrap();
        let alloc = mixed_allocation_pmf(&AllocationMix::new(w, 1.0 - w).unwrap(), &mac);
        prop_assert!((p_sync(n, cw, tau) - enumerate_p_sync(n, cw, tau)).abs() <= 1e-10);
        prop_assert!((p_hn(n, cw, tau, l, &alloc) - enumerate_p_hn(n, cw, tau, l, &alloc)).abs() <= 1e-10);
    }
}

/// Root of `g(tau) = tau - h(tau)` by scanning a uniform grid for a sign
/// change and refining with plain bisection.
fn scanned_roots(n_cs: u32, mix: &AllocationMix, mac: &MacParams) -> Vec<f64> {
    let g = |t: f64| {
        t - tau_given_pb(pb_given_tau(t, n_cs), mix, mac, TauModel::Truncated)
            .unwrap()
            .tau
    };
    let grid = 20_000;
    let mut roots = Vec::new();
    let mut prev = (0.0, g(0.0));
    for i in 1..=grid {
        let t = i as f64 / grid as f64;
        let cur = (t, g(t));
        if prev.1 == 0.0 {
            roots.push(prev.0);
        } else if prev.1.signum() != cur.1.signum() {
            let (mut lo, mut hi) = (prev.0, cur.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == g(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    roots
}

#[test]
fn solver_matches_grid_scan() {
    let tol = 1e-10;
    for cw in [15u32, 31] {
        let mac = MacParams::new(cw, 8, 750, 0.5).unwrap();
        for mix in [AllocationMix::FLAT_ONLY, default_mix()] {
            for n_cs in [10u32, 100, 300] {
                let roots = scanned_roots(n_cs, &mix, &mac);
                assert_eq!(roots.len(), 1, "cw {cw} n_cs {n_cs}: roots {roots:?}");
                let fp = solve_fixed_point(n_cs, &mix, &mac, TauModel::Truncated, tol, 10_000).unwrap();
                assert!(
                    (fp.tau - roots[0]).abs() <= 2.0 * tol,
                    "cw {cw} n_cs {n_cs}: solver {} vs scan {}",
                    fp.tau,
                    roots[0]
                );
            }
        }
    }
}

#[test]
fn untruncated_model_also_converges() {
    let mac = MacParams::default();
    for n_cs in [1u32, 10, 50, 500] {
        let fp = solve_fixed_point(
            n_cs,
            &AllocationMix::FLAT_ONLY,
            &mac,
            TauModel::Untruncated,
            1e-10,
            10_000,
        )
        .unwrap();
        let h = tau_given_pb(fp.p_b, &AllocationMix::FLAT_ONLY, &mac, TauModel::Untruncated)
            .unwrap()
            .tau;
        assert_abs_diff_eq!(fp.tau, h, epsilon = 1e-9);
    }
}
