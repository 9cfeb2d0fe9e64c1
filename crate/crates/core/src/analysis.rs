//! One analytic parameter point: solver, collision model and IRT combined.

use serde::{Deserialize, Serialize};

use crate::allocator::mixed_allocation_pmf;
use crate::collision::{irt_pmf, p_hn, p_nonempty_carrier_sense, p_sync, DeliveryMetrics};
use crate::error::Result;
use crate::scenario::Scenario;
use crate::solver::{expected_backoff_slots, p_exp, solve_fixed_point, tau_given_pb, FixedPointResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub scenario_hash: String,
    pub allocator: String,
    pub tau_model: String,
    pub n_cs: u32,
    pub tau: f64,
    pub tau_decreasing: f64,
    pub tau_flat: f64,
    pub p_b: f64,
    pub p_exp: f64,
    pub e_nbo: f64,
    pub p_sync: f64,
    pub p_hn: f64,
    pub p_col: f64,
    pub pdr: f64,
    /// `P[IRT = nu]` for `nu = 1..=irt_max_nu`; empty when PDR is zero.
    pub irt_pmf: Vec<f64>,
    /// Exact probability of a non-empty carrier-sense disc at the scenario density.
    pub p_nonempty_cs: f64,
    pub solver: FixedPointResult,
}

/// Evaluates the analytic engine at the scenario's carrier-sense population.
pub fn analyze(scenario: &Scenario) -> Result<AnalyticReport> {
    analyze_at(scenario, scenario.analytic_n_cs())
}

pub fn analyze_at(scenario: &Scenario, n_cs: u32) -> Result<AnalyticReport> {
    scenario.validate()?;
    let mac = &scenario.mac;
    let mix = scenario.allocation_mix();
    let fp = solve_fixed_point(n_cs, &mix, mac, scenario.tau_model, scenario.tol, scenario.max_iter)?;
    let branches = tau_given_pb(fp.p_b, &mix, mac, scenario.tau_model)?;
    let tagged_alloc = mixed_allocation_pmf(&mix, mac);
    let sync = p_sync(n_cs, mac.cw, fp.tau);
    let hn = p_hn(n_cs, mac.cw, fp.tau, mac.l_bcn_slots, &tagged_alloc);
    let metrics = DeliveryMetrics::from_parts(fp.tau, sync, hn);
    let e_nbo = if fp.p_b < 1.0 {
        expected_backoff_slots(&mix, fp.p_b, mac, scenario.tau_model)?
    } else {
        0.0
    };
    let irt = if metrics.pdr > 0.0 {
        (1..=scenario.irt_max_nu)
            .map(|nu| irt_pmf(nu, metrics.pdr))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(AnalyticReport {
        scenario_hash: scenario.hash(),
        allocator: scenario.allocator_mode.label().into(),
        tau_model: scenario.tau_model.as_str().into(),
        n_cs,
        tau: fp.tau,
        tau_decreasing: branches.tau_decreasing,
        tau_flat: branches.tau_flat,
        p_b: fp.p_b,
        p_exp: p_exp(fp.tau),
        e_nbo,
        p_sync: metrics.p_sync,
        p_hn: metrics.p_hn,
        p_col: metrics.p_col,
        pdr: metrics.pdr,
        irt_pmf: irt,
        p_nonempty_cs: p_nonempty_carrier_sense(scenario.density_per_m2, scenario.r_cs_m),
        solver: fp,
    })
}
