//! Coupled solve of the per-period transmission probability `tau` and the
//! busy-slot probability `p_b`.
//!
//! A node with initial counter `c` transmits within the period iff its `c`-th
//! idle slot arrives within the backoff horizon `H = L_bcn - l_bcn`, i.e. it
//! sees at most `delta_c = H - c` busy slots. With independent busy slots this
//! is the binomial tail `P[Bin(H, 1 - p_b) >= c]`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::allocator::{allocation_pmf, delta_c, MacParams};
use crate::error::{param, Error, Result};
use crate::risk::{Allocation, AllocationMix};

/// How expiration enters the `tau(p_b)` expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauModel {
    /// Paths survive any busy stalls that still fit in `delta_c`.
    #[default]
    Truncated,
    /// Only the direct idle path `(1 - p_b)^c` is counted.
    Untruncated,
}

impl TauModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TauModel::Truncated => "truncated",
            TauModel::Untruncated => "untruncated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "truncated" => Some(TauModel::Truncated),
            "untruncated" => Some(TauModel::Untruncated),
            _ => None,
        }
    }
}

/// Network-level `tau` and its per-branch components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBreakdown {
    pub tau: f64,
    pub tau_decreasing: f64,
    pub tau_flat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Picard,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub tau: f64,
    pub p_b: f64,
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

/// Log-pmf of `Bin(n, q)` at `k`.
fn ln_binomial_pmf(n: u64, k: u64, ln_q: f64, ln_p: f64) -> f64 {
    let mut v = ln_binomial(n, k);
    if k > 0 {
        v += k as f64 * ln_q;
    }
    if n > k {
        v += (n - k) as f64 * ln_p;
    }
    v
}

/// Probability that a node starting at counter `c` reaches zero in time, for
/// every `c` in `0..CW`.
pub fn drain_probabilities(p_b: f64, mac: &MacParams, model: TauModel) -> Vec<f64> {
    let idle = 1.0 - p_b;
    match model {
        TauModel::Untruncated => (0..mac.cw).map(|c| idle.powi(c as i32)).collect(),
        TauModel::Truncated => {
            let h = u64::from(mac.backoff_horizon());
            if p_b <= 0.0 {
                return vec![1.0; mac.cw as usize];
            }
            if p_b >= 1.0 {
                let mut v = vec![0.0; mac.cw as usize];
                v[0] = 1.0;
                return v;
            }
            let (ln_q, ln_p) = (idle.ln(), p_b.ln());
            // upper tail P[X >= c] summed from the top for accuracy
            let mut tail = vec![0.0; h as usize + 2];
            for k in (0..=h).rev() {
                tail[k as usize] = tail[k as usize + 1] + ln_binomial_pmf(h, k, ln_q, ln_p).exp();
            }
            (0..mac.cw)
                .map(|c| if c == 0 { 1.0 } else { tail[c as usize].min(1.0) })
                .collect()
        }
    }
}

fn validate_pb(p_b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_b) {
        return Err(param(format!("p_b must be in [0, 1], got {p_b}")));
    }
    Ok(())
}

/// `tau` for one allocation branch.
pub fn tau_for_branch(p_b: f64, branch: Allocation, mac: &MacParams, model: TauModel) -> Result<f64> {
    validate_pb(p_b)?;
    let drain = drain_probabilities(p_b, mac, model);
    Ok(weighted_drain(&allocation_pmf(branch, mac), &drain))
}

/// `sum a_c d_c / sum a_c`; dividing by the actual mass keeps `tau = 1`
/// exact on an idle channel.
fn weighted_drain(alloc: &[f64], drain: &[f64]) -> f64 {
    let mass: f64 = alloc.iter().sum();
    alloc.iter().zip(drain).map(|(a, d)| a * d).sum::<f64>() / mass
}

/// Mixture `tau` as a function of `p_b`.
pub fn tau_given_pb(p_b: f64, mix: &AllocationMix, mac: &MacParams, model: TauModel) -> Result<TauBreakdown> {
    validate_pb(p_b)?;
    let drain = drain_probabilities(p_b, mac, model);
    let branch_tau = |b| weighted_drain(&allocation_pmf(b, mac), &drain);
    let tau_decreasing = branch_tau(Allocation::Decreasing);
    let tau_flat = branch_tau(Allocation::Flat);
    Ok(TauBreakdown {
        tau: (mix.decreasing * tau_decreasing + mix.flat * tau_flat).clamp(0.0, 1.0),
        tau_decreasing,
        tau_flat,
    })
}

/// `p_b = 1 - (1 - tau)^n_cs`.
pub fn pb_given_tau(tau: f64, n_cs: u32) -> f64 {
    1.0 - (1.0 - tau).powi(n_cs as i32)
}

struct Composite<'a> {
    n_cs: u32,
    mix: &'a AllocationMix,
    mac: &'a MacParams,
    model: TauModel,
}

impl Composite<'_> {
    /// `tau -> tau(p_b(tau))`; nonincreasing in `tau`.
    fn map(&self, tau: f64) -> f64 {
        let p_b = pb_given_tau(tau, self.n_cs).clamp(0.0, 1.0);
        tau_given_pb(p_b, self.mix, self.mac, self.model)
            .map(|t| t.tau)
            .unwrap_or(f64::NAN)
    }

    fn result(&self, tau: f64, iterations: usize, method: SolveMethod) -> FixedPointResult {
        let p_b = pb_given_tau(tau, self.n_cs);
        FixedPointResult {
            tau,
            p_b,
            iterations,
            residual: (tau - self.map(tau)).abs(),
            method,
        }
    }
}

/// Solves `tau = tau(p_b)`, `p_b = p_b(tau)` by damped Picard iteration with
/// a bisection fallback on `g(tau) = tau - tau(p_b(tau))`.
pub fn solve_fixed_point(
    n_cs: u32,
    mix: &AllocationMix,
    mac: &MacParams,
    model: TauModel,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    if !(tol > 0.0) {
        return Err(param(format!("tol must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(param("max_iter must be ≥ 1"));
    }
    mac.validate()?;
    let f = Composite { n_cs, mix, mac, model };
    if n_cs == 0 {
        let tau = f.map(0.0);
        return Ok(f.result(tau, 1, SolveMethod::Direct));
    }

    const DAMPING: f64 = 0.5;
    const STALL_WINDOW: usize = 25;
    let mut tau = 1.0 / f64::from(mac.cw);
    let mut best = f.result(tau, 0, SolveMethod::Picard);
    let mut since_improvement = 0;
    let mut iterations = 0;
    let picard_budget = max_iter.min(500);
    while iterations < picard_budget {
        iterations += 1;
        tau = (1.0 - DAMPING) * tau + DAMPING * f.map(tau);
        let r = f.result(tau, iterations, SolveMethod::Picard);
        if r.residual <= tol {
            return Ok(r);
        }
        if r.residual < best.residual * 0.999 {
            best = r;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= STALL_WINDOW {
                break;
            }
        }
    }

    // g is strictly increasing with g(0) <= 0 <= g(1), so a root is bracketed.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while iterations < max_iter {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let r = f.result(mid, iterations, SolveMethod::Bisection);
        if r.residual < best.residual {
            best = r;
        }
        if r.residual <= tol {
            return Ok(r);
        }
        if mid - f.map(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1e-300) {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations,
        residual: best.residual,
        tau: best.tau,
        p_b: best.p_b,
    })
}

/// Mean number of backoff slots (idle decrements plus busy stalls) among
/// periods that end in a transmission.
pub fn expected_backoff_slots(mix: &AllocationMix, p_b: f64, mac: &MacParams, model: TauModel) -> Result<f64> {
    validate_pb(p_b)?;
    let q = 1.0 - p_b;
    let alloc = crate::allocator::mixed_allocation_pmf(mix, mac);
    let mut mass = alloc[0];
    let mut weighted = 0.0;
    for (c, &a) in alloc.iter().enumerate().skip(1) {
        if a == 0.0 || q == 0.0 {
            continue;
        }
        let c_u = c as u64;
        match model {
            TauModel::Untruncated => {
                let p = q.powi(c as i32);
                mass += a * p;
                weighted += a * p * c as f64;
            }
            TauModel::Truncated => {
                let (ln_q, ln_p) = (q.ln(), p_b.ln());
                for d in 0..=u64::from(delta_c(c as u32, mac)) {
                    // NB: c idle slots with d busy slots interleaved before the last idle
                    let ln_path =
                        ln_binomial(c_u - 1 + d, d) + c as f64 * ln_q + if d > 0 { d as f64 * ln_p } else { 0.0 };
                    let p = ln_path.exp();
                    if p == 0.0 && d as f64 > c as f64 * p_b / q {
                        break;
                    }
                    mass += a * p;
                    weighted += a * p * (c_u + d) as f64;
                }
            }
        }
    }
    if mass <= 0.0 {
        return Ok(0.0);
    }
    Ok(weighted / mass)
}

/// `P_exp = 1 - tau`.
pub fn p_exp(tau: f64) -> f64 {
    1.0 - tau
}
