//! Synchronised and hidden-node collision probabilities, PDR and IRT.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::spatial::count_hidden_nodes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryMetrics {
    pub p_sync: f64,
    pub p_hn: f64,
    pub p_col: f64,
    pub pdr: f64,
}

impl DeliveryMetrics {
    pub fn from_parts(tau: f64, p_sync: f64, p_hn: f64) -> Self {
        let p_col = p_col(p_sync, p_hn);
        Self {
            p_sync,
            p_hn,
            p_col,
            pdr: pdr(tau, p_col),
        }
    }
}

/// `Bin(n, tau)` pmf for `k = 0..=min(n, k_max)`.
fn binomial_pmf_prefix(n: u32, tau: f64, k_max: u32) -> Vec<f64> {
    let top = n.min(k_max);
    if tau <= 0.0 {
        let mut v = vec![0.0; top as usize + 1];
        v[0] = 1.0;
        return v;
    }
    if tau >= 1.0 {
        let mut v = vec![0.0; top as usize + 1];
        if n <= top {
            v[n as usize] = 1.0;
        }
        return v;
    }
    let (ln_t, ln_1t) = (tau.ln(), (1.0 - tau).ln());
    (0..=top)
        .map(|k| {
            let mut v = ln_binomial(u64::from(n), u64::from(k));
            if k > 0 {
                v += f64::from(k) * ln_t;
            }
            if n > k {
                v += f64::from(n - k) * ln_1t;
            }
            v.exp()
        })
        .collect()
}

/// Probability that `n_tx` counters drawn uniformly from `0..CW` are all
/// distinct: `CW! / ((CW - n_tx)! CW^n_tx)`.
pub fn all_distinct_probability(n_tx: u32, cw: u32) -> f64 {
    if n_tx > cw {
        return 0.0;
    }
    let cw_f = f64::from(cw);
    (0..n_tx).map(|i| 1.0 - f64::from(i) / cw_f).product()
}

/// SYNC probability among `n_cs` carrier-sense competitors.
pub fn p_sync(n_cs: u32, cw: u32, tau: f64) -> f64 {
    let pmf = binomial_pmf_prefix(n_cs, tau, cw);
    let no_sync: f64 = pmf
        .iter()
        .enumerate()
        .map(|(n_tx, p)| p * all_distinct_probability(n_tx as u32, cw))
        .sum();
    (1.0 - no_sync).clamp(0.0, 1.0)
}

/// Number of counters `b` whose `l_bcn`-slot window does not intersect the
/// window starting at `c`.
pub fn s_no_hn_size(c: u32, cw: u32, l_bcn_slots: u32) -> u32 {
    // before: b + l <= c ; after: b >= c + l
    let before = (c + 1).saturating_sub(l_bcn_slots).min(cw);
    let after = cw.saturating_sub(c + l_bcn_slots);
    before + after
}

/// HN probability with `3 n_cs` hidden nodes, averaging the non-overlap set
/// over the tagged node's counter distribution `tagged_allocation`.
pub fn p_hn(n_cs: u32, cw: u32, tau: f64, l_bcn_slots: u32, tagged_allocation: &[f64]) -> f64 {
    let n_hn = count_hidden_nodes(n_cs);
    let pmf = binomial_pmf_prefix(n_hn, tau, n_hn);
    let cw_f = f64::from(cw);
    let fractions: Vec<(f64, f64)> = tagged_allocation
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, w)| (*w, f64::from(s_no_hn_size(c as u32, cw, l_bcn_slots)) / cw_f))
        .collect();
    let total_w: f64 = fractions.iter().map(|(w, _)| w).sum();
    let no_hn: f64 = pmf
        .iter()
        .enumerate()
        .map(|(n_tx, p)| {
            let avg: f64 = fractions.iter().map(|(w, frac)| w * frac.powi(n_tx as i32)).sum();
            p * avg / total_w
        })
        .sum();
    (1.0 - no_hn).clamp(0.0, 1.0)
}

/// `1 - (1 - p_sync)(1 - p_hn)`, written as the sum of the three exclusive
/// cases.
pub fn p_col(p_sync: f64, p_hn: f64) -> f64 {
    p_sync * (1.0 - p_hn) + p_hn * (1.0 - p_sync) + p_sync * p_hn
}

pub fn pdr(tau: f64, p_col: f64) -> f64 {
    tau * (1.0 - p_col)
}

/// `P[IRT = nu] = (1 - PDR)^(nu - 1) PDR`, with `nu` in beaconing periods.
pub fn irt_pmf(nu: u32, pdr_value: f64) -> Result<f64> {
    if nu < 1 {
        return Err(Error::Domain("nu must be ≥ 1".into()));
    }
    if !(pdr_value > 0.0 && pdr_value <= 1.0) {
        return Err(Error::Domain(format!(
            "IRT is degenerate for PDR = {pdr_value}; need PDR in (0, 1]"
        )));
    }
    Ok((1.0 - pdr_value).powi(nu as i32 - 1) * pdr_value)
}

/// Exact `P(n_cs > 0) = 1 - exp(-lambda pi r_cs^2)` for diagnostics.
pub fn p_nonempty_carrier_sense(density_per_m2: f64, r_cs_m: f64) -> f64 {
    1.0 - (-density_per_m2 * std::f64::consts::PI * r_cs_m * r_cs_m).exp()
}
