//! Initial backoff-counter allocation and the per-node backoff Markov chain.
//!
//! State order is fixed: `B_0..B_{CW-1}`, then the delay blocks `D_{c,m}` in
//! increasing `c` then `m`, then the absorbing `EXP` state.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::risk::{Allocation, AllocationMix, DivisionRule, RiskModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    /// Contention window; counters are drawn from `0..cw`.
    pub cw: u32,
    /// BSM airtime in slots.
    pub l_bcn_slots: u32,
    /// Beaconing period in slots.
    pub big_l_bcn_slots: u32,
    /// Decay ratio of the decreasing allocation.
    pub r_decay: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            cw: 15,
            l_bcn_slots: 8,
            big_l_bcn_slots: 750,
            r_decay: 0.5,
        }
    }
}

impl MacParams {
    pub fn new(cw: u32, l_bcn_slots: u32, big_l_bcn_slots: u32, r_decay: f64) -> Result<Self> {
        let mac = Self {
            cw,
            l_bcn_slots,
            big_l_bcn_slots,
            r_decay,
        };
        mac.validate()?;
        Ok(mac)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cw < 1 {
            return Err(param("cw must be ≥ 1"));
        }
        if self.l_bcn_slots < 1 {
            return Err(param("l_bcn must be ≥ 1"));
        }
        if !(self.r_decay > 0.0 && self.r_decay < 1.0) {
            return Err(param(format!("r_decay must be in (0, 1), got {}", self.r_decay)));
        }
        if u64::from(self.l_bcn_slots) + u64::from(self.cw) > u64::from(self.big_l_bcn_slots) {
            return Err(param(format!(
                "l_bcn + cw must be ≤ big_l_bcn ({} + {} > {})",
                self.l_bcn_slots, self.cw, self.big_l_bcn_slots
            )));
        }
        Ok(())
    }

    /// Slots available for backoff before a transmission can no longer fit.
    pub fn backoff_horizon(&self) -> u32 {
        self.big_l_bcn_slots - self.l_bcn_slots
    }
}

/// `P_ini(c)` for one allocation branch. The decreasing branch is `r^(c+1)`
/// renormalised over `0..CW`.
pub fn p_ini(c: u32, branch: Allocation, mac: &MacParams) -> Result<f64> {
    if c >= mac.cw {
        return Err(param(format!("counter {c} outside 0..{}", mac.cw)));
    }
    Ok(p_ini_unchecked(c, branch, mac))
}

fn p_ini_unchecked(c: u32, branch: Allocation, mac: &MacParams) -> f64 {
    match branch {
        Allocation::Flat => 1.0 / f64::from(mac.cw),
        Allocation::Decreasing => {
            let r = mac.r_decay;
            // sum_{c<CW} r^(c+1) = r (1 - r^CW) / (1 - r)
            let total = r * (1.0 - r.powi(mac.cw as i32)) / (1.0 - r);
            r.powi(c as i32 + 1) / total
        }
    }
}

/// `P_ini(c, k)` with the branch chosen from the risk category.
pub fn p_ini_for_category(c: u32, k: u32, mac: &MacParams, risk: &RiskModelParams, rule: DivisionRule) -> Result<f64> {
    if k < 1 || k > risk.num_categories {
        return Err(param(format!("category {k} outside 1..={}", risk.num_categories)));
    }
    p_ini(c, rule.branch(k, risk), mac)
}

/// Full allocation vector for one branch.
pub fn allocation_pmf(branch: Allocation, mac: &MacParams) -> Vec<f64> {
    (0..mac.cw).map(|c| p_ini_unchecked(c, branch, mac)).collect()
}

/// Branch-weighted allocation vector.
pub fn mixed_allocation_pmf(mix: &AllocationMix, mac: &MacParams) -> Vec<f64> {
    let dec = allocation_pmf(Allocation::Decreasing, mac);
    let flat = allocation_pmf(Allocation::Flat, mac);
    dec.iter()
        .zip(&flat)
        .map(|(d, f)| mix.decreasing * d + mix.flat * f)
        .collect()
}

/// Inverse-CDF sampler over a fixed allocation vector.
#[derive(Debug, Clone)]
pub struct BackoffSampler {
    cdf: Vec<f64>,
}

impl BackoffSampler {
    pub fn new(branch: Allocation, mac: &MacParams) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = allocation_pmf(branch, mac)
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&p| p <= u) as u32
    }
}

/// One counter draw for a branch.
pub fn sample_backoff<R: Rng + ?Sized>(branch: Allocation, mac: &MacParams, rng: &mut R) -> u32 {
    BackoffSampler::new(branch, mac).sample(rng)
}

/// Maximum number of busy slots a node starting at counter `c` can absorb
/// before its BSM no longer fits in the beaconing period.
pub fn delta_c(c: u32, mac: &MacParams) -> u32 {
    mac.big_l_bcn_slots - mac.l_bcn_slots - c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainState {
    Backoff(u32),
    Delay { c: u32, m: u32 },
    Expired,
}

/// Sparse row-stochastic transition matrix of the backoff chain.
#[derive(Debug, Clone)]
pub struct BackoffChain {
    cw: u32,
    /// Offset of `D_{c,1}` for each `c >= 1` (index 0 unused).
    delay_offset: Vec<usize>,
    deltas: Vec<u32>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl BackoffChain {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn index(&self, state: ChainState) -> Option<usize> {
        match state {
            ChainState::Backoff(c) if c < self.cw => Some(c as usize),
            ChainState::Delay { c, m } if c >= 1 && c < self.cw && m >= 1 && m <= self.deltas[c as usize] => {
                Some(self.delay_offset[c as usize] + m as usize - 1)
            }
            ChainState::Expired => Some(self.rows.len() - 1),
            _ => None,
        }
    }

    pub fn state(&self, index: usize) -> Option<ChainState> {
        let n = self.rows.len();
        if index >= n {
            return None;
        }
        if index == n - 1 {
            return Some(ChainState::Expired);
        }
        if index < self.cw as usize {
            return Some(ChainState::Backoff(index as u32));
        }
        let c = self.delay_offset.partition_point(|&off| off <= index) - 1;
        Some(ChainState::Delay {
            c: c as u32,
            m: (index - self.delay_offset[c]) as u32 + 1,
        })
    }

    pub fn row(&self, index: usize) -> &[(usize, f64)] {
        &self.rows[index]
    }

    /// Dense copy of one row.
    pub fn dense_row(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for &(j, p) in &self.rows[index] {
            out[j] += p;
        }
        out
    }

    /// Writes the matrix as dense decimal rows, one row per line.
    pub fn write_dense<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in 0..self.rows.len() {
            let row = self.dense_row(i);
            let mut first = true;
            for p in row {
                if !first {
                    w.write_all(b" ")?;
                }
                first = false;
                write!(w, "{p}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Propagates `start` for `horizon` steps with `B_0` made absorbing and
    /// returns `(P[reach B_0], P[reach EXP], P[still pending])`.
    pub fn absorption_within(&self, start: &[f64], horizon: u32) -> (f64, f64, f64) {
        let n = self.rows.len();
        let exp = n - 1;
        let mut dist = vec![0.0; n];
        dist[..start.len()].copy_from_slice(start);
        let mut reached = dist[0];
        dist[0] = 0.0;
        let mut next = vec![0.0; n];
        for _ in 0..horizon {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(j, q) in &self.rows[i] {
                    next[j] += p * q;
                }
            }
            reached += next[0];
            next[0] = 0.0;
            std::mem::swap(&mut dist, &mut next);
        }
        let expired = dist[exp];
        let pending: f64 = dist.iter().sum::<f64>() - expired;
        (reached, expired, pending)
    }
}

/// Builds the transition matrix for one allocation vector and busy
/// probability `p_b`.
pub fn build_transition_matrix(allocation: &[f64], p_b: f64, mac: &MacParams) -> Result<BackoffChain> {
    mac.validate()?;
    if !(0.0..=1.0).contains(&p_b) {
        return Err(param(format!("p_b must be in [0, 1], got {p_b}")));
    }
    if allocation.len() != mac.cw as usize {
        return Err(param("allocation length must equal cw"));
    }
    let cw = mac.cw as usize;
    let deltas: Vec<u32> = (0..mac.cw).map(|c| delta_c(c, mac)).collect();
    let mut delay_offset = vec![0usize; cw];
    let mut next = cw;
    for c in 1..cw {
        delay_offset[c] = next;
        next += deltas[c] as usize;
    }
    let exp = next;
    let idle = 1.0 - p_b;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(exp + 1);

    rows.push(
        allocation
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, p)| *p != 0.0)
            .collect(),
    );
    for c in 1..cw {
        let busy_target = if deltas[c] >= 1 { delay_offset[c] } else { exp };
        rows.push(vec![(c - 1, idle), (busy_target, p_b)]);
    }
    for c in 1..cw {
        let d = deltas[c] as usize;
        for m in 1..=d {
            let busy_target = if m < d { delay_offset[c] + m } else { exp };
            rows.push(vec![(c - 1, idle), (busy_target, p_b)]);
        }
    }
    rows.push(vec![(exp, 1.0)]);

    Ok(BackoffChain {
        cw: mac.cw,
        delay_offset,
        deltas,
        rows,
    })
}

/// Chain for a risk category.
pub fn build_chain_for_category(
    k: u32,
    p_b: f64,
    mac: &MacParams,
    risk: &RiskModelParams,
    rule: DivisionRule,
) -> Result<BackoffChain> {
    if k < 1 || k > risk.num_categories {
        return Err(param(format!("category {k} outside 1..={}", risk.num_categories)));
    }
    build_transition_matrix(&allocation_pmf(rule.branch(k, risk), mac), p_b, mac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mac(cw: u32, l: u32, big_l: u32) -> MacParams {
        MacParams::new(cw, l, big_l, 0.5).unwrap()
    }

    #[test]
    fn p_ini_values() {
        let m = MacParams::default();
        let p0 = p_ini(0, Allocation::Decreasing, &m).unwrap();
        assert_abs_diff_eq!(p0, 0.5 / (1.0 - 2f64.powi(-15)), epsilon = 1e-15);
        assert_abs_diff_eq!(p0, 0.500_015_259, epsilon = 1e-9);
        for c in 0..15 {
            assert_abs_diff_eq!(p_ini(c, Allocation::Flat, &m).unwrap(), 1.0 / 15.0);
        }
        assert!(p_ini(15, Allocation::Flat, &m).is_err());
        for b in [Allocation::Decreasing, Allocation::Flat] {
            assert_abs_diff_eq!(allocation_pmf(b, &m).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
        let r3 = MacParams { r_decay: 0.3, ..m };
        assert_abs_diff_eq!(
            allocation_pmf(Allocation::Decreasing, &r3).iter().sum::<f64>(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn category_branches() {
        let m = MacParams::default();
        let risk = RiskModelParams::default();
        let rule = DivisionRule::HighRiskDecreasing;
        assert_abs_diff_eq!(p_ini_for_category(0, 6, &m, &risk, rule).unwrap(), 1.0 / 15.0);
        assert!(p_ini_for_category(0, 7, &m, &risk, rule).unwrap() > 0.5);
        assert!(p_ini_for_category(0, 0, &m, &risk, rule).is_err());
        assert!(p_ini_for_category(0, 12, &m, &risk, rule).is_err());
    }

    #[test]
    fn mac_validation() {
        assert!(MacParams::new(0, 8, 750, 0.5).is_err());
        assert!(MacParams::new(15, 8, 20, 0.5).is_err());
        assert!(MacParams::new(15, 8, 23, 0.5).is_ok());
        assert!(MacParams::new(15, 8, 750, 1.0).is_err());
    }

    #[test]
    fn delta_values() {
        let m = mac(15, 10, 750);
        assert_eq!(delta_c(0, &m), 740);
        assert_eq!(delta_c(5, &m), 735);
        for c in 1..15 {
            assert!(delta_c(c, &m) < delta_c(c - 1, &m));
        }
    }

    #[test]
    fn sampler_frequencies() {
        let m = MacParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let flat = BackoffSampler::new(Allocation::Flat, &m);
        let mut counts = vec![0u32; 15];
        for _ in 0..n {
            counts[flat.sample(&mut rng) as usize] += 1;
        }
        for c in counts {
            assert!((f64::from(c) / n as f64 - 1.0 / 15.0).abs() < 0.002);
        }
        let dec = BackoffSampler::new(Allocation::Decreasing, &m);
        let zeros = (0..n).filter(|_| dec.sample(&mut rng) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.002);

        let one = mac(1, 1, 10);
        for b in [Allocation::Flat, Allocation::Decreasing] {
            assert!((0..100).all(|_| sample_backoff(b, &one, &mut rng) == 0));
        }
    }

    #[test]
    fn chain_rows_stochastic() {
        for (cw, l, big_l, pb) in [(15, 8, 750, 0.37), (3, 2, 8, 0.3), (4, 1, 5, 1.0), (1, 1, 2, 0.0)] {
            let m = mac(cw, l, big_l);
            for b in [Allocation::Flat, Allocation::Decreasing] {
                let chain = build_transition_matrix(&allocation_pmf(b, &m), pb, &m).unwrap();
                for i in 0..chain.num_states() {
                    let s: f64 = chain.row(i).iter().map(|(_, p)| p).sum();
                    assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
                }
                let exp = chain.index(ChainState::Expired).unwrap();
                assert_eq!(chain.row(exp), &[(exp, 1.0)]);
            }
        }
        let m = MacParams::default();
        assert!(build_transition_matrix(&allocation_pmf(Allocation::Flat, &m), 1.2, &m).is_err());
    }

    #[test]
    fn state_index_bijection() {
        let m = mac(4, 2, 10);
        let chain = build_transition_matrix(&allocation_pmf(Allocation::Flat, &m), 0.2, &m).unwrap();
        // 4 backoff states + delta_1..delta_3 = 7 + 6 + 5 + EXP
        assert_eq!(chain.num_states(), 4 + 7 + 6 + 5 + 1);
        for i in 0..chain.num_states() {
            assert_eq!(chain.index(chain.state(i).unwrap()), Some(i));
        }
        assert_eq!(chain.index(ChainState::Delay { c: 1, m: 1 }), Some(4));
        assert_eq!(chain.index(ChainState::Delay { c: 2, m: 1 }), Some(11));
        assert_eq!(chain.index(ChainState::Delay { c: 0, m: 1 }), None);
        assert_eq!(chain.index(ChainState::Delay { c: 1, m: 8 }), None);
    }

    #[test]
    fn idle_channel_drains_in_c_steps() {
        let m = mac(6, 2, 20);
        let chain = build_transition_matrix(&allocation_pmf(Allocation::Flat, &m), 0.0, &m).unwrap();
        for c in 1..6u32 {
            let mut start = vec![0.0; 6];
            start[c as usize] = 1.0;
            let (b0, exp, _) = chain.absorption_within(&start, c - 1);
            assert_eq!((b0, exp), (0.0, 0.0));
            let (b0, exp, pending) = chain.absorption_within(&start, c);
            assert_eq!((b0, exp, pending), (1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn dense_dump_is_row_per_line() {
        let m = mac(2, 1, 4);
        let chain = build_transition_matrix(&allocation_pmf(Allocation::Flat, &m), 0.25, &m).unwrap();
        let mut buf = Vec::new();
        chain.write_dense(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // B_0, B_1, D_{1,1}, D_{1,2}, EXP
        assert_eq!(
            text,
            "0.5 0.5 0 0 0\n0.75 0 0.25 0 0\n0.75 0 0 0.25 0\n0.75 0 0 0 0.25\n0 0 0 0 1\n"
        );
    }
}
