//! Exhaustive-enumeration references for small instances.
//!
//! These walk every idle/busy slot pattern or every joint counter draw and
//! share no code with the closed forms they are checked against.

use crate::allocator::MacParams;

/// Largest horizon accepted by [`enumerate_backoff`] (2^20 patterns).
pub const MAX_HORIZON: u32 = 20;

/// `(tau, E[N_bo])` by walking all `2^(L - l)` busy/idle patterns.
///
/// A node with counter `c` transmits once it has seen `c` idle slots, and
/// only if that happens within the first `L - l` slots. `E[N_bo]` is the
/// mean number of elapsed slots among transmitting outcomes.
pub fn enumerate_backoff(allocation: &[f64], p_b: f64, mac: &MacParams) -> (f64, f64) {
    let h = mac.big_l_bcn_slots - mac.l_bcn_slots;
    assert!(h <= MAX_HORIZON, "horizon {h} too large to enumerate");
    let mut tau = 0.0;
    let mut slots = 0.0;
    for pattern in 0u32..(1 << h) {
        // bit i set: slot i busy
        let busy = pattern.count_ones() as i32;
        let w = p_b.powi(busy) * (1.0 - p_b).powi(h as i32 - busy);
        if w == 0.0 {
            continue;
        }
        for (c, &a) in allocation.iter().enumerate() {
            let mut remaining = c;
            let mut elapsed = 0u32;
            while remaining > 0 && elapsed < h {
                if pattern & (1 << elapsed) == 0 {
                    remaining -= 1;
                }
                elapsed += 1;
            }
            if remaining == 0 {
                tau += a * w;
                slots += a * w * f64::from(elapsed);
            }
        }
    }
    let e_nbo = if tau > 0.0 { slots / tau } else { 0.0 };
    (tau, e_nbo)
}

/// Visits every assignment of `n` nodes to `{silent, 0, .., cw-1}` with its
/// probability under independent `tau` transmission and uniform counters.
fn for_each_draw(n: u32, cw: u32, tau: f64, mut f: impl FnMut(&[Option<u32>], f64)) {
    let states = cw + 1;
    let mut draw = vec![None; n as usize];
    for code in 0..states.pow(n) {
        let mut x = code;
        let mut w = 1.0;
        for slot in draw.iter_mut() {
            let s = x % states;
            x /= states;
            if s == 0 {
                *slot = None;
                w *= 1.0 - tau;
            } else {
                *slot = Some(s - 1);
                w *= tau / f64::from(cw);
            }
        }
        f(&draw, w);
    }
}

/// P(two transmitting carrier-sense nodes share a counter).
pub fn enumerate_p_sync(n_cs: u32, cw: u32, tau: f64) -> f64 {
    let mut p = 0.0;
    for_each_draw(n_cs, cw, tau, |draw, w| {
        let tx: Vec<u32> = draw.iter().flatten().copied().collect();
        let clash = tx.iter().enumerate().any(|(i, a)| tx[i + 1..].contains(a));
        if clash {
            p += w;
        }
    });
    p
}

/// P(some transmitting hidden node's window meets the tagged window), with
/// `3 n_cs` hidden nodes and the tagged counter drawn from `tagged_allocation`.
pub fn enumerate_p_hn(n_cs: u32, cw: u32, tau: f64, l_bcn: u32, tagged_allocation: &[f64]) -> f64 {
    let n_hn = 3 * n_cs;
    let mut p = 0.0;
    for (c, &a) in tagged_allocation.iter().enumerate() {
        let c = c as u32;
        for_each_draw(n_hn, cw, tau, |draw, w| {
            let hit = draw.iter().flatten().any(|&b| b < c + l_bcn && c < b + l_bcn);
            if hit {
                p += a * w;
            }
        });
    }
    p
}
